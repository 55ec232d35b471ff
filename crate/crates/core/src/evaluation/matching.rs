//! Minimum-cost assignment of model components to ground-truth objects.

use crate::error::{Error, Result};

/// One-to-one pairing of components with objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `ball_of[i]` is the object matched to component `i`, if any.
    pub ball_of: Vec<Option<usize>>,
    /// Summed distance over matched pairs.
    pub cost: f64,
}

impl Assignment {
    /// `(component, object)` pairs in component order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ball_of.iter().enumerate().filter_map(|(i, b)| b.map(|b| (i, b)))
    }
}

/// Minimum-cost assignment for a dense `rows x cols` cost matrix with
/// `rows <= cols`; returns the column of every row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::Contract("assignment needs at least one row".into()));
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Contract("ragged cost matrix".into()));
    }
    if n > m {
        return Err(Error::Contract(format!("{n} rows cannot be assigned to {m} columns")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Contract("cost matrix has non-finite entries".into()));
    }
    // Potentials formulation; row/column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of[p[j] - 1] = j - 1;
        }
    }
    Ok(col_of)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Match components to objects minimizing the total Euclidean distance
/// between their positions. With unequal counts the surplus side stays
/// unmatched.
pub fn match_components(components: &[[f64; 2]], balls: &[[f64; 2]]) -> Result<Assignment> {
    if components.is_empty() || balls.is_empty() {
        return Err(Error::Contract("matching needs non-empty component and object sets".into()));
    }
    let mut ball_of = vec![None; components.len()];
    let mut cost = 0.0;
    if components.len() <= balls.len() {
        let matrix: Vec<Vec<f64>> = components
            .iter()
            .map(|&c| balls.iter().map(|&b| dist(c, b)).collect())
            .collect();
        for (i, j) in hungarian(&matrix)?.into_iter().enumerate() {
            ball_of[i] = Some(j);
            cost += matrix[i][j];
        }
    } else {
        let matrix: Vec<Vec<f64>> = balls
            .iter()
            .map(|&b| components.iter().map(|&c| dist(c, b)).collect())
            .collect();
        for (j, i) in hungarian(&matrix)?.into_iter().enumerate() {
            ball_of[i] = Some(j);
            cost += matrix[j][i];
        }
    }
    Ok(Assignment { ball_of, cost })
}
