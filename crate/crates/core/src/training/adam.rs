use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(vars: &[(String, Var)]) -> Result<Self> {
        let zeros = |v: &Var| v.as_tensor().zeros_like();
        Ok(Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vars.iter().map(|(_, v)| zeros(v)).collect::<candle_core::Result<_>>()?,
            v: vars.iter().map(|(_, v)| zeros(v)).collect::<candle_core::Result<_>>()?,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Checkpoint {
                field: "optimizer".into(),
                detail: "moment count differs from parameter count".into(),
            });
        }
        for (a, b) in m.iter().zip(&self.m).chain(v.iter().zip(&self.v)) {
            if a.dims() != b.dims() {
                return Err(Error::Checkpoint {
                    field: "optimizer".into(),
                    detail: format!("moment shape {:?}, expected {:?}", a.dims(), b.dims()),
                });
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update. `grads[i]` is the gradient of parameter `i`, or `None`
    /// when it did not influence the loss.
    pub fn step(&mut self, vars: &[(String, Var)], grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, ((_, var), g)) in vars.iter().zip(grads).enumerate() {
            let g = match g {
                Some(g) => g.detach(),
                None => var.as_tensor().zeros_like()?,
            };
            let m = ((&self.m[i] * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let update = ((&m / bc1)?.div(&denom)? * lr)?;
            var.set(&var.as_tensor().detach().sub(&update)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}
