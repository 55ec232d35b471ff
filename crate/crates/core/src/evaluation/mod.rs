//! Prediction quality metrics and the evaluation driver.

mod matching;
mod metrics;
mod velocity;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matching::{hungarian, match_components, Assignment};
pub use metrics::{
    component_masses, copy_last_frame, eval_bce, eval_mse, frame_bce, frame_bce_per_sequence, frame_mse,
    frame_mse_per_sequence, ranked_mass_shares,
};
pub use velocity::{extract_positions, velocity, velocity_metrics, PositionTrack, VelocityMetrics, MIN_SPEED};

use crate::datasets::{write_atomic, DatasetKind, FixedSet};
use crate::error::{Error, Result};
use crate::model::{Ddpae, PoseVector, Sampling};
use crate::training::{batch_tensors, noise_rng};

pub const REPORT_FORMAT: &str = "ddpae-eval";

/// Description of the squared-error normalization, stored in every report.
pub const MSE_CONVENTION: &str =
    "squared error summed over the pixels of a frame, averaged over predicted frames, then over sequences";

/// Values over frames plus their mean where defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub frames: Vec<usize>,
    pub values: Vec<Option<f64>>,
    pub aggregate: Option<f64>,
}

impl MetricSeries {
    pub fn new(frames: Vec<usize>, values: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let aggregate = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Self {
            frames,
            values,
            aggregate,
        }
    }

    fn dense(frames: Vec<usize>, values: Vec<f64>) -> Self {
        Self::new(frames, values.into_iter().map(Some).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub checkpoint: String,
    pub config_digest: String,
    pub dataset: String,
    pub dataset_seed: u64,
    /// Noise seed when latents were sampled; `None` for posterior means.
    pub sampling_seed: Option<u64>,
    pub dependency: bool,
    pub n_sequences: usize,
    pub input_len: usize,
    pub pred_len: usize,
    /// Per-sequence BCE summed over all predicted pixels.
    pub bce: f64,
    pub mse: f64,
    pub baseline_bce: f64,
    pub baseline_mse: f64,
    pub mse_convention: String,
    pub series: BTreeMap<String, MetricSeries>,
    /// Share of predicted foreground mass per component rank, largest
    /// first.
    pub component_mass_share: Vec<f64>,
    pub velocity: Option<VelocityMetrics>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row per frame, one column per series; blank where undefined.
    pub fn to_csv(&self) -> Result<String> {
        let names: Vec<&String> = self.series.keys().collect();
        let mut frames: Vec<usize> = self.series.values().flat_map(|s| s.frames.iter().copied()).collect();
        frames.sort_unstable();
        frames.dedup();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["frame".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for f in frames {
            let mut row = vec![f.to_string()];
            for n in &names {
                let s = &self.series[*n];
                let v = s.frames.iter().position(|&x| x == f).and_then(|i| s.values[i]);
                row.push(v.map(|v| format!("{v}")).unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Contract(format!("csv: {e}"))
}

/// Identifiers copied into the report plus evaluation settings.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Sample latents with this noise seed instead of using means.
    pub stochastic: Option<u64>,
    pub checkpoint: String,
    pub config_digest: String,
    pub dataset: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            stochastic: None,
            checkpoint: String::new(),
            config_digest: String::new(),
            dataset: String::new(),
        }
    }
}

/// Run the model over every sequence of `set` and collect frame metrics,
/// the copy-last baseline, component mass shares and, for ball data,
/// velocity accuracy over the prediction window.
pub fn evaluate(model: &Ddpae, set: &FixedSet, opts: &EvalOptions) -> Result<EvalReport> {
    let first = set
        .sequences
        .first()
        .ok_or_else(|| Error::Contract("evaluation set is empty".into()))?;
    let (t, k, size) = (first.input_len(), first.pred_len(), first.size());
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let with_velocity = set.kind == DatasetKind::BouncingBalls;
    if with_velocity && (t < 2 || k < 2) {
        return Err(Error::Contract(
            "velocity metrics need at least two input and two predicted frames".into(),
        ));
    }
    let vel_frames: Vec<usize> = (t..t + k - 1).collect();
    let mut vel = with_velocity.then(|| VelocityMetrics::new(vel_frames.clone()));

    let mut bce_rows = Vec::new();
    let mut mse_rows = Vec::new();
    let mut base_bce_rows = Vec::new();
    let mut base_mse_rows = Vec::new();
    let mut masses = Vec::new();

    for (bi, chunk) in set.sequences.chunks(opts.batch_size).enumerate() {
        let (inputs, targets) = batch_tensors(chunk, model.dtype())?;
        let out = match opts.stochastic {
            Some(seed) => {
                let mut rng = noise_rng(seed, bi as u64);
                model.forward(&inputs, k, &mut Sampling::Random(&mut rng))?
            }
            None => model.forward(&inputs, k, &mut Sampling::Mean)?,
        };
        bce_rows.extend(frame_bce_per_sequence(&out.prediction, &targets)?);
        mse_rows.extend(frame_mse_per_sequence(&out.prediction, &targets)?);
        let baseline = copy_last_frame(&inputs, k)?;
        base_bce_rows.extend(frame_bce_per_sequence(&baseline, &targets)?);
        base_mse_rows.extend(frame_mse_per_sequence(&baseline, &targets)?);
        masses.extend(component_masses(&out.component_frames, t..t + k)?);

        if let Some(vel) = vel.as_mut() {
            let all = out.latents.constrained_poses()?.to_dtype(candle_core::DType::F64)?;
            for (j, _) in chunk.iter().enumerate() {
                let seq = bi * opts.batch_size + j;
                let per_comp = all.get(j)?.to_vec3::<f64>()?;
                let predicted: Vec<PositionTrack> = per_comp
                    .iter()
                    .map(|c| extract_positions(&c.iter().map(|p| PoseVector::new(p[0], p[1], p[2])).collect::<Vec<_>>()))
                    .collect();
                let centers = set
                    .object_centers
                    .get(seq)
                    .ok_or_else(|| Error::Contract(format!("no object tracks for sequence {seq}")))?;
                let n_obj = centers.first().map_or(0, Vec::len);
                let truth: Vec<PositionTrack> = (0..n_obj)
                    .map(|o| PositionTrack::from_pixels(centers.iter().map(|f| f[o]), size))
                    .collect();
                let at = |tr: &[PositionTrack]| -> Vec<[f64; 2]> { tr.iter().map(|x| x.positions[t - 1]).collect() };
                let assignment = match_components(&at(&predicted), &at(&truth))?;
                vel.merge(&velocity_metrics(&predicted, &truth, &assignment, &vel_frames)?)?;
            }
        }
    }

    let pred_frames: Vec<usize> = (t..t + k).collect();
    let mean_rows = |rows: &[Vec<f64>]| -> Vec<f64> {
        (0..k)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect()
    };
    let bce_f = mean_rows(&bce_rows);
    let mse_f = mean_rows(&mse_rows);
    let base_bce_f = mean_rows(&base_bce_rows);
    let base_mse_f = mean_rows(&base_mse_rows);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mut series = BTreeMap::new();
    series.insert("bce_per_frame".into(), MetricSeries::dense(pred_frames.clone(), bce_f.clone()));
    series.insert("mse_per_frame".into(), MetricSeries::dense(pred_frames.clone(), mse_f.clone()));
    series.insert("baseline_bce_per_frame".into(), MetricSeries::dense(pred_frames.clone(), base_bce_f.clone()));
    series.insert("baseline_mse_per_frame".into(), MetricSeries::dense(pred_frames, base_mse_f.clone()));
    if let Some(v) = &vel {
        series.insert("velocity_magnitude_error".into(), MetricSeries::new(vel_frames.clone(), v.magnitude_error()));
        series.insert("velocity_cosine".into(), MetricSeries::new(vel_frames, v.cosine()));
    }

    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        checkpoint: opts.checkpoint.clone(),
        config_digest: opts.config_digest.clone(),
        dataset: opts.dataset.clone(),
        dataset_seed: set.seed,
        sampling_seed: opts.stochastic,
        dependency: model.config().dependency,
        n_sequences: set.sequences.len(),
        input_len: t,
        pred_len: k,
        bce: bce_f.iter().sum(),
        mse: mean(&mse_f),
        baseline_bce: base_bce_f.iter().sum(),
        baseline_mse: mean(&base_mse_f),
        mse_convention: MSE_CONVENTION.into(),
        series,
        component_mass_share: ranked_mass_shares(&masses),
        velocity: vel,
    })
}
