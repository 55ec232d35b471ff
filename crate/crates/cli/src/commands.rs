use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use candle_core::DType;
use ddpae::datasets::{generate_fixed_set, load_fixed_set, write_atomic, FixedSet, Generator, MnistSplit};
use ddpae::evaluation::{component_masses, evaluate, EvalOptions};
use ddpae::model::Sampling;
use ddpae::training::{
    batch_tensors, check_model_config, load_checkpoint, noise_rng, resolve_checkpoint, train, BatchSource, DataSource,
    FixedSetSource, GeneratorSource, LoadedCheckpoint, TrainConfig, TrainOptions,
};
use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, DynamicImage, Frame, RgbImage};
use serde::Serialize;

use crate::manifest::{print_plan, RunManifest};
use crate::render::{cell_origin, draw_window, grid, PALETTE};
use crate::{Cli, Command, EvaluateArgs, GenerateArgs, InspectArgs, TrainArgs};

pub const RUN_MANIFEST: &str = "run.json";

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateData(a) => generate_data(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a),
        Command::Inspect(a) => inspect_cmd(cli, a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg: TrainConfig = serde_json::from_str(&text)
        .map_err(|e| ddpae::Error::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn generate_data(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    if a.n == 0 {
        return Err(ddpae::Error::Config("--n must be positive".into()).into());
    }
    let profile = TrainConfig::profile(&a.profile)?;
    let stem = format!("{}-{}-s{}-n{}", a.profile, a.split.name(), a.seed, a.n);
    let data = a.out.join(format!("{stem}.bin"));
    let files = vec![data.clone(), with_suffix(&data, ".tracks"), with_suffix(&data, ".json")];
    let manifest_path = a.out.join(format!("{stem}.{RUN_MANIFEST}"));
    if cli.dry_run {
        let mut plan = files.clone();
        plan.push(manifest_path);
        print_plan("generate-data", &plan);
        return Ok(());
    }
    let generator = Generator::from_config(&profile.dataset, cli.data_dir.as_deref(), a.split.mnist())?;
    let mut manifest = RunManifest::start("generate-data");
    manifest.seed = Some(a.seed);
    create_dir(&a.out)?;
    let set = generate_fixed_set(&generator, a.n, a.seed, &data)?;
    manifest.config_digest = Some(ddpae::datasets::sha256_hex(&serde_json::to_vec(&set.config)?));
    manifest.finish(&manifest_path, &files)?;
    println!("{}", data.display());
    println!("data sha256 {}", set.data_sha256);
    println!("tracks sha256 {}", set.tracks_sha256);
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.profile) {
        (Some(path), _) => read_config(path)?,
        (None, Some(name)) => TrainConfig::profile(name)?,
        (None, None) => return Err(ddpae::Error::Config("one of --config or --profile is required".into()).into()),
    };
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = a.components {
        cfg.model.n_components = v;
    }
    if a.ablate_dependency {
        cfg.model.dependency = false;
    }
    if let Some(p) = &a.train_set {
        cfg.data = DataSource::FixedSet { path: p.clone() };
    }
    cfg.validate()?;

    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.profile.as_deref().unwrap_or("custom")));
    let resume = a.resume.as_ref().map(|p| p.clone().unwrap_or_else(|| out.clone()));
    let config_path = out.join("config.json");
    let metrics_path = out.join(ddpae::training::METRICS_FILE);
    let ckpt_dir = out.join(ddpae::training::CHECKPOINT_DIR);
    let manifest_path = out.join(RUN_MANIFEST);
    if cli.dry_run {
        print_plan("train", &[config_path, metrics_path, ckpt_dir, manifest_path]);
        return Ok(());
    }

    let source: Box<dyn BatchSource> = match &cfg.data {
        DataSource::OnTheFly => Box::new(GeneratorSource {
            generator: Generator::from_config(&cfg.dataset, cli.data_dir.as_deref(), MnistSplit::Train)?,
            seed: cfg.seed,
        }),
        DataSource::FixedSet { path } => Box::new(FixedSetSource {
            set: load_fixed_set(path)?,
            seed: cfg.seed,
        }),
    };
    let mut manifest = RunManifest::start("train");
    manifest.seed = Some(cfg.seed);
    manifest.config_digest = Some(cfg.digest());
    create_dir(&out)?;
    write_atomic(&config_path, serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    let summary = train(
        &cfg,
        source.as_ref(),
        &TrainOptions {
            out_dir: out.clone(),
            resume,
        },
    )?;
    manifest.finish(&manifest_path, &[config_path, metrics_path, ckpt_dir])?;
    println!("trained to iteration {}", summary.final_iteration);
    println!("checkpoint {}", summary.last_checkpoint.display());
    if let Some(r) = summary.last_record {
        println!("final loss {:.3}", r.total);
    }
    Ok(())
}

struct Loaded {
    ckpt: LoadedCheckpoint,
    set: FixedSet,
}

fn load_for_eval(checkpoint: &Path, data: &Path, config: Option<&Path>, ablate: bool) -> Result<Loaded> {
    let dir = resolve_checkpoint(checkpoint)?;
    let mut ckpt = load_checkpoint(&dir)?;
    if let Some(path) = config {
        check_model_config(&read_config(path)?.model, &ckpt.meta.config.model)?;
    }
    let set = load_fixed_set(data)?;
    let frame = set.sequences.first().map(|s| s.size());
    if let Some(size) = frame {
        if size != ckpt.model.config().frame_size {
            return Err(ddpae::Error::Checkpoint {
                field: "model.frame_size".into(),
                detail: format!(
                    "checkpoint model expects {} px frames, data set has {size} px",
                    ckpt.model.config().frame_size
                ),
            }
            .into());
        }
    }
    if ablate {
        ckpt.model.set_dependency(false);
    }
    Ok(Loaded { ckpt, set })
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let report_path = a.out.join("report.json");
    let csv_path = a.out.join("curves.csv");
    let manifest_path = a.out.join(RUN_MANIFEST);
    if cli.dry_run {
        print_plan("evaluate", &[report_path, csv_path, manifest_path]);
        return Ok(());
    }
    let Loaded { ckpt, set } = load_for_eval(&a.checkpoint, &a.data, a.config.as_deref(), a.ablate_dependency)?;
    let mut manifest = RunManifest::start("evaluate");
    manifest.config_digest = Some(ckpt.meta.config.digest());
    manifest.seed = a.stochastic;
    let opts = EvalOptions {
        batch_size: a.batch_size,
        stochastic: a.stochastic,
        checkpoint: ckpt.path.display().to_string(),
        config_digest: ckpt.meta.config.digest(),
        dataset: a.data.display().to_string(),
    };
    let report = evaluate(&ckpt.model, &set, &opts)?;
    create_dir(&a.out)?;
    report.write_json(&report_path)?;
    report.write_csv(&csv_path)?;
    manifest.finish(&manifest_path, &[report_path.clone(), csv_path])?;
    println!("sequences {}", report.n_sequences);
    println!("bce {:.4} (copy-last baseline {:.4})", report.bce, report.baseline_bce);
    println!("mse {:.4} (copy-last baseline {:.4})", report.mse, report.baseline_mse);
    let shares: Vec<String> = report.component_mass_share.iter().map(|s| format!("{s:.4}")).collect();
    println!("component mass share {}", shares.join(" "));
    if let Some(s) = report.series.get("velocity_cosine") {
        println!("velocity cosine {:.4}", s.aggregate.unwrap_or(f64::NAN));
    }
    if let Some(s) = report.series.get("velocity_magnitude_error") {
        println!("velocity magnitude error {:.4}", s.aggregate.unwrap_or(f64::NAN));
    }
    println!("report {}", report_path.display());
    Ok(())
}

#[derive(Serialize)]
struct InspectSummary {
    checkpoint: String,
    index: usize,
    input_len: usize,
    pred_len: usize,
    /// Per component, predicted-window pixel mass.
    component_mass: Vec<f64>,
    /// Per component, per frame `(s, tx, ty)`.
    poses: Vec<Vec<[f64; 3]>>,
}

fn frames_of(t: &candle_core::Tensor) -> Result<Vec<Vec<f32>>> {
    // (frames, h, w) -> one flat vector per frame
    let (n, h, w) = t.dims3()?;
    Ok(t.to_dtype(DType::F32)?.reshape((n, h * w))?.to_vec2::<f32>()?)
}

fn inspect_cmd(cli: &Cli, a: &InspectArgs) -> Result<()> {
    let grid_path = a.out.join("grid.png");
    let boxes_path = a.out.join("grid_boxes.png");
    let gif_path = a.out.join("sequence.gif");
    let summary_path = a.out.join("inspect.json");
    let manifest_path = a.out.join(RUN_MANIFEST);
    let mut files = vec![grid_path.clone(), boxes_path.clone(), summary_path.clone()];
    if a.gif {
        files.push(gif_path.clone());
    }
    if cli.dry_run {
        let mut plan = files.clone();
        plan.push(manifest_path);
        print_plan("inspect", &plan);
        return Ok(());
    }
    if a.scale == 0 {
        return Err(ddpae::Error::Config("--scale must be positive".into()).into());
    }
    let Loaded { ckpt, set } = load_for_eval(&a.checkpoint, &a.data, None, a.ablate_dependency)?;
    let seq = set.sequences.get(a.index).ok_or_else(|| {
        ddpae::Error::Range(format!("sequence {} of a set with {}", a.index, set.sequences.len()))
    })?;
    let model = &ckpt.model;
    let (t, k, size) = (seq.input_len(), seq.pred_len(), seq.size());
    let n = model.config().n_components;
    let (inputs, targets) = batch_tensors(std::slice::from_ref(seq), model.dtype())?;
    let out = match a.stochastic {
        Some(s) => model.forward(&inputs, k, &mut Sampling::Random(&mut noise_rng(s, a.index as u64)))?,
        None => model.forward(&inputs, k, &mut Sampling::Mean)?,
    };

    let comps = out.component_frames.get(0)?;
    let mut rows = vec![
        frames_of(&inputs.get(0)?)?,
        frames_of(&targets.get(0)?)?,
        frames_of(&out.prediction.get(0)?)?,
    ];
    for i in 0..n {
        rows.push(frames_of(&comps.get(i)?.narrow(0, t, k)?)?);
    }
    let poses: Vec<Vec<[f64; 3]>> = out
        .latents
        .constrained_poses()?
        .get(0)?
        .to_dtype(DType::F64)?
        .to_vec3::<f64>()?
        .into_iter()
        .map(|c| c.into_iter().map(|p| [p[0], p[1], p[2]]).collect())
        .collect();

    let plain = grid(&rows, size, a.scale);
    let mut boxed = plain.clone();
    for (i, comp) in poses.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for j in 0..k {
            let pose = comp[t + j];
            draw_window(&mut boxed, cell_origin(2, j, size, a.scale), size, a.scale, pose, color);
            draw_window(&mut boxed, cell_origin(3 + i, j, size, a.scale), size, a.scale, pose, color);
        }
        for j in 0..t {
            draw_window(&mut boxed, cell_origin(0, j, size, a.scale), size, a.scale, comp[j], color);
        }
    }

    create_dir(&a.out)?;
    let mut manifest = RunManifest::start("inspect");
    manifest.config_digest = Some(ckpt.meta.config.digest());
    manifest.seed = a.stochastic;
    plain.save(&grid_path).with_context(|| format!("writing {}", grid_path.display()))?;
    boxed.save(&boxes_path).with_context(|| format!("writing {}", boxes_path.display()))?;
    if a.gif {
        let truth: Vec<Vec<f32>> = rows[0].iter().chain(&rows[1]).cloned().collect();
        let model_frames: Vec<Vec<f32>> = frames_of(&out.reconstruction.get(0)?)?
            .into_iter()
            .chain(rows[2].iter().cloned())
            .collect();
        write_gif(&gif_path, &truth, &model_frames, &poses, size, a.scale)?;
    }
    let masses = component_masses(&out.component_frames, t..t + k)?;
    let summary = InspectSummary {
        checkpoint: ckpt.path.display().to_string(),
        index: a.index,
        input_len: t,
        pred_len: k,
        component_mass: masses[0].clone(),
        poses,
    };
    write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    manifest.finish(&manifest_path, &files)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

/// Ground truth and model output side by side, one GIF frame per video
/// frame, with attention windows on the model side.
fn write_gif(
    path: &Path,
    truth: &[Vec<f32>],
    model: &[Vec<f32>],
    poses: &[Vec<[f64; 3]>],
    size: usize,
    scale: u32,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut enc = GifEncoder::new_with_speed(file, 10);
    enc.set_repeat(Repeat::Infinite)?;
    for (f, (a, b)) in truth.iter().zip(model).enumerate() {
        let mut img: RgbImage = grid(&[vec![a.clone(), b.clone()]], size, scale);
        for (i, comp) in poses.iter().enumerate() {
            draw_window(&mut img, cell_origin(0, 1, size, scale), size, scale, comp[f], PALETTE[i % PALETTE.len()]);
        }
        let rgba = DynamicImage::ImageRgb8(img).into_rgba8();
        enc.encode_frame(Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(200, 1)))?;
    }
    Ok(())
}
