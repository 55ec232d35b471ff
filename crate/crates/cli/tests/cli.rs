use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddpae::datasets::{generate_fixed_set, BallConfig, DatasetConfig, Generator};
use ddpae::evaluation::EvalReport;
use ddpae::model::ModelConfig;
use ddpae::training::{read_metrics, PriorSpec, TrainConfig};
use serde_json::Value;

fn ddpae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddpae"))
        .args(args)
        .env_remove("DDPAE_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ddpae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_balls() -> BallConfig {
    BallConfig {
        n_balls: 2,
        radius: 2.5,
        arena_size: 16.0,
        frame_size: 16,
        min_speed: 0.5,
        max_speed: 1.5,
        input_len: 3,
        pred_len: 2,
        ..BallConfig::default()
    }
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::profile("balls-4").unwrap();
    cfg.profile = None;
    cfg.dataset = DatasetConfig::BouncingBalls(tiny_balls());
    cfg.model = ModelConfig::miniature();
    cfg.priors = PriorSpec::with_scale(0.8);
    cfg.iterations = 3;
    cfg.batch_size = 2;
    cfg.checkpoint_every = 2;
    cfg.seed = 4;
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &TrainConfig) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p
}

fn tiny_set(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.bin");
    generate_fixed_set(&Generator::BouncingBalls(tiny_balls()), 3, 8, &p).unwrap();
    p
}

fn sha_lines(stdout: &str) -> Vec<String> {
    stdout.lines().filter(|l| l.contains("sha256")).map(String::from).collect()
}

fn idx(n: usize) -> Vec<u8> {
    let mut b = Vec::new();
    for w in [0x0803u32, n as u32, 28, 28] {
        b.extend_from_slice(&w.to_be_bytes());
    }
    for k in 0..n {
        for y in 0..28usize {
            for x in 0..28usize {
                let d2 = (x as i64 - 14).pow(2) + (y as i64 - 10 - k as i64).pow(2);
                b.push(if d2 < 30 { 255 } else { 0 });
            }
        }
    }
    b
}

#[test]
fn generated_sets_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = ok(&["generate-data", "--profile", "balls-4", "--n", "3", "--seed", "5", "--out", s(&a)]);
    let second = ok(&["generate-data", "--profile", "balls-4", "--n", "3", "--seed", "5", "--out", s(&b)]);
    assert_eq!(sha_lines(&first), sha_lines(&second));
    assert_eq!(sha_lines(&first).len(), 2);
    let name = "balls-4-train-s5-n3.bin";
    assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    let run: Value = serde_json::from_slice(&fs::read(a.join("balls-4-train-s5-n3.run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "generate-data");
    assert_eq!(run["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn moving_mnist_sets_read_idx_digits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("t10k-images-idx3-ubyte"), idx(4)).unwrap();
    let out = dir.path().join("sets");
    let args = ["--data-dir", s(&data), "generate-data", "--profile", "mnist-2", "--split", "test", "--n", "2", "--out", s(&out)];
    let first = ok(&args);
    assert_eq!(sha_lines(&first), sha_lines(&ok(&args)));
    let set = ddpae::datasets::load_fixed_set(out.join("mnist-2-test-s0-n2.bin")).unwrap();
    assert_eq!(set.sequences.len(), 2);
    assert_eq!(set.sequences[0].size(), 64);

    let missing = ddpae(&["--data-dir", s(&data), "generate-data", "--profile", "mnist-2", "--n", "2", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = ddpae(&["generate-data", "--profile", "nope", "--n", "3", "--out", s(dir.path())]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(ddpae(&["train"]).status.code(), Some(2));
    let zero = ddpae(&["generate-data", "--profile", "balls-4", "--n", "0", "--out", s(dir.path())]);
    assert_eq!(zero.status.code(), Some(2));
    let cfg = dir.path().join("broken.json");
    fs::write(&cfg, "{\"iterations\": 3}").unwrap();
    assert_eq!(ddpae(&["train", "--config", s(&cfg)]).status.code(), Some(2));
    assert!(fs::read_dir(dir.path()).unwrap().count() == 1);
}

#[test]
fn dry_runs_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let plan = ok(&["--dry-run", "generate-data", "--profile", "balls-4", "--n", "3", "--out", s(&out)]);
    assert!(plan.contains("balls-4-train-s0-n3.bin"));
    let cfg = write_config(dir.path(), "c.json", &tiny_config());
    ok(&["--dry-run", "train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!out.exists());
}

#[test]
fn train_resume_evaluate_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "c.json", &tiny_config());
    let run = dir.path().join("run");
    let stdout = ok(&["train", "--config", s(&cfg_path), "--out", s(&run)]);
    assert!(stdout.contains("trained to iteration 3"));
    let log = read_metrics(&run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(run.join("checkpoints").is_dir());
    let manifest: Value = serde_json::from_slice(&fs::read(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 4);

    ok(&["train", "--config", s(&cfg_path), "--out", s(&run), "--iters", "5", "--resume"]);
    let log = read_metrics(&run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);

    let set = tiny_set(dir.path());
    let eval = dir.path().join("eval");
    let stdout = ok(&["evaluate", "--checkpoint", s(&run), "--data", s(&set), "--out", s(&eval), "--batch-size", "2"]);
    assert!(stdout.contains("velocity cosine"));
    let report = EvalReport::read_json(&eval.join("report.json")).unwrap();
    assert_eq!(report.n_sequences, 3);
    assert_eq!((report.input_len, report.pred_len), (3, 2));
    assert!(report.velocity.is_some());
    let mut resumed = tiny_config();
    resumed.iterations = 5;
    assert_eq!(report.config_digest, resumed.digest());
    assert!(fs::read_to_string(eval.join("curves.csv")).unwrap().starts_with("frame,"));

    let mut other = tiny_config();
    other.model.hidden = 9;
    let other_path = write_config(dir.path(), "other.json", &other);
    let mismatch = ddpae(&["evaluate", "--checkpoint", s(&run), "--data", s(&set), "--config", s(&other_path), "--out", s(&eval)]);
    assert_eq!(mismatch.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("model.hidden"));

    let insp = dir.path().join("inspect");
    ok(&["inspect", "--checkpoint", s(&run), "--data", s(&set), "--index", "1", "--scale", "1", "--gif", "--out", s(&insp)]);
    let img = image::open(insp.join("grid.png")).unwrap().to_rgb8();
    let (tile, gap) = (16u32, 2u32);
    assert_eq!(img.dimensions(), (3 * tile + 2 * gap, 5 * tile + 4 * gap));
    let level = |row: u32, col: u32, x: u32, y: u32| img.get_pixel(col * (tile + gap) + x, row * (tile + gap) + y)[0] as i32;
    let mut worst = 0;
    for col in 0..2 {
        for y in 0..tile {
            for x in 0..tile {
                let sum = (level(3, col, x, y) + level(4, col, x, y)).min(255);
                worst = worst.max((sum - level(2, col, x, y)).abs());
            }
        }
    }
    assert!(worst <= 2, "components differ from the prediction by {worst} levels");
    assert!(insp.join("grid_boxes.png").exists() && insp.join("sequence.gif").exists());
    let summary: Value = serde_json::from_slice(&fs::read(insp.join("inspect.json")).unwrap()).unwrap();
    assert_eq!(summary["component_mass"].as_array().unwrap().len(), 2);
    assert_eq!(summary["poses"][0].as_array().unwrap().len(), 5);

    let out_of_range = ddpae(&["inspect", "--checkpoint", s(&run), "--data", s(&set), "--index", "7", "--out", s(&insp)]);
    assert_eq!(out_of_range.status.code(), Some(3));
}

#[test]
fn diverging_training_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.iterations = 4;
    cfg.lr_decay_at = Some(2);
    cfg.lr_final = 1e300;
    let path = write_config(dir.path(), "c.json", &cfg);
    let run = dir.path().join("run");
    let out = ddpae(&["train", "--config", s(&path), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoints").is_dir());
}
