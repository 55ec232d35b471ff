mod common;

use common::*;
use ddpae::datasets::{generate_fixed_set, load_fixed_set, Generator};
use ddpae::evaluation::*;
use ddpae::model::PoseVector;
use ddpae::training::BCE_EPS;
use ddpae::Error;
use rand::seq::SliceRandom;
use rand::Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn hungarian_matches_brute_force() {
    let mut r = rng(40);
    let perms = permutations(4);
    for _ in 0..1000 {
        let cost: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| r.random_range(0.0..10.0)).collect()).collect();
        let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
        let best = perms.iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
        let got = hungarian(&cost).unwrap();
        let mut seen = got.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!((total(&got) - best).abs() < 1e-9, "{} vs {best}", total(&got));
    }
}

#[test]
fn rectangular_matching_leaves_surplus_unmatched() {
    let comps = [[0.1, 0.1], [0.9, 0.9], [0.5, 0.5]];
    let balls = [[0.88, 0.91], [0.12, 0.1]];
    let a = match_components(&comps, &balls).unwrap();
    assert_eq!(a.ball_of, vec![Some(1), Some(0), None]);
    let a = match_components(&balls, &comps).unwrap();
    assert_eq!(a.ball_of, vec![Some(1), Some(0)]);
    assert!(matches!(match_components(&[], &balls), Err(Error::Contract(_))));
}

fn pose_at(center: [f64; 2], size: usize) -> PoseVector {
    PoseVector::new(2.0, 2.0 * center[0] / size as f64 - 1.0, 2.0 * center[1] / size as f64 - 1.0)
}

#[test]
fn ground_truth_poses_score_perfect_velocity() {
    let g = Generator::BouncingBalls(ddpae::datasets::BallConfig::default());
    let mut r = rng(41);
    for index in 0..10 {
        let s = g.sample_indexed(5, index).unwrap();
        let size = s.video.size();
        let n = s.object_centers[0].len();
        let truth: Vec<PositionTrack> = (0..n)
            .map(|k| PositionTrack::from_pixels(s.object_centers.iter().map(|f| f[k]), size))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let predicted: Vec<PositionTrack> = order
            .iter()
            .map(|&k| extract_positions(&s.object_centers.iter().map(|f| pose_at(f[k], size)).collect::<Vec<_>>()))
            .collect();
        let at = 9;
        let a = match_components(
            &predicted.iter().map(|p| p.positions[at]).collect::<Vec<_>>(),
            &truth.iter().map(|t| t.positions[at]).collect::<Vec<_>>(),
        )
        .unwrap();
        for (i, b) in a.pairs() {
            assert_eq!(order[i], b);
        }
        let frames: Vec<usize> = (10..19).collect();
        let m = velocity_metrics(&predicted, &truth, &a, &frames).unwrap();
        for e in m.magnitude_error().into_iter().flatten() {
            assert!(e < 1e-12, "magnitude error {e}");
        }
        for c in m.cosine().into_iter().flatten() {
            assert!((c - 1.0).abs() < 1e-12, "cosine {c}");
        }
    }
}

#[test]
fn frame_metrics_match_scalar_loops() {
    let mut r = rng(42);
    let (b, k, h, w) = (3, 4, 8, 8);
    let n = b * k * h * w;
    let p: Vec<f64> = (0..n).map(|i| if i % 17 == 0 { 0.0 } else { r.random() }).collect();
    let y: Vec<f64> = (0..n).map(|_| r.random()).collect();
    let (pt, yt) = (tensor(p.clone(), &[b, k, h, w]), tensor(y.clone(), &[b, k, h, w]));
    let bce = frame_bce_per_sequence(&pt, &yt).unwrap();
    let mse = frame_mse_per_sequence(&pt, &yt).unwrap();
    let mut bce_sum = 0.0;
    let mut mse_frames = vec![0.0; k];
    for s in 0..b {
        for f in 0..k {
            let (mut sb, mut sm) = (0.0, 0.0);
            for j in 0..h * w {
                let i = (s * k + f) * h * w + j;
                let q = p[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                sb -= y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln();
                sm += (p[i] - y[i]).powi(2);
            }
            assert!((bce[s][f] - sb).abs() < 1e-10);
            assert!((mse[s][f] - sm).abs() < 1e-10);
            bce_sum += sb;
            mse_frames[f] += sm / b as f64;
        }
    }
    assert!((eval_bce(&pt, &yt).unwrap() - bce_sum / b as f64).abs() < 1e-10);
    let mean_mse = mse_frames.iter().sum::<f64>() / k as f64;
    assert!((eval_mse(&pt, &yt).unwrap() - mean_mse).abs() < 1e-10);
    for (a, e) in frame_mse(&pt, &yt).unwrap().iter().zip(&mse_frames) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn copy_last_frame_repeats_the_final_input() {
    let x = tensor((0..2 * 3 * 4).map(|v| v as f64).collect(), &[2, 3, 2, 2]);
    let c = flat(&copy_last_frame(&x, 2).unwrap());
    assert_eq!(&c[..8], &[8.0, 9.0, 10.0, 11.0, 8.0, 9.0, 10.0, 11.0]);
    assert_eq!(&c[8..], &[20.0, 21.0, 22.0, 23.0, 20.0, 21.0, 22.0, 23.0]);
}

#[test]
fn reports_round_trip_through_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let g = Generator::BouncingBalls(tiny_balls());
    generate_fixed_set(&g, 5, 9, dir.path().join("set.bin")).unwrap();
    let set = load_fixed_set(dir.path().join("set.bin")).unwrap();
    let model = miniature(50);
    let report = evaluate(&model, &set, &EvalOptions { batch_size: 2, ..EvalOptions::default() }).unwrap();
    assert_eq!(report.format, REPORT_FORMAT);
    assert_eq!(report.n_sequences, 5);
    assert_eq!((report.input_len, report.pred_len), (3, 2));
    assert!(report.bce.is_finite() && report.mse.is_finite());
    assert_eq!(report.sampling_seed, None);

    let per_frame = &report.series["bce_per_frame"];
    assert_eq!(per_frame.frames, vec![3, 4]);
    let sum: f64 = per_frame.values.iter().flatten().sum();
    assert!((sum - report.bce).abs() < 1e-9 * report.bce.abs().max(1.0));
    assert!((report.series["mse_per_frame"].aggregate.unwrap() - report.mse).abs() < 1e-9);

    let shares = &report.component_mass_share;
    assert_eq!(shares.len(), 2);
    assert!(shares[0] >= shares[1]);
    assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let v = report.velocity.as_ref().expect("ball sets report velocity");
    assert_eq!(v.frames, vec![3]);
    assert!(report.series.contains_key("velocity_cosine"));

    let again = evaluate(&model, &set, &EvalOptions { batch_size: 5, ..EvalOptions::default() }).unwrap();
    assert!((again.bce - report.bce).abs() < 1e-9 * report.bce);
    let sampled = evaluate(&model, &set, &EvalOptions { stochastic: Some(1), ..EvalOptions::default() }).unwrap();
    assert_eq!(sampled.sampling_seed, Some(1));

    let path = dir.path().join("report.json");
    report.write_json(&path).unwrap();
    assert_eq!(EvalReport::read_json(&path).unwrap(), report);
    let csv = report.to_csv().unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "frame");
    assert_eq!(header.len(), 1 + report.series.len());
    assert!(lines.count() >= 2);
}

#[test]
fn evaluation_rejects_mismatched_frame_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ddpae::datasets::BallConfig { frame_size: 32, arena_size: 32.0, ..tiny_balls() };
    generate_fixed_set(&Generator::BouncingBalls(cfg), 2, 0, dir.path().join("s.bin")).unwrap();
    let set = load_fixed_set(dir.path().join("s.bin")).unwrap();
    assert!(evaluate(&miniature(1), &set, &EvalOptions::default()).is_err());
}
