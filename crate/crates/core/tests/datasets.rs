mod common;

use std::sync::Arc;

use common::*;
use ddpae::datasets::*;
use ddpae::Error;
use proptest::prelude::*;
use rand::Rng;

fn mnist_generator(n_digits: usize) -> Generator {
    Generator::MovingMnist {
        config: MovingMnistConfig::with_digits(vec![n_digits]),
        digits: Arc::new(synthetic_digits(12, 4)),
    }
}

fn paste_oracle(tracks: &[DigitTrack], t: usize, size: usize) -> Vec<f32> {
    let mut acc = vec![0f64; size * size];
    for d in tracks {
        let (x0, y0) = (d.positions[t][0].round() as i64, d.positions[t][1].round() as i64);
        for (i, &v) in d.digit_image.iter().enumerate() {
            let (x, y) = (x0 + (i % 28) as i64, y0 + (i / 28) as i64);
            acc[y as usize * size + x as usize] += v as f64;
        }
    }
    acc.iter().map(|v| v.min(1.0) as f32).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn digits_move_by_a_constant_displacement(seed in any::<u64>(), n in 1usize..4) {
        let cfg = MovingMnistConfig::with_digits(vec![n]);
        let digits = synthetic_digits(5, 1);
        let (video, tracks) = sample_moving_mnist(&cfg, &digits, &mut rng(seed)).unwrap();
        prop_assert_eq!(tracks.len(), n);
        let limit = (cfg.frame_size - 28) as f64;
        for d in &tracks {
            let speed = (d.velocity[0].powi(2) + d.velocity[1].powi(2)).sqrt();
            prop_assert!(speed >= cfg.speed_min && speed <= cfg.speed_max);
            for w in d.positions.windows(2) {
                for axis in 0..2 {
                    let step = (w[1][axis] - w[0][axis]).abs();
                    prop_assert!((step - d.velocity[axis].abs()).abs() < 1e-9);
                    prop_assert!(w[1][axis] >= 0.0 && w[1][axis] <= limit);
                }
            }
        }
        for t in 0..video.n_frames() {
            let oracle = paste_oracle(&tracks, t, cfg.frame_size);
            prop_assert!(video.frame(t).iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-6));
            prop_assert_eq!(video.frame(t), &render_digit_frame(&tracks, t, cfg.frame_size)[..]);
        }
    }

    #[test]
    fn generated_frames_are_intensities(seed in any::<u64>(), index in 0u64..1000) {
        for g in [mnist_generator(2), Generator::BouncingBalls(BallConfig { frame_size: 32, arena_size: 32.0, radius: 3.0, min_speed: 1.0, max_speed: 2.0, ..BallConfig::default() })] {
            let s = g.sample_indexed(seed, index).unwrap();
            prop_assert!(s.video.frames().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(s.object_centers.len(), s.video.n_frames());
        }
    }

    #[test]
    fn indexed_samples_are_deterministic(seed in any::<u64>(), index in any::<u64>()) {
        for g in [mnist_generator(2), Generator::BouncingBalls(tiny_balls())] {
            let a = g.sample_indexed(seed, index).unwrap();
            let b = g.sample_indexed(seed, index).unwrap();
            prop_assert_eq!(a.video, b.video);
            prop_assert_eq!(a.object_centers, b.object_centers);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ball_energy_is_conserved_and_balls_never_overlap(seed in any::<u64>()) {
        let cfg = BallConfig::default();
        let traj = simulate_bouncing_balls(&cfg, &mut rng(seed)).unwrap();
        let e0 = traj.states[0].kinetic_energy();
        for s in &traj.states {
            prop_assert!(((s.kinetic_energy() - e0) / e0).abs() < 1e-9);
            prop_assert!(s.max_penetration() < 1e-6);
            for p in &s.positions {
                for axis in 0..2 {
                    prop_assert!(p[axis] >= cfg.radius - 1e-9 && p[axis] <= cfg.arena_size - cfg.radius + 1e-9);
                }
            }
        }
    }

    #[test]
    fn halving_the_substep_changes_little(seed in any::<u64>()) {
        let cfg = BallConfig::default();
        let traj = simulate_bouncing_balls(&cfg, &mut rng(seed)).unwrap();
        let mut s = traj.states[0].clone();
        let dt = 0.5 / cfg.substeps as f64;
        for t in 1..traj.states.len() {
            for _ in 0..2 * cfg.substeps {
                s = step_physics(&s, dt);
            }
            for (a, b) in s.positions.iter().zip(&traj.states[t].positions) {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                prop_assert!(d < 0.1, "frame {t}: drift {d}");
            }
        }
    }
}

#[test]
fn rendered_ball_centroid_sits_at_its_center() {
    let mut r = rng(8);
    for _ in 0..50 {
        let p = [r.random_range(20.0..108.0), r.random_range(20.0..108.0)];
        let s = BallState::new(vec![p], vec![[0.0, 0.0]], 12.0, 128.0);
        for size in [64usize, 128] {
            let f = render_balls(&s, size);
            let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
            for (i, &v) in f.iter().enumerate() {
                let v = v as f64;
                m += v;
                mx += v * ((i % size) as f64 + 0.5);
                my += v * ((i / size) as f64 + 0.5);
            }
            let scale = size as f64 / 128.0;
            assert!((mx / m - p[0] * scale).abs() < 1.0 && (my / m - p[1] * scale).abs() < 1.0);
            let r_px = 12.0 * scale;
            let area = std::f64::consts::PI * r_px * r_px;
            assert!((m - area).abs() / area < 0.05, "mass {m} vs area {area}");
        }
    }
}

#[test]
fn fixed_sets_round_trip_and_regenerate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let g = Generator::BouncingBalls(tiny_balls());
    let a = generate_fixed_set(&g, 6, 3, dir.path().join("a.bin")).unwrap();
    let b = generate_fixed_set(&g, 6, 3, dir.path().join("b.bin")).unwrap();
    assert_eq!(a.data_sha256, b.data_sha256);
    assert_eq!(a.tracks_sha256, b.tracks_sha256);
    let c = generate_fixed_set(&g, 6, 4, dir.path().join("c.bin")).unwrap();
    assert_ne!(a.data_sha256, c.data_sha256);

    let set = load_fixed_set(dir.path().join("a.bin")).unwrap();
    assert_eq!(set.sequences.len(), 6);
    assert_eq!(set.seed, 3);
    assert_eq!(set.kind, DatasetKind::BouncingBalls);
    for (i, s) in set.sequences.iter().enumerate() {
        let fresh = g.sample_indexed(3, i as u64).unwrap();
        for (x, y) in s.frames().iter().zip(fresh.video.frames()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert_eq!(set.object_centers[i], fresh.object_centers);
    }
    assert_eq!(load_manifest(dir.path().join("a.bin")).unwrap(), a);
}

#[test]
fn corrupt_fixed_sets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.bin");
    std::fs::write(&p, b"not a fixed set at all").unwrap();
    assert!(matches!(load_fixed_set(&p), Err(Error::Format { .. })));
    assert!(load_fixed_set(dir.path().join("missing.bin")).is_err());
}

#[test]
fn idx_images_load_scaled_to_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let imgs: Vec<Vec<u8>> = (0..3u8).map(|k| (0..784).map(|i| ((i * 7 + k as usize * 31) % 256) as u8).collect()).collect();
    let p = dir.path().join("train-images-idx3-ubyte");
    std::fs::write(&p, idx_bytes(&imgs)).unwrap();
    let d = load_idx_images(&p).unwrap();
    assert_eq!(d.len(), 3);
    for k in 0..3 {
        let expect: Vec<f32> = imgs[k].iter().map(|&b| b as f32 / 255.0).collect();
        assert_eq!(d.image(k), &expect[..]);
    }

    let mut bad = idx_bytes(&imgs);
    bad[3] = 0x01;
    std::fs::write(&p, &bad).unwrap();
    assert!(matches!(load_idx_images(&p), Err(Error::Format { .. })));
    let mut short = idx_bytes(&imgs);
    short.pop();
    std::fs::write(&p, &short).unwrap();
    assert!(matches!(load_idx_images(&p), Err(Error::Format { .. })));
}

#[test]
fn mnist_generators_need_a_data_directory() {
    let cfg = DatasetConfig::MovingMnist(MovingMnistConfig::default());
    assert!(matches!(Generator::from_config(&cfg, None, MnistSplit::Train), Err(Error::Config(_))));
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train-images-idx3-ubyte"), idx_bytes(&[vec![0; 784]])).unwrap();
    assert!(Generator::from_config(&cfg, Some(dir.path()), MnistSplit::Train).is_ok());
    assert!(Generator::from_config(&cfg, Some(dir.path()), MnistSplit::Test).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = BallConfig::default();
    c.radius = 80.0;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = MovingMnistConfig::default();
    c.n_digits = vec![0];
    assert!(sample_moving_mnist(&c, &synthetic_digits(1, 0), &mut rng(0)).is_err());
    assert!(VideoSequence::new(vec![0.5; 2 * 64], 1, 1, 8).is_ok());
    assert!(VideoSequence::new(vec![1.5; 2 * 64], 1, 1, 8).is_err());
}
