#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use ddpae::datasets::{BallConfig, Generator};
use ddpae::model::{Ddpae, ModelConfig};
use ddpae::training::batch_tensors;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two balls in a 16-pixel frame, 3 input and 2 predicted frames.
pub fn tiny_balls() -> BallConfig {
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

pub fn miniature(seed: u64) -> Ddpae {
    Ddpae::new(ModelConfig::miniature(), seed).unwrap()
}

/// `(inputs, targets)` of `b` tiny ball clips in `dtype`.
pub fn ball_batch(b: usize, seed: u64, dtype: DType) -> (Tensor, Tensor) {
    let gen = Generator::BouncingBalls(tiny_balls());
    let seqs: Vec<_> = (0..b as u64)
        .map(|i| gen.sample_indexed(seed, i).unwrap().video)
        .collect();
    batch_tensors(&seqs, dtype).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random image smoothed by repeated 3x3 box filtering.
pub fn blurred_image(rng: &mut ChaCha8Rng, h: usize, w: usize, passes: usize) -> Vec<f64> {
    let mut img: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    for _ in 0..passes {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut c) = (0.0, 0.0);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            s += img[yy as usize * w + xx as usize];
                            c += 1.0;
                        }
                    }
                }
                out[y * w + x] = s / c;
            }
        }
        img = out;
    }
    img
}

pub fn tensor(v: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

/// Miniature model on tiny ball clips, a few iterations at batch 2.
pub fn tiny_train_config(iterations: u64) -> ddpae::training::TrainConfig {
    let mut cfg = ddpae::training::TrainConfig::profile("balls-4").unwrap();
    cfg.profile = None;
    cfg.dataset = ddpae::datasets::DatasetConfig::BouncingBalls(tiny_balls());
    cfg.model = ModelConfig::miniature();
    cfg.priors = ddpae::training::PriorSpec::with_scale(0.8);
    cfg.iterations = iterations;
    cfg.batch_size = 2;
    cfg.checkpoint_every = 2;
    cfg.seed = 17;
    cfg
}

pub fn tiny_source(cfg: &ddpae::training::TrainConfig) -> ddpae::training::GeneratorSource {
    ddpae::training::GeneratorSource {
        generator: Generator::BouncingBalls(tiny_balls()),
        seed: cfg.seed,
    }
}

/// Monte Carlo estimate of `KL(q || p)` for 1-d Gaussians from `n` draws.
pub fn monte_carlo_kl(rng: &mut ChaCha8Rng, q: (f64, f64), p: (f64, f64), n: usize) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let log_pdf = |x: f64, (m, s): (f64, f64)| -0.5 * ((x - m) / s).powi(2) - s.ln();
    let mut acc = 0.0;
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(rng);
        let x = q.0 + q.1 * e;
        acc += log_pdf(x, q) - log_pdf(x, p);
    }
    acc / n as f64
}

pub fn closed_form_kl(q: (f64, f64), p: (f64, f64)) -> f64 {
    (p.1 / q.1).ln() + (q.1 * q.1 + (q.0 - p.0).powi(2)) / (2.0 * p.1 * p.1) - 0.5
}

/// `n` synthetic 28x28 "digits": soft blobs at random places.
pub fn synthetic_digits(n: usize, seed: u64) -> ddpae::datasets::MnistDigits {
    let mut r = rng(seed);
    let mut pixels = Vec::with_capacity(n * 28 * 28);
    for _ in 0..n {
        let (cx, cy) = (r.random_range(8.0..20.0), r.random_range(8.0..20.0));
        let w: f64 = r.random_range(3.0..6.0);
        for y in 0..28 {
            for x in 0..28 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                pixels.push((1.2 * (-d2 / (2.0 * w * w)).exp()).min(1.0) as f32);
            }
        }
    }
    ddpae::datasets::MnistDigits::from_pixels(pixels).unwrap()
}

/// Raw IDX3 bytes for the given 8-bit 28x28 images.
pub fn idx_bytes(images: &[Vec<u8>]) -> Vec<u8> {
    let mut b = Vec::new();
    for w in [0x0803u32, images.len() as u32, 28, 28] {
        b.extend_from_slice(&w.to_be_bytes());
    }
    for im in images {
        b.extend_from_slice(im);
    }
    b
}
