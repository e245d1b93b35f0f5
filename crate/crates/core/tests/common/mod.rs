#![allow(dead_code)]

use std::path::PathBuf;

use iss_core::{ModelParams, TrainingConfig, TrainingDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Objective evaluated straight from a flat parameter vector `[w, W, b]`,
/// with `W` used exactly as given (no symmetrization).
pub fn flat_objective(d: usize, theta: &[f64], xs: &[Vec<f64>], ys: &[f64], cfg: &TrainingConfig) -> f64 {
    let (w, rest) = theta.split_at(d);
    let (big_w, b) = rest.split_at(d * d);
    let b = b[0];
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let mut z = b;
        for i in 0..d {
            z += w[i] * x[i];
            for j in 0..d {
                z += x[i] * big_w[i * d + j] * x[j];
            }
        }
        let y_hat = 1.0 / (1.0 + (-z).exp());
        let r = (y - y_hat).abs();
        let delta = cfg.huber_delta;
        total += if r <= delta { 0.5 * r * r } else { delta * (r - 0.5 * delta) };
    }
    let mut reg: f64 = w.iter().chain(big_w).map(|t| t * t).sum();
    if cfg.regularize_bias {
        reg += b * b;
    }
    total / xs.len() as f64 + cfg.reg_lambda * reg
}

pub struct GradCase {
    pub d: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub params: ModelParams,
    pub cfg: TrainingConfig,
}

pub fn random_grad_case(rng: &mut ChaCha8Rng, d: usize, n: usize) -> GradCase {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let flat: Vec<f64> = (0..d + d * d + 1).map(|_| rng.random_range(-0.5..0.5)).collect();
    let params = ModelParams::from_flat(d, &flat).unwrap();
    let cfg = TrainingConfig {
        reg_lambda: rng.random_range(0.0..0.05),
        regularize_bias: rng.random_bool(0.5),
        ..TrainingConfig::default()
    };
    GradCase { d, xs, ys, params, cfg }
}

/// Largest relative gap between the analytic gradient and central
/// differences of [`flat_objective`].
pub fn max_gradient_error(case: &GradCase, h: f64) -> f64 {
    let data = TrainingDataset::from_slices(case.d, &case.xs, &case.ys).unwrap();
    let analytic = iss_core::gradient(&data, &case.params, &case.cfg).unwrap().to_flat();
    let theta = case.params.to_flat();
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[k] += h;
        minus[k] -= h;
        let numeric = (flat_objective(case.d, &plus, &case.xs, &case.ys, &case.cfg)
            - flat_objective(case.d, &minus, &case.xs, &case.ys, &case.cfg))
            / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

pub fn planted_theta(d: usize) -> ModelParams {
    let mut inter = vec![0.0; d * d];
    inter[1] = 0.3;
    inter[d] = 0.3;
    inter[2 * d + 3] = -0.25;
    inter[3 * d + 2] = -0.25;
    let linear: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 0.5 } else { -0.3 }).collect();
    ModelParams::new(linear, inter, -0.2).unwrap()
}

/// `n` rows with uniform features and labels `sigma(logit) + N(0, sd)`, clipped to `[0, 1]`.
pub fn planted_rows(theta: &ModelParams, n: usize, sd: f64, seed: u64) -> TrainingDataset {
    let d = theta.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let f = iss_core::RiskVector::new(x.clone()).unwrap();
        let clean = iss_core::iss_polynomial(&f, theta).unwrap();
        ys.push((clean + noise.sample(&mut rng)).clamp(0.0, 1.0));
        xs.push(x);
    }
    TrainingDataset::from_slices(d, &xs, &ys).unwrap()
}

pub fn recovery_config() -> TrainingConfig {
    TrainingConfig {
        reg_lambda: 0.001,
        learning_rate: 20.0,
        max_iters: 5000,
        tol_loss: 0.0,
        ..TrainingConfig::default()
    }
}
