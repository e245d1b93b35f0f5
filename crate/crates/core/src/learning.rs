//! Fitting the polynomial scorer by minimizing mean Huber loss plus an L2
//! penalty on all parameters, using full-batch gradient descent with a
//! backtracking line search.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_unit, IssError, Result};
use crate::risk_model::{assemble_risk_vector, IncidentRecord, RiskVector};
use crate::scoring::{sigmoid, ModelParams};

/// Halvings tried before a step is declared unproductive.
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Init {
    Zeros,
    /// Every parameter drawn uniformly from `[-0.1, 0.1]`.
    SeededUniform { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub huber_delta: f64,
    pub reg_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol_loss: f64,
    pub tol_grad: f64,
    pub regularize_bias: bool,
    pub init: Init,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            huber_delta: 0.1,
            reg_lambda: 0.01,
            learning_rate: 0.05,
            max_iters: 5000,
            tol_loss: 1e-9,
            tol_grad: 1e-7,
            regularize_bias: true,
            init: Init::Zeros,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta.is_finite() && self.huber_delta > 0.0) {
            return Err(IssError::validation("huber_delta", "must be > 0"));
        }
        if !(self.reg_lambda.is_finite() && self.reg_lambda >= 0.0) {
            return Err(IssError::validation("reg_lambda", "must be >= 0"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(IssError::validation("learning_rate", "must be > 0"));
        }
        if self.tol_loss.is_nan() || self.tol_grad.is_nan() {
            return Err(IssError::validation("tolerances", "must not be NaN"));
        }
        Ok(())
    }

    pub fn initial_params(&self, d: usize) -> ModelParams {
        match self.init {
            Init::Zeros => ModelParams::zeros(d),
            Init::SeededUniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let flat: Vec<f64> = (0..d + d * d + 1)
                    .map(|_| rng.random_range(-0.1..=0.1))
                    .collect();
                ModelParams::from_flat(d, &flat).expect("finite draws")
            }
        }
    }
}

/// Labeled rows `(f, y)` sharing one dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    d: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl TrainingDataset {
    pub fn new(rows: Vec<(RiskVector, f64)>) -> Result<Self> {
        let d = match rows.first() {
            Some((f, _)) => f.dimension(),
            None => return Err(IssError::InsufficientData("training dataset is empty".into())),
        };
        let mut features = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for (n, (f, y)) in rows.iter().enumerate() {
            if f.dimension() != d {
                return Err(IssError::dimension(format!("training row {n}"), d, f.dimension()));
            }
            check_unit(&format!("rows[{n}].y"), *y)?;
            features.extend_from_slice(f.entries());
            labels.push(*y);
        }
        Ok(TrainingDataset { d, features, labels })
    }

    /// Rows from raw slices; each feature is checked to lie in `[0, 1]`.
    pub fn from_slices(d: usize, features: &[Vec<f64>], labels: &[f64]) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(IssError::dimension("labels", features.len(), labels.len()));
        }
        let rows = features
            .iter()
            .zip(labels)
            .map(|(f, y)| {
                if f.len() != d {
                    return Err(IssError::dimension("training row", d, f.len()));
                }
                Ok((RiskVector::new(f.clone())?, *y))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Labeled incidents only; unlabeled ones are skipped.
    pub fn from_incidents(incidents: &[IncidentRecord]) -> Result<Self> {
        let rows = incidents
            .iter()
            .filter_map(|inc| inc.label.map(|y| (assemble_risk_vector(inc), y)))
            .collect();
        Self::new(rows)
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, n: usize) -> (&[f64], f64) {
        (&self.features[n * self.d..(n + 1) * self.d], self.labels[n])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.features.chunks_exact(self.d).zip(self.labels.iter().copied())
    }

    /// Deterministic shuffled split into (train, held-out). Both parts are
    /// non-empty when the dataset has at least two rows.
    pub fn split(&self, holdout_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&holdout_fraction) || self.len() < 2 {
            return Err(IssError::validation(
                "holdout_fraction",
                "need a fraction in [0, 1) and at least two rows",
            ));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_hold = ((self.len() as f64 * holdout_fraction).round() as usize).clamp(1, self.len() - 1);
        let take = |ids: &[usize]| {
            let mut features = Vec::with_capacity(ids.len() * self.d);
            let mut labels = Vec::with_capacity(ids.len());
            for &i in ids {
                let (f, y) = self.row(i);
                features.extend_from_slice(f);
                labels.push(y);
            }
            TrainingDataset { d: self.d, features, labels }
        };
        Ok((take(&idx[n_hold..]), take(&idx[..n_hold])))
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.dimension() != self.d {
            return Err(IssError::dimension("params vs dataset", self.d, params.dimension()));
        }
        Ok(())
    }
}

/// Huber loss of a prediction `y_hat` against a label `y`.
pub fn huber_loss(y: f64, y_hat: f64, delta: f64) -> Result<f64> {
    check_finite("y", y)?;
    check_finite("y_hat", y_hat)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(IssError::validation("huber_delta", "must be > 0"));
    }
    Ok(huber(y - y_hat, delta))
}

#[inline]
fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * a - 0.5 * delta * delta
    }
}

/// Mean Huber loss of `params` over the dataset, without the penalty.
pub fn mean_huber(data: &TrainingDataset, params: &ModelParams, delta: f64) -> Result<f64> {
    data.check_params(params)?;
    let total: f64 = data
        .rows()
        .map(|(f, y)| huber(y - sigmoid(params.logit_unchecked(f)), delta))
        .sum();
    Ok(total / data.len() as f64)
}

fn penalty(params: &ModelParams, cfg: &TrainingConfig) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut norm = sq(params.linear()) + sq(params.interaction());
    if cfg.regularize_bias {
        norm += params.bias() * params.bias();
    }
    cfg.reg_lambda * norm
}

/// Regularized training objective.
pub fn objective(data: &TrainingDataset, params: &ModelParams, cfg: &TrainingConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(mean_huber(data, params, cfg.huber_delta)? + penalty(params, cfg))
}

/// Analytic gradient of [`objective`], laid out like the parameters.
pub fn gradient(data: &TrainingDataset, params: &ModelParams, cfg: &TrainingConfig) -> Result<ModelParams> {
    cfg.validate()?;
    data.check_params(params)?;
    let flat = flat_gradient(data, params, cfg);
    ModelParams::from_flat(data.d, &flat)
}

fn flat_gradient(data: &TrainingDataset, params: &ModelParams, cfg: &TrainingConfig) -> Vec<f64> {
    let d = data.d;
    let mut g = vec![0.0; d + d * d + 1];
    for (f, y) in data.rows() {
        let y_hat = sigmoid(params.logit_unchecked(f));
        let clipped = (y - y_hat).clamp(-cfg.huber_delta, cfg.huber_delta);
        let dlogit = -clipped * y_hat * (1.0 - y_hat);
        if dlogit == 0.0 {
            continue;
        }
        for i in 0..d {
            g[i] += dlogit * f[i];
            let row = &mut g[d + i * d..d + (i + 1) * d];
            let scaled = dlogit * f[i];
            for (gij, fj) in row.iter_mut().zip(f) {
                *gij += scaled * fj;
            }
        }
        g[d + d * d] += dlogit;
    }
    let n = data.len() as f64;
    let theta = params.to_flat();
    let last = g.len() - 1;
    for (k, (gk, tk)) in g.iter_mut().zip(&theta).enumerate() {
        *gk /= n;
        if k != last || cfg.regularize_bias {
            *gk += 2.0 * cfg.reg_lambda * tk;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    LossTolerance,
    GradientTolerance,
    /// No step size down to `learning_rate / 2^30` decreased the loss.
    LineSearchExhausted,
}

/// Per-iteration record of a training run. Row 0 is the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> f64 {
        self.rows.last().map(|r| r.loss).unwrap_or(f64::NAN)
    }

    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    /// CSV with header `iteration,loss,grad_norm,step`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> IssError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IssError::Io(io),
        other => IssError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimize the objective from `cfg.init`.
///
/// Every accepted step does not increase the loss. A non-finite loss at the
/// start, or on every trial of a line search, is reported as divergence.
pub fn fit(data: &TrainingDataset, cfg: &TrainingConfig) -> Result<(ModelParams, TrainingTrace)> {
    cfg.validate()?;
    let d = data.d;
    let mut params = cfg.initial_params(d);
    let mut theta = params.to_flat();
    let mut loss = objective(data, &params, cfg)?;
    if !loss.is_finite() {
        return Err(IssError::TrainingDiverged { iteration: 0, loss });
    }
    let mut grad = flat_gradient(data, &params, cfg);
    let mut rows = vec![TraceRow {
        iteration: 0,
        loss,
        grad_norm: norm(&grad),
        step: 0.0,
    }];

    let mut stop = StopReason::MaxIters;
    for iteration in 1..=cfg.max_iters {
        let grad_norm = norm(&grad);
        if grad_norm < cfg.tol_grad {
            stop = StopReason::GradientTolerance;
            break;
        }

        let mut step = cfg.learning_rate;
        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            if let Ok(cand_params) = ModelParams::from_flat(d, &cand) {
                let cand_loss = objective(data, &cand_params, cfg)?;
                if cand_loss.is_finite() {
                    saw_finite = true;
                    if cand_loss <= loss {
                        accepted = Some((cand_params, cand_loss));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((next, next_loss)) = accepted else {
            if !saw_finite {
                return Err(IssError::TrainingDiverged { iteration, loss: f64::NAN });
            }
            stop = StopReason::LineSearchExhausted;
            break;
        };

        let improvement = loss - next_loss;
        params = next;
        theta = params.to_flat();
        loss = next_loss;
        grad = flat_gradient(data, &params, cfg);
        rows.push(TraceRow {
            iteration,
            loss,
            grad_norm: norm(&grad),
            step,
        });
        if improvement < cfg.tol_loss {
            stop = StopReason::LossTolerance;
            break;
        }
    }
    if stop == StopReason::MaxIters && norm(&grad) < cfg.tol_grad {
        stop = StopReason::GradientTolerance;
    }
    Ok((params, TrainingTrace { rows, stop }))
}

/// Mean absolute prediction error on a dataset.
pub fn mean_absolute_error(data: &TrainingDataset, params: &ModelParams) -> Result<f64> {
    data.check_params(params)?;
    let total: f64 = data
        .rows()
        .map(|(f, y)| (y - sigmoid(params.logit_unchecked(f))).abs())
        .sum();
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(d: usize, rows: &[(&[f64], f64)]) -> TrainingDataset {
        let feats: Vec<Vec<f64>> = rows.iter().map(|(f, _)| f.to_vec()).collect();
        let labels: Vec<f64> = rows.iter().map(|(_, y)| *y).collect();
        TrainingDataset::from_slices(d, &feats, &labels).unwrap()
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber_loss(0.5, 0.5, 0.1).unwrap(), 0.0);
        assert!((huber_loss(0.5, 0.45, 0.1).unwrap() - 0.00125).abs() < 1e-15);
        assert!((huber_loss(0.9, 0.6, 0.1).unwrap() - 0.025).abs() < 1e-15);
        assert!(huber_loss(f64::NAN, 0.5, 0.1).is_err());
        assert!(huber_loss(0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn huber_is_continuous_at_delta() {
        let d = 0.1;
        let below = huber(d - 1e-12, d);
        let above = huber(d + 1e-12, d);
        assert!((below - above).abs() < 1e-12);
        // slopes on both sides approach delta
        let h = 1e-7;
        let left = (huber(d, d) - huber(d - h, d)) / h;
        let right = (huber(d + h, d) - huber(d, d)) / h;
        assert!((left - d).abs() < 1e-6 && (right - d).abs() < 1e-6);
    }

    #[test]
    fn objective_examples() {
        let cfg = TrainingConfig::default();
        let data = ds(2, &[(&[0.1, 0.9], 0.5), (&[0.7, 0.2], 0.5)]);
        assert!(objective(&data, &ModelParams::zeros(2), &cfg).unwrap().abs() < 1e-15);

        let data = ds(1, &[(&[0.3], 0.6)]);
        let v = objective(&data, &ModelParams::zeros(1), &cfg).unwrap();
        assert!((v - 0.005).abs() < 1e-15, "{v}");
    }

    #[test]
    fn objective_matches_scalar_oracle_in_one_dimension() {
        let cfg = TrainingConfig { reg_lambda: 0.0, ..TrainingConfig::default() };
        let xs = [0.1, 0.4, 0.8, 1.0];
        let ys = [0.2, 0.9, 0.05, 0.6];
        let rows: Vec<(&[f64], f64)> = xs.iter().zip(ys).map(|(x, y)| (std::slice::from_ref(x), y)).collect();
        let data = ds(1, &rows);
        let (w, ww, b) = (1.3, -0.7, 0.2);
        let p = ModelParams::new(vec![w], vec![ww], b).unwrap();
        let oracle: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let yh = 1.0 / (1.0 + (-(b + w * x + ww * x * x)).exp());
                let r: f64 = y - yh;
                if r.abs() <= 0.1 { 0.5 * r * r } else { 0.1 * r.abs() - 0.005 }
            })
            .sum::<f64>()
            / 4.0;
        assert!((objective(&data, &p, &cfg).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn gradient_zero_at_perfect_fit() {
        let cfg = TrainingConfig { reg_lambda: 0.0, ..TrainingConfig::default() };
        let data = ds(3, &[(&[0.1, 0.2, 0.3], 0.5), (&[1.0, 0.0, 0.5], 0.5)]);
        let g = gradient(&data, &ModelParams::zeros(3), &cfg).unwrap();
        assert!(g.to_flat().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn gradient_of_penalty_alone() {
        // y equals the prediction so the data term vanishes; only 2*lambda*theta remains.
        let cfg = TrainingConfig::default();
        let p = ModelParams::new(vec![0.4, -0.2], vec![0.1, 0.3, 0.3, -0.5], 0.25).unwrap();
        let f = [0.6, 0.3];
        let y = sigmoid(p.logit_unchecked(&f));
        let data = ds(2, &[(&f, y)]);
        let g = gradient(&data, &p, &cfg).unwrap();
        for (gk, tk) in g.to_flat().iter().zip(p.to_flat()) {
            assert!((gk - 2.0 * 0.01 * tk).abs() < 1e-15);
        }
        let cfg = TrainingConfig { regularize_bias: false, ..cfg };
        assert_eq!(gradient(&data, &p, &cfg).unwrap().bias(), 0.0);
    }

    #[test]
    fn fit_with_no_iterations_returns_init() {
        let data = ds(2, &[(&[0.1, 0.9], 0.9)]);
        let cfg = TrainingConfig { max_iters: 0, ..TrainingConfig::default() };
        let (p, trace) = fit(&data, &cfg).unwrap();
        assert_eq!(p, ModelParams::zeros(2));
        assert_eq!(trace.iterations(), 0);

        let cfg = TrainingConfig { max_iters: 0, init: Init::SeededUniform { seed: 4 }, ..TrainingConfig::default() };
        let (p, _) = fit(&data, &cfg).unwrap();
        assert_eq!(p, cfg.initial_params(2));
        assert!(p.to_flat().iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn fit_is_deterministic_and_monotone() {
        let data = ds(
            2,
            &[(&[0.1, 0.9], 0.9), (&[0.8, 0.1], 0.2), (&[0.5, 0.5], 0.6), (&[0.0, 0.0], 0.1)],
        );
        let cfg = TrainingConfig {
            init: Init::SeededUniform { seed: 9 },
            learning_rate: 2.0,
            max_iters: 300,
            ..TrainingConfig::default()
        };
        let (a, ta) = fit(&data, &cfg).unwrap();
        let (b, tb) = fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for pair in ta.rows.windows(2) {
            assert!(pair[1].loss <= pair[0].loss);
        }
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(a.interaction_at(i, j), a.interaction_at(j, i));
            }
        }
    }

    #[test]
    fn trace_csv_has_header() {
        let data = ds(1, &[(&[0.5], 0.9)]);
        let cfg = TrainingConfig { max_iters: 2, ..TrainingConfig::default() };
        let (_, trace) = fit(&data, &cfg).unwrap();
        let csv = trace.to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iteration,loss,grad_norm,step"));
        assert_eq!(lines.count(), trace.rows.len());
    }

    #[test]
    fn dataset_validation() {
        assert!(TrainingDataset::new(vec![]).is_err());
        let a = RiskVector::new(vec![0.1, 0.2]).unwrap();
        let b = RiskVector::new(vec![0.1]).unwrap();
        assert!(TrainingDataset::new(vec![(a.clone(), 0.5), (b, 0.5)]).is_err());
        assert!(TrainingDataset::new(vec![(a, 1.5)]).is_err());
        let data = ds(1, &[(&[0.5], 0.9)]);
        assert!(objective(&data, &ModelParams::zeros(2), &TrainingConfig::default()).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let feats: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0]).collect();
        let labels = vec![0.5; 10];
        let data = TrainingDataset::from_slices(1, &feats, &labels).unwrap();
        let (tr, ho) = data.split(0.3, 7).unwrap();
        assert_eq!((tr.len(), ho.len()), (7, 3));
        assert_eq!(data.split(0.3, 7).unwrap(), (tr.clone(), ho.clone()));
        let mut all: Vec<f64> = tr.rows().chain(ho.rows()).map(|(f, _)| f[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, feats.iter().map(|f| f[0]).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_config_rejected() {
        let data = ds(1, &[(&[0.5], 0.9)]);
        for cfg in [
            TrainingConfig { huber_delta: 0.0, ..TrainingConfig::default() },
            TrainingConfig { reg_lambda: -1.0, ..TrainingConfig::default() },
            TrainingConfig { learning_rate: 0.0, ..TrainingConfig::default() },
        ] {
            assert!(fit(&data, &cfg).is_err());
        }
    }
}
