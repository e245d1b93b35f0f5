//! Severity scorers: weighted linear and multiplicative aggregation over
//! simplex weights, and the learnable second-order polynomial with sigmoid.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, IssError, Result};
use crate::risk_model::RiskVector;

const SIMPLEX_TOL: f64 = 1e-9;

/// The four classic incident attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FourFactorRepr")]
pub struct FourFactor {
    pub impact: f64,
    pub exploitability: f64,
    pub replicability: f64,
    pub exposure: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FourFactorRepr {
    impact: f64,
    exploitability: f64,
    replicability: f64,
    exposure: f64,
}

impl TryFrom<FourFactorRepr> for FourFactor {
    type Error = IssError;

    fn try_from(r: FourFactorRepr) -> Result<Self> {
        FourFactor::new(r.impact, r.exploitability, r.replicability, r.exposure)
    }
}

impl FourFactor {
    pub fn new(impact: f64, exploitability: f64, replicability: f64, exposure: f64) -> Result<Self> {
        check_unit("impact", impact)?;
        check_unit("exploitability", exploitability)?;
        check_unit("replicability", replicability)?;
        check_unit("exposure", exposure)?;
        Ok(FourFactor {
            impact,
            exploitability,
            replicability,
            exposure,
        })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.impact, self.exploitability, self.replicability, self.exposure]
    }

    pub fn to_risk_vector(&self) -> RiskVector {
        RiskVector::with_labels(
            self.as_array().to_vec(),
            ["impact", "exploitability", "replicability", "exposure"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .expect("validated factors")
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = IssError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexWeights::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

impl SimplexWeights {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(IssError::validation("weights", "weight vector is empty"));
        }
        for (i, w) in entries.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(IssError::validation(
                    format!("weights[{i}]"),
                    format!("{w} must be finite and non-negative"),
                ));
            }
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(IssError::validation(
                "weights",
                format!("entries sum to {sum}, expected 1"),
            ));
        }
        Ok(SimplexWeights(entries))
    }

    /// Rescale non-negative entries so they sum to one.
    pub fn normalized(entries: Vec<f64>) -> Result<Self> {
        let sum: f64 = entries.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(IssError::validation("weights", "cannot normalize: sum is not positive"));
        }
        Self::new(entries.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform weights need n > 0");
        SimplexWeights(vec![1.0 / n as f64; n])
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_dims(context: &str, values: &[f64], weights: &SimplexWeights) -> Result<()> {
    if values.len() != weights.len() {
        return Err(IssError::dimension(context, values.len(), weights.len()));
    }
    Ok(())
}

/// Weighted average `sum_i w_i * f_i` of any factor vector.
pub fn weighted_linear(f: &RiskVector, weights: &SimplexWeights) -> Result<f64> {
    check_dims("linear aggregation", f.entries(), weights)?;
    let s: f64 = f
        .entries()
        .iter()
        .zip(weights.entries())
        .map(|(x, w)| x * w)
        .sum();
    Ok(s.clamp(0.0, 1.0))
}

/// Geometric aggregation `1 - prod_i (1 - f_i)^{w_i}` with `x^0 = 1`.
pub fn weighted_multiplicative(f: &RiskVector, weights: &SimplexWeights) -> Result<f64> {
    check_dims("multiplicative aggregation", f.entries(), weights)?;
    let mut prod = 1.0;
    for (x, w) in f.entries().iter().zip(weights.entries()) {
        if *w == 0.0 {
            continue;
        }
        prod *= (1.0 - x).powf(*w);
    }
    Ok((1.0 - prod).clamp(0.0, 1.0))
}

pub fn iss_linear(factors: &FourFactor, weights: &SimplexWeights) -> Result<f64> {
    weighted_linear(&factors.to_risk_vector(), weights)
}

pub fn iss_multiplicative(factors: &FourFactor, weights: &SimplexWeights) -> Result<f64> {
    weighted_multiplicative(&factors.to_risk_vector(), weights)
}

/// Logistic function in the branch form that never overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters of the polynomial scorer: linear coefficients, a symmetric
/// interaction matrix stored row-major, and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct ModelParams {
    linear: Vec<f64>,
    interaction: Vec<f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    d: usize,
    w: Vec<f64>,
    #[serde(rename = "W")]
    interaction: Vec<f64>,
    b: f64,
}

impl TryFrom<ParamsRepr> for ModelParams {
    type Error = IssError;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        if r.w.len() != r.d {
            return Err(IssError::dimension("params.w", r.d, r.w.len()));
        }
        ModelParams::new(r.w, r.interaction, r.b)
    }
}

impl From<ModelParams> for ParamsRepr {
    fn from(p: ModelParams) -> Self {
        ParamsRepr {
            d: p.dimension(),
            w: p.linear,
            interaction: p.interaction,
            b: p.bias,
        }
    }
}

impl ModelParams {
    /// Build parameters; the interaction matrix is replaced by `(W + W^T) / 2`.
    pub fn new(linear: Vec<f64>, interaction: Vec<f64>, bias: f64) -> Result<Self> {
        let d = linear.len();
        if d == 0 {
            return Err(IssError::validation("params.w", "dimension must be positive"));
        }
        if interaction.len() != d * d {
            return Err(IssError::dimension("params.W (row-major d*d)", d * d, interaction.len()));
        }
        for (i, v) in linear.iter().enumerate() {
            if !v.is_finite() {
                return Err(IssError::validation(format!("params.w[{i}]"), "not finite"));
            }
        }
        for (i, v) in interaction.iter().enumerate() {
            if !v.is_finite() {
                return Err(IssError::validation(format!("params.W[{i}]"), "not finite"));
            }
        }
        if !bias.is_finite() {
            return Err(IssError::validation("params.b", "not finite"));
        }
        let mut sym = interaction;
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (sym[i * d + j] + sym[j * d + i]);
                sym[i * d + j] = avg;
                sym[j * d + i] = avg;
            }
        }
        Ok(ModelParams {
            linear,
            interaction: sym,
            bias,
        })
    }

    pub fn zeros(d: usize) -> Self {
        ModelParams {
            linear: vec![0.0; d],
            interaction: vec![0.0; d * d],
            bias: 0.0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.linear.len()
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    /// Row-major `d x d` interaction matrix.
    pub fn interaction(&self) -> &[f64] {
        &self.interaction
    }

    pub fn interaction_at(&self, i: usize, j: usize) -> f64 {
        self.interaction[i * self.dimension() + j]
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Number of scalar parameters, counting the full interaction matrix.
    pub fn len(&self) -> usize {
        self.linear.len() + self.interaction.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flatten as `[w..., W row-major..., b]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.linear);
        out.extend_from_slice(&self.interaction);
        out.push(self.bias);
        out
    }

    pub fn from_flat(d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != d + d * d + 1 {
            return Err(IssError::dimension("flat params", d + d * d + 1, flat.len()));
        }
        ModelParams::new(
            flat[..d].to_vec(),
            flat[d..d + d * d].to_vec(),
            flat[d + d * d],
        )
    }

    /// `b + w^T f + f^T W f` for a raw slice; caller checks the dimension.
    pub(crate) fn logit_unchecked(&self, f: &[f64]) -> f64 {
        let d = self.dimension();
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.interaction[i * d..(i + 1) * d];
            let inner: f64 = row.iter().zip(f).map(|(w, x)| w * x).sum();
            quad += f[i] * inner;
        }
        let lin: f64 = self.linear.iter().zip(f).map(|(w, x)| w * x).sum();
        self.bias + lin + quad
    }

    pub fn logit(&self, f: &RiskVector) -> Result<f64> {
        if f.dimension() != self.dimension() {
            return Err(IssError::dimension("polynomial score", self.dimension(), f.dimension()));
        }
        let z = self.logit_unchecked(f.entries());
        if !z.is_finite() {
            return Err(IssError::Numeric {
                term: "logit b + w^T f + f^T W f".into(),
                value: z,
            });
        }
        Ok(z)
    }
}

/// `sigmoid(b + w^T f + f^T W f)`.
///
/// The result is strictly inside `(0, 1)` for moderate logits; for
/// `|logit| > ~37` it rounds to exactly 0.0 or 1.0 in double precision.
pub fn iss_polynomial(f: &RiskVector, params: &ModelParams) -> Result<f64> {
    Ok(sigmoid(params.logit(f)?))
}
