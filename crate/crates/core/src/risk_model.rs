//! Seven-category risk taxonomy and assembly of the canonical risk vector.
//!
//! Each category carries three raw sub-component measurements in `[0, 1]`
//! and three non-negative sub-weights. A category score is the weighted sum
//! of the measurements divided by the Euclidean norm of the measurement
//! vector, so it senses the *shape* of the measurements rather than their
//! magnitude. With equal weights `1/3` the score lies in `[1/3, 1/sqrt(3)]`
//! for any non-zero measurement vector, and is `0` for the all-zero vector.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, IssError, Result};

/// The seven risk categories in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Disc,
    Surv,
    Elec,
    Manip,
    Civic,
    Capture,
    Emerg,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Disc,
        Category::Surv,
        Category::Elec,
        Category::Manip,
        Category::Civic,
        Category::Capture,
        Category::Emerg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Disc => "disc",
            Category::Surv => "surv",
            Category::Elec => "elec",
            Category::Manip => "manip",
            Category::Civic => "civic",
            Category::Capture => "capture",
            Category::Emerg => "emerg",
        }
    }

    /// Label used for the corresponding risk-vector entry (`f_disc`, ...).
    pub fn factor_label(self) -> String {
        format!("f_{}", self.as_str())
    }

    /// Human-readable names of the three sub-components.
    pub fn sub_components(self) -> [&'static str; 3] {
        match self {
            Category::Disc => [
                "biasAmplification",
                "syntheticContentBias",
                "languageExclusion",
            ],
            Category::Surv => [
                "conversationalMonitoring",
                "politicalSentimentTracking",
                "dissentDetection",
            ],
            Category::Elec => [
                "generatedPropaganda",
                "personalizedPoliticalAds",
                "syntheticNewsGeneration",
            ],
            Category::Manip => [
                "conversationalManipulation",
                "botAmplification",
                "deepfakeTextGeneration",
            ],
            Category::Civic => [
                "echoAmplification",
                "personalizationBubbles",
                "radicalizationPathways",
            ],
            Category::Capture => [
                "modelConcentration",
                "infrastructureDependence",
                "providerCapture",
            ],
            Category::Emerg => ["cascadeRisk", "goalMisalignment", "emergentBehaviors"],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = IssError;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| IssError::validation("category", format!("unknown category `{s}`")))
    }
}

pub const EQUAL_SUB_WEIGHTS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// Raw sub-component measurements of one category together with their sub-weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TripleRepr")]
pub struct SubComponentTriple {
    values: [f64; 3],
    weights: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleRepr {
    values: [f64; 3],
    #[serde(default)]
    weights: Option<[f64; 3]>,
}

impl TryFrom<TripleRepr> for SubComponentTriple {
    type Error = IssError;

    fn try_from(repr: TripleRepr) -> Result<Self> {
        SubComponentTriple::new(repr.values, repr.weights.unwrap_or(EQUAL_SUB_WEIGHTS))
    }
}

impl SubComponentTriple {
    pub fn new(values: [f64; 3], weights: [f64; 3]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            check_unit(&format!("values[{i}]"), *v)?;
        }
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(IssError::validation(
                    format!("weights[{i}]"),
                    format!("{w} must be finite and non-negative"),
                ));
            }
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(IssError::validation("weights", "all sub-weights are zero"));
        }
        Ok(SubComponentTriple { values, weights })
    }

    /// Measurements with the default equal sub-weights.
    pub fn equal(values: [f64; 3]) -> Result<Self> {
        Self::new(values, EQUAL_SUB_WEIGHTS)
    }

    pub fn zero() -> Self {
        SubComponentTriple {
            values: [0.0; 3],
            weights: EQUAL_SUB_WEIGHTS,
        }
    }

    pub fn values(&self) -> [f64; 3] {
        self.values
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn with_weights(&self, weights: [f64; 3]) -> Result<Self> {
        Self::new(self.values, weights)
    }
}

/// Score one category: `(sum_i weight_i * value_i) / ||values||_2`, clamped to `[0, 1]`.
///
/// The all-zero measurement vector scores 0.
pub fn category_score(triple: &SubComponentTriple) -> f64 {
    let norm = triple.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let weighted: f64 = triple
        .values
        .iter()
        .zip(triple.weights.iter())
        .map(|(v, w)| v * w)
        .sum();
    let raw = weighted / norm;
    if raw > 1.0 {
        log::warn!("category score {raw} exceeds 1 (sub-weights {:?}); clamping", triple.weights);
        1.0
    } else {
        raw.max(0.0)
    }
}

/// A risk factor vector with one entry in `[0, 1]` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RiskVectorRepr")]
pub struct RiskVector {
    entries: Vec<f64>,
    labels: Vec<String>,
}

#[derive(Deserialize)]
struct RiskVectorRepr {
    entries: Vec<f64>,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

impl TryFrom<RiskVectorRepr> for RiskVector {
    type Error = IssError;

    fn try_from(repr: RiskVectorRepr) -> Result<Self> {
        match repr.labels {
            Some(labels) => RiskVector::with_labels(repr.entries, labels),
            None => RiskVector::new(repr.entries),
        }
    }
}

impl RiskVector {
    /// Vector with generic labels `f1..fd`.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let labels = (1..=entries.len()).map(|i| format!("f{i}")).collect();
        Self::with_labels(entries, labels)
    }

    pub fn with_labels(entries: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if entries.is_empty() {
            return Err(IssError::validation("entries", "risk vector is empty"));
        }
        if labels.len() != entries.len() {
            return Err(IssError::dimension("risk vector labels", entries.len(), labels.len()));
        }
        for (i, e) in entries.iter().enumerate() {
            check_unit(&format!("entries[{i}]"), *e)?;
        }
        Ok(RiskVector { entries, labels })
    }

    /// Canonical seven-category vector in taxonomy order.
    pub fn canonical(entries: [f64; 7]) -> Result<Self> {
        Self::with_labels(entries.to_vec(), canonical_labels())
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dimension(&self) -> usize {
        self.entries.len()
    }
}

pub fn canonical_labels() -> Vec<String> {
    Category::ALL.iter().map(|c| c.factor_label()).collect()
}

/// One incident: identifier, time, per-category measurements and an optional severity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IncidentRepr")]
pub struct IncidentRecord {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    categories: BTreeMap<Category, SubComponentTriple>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IncidentRepr {
    id: String,
    timestamp: DateTime<Utc>,
    categories: BTreeMap<Category, RawTriple>,
    #[serde(default)]
    label: Option<f64>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTriple {
    values: [f64; 3],
    #[serde(default)]
    weights: Option<[f64; 3]>,
}

impl TryFrom<IncidentRepr> for IncidentRecord {
    type Error = IssError;

    fn try_from(repr: IncidentRepr) -> Result<Self> {
        let mut categories = BTreeMap::new();
        for (cat, raw) in repr.categories {
            let triple =
                SubComponentTriple::new(raw.values, raw.weights.unwrap_or(EQUAL_SUB_WEIGHTS))
                    .map_err(|e| e.in_field(&format!("categories.{cat}")))?;
            categories.insert(cat, triple);
        }
        IncidentRecord::new(repr.id, repr.timestamp, categories, repr.label, repr.metadata)
    }
}

impl IncidentRecord {
    pub fn new(
        id: impl Into<String>,
        timestamp: DateTime<Utc>,
        categories: BTreeMap<Category, SubComponentTriple>,
        label: Option<f64>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(IssError::validation("id", "incident id is empty"));
        }
        for cat in Category::ALL {
            if !categories.contains_key(&cat) {
                return Err(IssError::validation(
                    format!("categories.{cat}"),
                    "category is missing",
                ));
            }
        }
        if let Some(y) = label {
            check_unit("label", y)?;
        }
        Ok(IncidentRecord {
            id,
            timestamp,
            categories,
            label,
            metadata,
        })
    }

    pub fn category(&self, cat: Category) -> &SubComponentTriple {
        &self.categories[&cat]
    }

    pub fn categories(&self) -> &BTreeMap<Category, SubComponentTriple> {
        &self.categories
    }

    /// Replace the sub-weights of one category.
    pub fn set_sub_weights(&mut self, cat: Category, weights: [f64; 3]) -> Result<()> {
        let updated = self.categories[&cat]
            .with_weights(weights)
            .map_err(|e| e.in_field(&format!("categories.{cat}")))?;
        self.categories.insert(cat, updated);
        Ok(())
    }
}

/// Assemble the seven-entry canonical risk vector for an incident.
pub fn assemble_risk_vector(incident: &IncidentRecord) -> RiskVector {
    let entries = Category::ALL
        .iter()
        .map(|c| category_score(incident.category(*c)))
        .collect();
    RiskVector {
        entries,
        labels: canonical_labels(),
    }
}
