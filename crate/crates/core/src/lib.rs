//! Incident severity scoring engine.
//!
//! * [`risk_model`]: seven-category taxonomy and risk-vector assembly.
//! * [`scoring`]: linear, multiplicative and learnable polynomial scorers.
//! * [`learning`]: Huber-loss fitting of the polynomial scorer.
//! * [`stakeholder`]: stakeholder utilities, softmax weights and conflict resolution.
//! * [`threshold`]: phase-dependent thresholds, triggers and enforcement tiers.
//! * [`corpus`]: incident corpora, fixtures and retrospective validation.

pub mod corpus;
pub mod error;
pub mod learning;
pub mod risk_model;
pub mod scoring;
pub mod stakeholder;
pub mod threshold;

pub use error::{IssError, Result};
pub use learning::{fit, gradient, huber_loss, objective, Init, TrainingConfig, TrainingDataset, TrainingTrace};
pub use risk_model::{assemble_risk_vector, category_score, Category, IncidentRecord, RiskVector, SubComponentTriple};
pub use scoring::{iss_linear, iss_multiplicative, iss_polynomial, FourFactor, ModelParams, SimplexWeights};
pub use stakeholder::{
    aggregate_stakeholder_weights, consensus_dimension_weights, precautionary_resolution, sensitivity_analysis,
    stakeholder_utility, weight_disagreement, DeliberationStatus, DisagreementReport, SensitivityReport,
    StakeholderGroup, StakeholderPanel, StakeholderProfile, CONVENTION_NOTE,
};
pub use threshold::{
    classify_enforcement, empirical_cdf, evaluate_triggers, smoothstep, threshold_at, EnforcementTier, Level,
    ScoreHistory, ThresholdSchedule, TriggerReport,
};

/// Engine version reported by the service and CLI.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
