//! Stakeholder utilities, softmax aggregation into stakeholder weights,
//! consensus dimension weights, and the conflict-resolution protocol
//! (disagreement detection, sensitivity analysis, precautionary default).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, IssError, Result};
use crate::learning::{mean_huber, TrainingDataset};
use crate::risk_model::RiskVector;
use crate::scoring::{iss_polynomial, weighted_linear, weighted_multiplicative, ModelParams, SimplexWeights};
use crate::threshold::{
    classify_enforcement, evaluate_triggers, EnforcementTier, Level, ScoreHistory, ThresholdSchedule,
};

/// Default disagreement threshold on per-dimension proposal variance.
pub const DEFAULT_DISAGREEMENT_TAU: f64 = 0.01;

/// How stakeholder weights enter the learned seven-dimensional pipeline.
pub const CONVENTION_NOTE: &str = "learned pipeline: canonical score ignores stakeholder weights; \
sensitivity applies a proposal p by rescaling inputs f_i -> clamp(d * p_i * f_i, 0, 1), \
so the uniform proposal is the identity";

pub const BETA_RANGE: (f64, f64) = (0.5, 1.5);
pub const GAMMA_RANGE: (f64, f64) = (0.8, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StakeholderGroup {
    DemocraticInstitutions,
    CivilSocietyOrganizations,
    RegulatoryBodies,
    TechnicalExperts,
    AffectedCommunities,
    IndustryRepresentatives,
    AcademicResearchers,
}

impl StakeholderGroup {
    pub const ALL: [StakeholderGroup; 7] = [
        StakeholderGroup::DemocraticInstitutions,
        StakeholderGroup::CivilSocietyOrganizations,
        StakeholderGroup::RegulatoryBodies,
        StakeholderGroup::TechnicalExperts,
        StakeholderGroup::AffectedCommunities,
        StakeholderGroup::IndustryRepresentatives,
        StakeholderGroup::AcademicResearchers,
    ];

    /// 1-based group number.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StakeholderGroup::DemocraticInstitutions => "democratic-institutions",
            StakeholderGroup::CivilSocietyOrganizations => "civil-society-organizations",
            StakeholderGroup::RegulatoryBodies => "regulatory-bodies",
            StakeholderGroup::TechnicalExperts => "technical-experts",
            StakeholderGroup::AffectedCommunities => "affected-communities",
            StakeholderGroup::IndustryRepresentatives => "industry-representatives",
            StakeholderGroup::AcademicResearchers => "academic-researchers",
        }
    }
}

impl fmt::Display for StakeholderGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr")]
pub struct StakeholderProfile {
    pub group: StakeholderGroup,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub evidence_score: f64,
    pub expertise: f64,
    pub impact: f64,
    pub proposal: SimplexWeights,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileRepr {
    group: StakeholderGroup,
    #[serde(default = "default_alpha")]
    alpha: f64,
    beta: f64,
    gamma: f64,
    #[serde(default)]
    evidence_score: f64,
    expertise: f64,
    impact: f64,
    proposal: SimplexWeights,
}

impl TryFrom<ProfileRepr> for StakeholderProfile {
    type Error = IssError;

    fn try_from(r: ProfileRepr) -> Result<Self> {
        let p = StakeholderProfile {
            group: r.group,
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            evidence_score: r.evidence_score,
            expertise: r.expertise,
            impact: r.impact,
            proposal: r.proposal,
        };
        p.validate()?;
        Ok(p)
    }
}

impl StakeholderProfile {
    /// Profile with `alpha = 1`, `beta = 1`, `gamma = 1`, zero evidence,
    /// expertise and impact.
    pub fn neutral(group: StakeholderGroup, proposal: SimplexWeights) -> Self {
        StakeholderProfile {
            group,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            evidence_score: 0.0,
            expertise: 0.0,
            impact: 0.0,
            proposal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.group;
        if !self.alpha.is_finite() {
            return Err(IssError::validation(format!("{g}.alpha"), "not finite"));
        }
        let in_range = |x: f64, (lo, hi): (f64, f64)| x.is_finite() && (lo..=hi).contains(&x);
        if !in_range(self.beta, BETA_RANGE) {
            return Err(IssError::validation(
                format!("{g}.beta"),
                format!("{} outside [{}, {}]", self.beta, BETA_RANGE.0, BETA_RANGE.1),
            ));
        }
        if !in_range(self.gamma, GAMMA_RANGE) {
            return Err(IssError::validation(
                format!("{g}.gamma"),
                format!("{} outside [{}, {}]", self.gamma, GAMMA_RANGE.0, GAMMA_RANGE.1),
            ));
        }
        if !self.evidence_score.is_finite() {
            return Err(IssError::Numeric {
                term: format!("{g}.evidence_score"),
                value: self.evidence_score,
            });
        }
        check_unit(&format!("{g}.expertise"), self.expertise)?;
        check_unit(&format!("{g}.impact"), self.impact)
    }
}

/// Exactly one profile per group, in group order, with a shared proposal dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PanelRepr")]
pub struct StakeholderPanel {
    profiles: Vec<StakeholderProfile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PanelRepr {
    profiles: Vec<StakeholderProfile>,
}

impl TryFrom<PanelRepr> for StakeholderPanel {
    type Error = IssError;

    fn try_from(r: PanelRepr) -> Result<Self> {
        StakeholderPanel::new(r.profiles)
    }
}

impl StakeholderPanel {
    pub fn new(mut profiles: Vec<StakeholderProfile>) -> Result<Self> {
        profiles.sort_by_key(|p| p.group);
        for pair in profiles.windows(2) {
            if pair[0].group == pair[1].group {
                return Err(IssError::validation(
                    "profiles",
                    format!("group `{}` appears more than once", pair[0].group),
                ));
            }
        }
        for g in StakeholderGroup::ALL {
            if !profiles.iter().any(|p| p.group == g) {
                return Err(IssError::MissingStakeholder(g.to_string()));
            }
        }
        let d = profiles[0].proposal.len();
        for p in &profiles {
            p.validate()?;
            if p.proposal.len() != d {
                return Err(IssError::dimension(format!("{}.proposal", p.group), d, p.proposal.len()));
            }
        }
        Ok(StakeholderPanel { profiles })
    }

    /// Seven neutral profiles that all propose uniform weights over `d` dimensions.
    pub fn uniform(d: usize) -> Self {
        StakeholderPanel {
            profiles: StakeholderGroup::ALL
                .iter()
                .map(|g| StakeholderProfile::neutral(*g, SimplexWeights::uniform(d)))
                .collect(),
        }
    }

    pub fn profiles(&self) -> &[StakeholderProfile] {
        &self.profiles
    }

    pub fn profile(&self, group: StakeholderGroup) -> &StakeholderProfile {
        &self.profiles[group as usize]
    }

    /// Replace one group's profile, keeping the panel valid.
    pub fn with_profile(&self, profile: StakeholderProfile) -> Result<Self> {
        let mut profiles = self.profiles.clone();
        let slot = profile.group as usize;
        profiles[slot] = profile;
        StakeholderPanel::new(profiles)
    }

    pub fn dimension(&self) -> usize {
        self.profiles[0].proposal.len()
    }
}

pub fn stakeholder_utility(profile: &StakeholderProfile) -> Result<f64> {
    profile.validate()?;
    Ok(profile.alpha * profile.evidence_score + profile.beta * profile.expertise + profile.gamma * profile.impact)
}

/// Evidence proxy for a stakeholder: the negative mean Huber loss of the
/// fitted parameters on that stakeholder's labeled validation slice.
pub fn evidence_score_from_validation(params: &ModelParams, slice: &TrainingDataset, delta: f64) -> Result<f64> {
    Ok(-mean_huber(slice, params, delta)?)
}

/// Max-shifted softmax.
pub fn softmax(utilities: &[f64]) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(IssError::validation("utilities", "empty"));
    }
    if let Some(u) = utilities.iter().find(|u| !u.is_finite()) {
        return Err(IssError::Numeric { term: "utility".into(), value: *u });
    }
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Stakeholder weights `omega = softmax(u)`, in group order.
pub fn aggregate_stakeholder_weights(panel: &StakeholderPanel) -> Result<SimplexWeights> {
    let utilities = panel
        .profiles()
        .iter()
        .map(stakeholder_utility)
        .collect::<Result<Vec<_>>>()?;
    SimplexWeights::new(softmax(&utilities)?)
}

/// `sum_k omega_k * w^(k)`.
pub fn consensus_dimension_weights(panel: &StakeholderPanel, omega: &SimplexWeights) -> Result<SimplexWeights> {
    if omega.len() != panel.profiles().len() {
        return Err(IssError::dimension("stakeholder weights", panel.profiles().len(), omega.len()));
    }
    let d = panel.dimension();
    let mut out = vec![0.0; d];
    for (p, w) in panel.profiles().iter().zip(omega.entries()) {
        for (o, x) in out.iter_mut().zip(p.proposal.entries()) {
            *o += w * x;
        }
    }
    // convex combination; re-normalize to absorb rounding
    SimplexWeights::normalized(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    /// Population variance of each dimension's proposal entries across groups.
    pub variances: Vec<f64>,
    pub max_variance: f64,
    pub tau: f64,
    pub flagged: bool,
}

pub fn weight_disagreement(panel: &StakeholderPanel, tau: f64) -> DisagreementReport {
    let k = panel.profiles().len() as f64;
    let variances: Vec<f64> = (0..panel.dimension())
        .map(|i| {
            let xs = panel.profiles().iter().map(|p| p.proposal.entries()[i]);
            let mean = xs.clone().sum::<f64>() / k;
            xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / k
        })
        .collect();
    let max_variance = variances.iter().copied().fold(0.0, f64::max);
    DisagreementReport {
        flagged: max_variance > tau,
        variances,
        max_variance,
        tau,
    }
}

/// Which scorer turns a weighting into a severity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    ClassicLinear,
    ClassicMultiplicative,
    /// Polynomial scorer on inputs rescaled by the proposal.
    LearnedReweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOptions {
    pub tau: f64,
    /// Aggregation used for four-factor inputs.
    pub classic_multiplicative: bool,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions { tau: DEFAULT_DISAGREEMENT_TAU, classic_multiplicative: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StakeholderScore {
    pub group: StakeholderGroup,
    pub weight: f64,
    pub score: f64,
    pub tier: EnforcementTier,
    /// Levels whose incident trigger fires for this score at the report's phase.
    pub incident_levels: Vec<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub pipeline: Pipeline,
    pub t: f64,
    pub per_stakeholder: Vec<StakeholderScore>,
    pub consensus_weights: SimplexWeights,
    pub consensus_score: f64,
    pub consensus_tier: EnforcementTier,
    pub range: (f64, f64),
    pub range_width: f64,
    /// All per-stakeholder scores fall in one enforcement tier.
    pub stable: bool,
    pub disagreement: DisagreementReport,
    pub convention: String,
}

impl SensitivityReport {
    pub fn score_for(&self, group: StakeholderGroup) -> Option<f64> {
        self.per_stakeholder.iter().find(|s| s.group == group).map(|s| s.score)
    }
}

/// Rescale inputs by a proposal: `clamp(d * p_i * f_i, 0, 1)`.
pub fn reweight_inputs(f: &RiskVector, proposal: &SimplexWeights) -> Result<RiskVector> {
    if f.dimension() != proposal.len() {
        return Err(IssError::dimension("reweighting", f.dimension(), proposal.len()));
    }
    let d = f.dimension() as f64;
    let entries = f
        .entries()
        .iter()
        .zip(proposal.entries())
        .map(|(x, p)| (d * p * x).clamp(0.0, 1.0))
        .collect();
    RiskVector::with_labels(entries, f.labels().to_vec())
}

/// Score `f` under one dimension weighting.
pub fn score_under(f: &RiskVector, weights: &SimplexWeights, params: &ModelParams, pipeline: Pipeline) -> Result<f64> {
    match pipeline {
        Pipeline::ClassicLinear => weighted_linear(f, weights),
        Pipeline::ClassicMultiplicative => weighted_multiplicative(f, weights),
        Pipeline::LearnedReweighted => iss_polynomial(&reweight_inputs(f, weights)?, params),
    }
}

/// True when every score maps to the same enforcement tier.
pub fn tiers_agree(scores: &[f64]) -> Result<bool> {
    let tiers = scores.iter().map(|s| classify_enforcement(*s)).collect::<Result<Vec<_>>>()?;
    Ok(tiers.windows(2).all(|w| w[0] == w[1]))
}

pub fn sensitivity_analysis(
    f: &RiskVector,
    panel: &StakeholderPanel,
    params: &ModelParams,
    schedule: &ThresholdSchedule,
    t: f64,
) -> Result<SensitivityReport> {
    sensitivity_analysis_with(f, panel, params, schedule, t, &SensitivityOptions::default())
}

/// Score the incident under each group's proposal and under the consensus weights.
///
/// Four-dimensional inputs use the classic aggregation; any other
/// dimension uses the reweighted polynomial scorer.
pub fn sensitivity_analysis_with(
    f: &RiskVector,
    panel: &StakeholderPanel,
    params: &ModelParams,
    schedule: &ThresholdSchedule,
    t: f64,
    opts: &SensitivityOptions,
) -> Result<SensitivityReport> {
    if f.dimension() != panel.dimension() {
        return Err(IssError::dimension("risk vector vs panel proposals", panel.dimension(), f.dimension()));
    }
    let pipeline = if f.dimension() == 4 {
        if opts.classic_multiplicative {
            Pipeline::ClassicMultiplicative
        } else {
            Pipeline::ClassicLinear
        }
    } else {
        if params.dimension() != f.dimension() {
            return Err(IssError::dimension("params vs risk vector", f.dimension(), params.dimension()));
        }
        Pipeline::LearnedReweighted
    };

    let omega = aggregate_stakeholder_weights(panel)?;
    let consensus_weights = consensus_dimension_weights(panel, &omega)?;
    let consensus_score = score_under(f, &consensus_weights, params, pipeline)?;

    let empty = ScoreHistory::default();
    let mut per_stakeholder = Vec::with_capacity(panel.profiles().len());
    for (p, w) in panel.profiles().iter().zip(omega.entries()) {
        let score = score_under(f, &p.proposal, params, pipeline)?;
        let triggers = evaluate_triggers(score, &empty, t, schedule)?;
        per_stakeholder.push(StakeholderScore {
            group: p.group,
            weight: *w,
            score,
            tier: classify_enforcement(score)?,
            incident_levels: triggers.incident_levels(),
        });
    }

    let scores: Vec<f64> = per_stakeholder.iter().map(|s| s.score).collect();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SensitivityReport {
        pipeline,
        t: t.clamp(0.0, 1.0),
        stable: tiers_agree(&scores)?,
        per_stakeholder,
        consensus_tier: classify_enforcement(consensus_score)?,
        consensus_weights,
        consensus_score,
        range: (min, max),
        range_width: max - min,
        disagreement: weight_disagreement(panel, opts.tau),
        convention: CONVENTION_NOTE.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliberationStatus {
    Resolved,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionBasis {
    Consensus,
    AffectedCommunities,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedScore {
    pub score: f64,
    pub basis: ResolutionBasis,
}

/// Final score after deliberation.
///
/// `rounds` holds the sensitivity report of every deliberation round, oldest
/// first. When the latest round still flags disagreement and deliberation is
/// unresolved, the highest score attributed to affected communities across
/// all rounds is adopted; otherwise the latest consensus score stands.
pub fn precautionary_resolution(rounds: &[SensitivityReport], status: DeliberationStatus) -> Result<ResolvedScore> {
    let latest = rounds
        .last()
        .ok_or_else(|| IssError::InsufficientData("no deliberation rounds".into()))?;
    let affected = StakeholderGroup::AffectedCommunities;
    let mut candidates = Vec::with_capacity(rounds.len());
    for r in rounds {
        candidates.push(r.score_for(affected).ok_or_else(|| IssError::MissingStakeholder(affected.to_string()))?);
    }
    if status == DeliberationStatus::Unresolved && latest.disagreement.flagged {
        let score = candidates.into_iter().fold(f64::NEG_INFINITY, f64::max);
        return Ok(ResolvedScore { score, basis: ResolutionBasis::AffectedCommunities });
    }
    Ok(ResolvedScore { score: latest.consensus_score, basis: ResolutionBasis::Consensus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(beta: f64, expertise: f64, gamma: f64, impact: f64, evidence: f64) -> StakeholderProfile {
        StakeholderProfile {
            beta,
            expertise,
            gamma,
            impact,
            evidence_score: evidence,
            ..StakeholderProfile::neutral(StakeholderGroup::TechnicalExperts, SimplexWeights::uniform(2))
        }
    }

    fn panel_with(proposals: &[Vec<f64>], utilities_evidence: &[f64]) -> StakeholderPanel {
        let profiles = StakeholderGroup::ALL
            .iter()
            .enumerate()
            .map(|(k, g)| StakeholderProfile {
                evidence_score: utilities_evidence[k],
                ..StakeholderProfile::neutral(*g, SimplexWeights::new(proposals[k].clone()).unwrap())
            })
            .collect();
        StakeholderPanel::new(profiles).unwrap()
    }

    #[test]
    fn utility_examples() {
        assert_eq!(stakeholder_utility(&profile(0.5, 0.0, 0.8, 0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(stakeholder_utility(&profile(1.0, 0.5, 1.0, 0.5, 0.0)).unwrap(), 1.0);
        assert_eq!(stakeholder_utility(&profile(1.5, 1.0, 2.0, 1.0, -0.25)).unwrap(), 3.25);
        assert!(stakeholder_utility(&profile(1.0, 0.5, 1.0, 0.5, f64::INFINITY)).is_err());
        assert!(stakeholder_utility(&profile(0.4, 0.5, 1.0, 0.5, 0.0)).is_err());
        assert!(stakeholder_utility(&profile(1.0, 0.5, 2.5, 0.5, 0.0)).is_err());
    }

    #[test]
    fn softmax_examples() {
        let w = aggregate_stakeholder_weights(&StakeholderPanel::uniform(3)).unwrap();
        for x in w.entries() {
            assert!((x - 1.0 / 7.0).abs() < 1e-15);
        }
        let s = softmax(&[2f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-15);
        for x in &s[1..] {
            assert!((x - 0.125).abs() < 1e-15);
        }
        let shifted = softmax(&[2f64.ln() + 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        for (a, b) in s.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn panel_requires_all_groups() {
        let mut profiles = StakeholderPanel::uniform(2).profiles().to_vec();
        profiles.pop();
        assert!(matches!(StakeholderPanel::new(profiles.clone()), Err(IssError::MissingStakeholder(_))));
        profiles.push(profiles[0].clone());
        assert!(StakeholderPanel::new(profiles).is_err());
        let mut profiles = StakeholderPanel::uniform(2).profiles().to_vec();
        profiles[3].proposal = SimplexWeights::uniform(3);
        assert!(matches!(StakeholderPanel::new(profiles), Err(IssError::DimensionMismatch { .. })));
    }

    #[test]
    fn consensus_examples() {
        let p = vec![0.2, 0.3, 0.5];
        let panel = panel_with(&vec![p.clone(); 7], &[0.3, -1.0, 2.0, 0.0, 0.0, 1.0, 0.5]);
        let omega = aggregate_stakeholder_weights(&panel).unwrap();
        let c = consensus_dimension_weights(&panel, &omega).unwrap();
        for (a, b) in c.entries().iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }

        let mut props = vec![vec![0.5, 0.5]; 7];
        props[0] = vec![1.0, 0.0];
        props[1] = vec![0.0, 1.0];
        let panel = panel_with(&props, &[0.0; 7]);
        let omega = SimplexWeights::new(vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let c = consensus_dimension_weights(&panel, &omega).unwrap();
        assert_eq!(c.entries(), &[0.5, 0.5]);
    }

    #[test]
    fn uniform_omega_gives_mean_proposal() {
        let props: Vec<Vec<f64>> = (0..7)
            .map(|k| {
                let a = (k as f64 + 1.0) / 10.0;
                vec![a, 1.0 - a]
            })
            .collect();
        let panel = panel_with(&props, &[0.0; 7]);
        let omega = SimplexWeights::uniform(7);
        let c = consensus_dimension_weights(&panel, &omega).unwrap();
        let mean0 = props.iter().map(|p| p[0]).sum::<f64>() / 7.0;
        assert!((c.entries()[0] - mean0).abs() < 1e-15);
    }

    #[test]
    fn disagreement_examples() {
        let r = weight_disagreement(&StakeholderPanel::uniform(3), DEFAULT_DISAGREEMENT_TAU);
        assert!(r.variances.iter().all(|v| *v == 0.0));
        assert!(!r.flagged);

        let props: Vec<Vec<f64>> = (0..7).map(|k| if k % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let panel = panel_with(&props, &[0.0; 7]);
        let r = weight_disagreement(&panel, DEFAULT_DISAGREEMENT_TAU);
        for v in &r.variances {
            assert!((v - 12.0 / 49.0).abs() < 1e-15);
        }
        assert!(r.flagged);
        assert!(!weight_disagreement(&panel, f64::INFINITY).flagged);
    }

    #[test]
    fn sensitivity_identical_proposals_is_stable() {
        let f = RiskVector::new(vec![0.3, 0.6, 0.2, 0.9]).unwrap();
        let panel = panel_with(&vec![vec![0.4, 0.3, 0.2, 0.1]; 7], &[0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let r = sensitivity_analysis(&f, &panel, &ModelParams::zeros(4), &ThresholdSchedule::default(), 0.0).unwrap();
        assert_eq!(r.pipeline, Pipeline::ClassicLinear);
        assert_eq!(r.range_width, 0.0);
        assert!(r.stable);
        assert!(r.per_stakeholder.iter().all(|s| (s.score - r.consensus_score).abs() < 1e-12));
    }

    #[test]
    fn dominant_stakeholder_matches_consensus() {
        let props: Vec<Vec<f64>> = (0..7)
            .map(|k| {
                let mut p = vec![0.05; 7];
                p[k] = 0.7;
                p
            })
            .collect();
        let mut ev = [-1000.0; 7];
        ev[4] = 0.0;
        let panel = panel_with(&props, &ev);
        let params = ModelParams::new(vec![1.0; 7], vec![0.2; 49], -2.0).unwrap();
        let f = RiskVector::new(vec![0.5, 0.1, 0.33, 0.57, 0.2, 0.0, 0.4]).unwrap();
        let r = sensitivity_analysis(&f, &panel, &params, &ThresholdSchedule::default(), 0.0).unwrap();
        assert_eq!(r.pipeline, Pipeline::LearnedReweighted);
        let own = r.score_for(StakeholderGroup::AffectedCommunities).unwrap();
        assert!((own - r.consensus_score).abs() < 1e-15);
        assert!(r.range_width > 0.0);
        assert_eq!(r.convention, CONVENTION_NOTE);
    }

    #[test]
    fn uniform_proposal_is_identity_reweighting() {
        let f = RiskVector::new(vec![0.1, 0.5, 0.9]).unwrap();
        let g = reweight_inputs(&f, &SimplexWeights::uniform(3)).unwrap();
        for (a, b) in f.entries().iter().zip(g.entries()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn straddling_tiers_are_unstable() {
        assert!(!tiers_agree(&[0.55, 0.65]).unwrap());
        assert!(tiers_agree(&[0.61, 0.79]).unwrap());
    }

    #[test]
    fn sensitivity_dimension_checks() {
        let panel = StakeholderPanel::uniform(7);
        let f4 = RiskVector::new(vec![0.1; 4]).unwrap();
        let f7 = RiskVector::new(vec![0.1; 7]).unwrap();
        let s = ThresholdSchedule::default();
        assert!(sensitivity_analysis(&f4, &panel, &ModelParams::zeros(7), &s, 0.0).is_err());
        assert!(sensitivity_analysis(&f7, &panel, &ModelParams::zeros(4), &s, 0.0).is_err());
    }

    fn report(consensus: f64, affected: f64, flagged: bool) -> SensitivityReport {
        let f = RiskVector::new(vec![0.1; 4]).unwrap();
        let mut r = sensitivity_analysis(&f, &StakeholderPanel::uniform(4), &ModelParams::zeros(4), &ThresholdSchedule::default(), 0.0).unwrap();
        r.consensus_score = consensus;
        for s in &mut r.per_stakeholder {
            if s.group == StakeholderGroup::AffectedCommunities {
                s.score = affected;
            }
        }
        r.disagreement.flagged = flagged;
        r
    }

    #[test]
    fn precautionary_examples() {
        let resolved = precautionary_resolution(&[report(0.4, 0.7, true)], DeliberationStatus::Resolved).unwrap();
        assert_eq!(resolved, ResolvedScore { score: 0.4, basis: ResolutionBasis::Consensus });

        let r = precautionary_resolution(&[report(0.4, 0.7, true)], DeliberationStatus::Unresolved).unwrap();
        assert_eq!(r, ResolvedScore { score: 0.7, basis: ResolutionBasis::AffectedCommunities });

        let r = precautionary_resolution(&[report(0.5, 0.6, true), report(0.5, 0.72, true)], DeliberationStatus::Unresolved).unwrap();
        assert_eq!(r.score, 0.72);

        let r = precautionary_resolution(&[report(0.4, 0.7, false)], DeliberationStatus::Unresolved).unwrap();
        assert_eq!(r.basis, ResolutionBasis::Consensus);

        let mut missing = report(0.4, 0.7, true);
        missing.per_stakeholder.retain(|s| s.group != StakeholderGroup::AffectedCommunities);
        assert!(matches!(
            precautionary_resolution(&[missing], DeliberationStatus::Unresolved),
            Err(IssError::MissingStakeholder(_))
        ));
        assert!(precautionary_resolution(&[], DeliberationStatus::Resolved).is_err());
    }

    #[test]
    fn panel_json_roundtrip() {
        let panel = StakeholderPanel::uniform(4);
        let json = serde_json::to_string(&panel).unwrap();
        assert!(json.contains("\"affected-communities\""));
        assert_eq!(serde_json::from_str::<StakeholderPanel>(&json).unwrap(), panel);
    }

    proptest! {
        #[test]
        fn softmax_is_on_simplex_and_shift_invariant(
            u in prop::collection::vec(-1e4f64..1e4, 7),
            c in -1e3f64..1e3,
        ) {
            let s = softmax(&u).unwrap();
            prop_assert!(s.iter().all(|x| *x >= 0.0));
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
            let t = softmax(&shifted).unwrap();
            for (a, b) in s.iter().zip(&t) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn argmax_is_preserved(u in prop::collection::vec(-50.0f64..50.0, 7)) {
            let s = softmax(&u).unwrap();
            let best = (0..7).max_by(|a, b| u[*a].total_cmp(&u[*b])).unwrap();
            if u.iter().enumerate().all(|(i, x)| i == best || *x < u[best]) {
                prop_assert!(s.iter().enumerate().all(|(i, x)| i == best || *x < s[best]));
            }
        }

        #[test]
        fn consensus_is_convex(
            raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 7),
            ev in prop::collection::vec(-3.0f64..3.0, 7),
        ) {
            let props: Vec<Vec<f64>> = raw
                .iter()
                .map(|r| SimplexWeights::normalized(r.clone()).unwrap().entries().to_vec())
                .collect();
            let panel = panel_with(&props, &ev);
            let omega = aggregate_stakeholder_weights(&panel).unwrap();
            let c = consensus_dimension_weights(&panel, &omega).unwrap();
            for i in 0..3 {
                let lo = props.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
                let hi = props.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(c.entries()[i] >= lo - 1e-12 && c.entries()[i] <= hi + 1e-12);
            }
        }
    }
}
