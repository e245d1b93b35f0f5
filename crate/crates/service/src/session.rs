//! Deliberation sessions: a panel under revision for one incident, the
//! sensitivity report of every round, and the final resolution.
//!
//! Each session persists as an append-only JSON-lines event file. Replaying
//! the events rebuilds the session exactly, since every computation is pure.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use iss_core::stakeholder::{sensitivity_analysis_with, ResolvedScore, SensitivityOptions, DEFAULT_DISAGREEMENT_TAU};
use iss_core::{
    precautionary_resolution, DeliberationStatus, IncidentRecord, IssError, ModelParams, RiskVector,
    SensitivityReport, StakeholderPanel, ThresholdSchedule,
};

use crate::bodies::{check_phase, risk_vector_of, EngineDefaults};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub incident: Option<IncidentRecord>,
    #[serde(default)]
    pub factors: Option<Vec<f64>>,
    pub panel: StakeholderPanel,
    #[serde(default)]
    pub params: Option<ModelParams>,
    #[serde(default)]
    pub schedule: Option<ThresholdSchedule>,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoundAction {
    Submit { panel: StakeholderPanel },
    Resolve,
    Precautionary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub round: u64,
    pub at: DateTime<Utc>,
    pub panel: StakeholderPanel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub action: String,
    pub at: DateTime<Utc>,
    pub outcome: ResolvedScore,
}

/// Public view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub created: DateTime<Utc>,
    pub incident_id: Option<String>,
    pub risk_vector: RiskVector,
    pub params: ModelParams,
    pub schedule: ThresholdSchedule,
    pub t: f64,
    pub tau: f64,
    pub round: u64,
    pub resolved: bool,
    pub resolution: Option<Resolution>,
    pub panel: StakeholderPanel,
    /// Report for the opening panel followed by one per submitted round.
    pub reports: Vec<SensitivityReport>,
    pub audit: Vec<AuditEntry>,
}

pub enum SessionError {
    Engine(IssError),
    Resolved(String),
}

impl From<IssError> for SessionError {
    fn from(e: IssError) -> Self {
        SessionError::Engine(e)
    }
}

impl Session {
    pub fn open(id: String, req: &CreateSession, defaults: &EngineDefaults, at: DateTime<Utc>) -> Result<Self, IssError> {
        let t = check_phase(req.t)?;
        let tau = req.tau.unwrap_or(DEFAULT_DISAGREEMENT_TAU);
        if tau.is_nan() || tau < 0.0 {
            return Err(IssError::validation("tau", "must be >= 0"));
        }
        let f = risk_vector_of(req.incident.as_ref(), req.factors.as_ref())?;
        let mut s = Session {
            id,
            created: at,
            incident_id: req.incident.as_ref().map(|i| i.id.clone()),
            params: defaults.params_for(req.params.as_ref(), f.dimension()),
            schedule: defaults.schedule_for(req.schedule.as_ref()),
            risk_vector: f,
            t,
            tau,
            round: 0,
            resolved: false,
            resolution: None,
            panel: req.panel.clone(),
            reports: Vec::new(),
            audit: Vec::new(),
        };
        let report = s.evaluate(&req.panel)?;
        s.reports.push(report);
        Ok(s)
    }

    fn evaluate(&self, panel: &StakeholderPanel) -> Result<SensitivityReport, IssError> {
        let opts = SensitivityOptions { tau: self.tau, classic_multiplicative: false };
        sensitivity_analysis_with(&self.risk_vector, panel, &self.params, &self.schedule, self.t, &opts)
    }

    pub fn latest(&self) -> &SensitivityReport {
        self.reports.last().expect("opening report always present")
    }

    pub fn apply(&mut self, action: &RoundAction, at: DateTime<Utc>) -> Result<(), SessionError> {
        if self.resolved {
            return Err(SessionError::Resolved(self.id.clone()));
        }
        match action {
            RoundAction::Submit { panel } => {
                let report = self.evaluate(panel)?;
                self.round += 1;
                self.panel = panel.clone();
                self.reports.push(report);
                self.audit.push(AuditEntry { round: self.round, at, panel: panel.clone() });
            }
            RoundAction::Resolve => self.close("resolve", DeliberationStatus::Resolved, at)?,
            RoundAction::Precautionary => self.close("precautionary", DeliberationStatus::Unresolved, at)?,
        }
        Ok(())
    }

    fn close(&mut self, action: &str, status: DeliberationStatus, at: DateTime<Utc>) -> Result<(), IssError> {
        let outcome = precautionary_resolution(&self.reports, status)?;
        self.resolved = true;
        self.resolution = Some(Resolution { action: action.to_string(), at, outcome });
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { at: DateTime<Utc>, request: CreateSession },
    Round { at: DateTime<Utc>, action: RoundAction },
}

type Shared = Arc<Mutex<Session>>;

/// All live sessions. Mutation is serialized per session; readers clone a
/// committed snapshot.
pub struct SessionStore {
    dir: Option<PathBuf>,
    defaults: EngineDefaults,
    sessions: RwLock<HashMap<String, Shared>>,
}

fn append(path: &Path, event: &Event) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(event).map_err(std::io::Error::other)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()
}

fn replay(path: &Path, defaults: &EngineDefaults) -> Result<Session, IssError> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| IssError::validation("session file", "name is not utf-8"))?
        .to_string();
    let mut session: Option<Session> = None;
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line)
            .map_err(|e| IssError::Parse { line: n + 1, message: e.to_string() })?;
        match (event, session.as_mut()) {
            (Event::Created { at, request }, None) => session = Some(Session::open(id.clone(), &request, defaults, at)?),
            (Event::Round { at, action }, Some(s)) => {
                s.apply(&action, at).map_err(|e| match e {
                    SessionError::Engine(e) => e,
                    SessionError::Resolved(_) => IssError::Parse {
                        line: n + 1,
                        message: "round after resolution".into(),
                    },
                })?;
            }
            _ => {
                return Err(IssError::Parse { line: n + 1, message: "event out of order".into() });
            }
        }
    }
    session.ok_or_else(|| IssError::Parse { line: 0, message: "empty session file".into() })
}

impl SessionStore {
    /// Open a store, replaying every `*.jsonl` session file in `dir`.
    pub fn open(dir: Option<PathBuf>, defaults: EngineDefaults) -> Result<Self, IssError> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &dir {
            fs::create_dir_all(dir)?;
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                    continue;
                }
                let s = replay(&path, &defaults).map_err(|e| e.for_incident(&path.display().to_string()))?;
                sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(SessionStore { dir, defaults, sessions: RwLock::new(sessions) })
    }

    fn file_for(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    pub async fn create(&self, req: CreateSession) -> Result<Session, IssError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let at = now();
        let session = Session::open(id.clone(), &req, &self.defaults, at)?;
        if let Some(path) = self.file_for(&id) {
            // pin the resolved defaults so a replay under other server settings matches
            let request = CreateSession {
                params: Some(session.params.clone()),
                schedule: Some(session.schedule),
                tau: Some(session.tau),
                ..req
            };
            append(&path, &Event::Created { at, request })?;
        }
        let view = session.clone();
        self.sessions.write().await.insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub async fn get(&self, id: &str) -> Option<Session> {
        let shared = self.sessions.read().await.get(id).cloned()?;
        let s = shared.lock().await;
        Some(s.clone())
    }

    /// `None` when the id is unknown.
    pub async fn apply(&self, id: &str, action: RoundAction) -> Option<Result<Session, SessionError>> {
        let shared = self.sessions.read().await.get(id).cloned()?;
        let mut s = shared.lock().await;
        let at = now();
        let mut next = s.clone();
        if let Err(e) = next.apply(&action, at) {
            return Some(Err(e));
        }
        if let Some(path) = self.file_for(id) {
            if let Err(e) = append(&path, &Event::Round { at, action }) {
                return Some(Err(SessionError::Engine(e.into())));
            }
        }
        *s = next;
        Some(Ok(s.clone()))
    }
}

/// Current time truncated to microseconds so replayed timestamps match.
fn now() -> DateTime<Utc> {
    let text = Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true);
    DateTime::parse_from_rfc3339(&text).expect("own rfc3339 output").with_timezone(&Utc)
}
