use thiserror::Error;

pub type Result<T, E = IssError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IssError {
    /// An input violated a domain invariant. `field` names the offending
    /// field using a dotted path (e.g. `surv.values[1]`).
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {term}: {value}")]
    Numeric { term: String, value: f64 },

    #[error("training diverged at iteration {iteration}: loss is {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate incident id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("unsupported corpus schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("missing entry for stakeholder group `{0}`")]
    MissingStakeholder(String),

    #[error("incident `{id}`: {source}")]
    Incident {
        id: String,
        #[source]
        source: Box<IssError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IssError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        IssError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn dimension(context: impl Into<String>, expected: usize, found: usize) -> Self {
        IssError::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    /// Prefix the field path of a validation error, e.g. `values[0]` -> `surv.values[0]`.
    pub fn in_field(self, prefix: &str) -> Self {
        match self {
            IssError::Validation { field, message } => IssError::Validation {
                field: format!("{prefix}.{field}"),
                message,
            },
            other => other,
        }
    }

    pub fn for_incident(self, id: &str) -> Self {
        IssError::Incident {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input rather than by the runtime.
    pub fn is_validation(&self) -> bool {
        match self {
            IssError::Validation { .. }
            | IssError::DimensionMismatch { .. }
            | IssError::Parse { .. }
            | IssError::DuplicateId { .. }
            | IssError::SchemaVersion { .. }
            | IssError::MissingStakeholder(_)
            | IssError::InsufficientData(_)
            | IssError::Json(_) => true,
            IssError::Incident { source, .. } => source.is_validation(),
            IssError::Numeric { .. } | IssError::TrainingDiverged { .. } | IssError::Io(_) => {
                false
            }
        }
    }

    /// Innermost error, unwrapping incident context.
    pub fn root(&self) -> &IssError {
        match self {
            IssError::Incident { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn check_unit(field: &str, value: f64) -> Result<()> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(IssError::validation(
            field,
            format!("{value} is outside [0, 1]"),
        ));
    }
    Ok(())
}

pub(crate) fn check_finite(term: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(IssError::Numeric {
            term: term.to_string(),
            value,
        })
    }
}
