use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0} contains no triples")]
    EmptyGraph(String),

    #[error("unknown {kind}: {name}")]
    UnknownSymbol { kind: &'static str, name: String },

    #[error("unknown symbols in {source_name}: {}", .names.join(", "))]
    UnknownSymbols { source_name: String, names: Vec<String> },

    #[error("entity {0} has no incident triples")]
    IsolatedEntity(String),

    #[error("plan violation: {0}")]
    PlanViolation(String),

    #[error("budget {budget} exceeds the {available} available triples")]
    BudgetTooLarge { budget: usize, available: usize },

    #[error("rule {0} has no body groundings")]
    UnsupportedRule(String),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("empty rule set")]
    EmptyRuleSet,

    #[error("relation {0} has no incident entities")]
    EmptyRelation(String),

    #[error("no replacement predicate available for {0}")]
    NoReplacement(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("random sampling gave up after {0} consecutive rejections")]
    SamplingExhausted(usize),

    #[error("report error: {0}")]
    Report(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
