use ksqi_core::baseline::BaselineError;
use ksqi_core::constraints::ConstraintError;
use ksqi_core::grid::GridError;
use ksqi_core::metrics::MetricError;
use ksqi_core::model::ModelError;
use ksqi_core::predict::PredictError;
use ksqi_core::ranking::RankingError;
use ksqi_core::session::SessionError;
use ksqi_core::synth::SynthError;
use ksqi_core::train::TrainError;
use serde::Serialize;

/// Failures split by who has to act: bad input (exit 2) or a computation that
/// did not go through on valid input (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Computation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Computation(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Computation(_) => "computation",
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Computation(m) => CliError::Computation(format!("{what}: {m}")),
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            kind: &'a str,
            exit_code: u8,
            message: String,
        }
        let doc = Doc {
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        };
        serde_json::json!({ "error": doc }).to_string()
    }
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

macro_rules! validation_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        })*
    };
}

validation_errors!(SessionError, GridError, ConstraintError, PredictError, SynthError, std::io::Error, serde_json::Error);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NotOptimal { .. } | TrainError::Qp(_) | TrainError::Model(ModelError::Infeasible { .. }) => {
                CliError::Computation(e.to_string())
            }
            TrainError::Metric(m) => m.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Undefined(_) => CliError::Computation(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RankingError> for CliError {
    fn from(e: RankingError) -> Self {
        match e {
            RankingError::NotConverged { .. } => CliError::Computation(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::RankDeficient { .. } => CliError::Computation(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
