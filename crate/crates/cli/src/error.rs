use std::path::PathBuf;

use tppi_core::infer::InferError;
use tppi_core::ir::GraphError;
use tppi_core::metrics::MetricsError;
use tppi_core::scene::SceneError;
use tppi_core::train::TrainError;

/// Exit codes: 1 for plumbing and usage failures, 2 when a network
/// cannot run on (or be rewritten for) whole images, 3 when training
/// diverges.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("network cannot run on whole images:\n{summary}")]
    NotImageRunnable { summary: String },
    #[error("cannot rewrite network: {reason}")]
    Untransformable { reason: String },
    #[error("training diverged at epoch {epoch}; best finite checkpoint was epoch {best_epoch}")]
    Diverged { epoch: usize, best_epoch: usize },
    #[error(transparent)]
    Graph(GraphError),
    #[error(transparent)]
    Infer(InferError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Train(TrainError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotImageRunnable { .. } | CliError::Untransformable { .. } => 2,
            CliError::Diverged { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NotImageRunnable { summary } => CliError::NotImageRunnable { summary },
            GraphError::Untransformable { reason } => CliError::Untransformable { reason },
            other => CliError::Graph(other),
        }
    }
}

impl From<InferError> for CliError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::Graph(g) => g.into(),
            other => CliError::Infer(other),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { epoch, outcome } => CliError::Diverged {
                epoch,
                best_epoch: outcome.log.best_epoch,
            },
            other => CliError::Train(other),
        }
    }
}
