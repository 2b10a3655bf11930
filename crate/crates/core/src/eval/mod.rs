//! Accuracy evaluation for sampled blocks.
//!
//! [`SurrogateEvaluator`] is a deterministic synthetic landscape for desk-scale
//! runs; [`ExternalEvaluator`] speaks a line-delimited JSON protocol with a
//! training plugin; [`Cached`] memoizes by canonical serialization; and
//! [`parallel_window`] keeps up to `window` evaluations in flight.

mod cache;
mod external;
mod surrogate;
mod window;

use std::time::Duration;

use thiserror::Error;

use crate::arch::BlockArch;

pub use cache::Cached;
pub use external::{
    external_evaluate, format_request, parse_response, ExternalEvaluator, PluginResponse, DEFAULT_TIMEOUT,
};
pub use surrogate::{surrogate_accuracy, surrogate_noise, SurrogateEvaluator, SurrogateParams};
pub use window::{parallel_window, parallel_window_with};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("evaluation timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {message}; raw line: {line:?}")]
    Protocol { message: String, line: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("evaluator unreachable: {0}")]
    Unreachable(String),
    #[error("evaluator rejected the architecture: {0}")]
    Rejected(String),
}

/// Anything that can score a block with an accuracy percentage. Implementations
/// must tolerate concurrent calls up to the evaluation window.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError> {
        (**self).evaluate(arch)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, arch: &BlockArch) -> Result<f64, EvalError> {
        (**self).evaluate(arch)
    }
}
