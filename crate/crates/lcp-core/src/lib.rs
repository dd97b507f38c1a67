//! Calibrated continuous priors over correlation coefficients, decoded from
//! LLM token logits.
//!
//! The pipeline: record a structured completion with per-token top-k
//! logprobs ([`llm`]), decode the numeric value span into a discrete
//! distribution ([`decode`]), smooth it with truncated Gaussian kernels of a
//! calibrated bandwidth ([`prior`], [`calibrate`]), then score observed
//! correlations by likelihood and rank them by surprise ([`eval`]).
//! [`benchmark`] builds and loads the record files everything runs against.

pub mod benchmark;
pub mod calibrate;
pub mod decode;
pub mod eval;
pub mod llm;
pub mod math;
pub mod prior;
pub mod trace;

pub use benchmark::{BenchmarkRecord, PearsonResult, StratificationPlan};
pub use calibrate::{CalibrationResult, NormalityTestResult, DEFAULT_SIGMA};
pub use decode::{CandidateValue, DiscretePrior, Provenance, ValueFieldTemplate};
pub use eval::{
    ClassificationReport, EvalReport, PredictionRecord, PriorKind, RetrievalReport,
};
pub use llm::{CompletionConfig, TemplateId, TraceStore, VerbalizedGaussian};
pub use prior::{Lcp, PriorDensity, TruncatedGaussian, UniformPrior};
pub use trace::{TokenStep, TokenTrace, ValueSpan};
