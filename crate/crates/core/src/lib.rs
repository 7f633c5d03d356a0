//! Precision and recall of autoregressive sequence models under temperature
//! scaling, and reweighted likelihood losses that move a model along its
//! precision-recall curve.

pub mod artcase;
pub mod dist;
pub mod error;
pub mod fixedpoint;
pub mod losses;
pub mod multask;
pub mod prmetrics;
pub mod verify;
pub mod nn;

pub use dist::{Categorical, FactorizedSeqDist, LogitTable};
pub use error::{Error, Result};
pub use losses::{LossMethod, LossSpec, QuantileBuffer, TokenWeights};
pub use multask::{EvalReport, MulSample, RunSpec, SkewSpec};
pub use prmetrics::{PRCurve, PRPoint};
pub use artcase::ArtCaseParams;
