//! Density estimation for multivariate sequences: recurrent models with
//! factorized, leaked-subset, hierarchical and flat output decompositions,
//! their training objectives, and brute-force verifiers.

pub mod datasets;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod graph;
pub mod models;
pub mod objectives;
pub mod oracle;
pub mod params;
pub mod training;

pub use datasets::{FrameSequence, LeakSplit, StepSequence, SyntheticSpec};
pub use distributions::{DistParams, ElementKind};
pub use error::{Error, Result};
pub use models::{Family, ForwardResult, Mode, ModelConfig, SequenceModel};
pub use params::{Gradients, ParamId, ParamStore};
