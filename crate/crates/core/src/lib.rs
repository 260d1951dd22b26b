//! Sparse autoencoders for reduced-order modelling of PDE snapshot data,
//! trained with (adaptive) linearised Bregman iterations.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod pde_data;
pub mod postproc;
pub mod prox;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{Mat, SvdFactors};
pub use model::{Architecture, MlpAutoencoder, Params};
pub use prox::RegSpec;
pub use optim::{MetricsRecord, OptimizerConfig, OptimizerKind, TrainConfig, TrainOutcome};
pub use postproc::PostprocReport;
pub use pde_data::{Dataset, Equation, SnapshotSet};
pub use harness::ExperimentConfig;
