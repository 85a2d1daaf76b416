//! Contour location by entropy reduction with multiple biased information
//! sources fused in one Gaussian-process surrogate.
//!
//! Numerics are generic over `f32` and `f64`; the aliases below fix `f64`.

pub mod acquisition;
pub mod benchmarks;
pub mod clover;
pub mod contour;
pub mod design;
pub mod domain;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod external;
pub mod hyperfit;
pub mod kernel;
pub mod linalg;
pub mod misgp;
pub mod scalar;
pub mod special;

pub use crate::clover::{run, run_with_metrics, CloverConfig, StopReason};
pub use error::{CloverError, Result, SourceError};

pub type DomainBox = domain::DomainBox<f64>;
pub type SampleSet = domain::SampleSet<f64>;
pub type Observation = domain::Observation<f64>;
pub type SharedSource = domain::SharedSource<f64>;
pub type FnSource = domain::FnSource<f64>;
pub type MisGp = misgp::MisGp<f64>;
pub type Posterior = misgp::Posterior<f64>;
pub type KernelSpec = kernel::KernelSpec<f64>;
pub type MeanSpec = kernel::MeanSpec<f64>;
pub type IntegrationGrid = entropy::IntegrationGrid<f64>;
pub type IterationTrace = clover::IterationTrace<f64>;
pub type RunOutput = clover::RunOutput<f64>;
pub type ContourResult = contour::ContourResult<f64>;
pub type AnalyticProblem = benchmarks::AnalyticProblem<f64>;
