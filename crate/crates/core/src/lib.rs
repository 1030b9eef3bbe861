//! Thermalization assessment and effective-Hamiltonian estimation from
//! output-side tomography data.

pub mod dataset;
pub mod error;
pub mod gibbs;
pub mod hamiltonian;
pub mod operator;
pub mod report;
pub mod selection;
pub mod sim;

pub use dataset::{Dataset, Sample};
pub use error::{Error, Result};
pub use gibbs::{GibbsState, LevelOfDescription};
pub use operator::{DensityMatrix, HermitianOperator};
pub use selection::{Analysis, CorrelationMetric, ModelScore};
