//! Cluster mean-field dynamics of the dissipative North-East-Center (NEC)
//! spin model on the square lattice.

// Negated comparisons such as `!(x > 0.0)` are used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cmf;
pub mod density;
pub mod error;
pub mod icmf;
pub mod integrator;
pub mod lindblad;
pub mod operators;
pub mod sparse;
pub mod stability;
pub mod sweep;

pub use cmf::{CmfModel, Prescription};
pub use density::DensityMatrix;
pub use error::{Error, Result};
pub use integrator::{IntegratorOptions, SteadyOptions};
pub use lindblad::Generator;
pub use operators::{ClusterOperatorSet, HamiltonianKind, HamiltonianSpec, ModelParams, NecRates};
pub use sparse::SparseMatrix;
