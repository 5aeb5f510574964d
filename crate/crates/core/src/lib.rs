//! Strong lottery tickets in randomly initialized graph neural networks.
//!
//! Weights are drawn once from seeded generators and never trained. Learning
//! happens entirely in per-weight scores that select a subnetwork through a
//! single-coated or multicoated supermask. Deep residual GCNs can be folded so
//! that a few weight sets are reused across many iterations, and a trained
//! model packs into a few bits per weight plus seeds.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the 32-bit storage precision used by the packed format.

pub mod compressor;
pub mod config;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod rand_init;
pub mod scalar;
pub mod supermask;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{normalize_adjacency, Graph, Split, Splits};
pub use matrix::{dense_matmul, spmm, CsrMatrix, DenseMatrix};
pub use model::{Architecture, FoldSpec, Model, ModelSpec};
pub use rand_init::{InitMethod, InitSpec};
pub use scalar::Scalar;
pub use supermask::{CoatMaskSum, MaskKind, SparsityPlan, ThresholdMode, ThresholdScope};
pub use trainer::{TrainConfig, TrainOutcome};

pub type Dense32 = DenseMatrix<f32>;
pub type Dense64 = DenseMatrix<f64>;
pub type Csr32 = CsrMatrix<f32>;
pub type Csr64 = CsrMatrix<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
