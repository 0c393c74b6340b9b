//! Nested exemplar latent space models for dynamic bipartite and symmetric
//! networks, with a dynamic latent factor competitor, a built-in HMC sampler,
//! synthetic data generators and evaluation tools.

pub mod dataio;
pub mod design;
pub mod dlfmodel;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod nexmodel;
pub mod oracle;
pub mod predictor;
pub mod sampler;
pub mod simulate;
pub mod tensor3;

pub use design::{AdjacencyData, DesignData, TimeIndex};
pub use error::{Error, Result};
pub use tensor3::{cp_reconstruct, CpFactorSet, Tensor3};
