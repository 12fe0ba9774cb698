//! Conditional generative moment matching network: model, kernels, CMMD
//! loss (exact and RFF-approximated), AdaGrad training and serialization.

pub mod cmmd;
pub mod io;
pub mod kernel;
pub mod model;
pub mod noise;
pub mod train;

pub use cmmd::{cmmd_exact, cmmd_grad, cmmd_rff, CmmdConfig, CmmdMode, RffBasis};
pub use io::{load_model, save_model};
pub use kernel::{gaussian_kernel, gram};
pub use model::{GmmnGrads, GmmnModel};
pub use noise::{derive_seed, NoiseVector, NOISE_DIM};
pub use train::{adagrad_step, train, TrainConfig, TrainState};
