//! Numeric substrate: tensors, Gaussians, seeded randomness, reverse-mode
//! gradients and their finite-difference check, streaming moments, rank statistics, Adam.

pub mod autodiff;
pub mod gaussian;
pub mod gradcheck;
pub mod moments;
pub mod optim;
pub mod params;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use gaussian::{
    floored_softplus, gaussian_log_density, kl_to_standard_normal, reparameterize, softplus,
    GaussianDiag, STD_FLOOR,
};
pub use gradcheck::{finite_difference_check, finite_difference_check_steps, GradReport};
pub use moments::{running_moments_update, RunningMoments};
pub use optim::{Adam, AdamConfig};
pub use params::ParamSet;
pub use rng::RngStream;
pub use stats::{average_ranks, spearman};
pub use tensor::Tensor;
