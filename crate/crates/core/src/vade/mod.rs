//! Convolutional VAE with a Gaussian-mixture prior, its losses and schedules.

pub mod config;
pub mod loss;
pub mod model;
pub mod objective;
pub mod schedule;

pub use config::{ArchConfig, LossWeights, ModelConfig, D_X, IMAGE_SIDE};
pub use model::{reparameterize, ConvVade, GmmParams, GmmPrior, LatentPosterior, PriorGrad};
pub use objective::{loss_and_grads, LossBreakdown, StepConfig};
pub use schedule::{aux_ramp, beta_schedule};
