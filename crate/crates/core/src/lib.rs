//! Sparse one-hidden-layer tanh networks trained in three stages (smooth Adam,
//! adaptive-lasso subgradient Adam, proximal gradient descent), and the
//! translation of the surviving architecture into additive model components.

pub mod analysis;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod extraction;
pub mod io;
pub mod lambda_path;
pub mod network;
pub mod optim;
pub mod pipeline;

pub use dataset::{standardize, Dataset, StandardizationStats};
pub use error::{ErrorKind, PradaError, Result};
pub use network::NetworkParams;
pub use optim::{
    adam_step, compute_penalty_weights, penalized_objective, proximal_step, soft_threshold,
    subgradient_lasso_step, AdamState, PenaltyWeights,
};
