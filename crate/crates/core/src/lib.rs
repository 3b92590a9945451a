//! Differentiable reward policy optimization against a hybrid-regularized
//! emotion reward model, at desk scale.
//!
//! - [`autodiff`]: reverse-mode tape over dense `f64` arrays.
//! - [`model`]: the transformer-encoder reward model.
//! - [`regularization`]: label smoothing, energy-adaptive mixup, FGM and the
//!   combined objective.
//! - [`policy`]: Gumbel-Softmax token policy, decoding, rewards and updates.
//! - [`corpus`]: synthetic emotional feature corpora and the oracle judge.

pub mod array;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod features;
pub mod model;
pub mod optim;
pub mod policy;
pub mod regularization;
pub mod rng;
pub mod train;

pub use array::Array;
pub use error::{Error, Result};
pub use features::FeatureSequence;
pub use rng::Rng;
