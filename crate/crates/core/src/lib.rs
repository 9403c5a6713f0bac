//! Convolutional sequence autoencoder: corpus handling, numeric core,
//! model, training tasks, and evaluation metrics.
//!
//! The model encodes a token sequence with strided 1-D convolutions into a
//! single latent column, expands it back with transposed convolutions, and
//! reads words out through a cosine-similarity softmax against the shared
//! embedding matrix.

pub mod autoencoder;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
pub use numeric::{Graph, NodeId, Optimizer, OptimizerKind, Parameter, Tensor};
