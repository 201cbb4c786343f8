//! Dynamic graph neural network for molecular conformational dynamics.
//!
//! A molecule at one time step is a complete graph whose edge weights are the
//! interatomic distances. A window of consecutive graphs is encoded one
//! snapshot at a time by a graph convolution, the embeddings are rolled
//! through an LSTM, and the final cell state is decoded by an MLP into the
//! distance matrix of the next time step.
//!
//! Modules:
//! - [`numerics`]: matrices, the autodiff tape, eigenvalues, RNG.
//! - [`graphdata`]: XYZ parsing, distance graphs, normalization, windows, splits.
//! - [`model`]: GCN → LSTM → MLP predictor.
//! - [`training`]: loss, Adam, training loops, checkpoints.
//! - [`metrics`]: edge-weight errors and Laplacian spectral similarity.
//! - [`synthetic`]: generated trajectories for tests and demos.

pub mod error;
pub mod graphdata;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;

pub use error::{Error, ErrorKind, Result};
