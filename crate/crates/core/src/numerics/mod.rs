//! Dense linear algebra, reverse-mode differentiation, a symmetric eigensolver
//! and the crate's seedable random number generator.

mod eigen;
mod matrix;
mod rng;
mod tape;

pub use eigen::{sym_eigenvalues, SYMMETRY_TOL};
pub use matrix::{sigmoid, Activation, Elementwise, Matrix};
pub use rng::{derive_seed, Rng};
pub use tape::{Gradients, Tape, Var};
