//! Minimal dense numerics: matrices, batched MLPs with explicit backward
//! passes, a Jacobi SVD pseudo-inverse, and Adam.

mod adam;
mod matrix;
mod mlp;
mod real;
mod svd;

pub use adam::{cosine_lr, AdamConfig, AdamState};
pub use matrix::{gemm, Matrix};
pub use mlp::{Activation, Linear, MlpCache, MlpParams};
pub use real::{Precision, Real};
pub use svd::{pseudo_inverse, svd_thin, Svd, DEFAULT_SIGMA_TOL};
