//! Probability-tail exploration over a differentiable generative prior.
//!
//! The crate is organised bottom-up:
//!
//! - [`density`]: PCA, Gaussian and KDE density models over embedding samples.
//! - [`autodiff`]: a small define-then-run reverse-mode engine over dense vectors.
//! - [`prior`]: a toy conditional diffusion prior, its DDIM-style sampler and
//!   the conceptual space (token embedding + low-rank adapters) searched by a trial.
//! - [`creative`]: the creative / anchor / negative losses, AdamW, the validity
//!   oracle and the trial runner.
//! - [`experiment`]: configuration documents and on-disk artifacts shared by the
//!   CLI and the steering service.

pub mod autodiff;
pub mod creative;
pub mod density;
pub mod error;
pub mod experiment;
pub mod optim;
pub mod prior;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use nalgebra;
