//! Defocus deblurring with frequency-domain inverse-kernel prediction.
//!
//! The crate covers the whole path from point-spread-function simulation to a
//! trained three-scale restoration network:
//!
//! - [`tensor`], [`spectral`], [`sampling`], [`conv`]: dense arrays, 2-D FFT,
//!   bilinear resampling and spatial convolution.
//! - [`blur`], [`dataset`]: disk and Gaussian kernels, spatially varying blur
//!   and seeded synthetic training pairs.
//! - [`autodiff`]: a small tape-based reverse-mode engine with Adam, SWA and a
//!   finite-difference checker.
//! - [`fikp`], [`dsrm`]: the inverse-kernel predictor with position-adaptive
//!   convolution, and the scale-recurrent fusion network.
//! - [`loss`], [`metrics`], [`pipeline`]: training objective, PSNR/SSIM/MAE,
//!   the end-to-end model, training loop, evaluation and ablations.

pub mod autodiff;
pub mod blur;
pub mod conv;
pub mod dataset;
pub mod dsrm;
pub mod error;
pub mod fikp;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sampling;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
