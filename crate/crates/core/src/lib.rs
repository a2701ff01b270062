//! Deep convolutional framelet denoising.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! It contains the numerical side of the project: wrap-around Hankel algebra,
//! frame verification, a directional subband transform with an exact
//! resolution of identity, a soft-threshold framelet denoiser, a miniature
//! wavelet residual network with hand-written reverse-mode gradients, the
//! relaxed (Krasnoselskii-Mann) fixed-point denoiser, a small CT simulator
//! and image quality metrics.
//!
//! File formats and the command line live in the `wavframe` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod classical;
pub mod ct_sim;
pub mod directional;
pub mod error;
pub mod fourier;
pub mod framelets;
pub mod hankel;
pub mod image;
pub mod km;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod wavresnet;

pub use error::{Error, Result};
pub use image::{Image, PatchSet, SubbandStack};
