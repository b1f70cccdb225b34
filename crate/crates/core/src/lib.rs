//! Unrolled half-quadratic-splitting ADMM reconstruction for undersampled
//! multi-coil MRI.
//!
//! The crate covers the measurement physics ([`mri`], [`fft`]), sampling
//! masks ([`mask`]), coil-map estimation ([`coils`]), the unrolled solver
//! ([`solver`]) with classical and learned z-step denoisers ([`denoise`],
//! [`nets`]), losses and metrics ([`metrics`]), a reverse-mode autodiff
//! engine ([`autodiff`]), training on simulated phantoms ([`train`]) and
//! file formats ([`io`]).
//!
//! Complex arrays are real tensors with a 2-plane axis before the two
//! spatial axes: images are `[2, H, W]`, coil data `[nc, 2, H, W]`.

pub mod autodiff;
pub mod coils;
pub mod cplx;
pub mod denoise;
pub mod error;
pub mod fft;
pub mod init;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod mri;
pub mod nets;
pub mod solver;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/masks.md")]
    mod masks {}
    #[doc = include_str!("../../../book/src/coils.md")]
    mod coils {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
