//! Simulation and reconstruction for lightfield SPECT with modular
//! partial-ring detectors.
//!
//! The pipeline runs geometry → Monte Carlo projection → Siddon
//! backprojection → point-spread analysis. See the guide in `book/` for a
//! walk through each stage.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod geometry;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod projector;
pub mod recon;
pub(crate) mod rng;
pub mod siddon;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/geometry.md")]
    struct Geometry;
    #[doc = include_str!("../../../book/src/phantoms.md")]
    struct Phantoms;
    #[doc = include_str!("../../../book/src/projection.md")]
    struct Projection;
    #[doc = include_str!("../../../book/src/siddon.md")]
    struct Siddon;
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    struct Reconstruction;
    #[doc = include_str!("../../../book/src/analysis.md")]
    struct Analysis;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
