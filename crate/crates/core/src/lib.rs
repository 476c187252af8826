//! Temporally coherent video cartoonization.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! semantic alignment layer used inside the generator ([`ssa`]), correlative
//! motion consistency ([`pmc`]), the networks and losses, a desk-scale
//! trainer and the warping-error evaluator for stylized videos.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod ssa;
pub mod pmc;
pub mod imageproc;
pub mod checkpoint;
pub mod networks;
pub mod video_eval;
pub mod losses;
pub mod synthetic;
pub mod trainer;
pub mod gradsuite;
pub mod cli;
