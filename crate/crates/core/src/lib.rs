//! Exposure-ratio estimation and HDR merging for bracketed image stacks.
//!
//! Camera metadata rounds exposure times and gains, so the scaling constants
//! implied by the EXIF block can be percent-level wrong; merging with those
//! constants leaves visible seams at the transitions between exposures. This
//! crate re-estimates the constants from the stack itself: it pairs pixels
//! observed in two exposures, weights each log-ratio equation by its noise
//! variance, and solves a small regularized least-squares system anchored to
//! the metadata prior. The same machinery drives a simulation and evaluation
//! harness used to validate the estimator end to end.
//!
//! Typical flow:
//! 1. [`stack::load_stack`] reads PFM images plus a JSON metadata sidecar.
//! 2. [`solve::estimate_exposures`] builds the pairwise system and solves it.
//! 3. [`merge::merge`] produces the HDR radiance map with the refined
//!    constants.

pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod merge;
pub mod noise;
pub mod rng;
pub mod sim;
pub mod solve;
pub mod stack;
pub mod system;

pub use error::{Error, Result};
pub use image::ImageBuf;
pub use merge::{merge, MergeMode, MergeOutput};
pub use noise::{NoiseParameters, NoiseProfile};
pub use solve::{estimate_exposures, EstimateConfig, EstimateOutcome, EstimateReport};
pub use stack::{CaptureMetadata, ExposureEstimate, ExposureStack};
pub use system::{BuildConfig, ReducedSystem, Topology, WeightMode};
