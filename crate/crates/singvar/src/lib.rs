//! Stochastic pitch-variation post-filter for synthesized singing voices.
//!
//! A deterministic synthesizer produces the same F0 contour for a score every
//! time. This crate models the natural take-to-take variation of pitch
//! contours in the modulation-spectrum domain with a conditional generative
//! moment matching network and injects that variation back into deterministic
//! contours, so repeated renders differ the way repeated human takes do. The
//! same machinery drives a neural double-tracking renderer next to a
//! conventional LFO-based one.

pub mod datagen;
pub mod doubletrack;
pub mod error;
pub mod eval;
pub mod f0;
pub mod gmmn;
pub mod modspec;
pub mod postfilter;

pub use error::{Error, Result};
