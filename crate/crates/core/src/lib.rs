//! Streaming-prefix grounding and action-readiness gating for a frozen
//! vision-language-action backbone.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece:
//! the dense kernel and hand-written backward passes ([`numerics`]), the
//! per-patch focus map and its injection weights ([`focus`]), the readiness
//! score and latched gate ([`readiness`]), the typing schedule
//! ([`streaming`]), the synthetic desk-scale world that stands in for the
//! simulator and backbone ([`simworld`]), the joint-objective training loop
//! ([`training`]) and metric aggregation ([`metrics`]).
//!
//! File formats, the command line and the live gateway live in the `premover`
//! companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod focus;
pub mod metrics;
pub mod numerics;
pub mod readiness;
pub mod rng;
pub mod simworld;
pub mod streaming;
pub mod training;

pub use error::{Error, Result};
