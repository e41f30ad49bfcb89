//! Separation of ground-roll noise from reflections in land seismic shot
//! gathers.
//!
//! The crate covers the whole desk-scale workflow:
//!
//! * [`gather`] — the `Gather` container, its binary file format, the 2-D
//!   f-k spectrum and PGM rendering.
//! * [`synth`] — synthetic dispersive ground-roll (linear sweep in a tapered
//!   window with trace-to-trace degradation) and reflection gathers built
//!   from Ricker-convolved hyperbolic/linear events.
//! * [`filters`] — the complementary low/high frequency split used to feed
//!   the network, plus the two classical baselines (f-k dip filter and
//!   high-pass filter).
//! * [`nn`] — a dual-branch convolutional network built from scratch:
//!   3×3 same-padding convolutions, batch normalization, LeakyReLU, dropout,
//!   a combined similarity + discriminative loss, and RMSprop. Gradients are
//!   verified against finite differences in the test suite.
//! * [`pipeline`] — patch extraction, normalization, the training loop,
//!   full-gather inference, and the windowed-rms energy-replacement labeler.
//! * [`metrics`] — SNR / noise-energy metrics and the scenario benchmark
//!   harness comparing the network against the f-k dip baseline.
//!
//! Data-parallel inner loops (per-trace synthesis and filtering, per-sample
//! conv batches, benchmark scenarios) run on rayon when the default
//! `parallel` feature is enabled and fall back to plain sequential iteration
//! without it. Results are bitwise identical either way: parallel maps are
//! index-ordered and reductions run in a fixed order.

pub mod error;
pub mod filters;
pub mod gather;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub(crate) mod par;

pub use error::{Error, Result};
pub use gather::Gather;
