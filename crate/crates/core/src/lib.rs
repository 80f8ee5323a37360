//! Joint beamforming and pinching-antenna position optimization for
//! multi-waveguide downlinks.
//!
//! The crate is organized around the weighted-sum-rate objective of a system
//! where each of `K` waveguides carries one antenna that can slide along the
//! waveguide axis. It provides:
//!
//! * [`system`] — geometry, channel coefficients, SINR/rate evaluation and
//!   the feasibility checks shared by every solver;
//! * [`transforms`] — the fractional-programming reformulation (rate dual,
//!   quadratic fraction, first-order surrogates, penalty and barrier
//!   objectives) together with their closed-form gradients;
//! * [`autodiff`] — a scalar reverse-mode tape used for gradients through
//!   the channel model and for backpropagation through unrolled updates;
//! * [`graph`] — backend-generic builders for the model expressions, shared
//!   by plain evaluation and tape recording;
//! * [`solvers`] — alternating, simultaneous, barrier-based, uniform and
//!   exhaustive baselines;
//! * [`meta`] — the learned joint optimizer: two small networks propose
//!   beamforming and position updates, trained across sub-tasks.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod meta;
pub mod solvers;
pub mod system;
pub mod transforms;

pub use error::{Error, Result};
