//! Encoding ladder optimization driven by playback statistics.
//!
//! The crate models how an adaptive streaming player picks a representation
//! given a viewer's viewport size and estimated bandwidth, and uses that model
//! to choose per-chunk encoding bitrates. The pieces fit together like this:
//!
//! * [`rq_model`] holds per-chunk rate-quality curves sampled from encoder
//!   sweeps, with piecewise linear interpolation between samples.
//! * [`stats`] ingests playback traces into empirical viewport and bandwidth
//!   distributions and answers probability queries over them.
//! * [`player`] combines a ladder, the curves, and the distributions into
//!   viewing probabilities, expected streaming bitrate, expected delivered
//!   quality, and analytic gradients of both.
//! * [`region`] computes the convex region of (rate, quality) points a ladder
//!   can reach, and the upper hull of a family of curves.
//! * [`optimizer`] minimizes expected streaming bitrate subject to a floor on
//!   expected quality over ordered, box-bounded bitrates.
//! * [`baselines`] builds the two reference ladders the optimizer is judged
//!   against: a fixed encoder label per resolution, and a hull-maximizing
//!   spread.
//! * [`simulator`] replays sessions against the same inputs with a seeded RNG
//!   and reports empirical counterparts of the analytic quantities.
//! * [`synth`] generates deterministic synthetic chunk models and traces for
//!   tests, demos, and benchmarks.
//! * [`files`] reads and writes the JSON/CSV formats shared with the CLI.

pub mod baselines;
pub mod error;
pub mod files;
pub mod optimizer;
pub mod player;
pub mod region;
pub mod rq_model;
pub mod simulator;
pub mod stats;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
