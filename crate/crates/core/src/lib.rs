//! Simulation and analysis of photon correlations from one or two trapped
//! ions: Bloch-equation dynamics, photon emission, beam-splitter
//! interference, time-tag correlation and curve fitting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomdyn;
pub mod config;
pub mod correlator;
pub mod emitter;
pub mod error;
pub mod fitkit;
pub mod num;
pub mod optics;
pub mod pipeline;
pub mod tagfile;
pub mod time;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use error::{Error, Result};
pub use num::Real;

pub type AtomParams = atomdyn::AtomParams<f64>;
pub type BlochState = atomdyn::BlochState<f64>;
pub type G2Curve = atomdyn::G2Curve<f64>;
pub type NormalizedCurve = correlator::NormalizedCurve<f64>;
pub type FitResult = fitkit::FitResult<f64>;

pub use config::{ExperimentConfig, Mode};
pub use correlator::CorrelationHistogram;
pub use emitter::{DutyCycle, EmissionStream, PulseParams, Source};
pub use optics::{DetectorParams, OpticsParams, TimeTagRecord};
pub use tagfile::TimeTagFile;

/// Generator used throughout; `stream` separates independent components
/// that share one seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
