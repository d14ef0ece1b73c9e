//! Style calibration for a differentiable vocal effects chain.
//!
//! The library renders a mono vocal through a 130-parameter effects chain
//! (parametric EQ, compressor, ping-pong delay, FDN reverb, panner), embeds
//! audio into compact style spaces (MFCC statistics or interpretable mixing
//! features), and recovers chain parameters from reference recordings by
//! maximising an angular-distance likelihood together with a multivariate
//! Gaussian prior fitted over a preset collection. Every stage exposes exact
//! reverse-mode gradients so the whole estimate is tuned with Adam.

pub mod dsp;
pub mod effects;
pub mod encoders;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod prior;
pub mod transfer;

pub use error::{Error, Result};

/// Sample rate the whole pipeline is pinned to.
pub const SAMPLE_RATE: u32 = 44100;

/// Identifier of the parameter layout; embedded in every serialized artifact.
pub const LAYOUT_VERSION: &str = "vocal-chain-130/1";
