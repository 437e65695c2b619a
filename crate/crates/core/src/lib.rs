//! Photon-efficient single-photon imaging: a low-flux detector model, a
//! simulator, pixelwise and penalized maximum-likelihood reconstruction of
//! reflectivity and depth, and performance bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod censor;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pixelwise;
pub mod pml;
pub mod pulse;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod scenes;
pub mod simulator;
pub mod tv;

pub use error::{Error, Result};
pub use model::{CensorMask, DetectionFrame, InstrumentConfig, Scene};
pub use pulse::PulseShape;
pub use scalar::Real;

pub type Config64 = InstrumentConfig<f64>;
pub type Config32 = InstrumentConfig<f32>;
pub type Pulse64 = PulseShape<f64>;
pub type Pulse32 = PulseShape<f32>;
pub type Scene64 = Scene<f64>;
pub type Scene32 = Scene<f32>;
