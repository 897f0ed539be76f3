//! Signal processing and modeling for WiFi-based vital-sign monitoring.

pub mod cpc;
pub mod csi;
pub mod dsp;
pub mod ecg;
pub mod error;
pub mod corpus;
pub mod models;
pub mod synth;

pub use error::{CoreError, Result};
