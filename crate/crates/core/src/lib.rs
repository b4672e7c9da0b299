//! Rebalancing of imbalanced multi-lead ECG datasets by intra-class wavelet
//! fusion, with calibrated noise injection and a small classifier harness to
//! measure the effect.

pub mod classify;
pub mod cleanse;
pub mod compare;
pub mod data;
pub mod error;
pub mod fusion;
pub mod linalg;
pub mod noise;
pub mod rng;
pub mod synth;
pub mod wavelet;

pub use data::{ClassId, DatasetManifest, EcgRecord};
pub use error::{Error, Result};
pub use rng::RngStream;
pub use wavelet::FilterBank;
