//! Detection of wireless transmission events from streaming power spectral
//! density data.
//!
//! Each frequency bin runs its own [`detector::BinPipeline`], comparing a short
//! recent window against a longer delayed historic window with a chi-square
//! test. Active bins are grouped across frequency and time into
//! [`model::SpectrumEvent`]s by [`grouping`], which can be stored and queried
//! ([`store`]), summarized ([`report`]) or scored against ground truth ([`eval`]).

pub mod config;
pub mod detector;
pub mod engine;
pub mod eval;
pub mod grouping;
pub mod model;
pub mod report;
pub mod store;
pub mod topology;

pub use config::{load_config, load_engine_config, DetectorConfig, EngineConfig};
pub use engine::Engine;
pub use model::{BandPlan, Location, Millis, PsdSample, SpectrumEvent};
