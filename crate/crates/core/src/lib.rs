//! Reconstruction of missing precordial ECG leads from reduced lead sets
//! with a 1D U-net.
//!
//! Pipeline: [`dataio`] turns WFDB corpora into 125 Hz, 1024-sample windows;
//! [`model`] is the U-net with hand-written backpropagation; [`training`]
//! fits it with AdamW on MSE; [`evaluation`] scores reconstructions by
//! Pearson correlation; [`experiments`] runs the 25 lead configurations and
//! builds the summary tables; [`plot`] draws overlay figures.

pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod experiments;
pub mod leads;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

/// Stamped into checkpoints and manifests; artifacts from another version
/// are refused.
pub const PIPELINE_VERSION: &str = concat!("leadrecon-", env!("CARGO_PKG_VERSION"));
