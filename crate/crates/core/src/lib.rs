//! Evaluation toolkit for anonymous video analytics at digital signage.
//!
//! Given ground-truth annotations and algorithm estimations for a video, the
//! crate computes localization (precision, recall, F1, stratified recall),
//! counting (MOE, MPE, COE, CPE, TCOE) and demographic attribute (per-class
//! age and gender P/R/F) measures.

pub mod attributes;
pub mod counting;
pub mod error;
pub mod ingest;
pub mod localization;
pub mod matching;
pub mod model;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
