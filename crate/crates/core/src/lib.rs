//! Supervised detection of appliance ON/OFF events in high-frequency
//! voltage and current recordings.
//!
//! A classifier (KNN or RBF SVM) learns what an event window looks like from
//! labelled events and randomly drawn quiet windows. The detector then slides
//! a 10 s window over a recording and merges positive windows into events.
//! Adaptive training feeds the detector's own false positives back into the
//! non-event class.

pub mod classify;
pub mod detector;
pub mod error;
pub mod eval;
pub mod features;
pub mod normalize;
pub mod pipeline;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
