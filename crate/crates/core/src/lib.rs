//! Activity inference from indoor air quality telemetry.
//!
//! The crate covers the batch side of the pipeline: parsing and aligning
//! multi-device sensor logs, window features, a well-mixed-zone simulator
//! that produces labeled synthetic traces, a set of lightweight classifiers,
//! and the evaluation protocol used to compare them.

pub mod eval;
pub mod features;
pub mod ingest;
pub mod model;
pub mod models;
pub mod rng;
pub mod series;
pub mod simulator;

pub use model::{
    parse_activity_label, validate_sample, ActivityAnnotation, ActivityLabel, DeviceId, ModelError,
    PollutantKind, PollutantSample, Readings, ValidatedSample,
};
pub use series::{AlignedSeries, SeriesWindow};
