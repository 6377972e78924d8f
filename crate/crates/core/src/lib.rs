//! Multi-label prediction of ICU Care Escalation Triggers (CETs) from the
//! first 24 hours of a stay.
//!
//! The pipeline runs: [`ingest`] (CSV tables, cohort rules) →
//! [`featurize`] (19 first-day features) → [`labeler`] (four rule-based
//! labels from hours 24–72) → [`splitter`] (iterative multilabel
//! stratification) → [`learners`] (label powerset over four classifier
//! families) → [`metrics`] and [`importance`].

pub mod artifact;
pub mod config;
pub mod error;
pub mod featurize;
pub mod importance;
pub mod ingest;
pub mod labeler;
pub mod learners;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod splitter;
pub mod synth;

pub use error::{CetError, Result};
