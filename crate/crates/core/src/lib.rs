//! Deconfounded content-based tag recommendation on synthetic data.
//!
//! The pipeline: [`synth`] draws uploader-confounded UGC–tag triplets and
//! splits them under a topic-ratio intervention; [`backbone`] scores tags as
//! a content expert times an uploader gate; [`estimator`] implements the
//! four ways of handling the uploader; [`train`] fits a model with a burn-in
//! and an adjustment phase; [`metrics`] and [`sweep`] evaluate it.

pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod params;
pub mod seed;
pub mod stats;
pub mod sweep;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
