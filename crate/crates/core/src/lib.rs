//! Hierarchical activity recognition from 9-channel IMU streams.
//!
//! Frames are cut into overlapping windows and summarized by simple
//! statistics. A random forest names the *unit pattern* (walking, dribbling,
//! ...) of every window, a Gaussian mixture flags windows that match no known
//! pattern, and bag-of-words histograms over blocks of unit patterns are
//! classified into *activities* by a second forest.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activity;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod gmm;
pub mod ingest;
pub mod novelty;
pub mod recognizer;
pub mod registry;
pub mod service;

pub use error::{Error, Result};
