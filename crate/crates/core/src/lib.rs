//! Encoder-decoder recurrent model for predicting which tracks in the
//! second half of a listening session will be skipped.
//!
//! The crate is organised bottom-up: [`tensor`] and [`tape`] give a small
//! reverse-mode autodiff engine, [`layers`] builds dense and LSTM layers on
//! top of it, [`model`] wires them into the skip predictor, and [`train`]
//! fits it. [`data`] handles file formats and batching, [`metrics`] scores
//! predictions and [`synthgen`] produces synthetic sessions.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod synthgen;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
