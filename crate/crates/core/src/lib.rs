//! Boundary-guided shrinking of acoustic features for end-to-end speech
//! translation.
//!
//! The pipeline is acoustic encoder → boundary predictor → weighted
//! shrinking → semantic encoder → decoder, trained with a CTC-guided
//! boundary objective. Everything runs on a small f64 autodiff substrate
//! ([`tensor`]) and is exercised on synthetic pseudo-speech ([`data`]).

pub mod boundary;
pub mod config;
pub mod ctc;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod parallel;
pub mod shrink;
pub mod tensor;

pub use error::{Error, Result};
