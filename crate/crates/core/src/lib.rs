//! Audio-visual speech enhancement with a convolutional recurrent network and
//! two-stage cross attention, built on a small `f64` autodiff engine.

pub mod audio;
pub mod data;
pub mod enhance;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod mhca;
pub mod model;
pub mod nn;
pub mod spectrogram;
pub mod tensor;
pub mod train;
pub mod visual;

pub use error::{Error, Result};
