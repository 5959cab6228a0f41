pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod dsp;
pub mod model;
pub mod error;
pub mod nn;
pub mod scaling;
pub mod tasks;
pub mod train;
pub mod unet;
pub mod vocoder;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
