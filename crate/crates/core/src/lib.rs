//! EEG emotion decoding and emotion-conditioned painting synthesis.

pub mod cgan;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod fairness;
pub mod features;
pub mod gallery;
pub mod imaging;
pub mod ingest;
pub mod label;
pub mod stream;

pub use label::{EmotionLabel, NUM_CLASSES};
