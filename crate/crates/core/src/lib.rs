//! Contrastive representation learning for triaxial IMU sensing, end to end:
//! data ingestion and windowing, RGB-spectrogram conversion, sensor-aware
//! image augmentations, momentum-queue contrastive pre-training on image
//! corpora, and few-shot linear evaluation with robustness ablations.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod imageaug;
pub mod moco;
pub mod nn;
pub mod parallel;
pub mod probe;
pub mod rng;
pub mod sensoraug;
pub mod spectro;

pub use error::{Error, Result};
