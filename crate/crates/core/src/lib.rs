//! Weakly supervised online action detection on skeleton keypoint sequences.
//!
//! A video is cut into fixed-length clips. Each clip is embedded by a
//! multi-scale spatio-temporal graph convolution ([`lfem`]). A convolutional
//! branch ([`cpgb`]) scores clips from video-level labels only and turns its
//! scores into clip pseudo labels. A causal recurrent branch ([`oamb`]) learns
//! from both and is the only part used at inference, so predictions for a
//! clip never depend on later clips.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod cpgb;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod lfem;
pub mod model;
pub mod oamb;
pub mod optim;
pub mod plot;
pub mod trainer;

pub use config::{RunConfig, TrainConfig};
pub use error::{Error, Result};
pub use model::Model;
