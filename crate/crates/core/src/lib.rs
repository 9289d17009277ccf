//! Spike-camera simulation, reconstruction and Gaussian-splatting scene
//! fitting.

pub mod config;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod recon;
pub mod scenegen;
pub mod sim_net;
pub mod spike_sim;
pub mod splat;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
pub use image::GrayImage;
