//! Joint single-image rain detection and removal.
//!
//! The crate is organised around the full workflow:
//!
//! * [`synthesis`] renders rain streak layers and composes paired training data
//!   (light rain, heavy rain with an atmospheric veil, haze only).
//! * [`nn`] is a small reverse-mode engine for the convolutional layers the
//!   networks need (dilated 3×3 convolutions, concatenation, softmax heads).
//! * [`network`] holds the contextualized dilated network with its detection,
//!   streak and background heads, the joint loss and single-step training.
//! * [`pipeline`] applies the network recurrently, hosts the dehazing network
//!   and chains stages such as derain → dehaze → derain.
//! * [`metrics`] computes luminance PSNR/SSIM, mask quality and timings.

pub mod error;
pub mod image;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod pipeline;
pub mod provenance;
pub mod synthesis;

pub use crate::error::{Error, Result};
pub use crate::image::Image;
