//! Crowd density estimation with a dual-branch fully convolutional network.
//!
//! - [`tensor`]: NCHW tensors, dilated convolution, pooling, bilinear
//!   resizing, the Euclidean loss and SGD with momentum.
//! - [`density`]: count-preserving Gaussian ground truth from head points.
//! - [`augment`]: multi-scale pyramids, overlapping 225x225 patches and
//!   count-based oversampling.
//! - [`model`]: the deep (VGG-style, dilated) and shallow branches, fusion
//!   and upsampling, plus receptive-field arithmetic.
//! - [`train`]: k-fold splits, SGD training, MAE evaluation and a synthetic
//!   crowd generator.
//! - [`io`]: annotation JSON, DMAP/CNWT/PGM codecs, heatmaps, CSV, config.

pub mod augment;
pub mod density;
pub mod error;
pub mod image;
pub mod io;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
