//! From-scratch spectral-spatial CNN for per-pixel hyperspectral image
//! classification.
//!
//! A classifier sample is the 3x3 neighborhood of a pixel with its full
//! spectrum. A spectral convolution turns the cube into a set of 1-D
//! feature vectors, those vectors are stacked as columns of an image-like
//! 2-D matrix, and a standard 2-D CNN (convolution, max pooling, fully
//! connected layers, softmax) classifies the matrix. The crate covers the
//! whole pipeline: cube/label I/O, normalization, patch extraction,
//! stratified splitting, synthetic scenes, mini-batch SGD training,
//! confusion-matrix metrics, classification-map rendering, feature export,
//! and finite-difference gradient checking.

pub(crate) mod batch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod image;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ArchConfig, ForwardCache, GradientSet, LayerShapes, Model};
pub use nn::LayerParams;
pub use tensor::{Scalar, Tensor};
