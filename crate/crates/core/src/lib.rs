//! Pseudo-3D point cloud pre-training toolkit.
//!
//! The pipeline lifts an RGB image and a dense depth map into a point cloud in
//! the unit cube, tokenizes it with a linear-time sparse voxel tokenizer
//! (voxelize, partition, sparse weight indexing), and pre-trains a masked
//! autoencoder whose decoder reconstructs every cell of the masked patches.
//! A classic FPS + KNN + PointNet tokenizer is included as the complexity
//! baseline.

pub mod autodiff;
pub mod cloud;
pub mod config;
pub mod error;
pub mod flops;
pub mod io;
pub mod lift;
pub mod loss;
pub mod masking;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod tokenizer;

pub use cloud::{Point, PointCloud, ValidationReport};
pub use error::{Error, Result};
pub use tensor::Mat;
