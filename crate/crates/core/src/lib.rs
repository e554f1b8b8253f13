//! Differentiable 2D Gaussian splatting for object-centric depth reconstruction.
//!
//! The crate renders oriented planar Gaussians into RGB, segmentation-mask,
//! object one-hot, depth and alpha buffers, trains them against sparse views
//! with photometric, dice and object-aware point-cloud losses, and updates a
//! reconstruction after objects are removed by simulating the remaining
//! objects with an elastic material point method.

pub mod camera;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod mpm;
pub mod object_loss;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod spatial;
pub mod synthetic;
pub mod train;
pub mod update;

pub use camera::CameraView;
pub use error::{Error, Result};
pub use gaussian::{activate, ActivatedGaussian, Gaussian2D, GaussianGrad};
pub use image::Image;
pub use raster::{render, render_backward, RenderGrads, RenderOutput};
pub use scene::{Aabb, Palette, SceneSnapshot, TrainingView};
