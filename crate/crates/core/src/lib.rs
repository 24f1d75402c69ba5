//! Differentiable Gaussian feature splatting with point-cloud pose
//! regression, verified on procedurally generated articulated figures.
//!
//! * [`splat`] rasterizes 3D Gaussians into color, feature, depth and alpha
//!   images; [`grad`] differentiates it analytically and checks the result
//!   against finite differences.
//! * [`featdec`] decodes splatted features into surface embeddings.
//! * [`unproject`] lifts depth to point clouds; [`posenet`] regresses 19
//!   keypoints from them with PointNet, DGCNN or hybrid backbones.
//! * [`losses`] holds the training losses and evaluation metrics.
//! * [`scenegen`] builds stick figures, camera rings and ground truth.
//! * [`pipeline`] ties these into scene fitting, benchmarks, file formats
//!   and the `hfg` command line.
//!
//! ```
//! use hfgauss::scenegen::{default_ring, generate_figure};
//! use hfgauss::splat::render;
//!
//! let figure = generate_figure(0).unwrap();
//! let cam = &default_ring(64).unwrap()[0];
//! let out = render(&figure.gaussians, cam, [0.0; 3]).unwrap();
//! assert_eq!((out.color.width, out.color.channels), (64, 3));
//! ```

pub mod camera;
pub mod checkpoint;
pub mod error;
pub mod featdec;
pub mod gaussian;
pub mod grad;
pub mod image;
pub mod keypoints;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod posenet;
pub mod scenegen;
pub mod splat;
pub mod unproject;

pub use camera::Camera;
pub use error::{Error, Result};
pub use gaussian::{ActivatedSet, Gaussian, GaussianSet, ParamClass};
pub use image::{DepthMap, FeatureImage, Image, Mask, RasterImage};
pub use keypoints::KeypointSet;
