//! Mesh-rigged, semantically labeled Gaussian splat avatars.
//!
//! The crate covers the whole loop of building and editing a dynamic splat
//! avatar on the CPU:
//!
//! * [`splat`]: the splat representation, covariance and density math, and
//!   the flat optimizer parameter layout.
//! * [`render`]: tile-based projection and front-to-back compositing of
//!   color, semantic labels and per-pixel contribution records.
//! * [`rig`]: binding splats to an animated triangle mesh, posing them per
//!   frame, adaptive density control and semantic labeling.
//! * [`maskmap`]: bilinear warping of edit masks over the (time, pose) grid
//!   and selection of every splat that contributes to an edit region.
//! * [`optim`]: losses, analytic gradients, Adam, the patch discriminator and
//!   the modeling and editing training loops.
//! * [`services`]: prompt refinement and image editing behind traits, with
//!   deterministic mocks and JSON-over-HTTP clients.
//! * [`dataset`]: manifests, synthetic dataset generation, file formats and
//!   image quality metrics.

pub mod dataset;
pub mod error;
pub mod imaging;
pub mod maskmap;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod rig;
pub mod services;
pub mod splat;

pub use error::{Error, Result};
pub use imaging::{Image, LabelMap, Mask};
pub use render::{render, Camera, RenderOutput};
pub use rig::MeshFrame;
pub use splat::{GaussianSplat, Label, ParamVector, Quat, Vec3};
