//! Two-stage temporal body fitting for top-view in-bed scenes with
//! gravity and self-contact constraints.

pub mod camera;
pub mod container;
pub mod doll;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod penetration;
pub mod rotation;
pub mod scenario;
pub mod segmentation;
pub mod sequence;
pub mod track;

pub use camera::Camera;
pub use container::{Container, Tensor};
pub use error::{Error, Result};
pub use model::{BodyModel, FrameParams, PosedBody, Vec3};
