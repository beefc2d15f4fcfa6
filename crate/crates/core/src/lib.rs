//! Temporal 2D supervision for 7-DoF 3D boxes.
//!
//! A 3D box predicted in one camera at one keyframe is rigidly warped into
//! the cameras of neighbouring keyframes, projected to an axis-aligned 2D
//! box, and compared with 2D labels there through GIoU. The crate also
//! provides a synthetic multi-camera scene generator, a per-object recovery
//! optimizer that fits boxes to those losses, and the experiment drivers
//! behind the `t2d` command line tool.

pub mod boxes;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod recovery;
pub mod simworld;
pub mod supervision;
pub mod warp;

pub use boxes::{Box2D, Box3D, Size3};
pub use error::{Error, Result};
pub use geometry::{AxisConvention, CameraCalib, Intrinsics, Pose};
pub use supervision::{LabeledObject, SupervisionSpec};
pub use warp::{FrameContext, WarpConfig};
