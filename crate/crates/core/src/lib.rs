//! Object-aware multiple instance learning (OA-MIL) for object detection
//! trained on inaccurate bounding boxes.
//!
//! The crate pairs the OA-MIL training objective with a small, fully
//! transparent detector over synthetic scenes so every piece of the method
//! can be checked exactly: box geometry, noise simulation, bag construction,
//! object-aware selection and extension, the joint loss with analytic
//! gradients, and mAP evaluation.

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod gradcheck;
pub mod mil;
pub mod noise;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::BBox;
