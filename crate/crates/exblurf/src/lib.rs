//! Recovery of a sharp voxel radiance field together with per-view 6-DOF
//! camera trajectories from motion-blurred multi-view images.
//!
//! The engine models each blurry pixel as the average of volume-rendered
//! colors along a Bézier camera trajectory in se(3), and jointly optimizes
//! grid densities, spherical-harmonic colors, and trajectory control points
//! against the blurry observations. A synthetic-data oracle provides
//! ground-truth scenes, blur trajectories, and an independent reference
//! renderer used to validate every numerical component.

pub mod camera;
pub mod cli;
pub mod error;
pub mod img;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod se3;
pub(crate) mod seeding;
pub mod sh;
pub mod synth;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
