//! Pinhole camera model and ray generation.
//!
//! Camera frame convention: +z forward, +x right, +y down. A pose maps
//! camera coordinates to world coordinates, so the ray origin is the pose
//! translation and directions are rotated camera-frame vectors. Directions
//! are normalized to unit length so sample distances along rays are metric.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{pose_at, subframe_times, BezierTrajectory, Pose};

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(0.0 < self.cx && self.cx < self.width as f64) {
            return Err(Error::invalid("principal point cx outside image"));
        }
        if !(0.0 < self.cy && self.cy < self.height as f64) {
            return Err(Error::invalid("principal point cy outside image"));
        }
        Ok(())
    }

    /// Symmetric intrinsics from a horizontal field of view in degrees.
    pub fn from_fov(fov_deg: f64, width: u32, height: u32) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::invalid("field of view must be in (0, 180) degrees"));
        }
        let f = width as f64 / 2.0 / (fov_deg.to_radians() / 2.0).tan();
        Intrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }
}

/// Ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("ray direction must be unit length"));
        }
        Ok(Ray { origin, direction })
    }

    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        self.origin + self.direction * s
    }
}

/// Ray through pixel `(x, y)`; the half-pixel center offset is applied
/// internally. Sub-pixel coordinates are accepted within [0, width) x
/// [0, height).
pub fn ray_for_pixel(k: &Intrinsics, pose: &Pose, x: (f64, f64)) -> Result<Ray> {
    let (px, py) = x;
    if !(0.0..k.width as f64).contains(&px) || !(0.0..k.height as f64).contains(&py) {
        return Err(Error::invalid(format!(
            "pixel ({px}, {py}) outside {}x{} image",
            k.width, k.height
        )));
    }
    let cam_dir = Vector3::new(
        (px + 0.5 - k.cx) / k.fx,
        (py + 0.5 - k.cy) / k.fy,
        1.0,
    );
    let dir = (pose.rotation() * cam_dir).normalize();
    Ok(Ray {
        origin: *pose.translation(),
        direction: dir,
    })
}

/// One ray per sub-frame pose along the trajectory.
pub fn rays_along_trajectory(
    k: &Intrinsics,
    traj: &BezierTrajectory,
    x: (f64, f64),
    n: usize,
) -> Result<Vec<Ray>> {
    let times = subframe_times(n)?;
    times
        .iter()
        .map(|&t| ray_for_pixel(k, &pose_at(traj, t)?, x))
        .collect()
}
