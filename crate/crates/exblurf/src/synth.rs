//! Procedural ground-truth scenes, random 6-DOF blur trajectories, dataset
//! generation, and an independent brute-force renderer used as the
//! correctness oracle for the engine renderer.

use nalgebra::{Matrix3, Vector3};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{ray_for_pixel, Intrinsics, Ray};
use crate::error::{Error, Result};
use crate::img::ImageBuf;
use crate::se3::{log_map, pose_at, subframe_times, BezierTrajectory, Pose, Twist};
use crate::seeding::{rng_for, TAG_TRAJECTORY};
use crate::sh::{sh_basis_unchecked, SH_C0, SH_COUNT};
use crate::voxel::{Bounds, VoxelGrid, SH_PER_NODE};

/// Constant-albedo primitive of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        density: f64,
        albedo: [f64; 3],
    },
    Box {
        center: [f64; 3],
        size: [f64; 3],
        density: f64,
        albedo: [f64; 3],
    },
}

impl Primitive {
    fn density(&self) -> f64 {
        match self {
            Primitive::Sphere { density, .. } | Primitive::Box { density, .. } => *density,
        }
    }

    fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } => *albedo,
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let c = Vector3::new(center[0], center[1], center[2]);
                (p - c).norm_squared() <= radius * radius
            }
            Primitive::Box { center, size, .. } => (0..3).all(|a| {
                (p[a] - center[a]).abs() <= size[a] / 2.0
            }),
        }
    }

    fn extent(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Primitive::Sphere { center, radius, .. } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            Primitive::Box { center, size, .. } => (
                [
                    center[0] - size[0] / 2.0,
                    center[1] - size[1] / 2.0,
                    center[2] - size[2] / 2.0,
                ],
                [
                    center[0] + size[0] / 2.0,
                    center[1] + size[1] / 2.0,
                    center[2] + size[2] / 2.0,
                ],
            ),
        }
    }
}

/// Description of a procedural ground-truth scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub bounds: Bounds,
    pub grid_resolution: [usize; 3],
    pub primitives: Vec<Primitive>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("scene has no primitives"));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            if !(prim.density() >= 0.0) {
                return Err(Error::invalid(format!("primitive {i} has negative density")));
            }
            if prim.albedo().iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(Error::invalid(format!("primitive {i} albedo outside [0,1]")));
            }
            let (lo, hi) = prim.extent();
            for a in 0..3 {
                if lo[a] < self.bounds.min[a] || hi[a] > self.bounds.max[a] {
                    return Err(Error::invalid(format!("primitive {i} extends outside bounds")));
                }
            }
        }
        if self.grid_resolution.iter().any(|&d| d < 2) {
            return Err(Error::invalid("grid resolution must be >= 2 per axis"));
        }
        Ok(())
    }
}

/// Voxelize the scene: nodes inside a primitive take its density and a
/// constant degree-0 SH encoding of the albedo. Overlaps resolve to the
/// max density and the last-listed primitive's albedo.
pub fn build_gt_grid(spec: &SceneSpec) -> Result<VoxelGrid> {
    spec.validate()?;
    let mut grid = VoxelGrid::new(spec.grid_resolution, spec.bounds, 0.0)?;
    let [nx, ny, nz] = grid.dims();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let p = grid.node_position(i, j, k);
                let mut density = 0.0f64;
                let mut albedo = None;
                let mut hit = false;
                for prim in &spec.primitives {
                    if prim.contains(&p) {
                        density = density.max(prim.density());
                        albedo = Some(prim.albedo());
                        hit = true;
                    }
                }
                if hit {
                    let idx = grid.node_index(i, j, k);
                    grid.density_mut()[idx] = density as f32;
                    let alb = albedo.unwrap();
                    for ch in 0..3 {
                        grid.sh_mut()[idx * SH_PER_NODE + ch * SH_COUNT] =
                            ((alb[ch] - 0.5) / SH_C0) as f32;
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Uniform draw from the closed ball of the given radius.
fn ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    if radius == 0.0 {
        return Vector3::zeros();
    }
    let dir = loop {
        let v = Vector3::new(
            rng.random_range(-1.0f64..1.0),
            rng.random_range(-1.0f64..1.0),
            rng.random_range(-1.0f64..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            break v / n;
        }
    };
    let r = radius * rng.random_range(0.0f64..1.0).powf(1.0 / 3.0);
    dir * r
}

/// Random exposure trajectory anchored at a pose: each control twist is
/// log(anchor) plus independent ball-uniform perturbations of the rotation
/// and translation parts.
pub fn random_trajectory(
    rng: &mut ChaCha8Rng,
    order: usize,
    rot_max: f64,
    trans_max: f64,
    anchor: &Pose,
) -> Result<BezierTrajectory> {
    if !(rot_max >= 0.0 && trans_max >= 0.0) {
        return Err(Error::invalid("blur magnitudes must be >= 0"));
    }
    let base = log_map(anchor)?;
    let controls: Vec<Twist> = (0..=order)
        .map(|_| {
            Twist::new(
                base.omega + ball(rng, rot_max),
                base.nu + ball(rng, trans_max),
            )
        })
        .collect();
    BezierTrajectory::new(controls)
}

fn inside(b: &Bounds, p: &Vector3<f64>) -> bool {
    (0..3).all(|a| p[a] >= b.min[a] && p[a] <= b.max[a])
}

/// Trilinear lookup reimplemented from the storage layout: pruned nodes
/// contribute zero density but keep their SH.
fn oracle_sample(grid: &VoxelGrid, p: &Vector3<f64>) -> (f64, [f64; SH_PER_NODE]) {
    let dims = grid.dims();
    let b = grid.bounds();
    let mut idx0 = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let cells = (dims[a] - 1) as f64;
        let u = (p[a] - b.min[a]) / (b.max[a] - b.min[a]) * cells;
        let i = (u.floor() as usize).min(dims[a] - 2);
        idx0[a] = i;
        frac[a] = u - i as f64;
    }
    let mut density = 0.0f64;
    let mut sh = [0.0f64; SH_PER_NODE];
    for dx in 0..2usize {
        for dy in 0..2usize {
            for dz in 0..2usize {
                let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                    * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                    * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                let n = ((idx0[0] + dx) * dims[1] + idx0[1] + dy) * dims[2] + idx0[2] + dz;
                if grid.occupancy()[n] {
                    density += w * grid.density()[n] as f64;
                }
                for t in 0..SH_PER_NODE {
                    sh[t] += w * grid.sh()[n * SH_PER_NODE + t] as f64;
                }
            }
        }
    }
    (density, sh)
}

/// Independent reference renderer: scans the absolute sample comb with a
/// point-in-box test and recomputes the transmittance from the summed
/// optical depth at every sample. No pruning skips, no early termination.
pub fn oracle_render_ray(grid: &VoxelGrid, ray: &Ray, fine_step: f64) -> [f64; 3] {
    let b = grid.bounds();
    let s_max = (ray.origin - b.center()).norm() + b.diagonal();
    let basis = sh_basis_unchecked(&ray.direction);
    let mut tau = 0.0f64;
    let mut rgb = [0.0f64; 3];
    let mut k = 0u64;
    loop {
        let s = (k as f64 + 0.5) * fine_step;
        if s > s_max {
            break;
        }
        let p = ray.point_at(s);
        if inside(b, &p) {
            let (raw, sh) = oracle_sample(grid, &p);
            let sigma = raw.max(0.0);
            if sigma > 0.0 {
                let transmittance = (-tau).exp();
                let alpha = 1.0 - (-sigma * fine_step).exp();
                for ch in 0..3 {
                    let mut c = 0.5;
                    for i in 0..SH_COUNT {
                        c += basis[i] * sh[ch * SH_COUNT + i];
                    }
                    rgb[ch] += transmittance * alpha * c.clamp(0.0, 1.0);
                }
                tau += sigma * fine_step;
            }
        }
        k += 1;
    }
    rgb
}

fn oracle_render_image(
    grid: &VoxelGrid,
    pose: &Pose,
    k: &Intrinsics,
    fine_step: f64,
    threads: usize,
) -> Result<ImageBuf> {
    let mut img = ImageBuf::new(k.width, k.height);
    let row_len = (k.width * 3) as usize;
    let render_row = |y: u32, row: &mut [f64]| -> Result<()> {
        for x in 0..k.width {
            let ray = ray_for_pixel(k, pose, (x as f64, y as f64))?;
            let rgb = oracle_render_ray(grid, &ray, fine_step);
            let o = (x * 3) as usize;
            row[o..o + 3].copy_from_slice(&rgb);
        }
        Ok(())
    };
    if threads > 1 {
        img.data
            .par_chunks_mut(row_len)
            .enumerate()
            .try_for_each(|(y, row)| render_row(y as u32, row))?;
    } else {
        for (y, row) in img.data.chunks_mut(row_len).enumerate() {
            render_row(y as u32, row)?;
        }
    }
    Ok(img)
}

fn oracle_render_blurry_image(
    grid: &VoxelGrid,
    traj: &BezierTrajectory,
    k: &Intrinsics,
    n_oracle: usize,
    fine_step: f64,
    threads: usize,
) -> Result<ImageBuf> {
    let times = subframe_times(n_oracle)?;
    let poses: Vec<Pose> = times
        .iter()
        .map(|&t| pose_at(traj, t))
        .collect::<Result<_>>()?;
    let mut img = ImageBuf::new(k.width, k.height);
    let row_len = (k.width * 3) as usize;
    let render_row = |y: u32, row: &mut [f64]| -> Result<()> {
        for x in 0..k.width {
            let mut acc = [0.0f64; 3];
            for pose in &poses {
                let ray = ray_for_pixel(k, pose, (x as f64, y as f64))?;
                let rgb = oracle_render_ray(grid, &ray, fine_step);
                for ch in 0..3 {
                    acc[ch] += rgb[ch];
                }
            }
            let o = (x * 3) as usize;
            let inv = 1.0 / n_oracle as f64;
            row[o] = acc[0] * inv;
            row[o + 1] = acc[1] * inv;
            row[o + 2] = acc[2] * inv;
        }
        Ok(())
    };
    if threads > 1 {
        img.data
            .par_chunks_mut(row_len)
            .enumerate()
            .try_for_each(|(y, row)| render_row(y as u32, row))?;
    } else {
        for (y, row) in img.data.chunks_mut(row_len).enumerate() {
            render_row(y as u32, row)?;
        }
    }
    Ok(img)
}

/// Camera ring description: cameras at uniform azimuths on a circle of the
/// given radius and height above the scene center, all looking at the
/// center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub radius: f64,
    pub height: f64,
    pub fov_deg: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraRing {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::invalid("camera ring radius must be positive"));
        }
        if self.image_width < 2 || self.image_height < 2 {
            return Err(Error::invalid("image dimensions must be >= 2"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_fov(self.fov_deg, self.image_width, self.image_height)
    }
}

/// World-from-camera pose looking from `eye` at `target` with +z forward,
/// +y down (world up is +z).
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<Pose> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(Error::invalid("look_at eye coincides with target"));
    }
    let z = forward.normalize();
    let up = Vector3::new(0.0, 0.0, 1.0);
    let y_tilde = -(up - z * up.dot(&z));
    if y_tilde.norm() < 1e-9 {
        return Err(Error::invalid("look_at direction parallel to world up"));
    }
    let y = y_tilde.normalize();
    let x = y.cross(&z);
    let rotation = Matrix3::from_columns(&[x, y, z]);
    Pose::new(rotation, *eye)
}

fn ring_pose(ring: &CameraRing, center: &Vector3<f64>, azimuth: f64) -> Result<Pose> {
    let eye = center
        + Vector3::new(
            ring.radius * azimuth.cos(),
            ring.radius * azimuth.sin(),
            ring.height,
        );
    look_at(&eye, center)
}

/// Ring pose nudged away from the logarithm branch cut so trajectories can
/// be anchored in absolute twist coordinates.
fn safe_ring_pose(ring: &CameraRing, center: &Vector3<f64>, azimuth: f64, spacing: f64) -> Result<Pose> {
    let mut az = azimuth;
    for _ in 0..16 {
        let pose = ring_pose(ring, center, az)?;
        if pose.rotation_angle() < std::f64::consts::PI - 0.2 {
            return Ok(pose);
        }
        az += 0.31 * spacing;
    }
    Err(Error::invalid(
        "could not place camera away from the rotation branch cut",
    ))
}

/// Blur magnitudes for trajectory generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    pub bezier_order: usize,
    pub rot_max: f64,
    pub trans_max: f64,
}

/// One training observation: the blurry image, its sharp mid-exposure
/// counterpart, and the ground-truth exposure trajectory.
#[derive(Debug, Clone)]
pub struct ViewObservation {
    pub blurry: ImageBuf,
    pub sharp: Option<ImageBuf>,
    pub intrinsics: Intrinsics,
    /// The pose a structure-from-motion estimate would report; defined as
    /// the trajectory midpoint pose.
    pub initial_pose: Pose,
    pub gt_trajectory: Option<BezierTrajectory>,
}

/// Held-out sharp view for evaluation.
#[derive(Debug, Clone)]
pub struct TestView {
    pub sharp: ImageBuf,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub bounds: Bounds,
    pub views: Vec<ViewObservation>,
    pub test_views: Vec<TestView>,
}

/// Full synthetic dataset: blurry training views on a camera ring with
/// random exposure trajectories, plus held-out sharp test views. Blurry
/// pixels average `n_oracle` oracle-rendered sub-frame rays along the
/// ground-truth trajectory.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    spec: &SceneSpec,
    ring: &CameraRing,
    n_views: usize,
    n_test_views: usize,
    blur: &BlurParams,
    n_oracle: usize,
    seed: u64,
    threads: usize,
) -> Result<Dataset> {
    if n_views < 2 {
        return Err(Error::invalid("need at least 2 training views"));
    }
    if n_oracle < 2 {
        return Err(Error::invalid("n_oracle must be >= 2"));
    }
    ring.validate()?;
    let grid = build_gt_grid(spec)?;
    let k = ring.intrinsics()?;
    let center = spec.bounds.center();
    let fine_step = grid.min_cell_size() * 0.5;

    let mut views = Vec::with_capacity(n_views);
    for v in 0..n_views {
        let spacing = 2.0 * std::f64::consts::PI / n_views as f64;
        let anchor = safe_ring_pose(ring, &center, v as f64 * spacing, spacing)?;
        let mut rng = rng_for(seed, TAG_TRAJECTORY, v as u64);
        let traj = random_trajectory(&mut rng, blur.bezier_order, blur.rot_max, blur.trans_max, &anchor)?;
        let initial_pose = pose_at(&traj, 0.5)?;
        let blurry = oracle_render_blurry_image(&grid, &traj, &k, n_oracle, fine_step, threads)?;
        let sharp = oracle_render_image(&grid, &initial_pose, &k, fine_step, threads)?;
        views.push(ViewObservation {
            blurry,
            sharp: Some(sharp),
            intrinsics: k,
            initial_pose,
            gt_trajectory: Some(traj),
        });
    }

    let mut test_views = Vec::with_capacity(n_test_views);
    for v in 0..n_test_views {
        let spacing = 2.0 * std::f64::consts::PI / n_test_views as f64;
        let az = (v as f64 + 0.5) * spacing;
        let pose = safe_ring_pose(ring, &center, az, spacing)?;
        let sharp = oracle_render_image(&grid, &pose, &k, fine_step, threads)?;
        test_views.push(TestView { sharp, pose, intrinsics: k });
    }

    Ok(Dataset {
        bounds: spec.bounds,
        views,
        test_views,
    })
}
