//! Differentiable volume rendering: ray marching, compositing, blur
//! composition over trajectories, full-frame rendering, and the analytic
//! backward pass to grid parameters and ray geometry.
//!
//! Sample distances form an absolute comb anchored at the ray origin,
//! s_k = (k + 1/2) * step, restricted to the ray/bounds intersection. The
//! comb rides rigidly with the camera, so sample distances are constants of
//! the sampling scheme and pose gradients flow only through ray origin and
//! direction.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::{ray_for_pixel, rays_along_trajectory, Intrinsics, Ray};
use crate::error::Result;
use crate::img::ImageBuf;
use crate::se3::{BezierTrajectory, Pose};
use crate::sh::{sh_basis_jacobian, sh_basis_unchecked, SH_COUNT};
use crate::voxel::{VoxelGrid, SH_PER_NODE};

/// Step placement and compositing options.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RenderConfig {
    /// Step length as a fraction of the shortest voxel edge.
    pub step_ratio: f64,
    /// Stop compositing once transmittance drops below the threshold.
    pub early_termination: bool,
    pub early_term_threshold: f64,
    /// Composite remaining transmittance against white instead of black.
    pub white_background: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            step_ratio: 0.5,
            early_termination: true,
            early_term_threshold: 1e-4,
            white_background: false,
        }
    }
}

impl RenderConfig {
    /// Oracle-comparison settings: every approximation disabled.
    pub fn exact(mut self) -> Self {
        self.early_termination = false;
        self
    }

    pub fn background(&self) -> f64 {
        if self.white_background {
            1.0
        } else {
            0.0
        }
    }
}

/// Ordered samples along one ray.
#[derive(Debug, Clone)]
pub struct RaySampleSet {
    /// Distances along the unit direction from the ray origin.
    pub s: Vec<f64>,
    /// World positions origin + s * direction.
    pub positions: Vec<Vector3<f64>>,
    /// Per-sample spacing (the uniform step).
    pub spacings: Vec<f64>,
}

impl RaySampleSet {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// Intersection of a ray with the grid bounds, clipped to s >= 0.
fn intersect_bounds(grid: &VoxelGrid, ray: &Ray) -> Option<(f64, f64)> {
    let b = grid.bounds();
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d.abs() < 1e-300 {
            if o < b.min[a] || o > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (near, far) = if inv >= 0.0 {
            ((b.min[a] - o) * inv, (b.max[a] - o) * inv)
        } else {
            ((b.max[a] - o) * inv, (b.min[a] - o) * inv)
        };
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Uniform samples on the absolute comb restricted to the bounds
/// intersection. Samples whose whole stencil is pruned are skipped.
pub fn march(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig) -> RaySampleSet {
    let step = grid.min_cell_size() * cfg.step_ratio;
    let mut out = RaySampleSet {
        s: Vec::new(),
        positions: Vec::new(),
        spacings: Vec::new(),
    };
    let Some((t0, t1)) = intersect_bounds(grid, ray) else {
        return out;
    };
    // s_k = (k + 1/2) step with s_k in [t0, t1].
    let k_lo = ((t0 / step) - 0.5).ceil().max(0.0) as u64;
    let k_hi_f = (t1 / step) - 0.5;
    if k_hi_f < k_lo as f64 {
        return out;
    }
    let k_hi = k_hi_f.floor() as u64;
    out.s.reserve((k_hi - k_lo + 1) as usize);
    for k in k_lo..=k_hi {
        let s = (k as f64 + 0.5) * step;
        let p = ray.point_at(s);
        match grid.stencil(&p) {
            Some(st) if !grid.stencil_fully_pruned(&st) => {
                out.s.push(s);
                out.positions.push(p);
                out.spacings.push(step);
            }
            _ => {}
        }
    }
    out
}

/// One recorded sample: distance along the ray, activated density, and
/// compositing weight.
#[derive(Debug, Clone, Copy)]
pub struct SampleRecord {
    pub s: f64,
    pub sigma: f64,
    pub weight: f64,
}

/// Everything the backward pass needs to revisit one rendered ray.
#[derive(Debug, Clone)]
pub struct RayContext {
    pub ray: Ray,
    pub samples: Vec<SampleRecord>,
    pub rgb: [f64; 3],
    pub final_transmittance: f64,
}

impl RayContext {
    /// Transient bytes held for this ray between forward and backward.
    pub fn transient_bytes(&self) -> usize {
        std::mem::size_of::<RayContext>()
            + self.samples.len() * std::mem::size_of::<SampleRecord>()
    }
}

/// Rendered color plus the per-sample compositing diagnostics.
#[derive(Debug, Clone)]
pub struct RenderResult {
    pub rgb: [f64; 3],
    pub final_transmittance: f64,
    pub weights: Vec<f64>,
}

fn color_from_sh(basis: &[f64; SH_COUNT], sh: &[f64; SH_PER_NODE]) -> ([f64; 3], [f64; 3]) {
    let mut pre = [0.0; 3];
    let mut rgb = [0.0; 3];
    for ch in 0..3 {
        let mut v = 0.5;
        for i in 0..SH_COUNT {
            v += basis[i] * sh[ch * SH_COUNT + i];
        }
        pre[ch] = v;
        rgb[ch] = v.clamp(0.0, 1.0);
    }
    (pre, rgb)
}

/// Forward render recording the context needed by [`backward_ray`].
pub fn render_ray_ctx(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig) -> RayContext {
    let set = march(grid, ray, cfg);
    let basis = sh_basis_unchecked(&ray.direction);
    let mut samples = Vec::with_capacity(set.len());
    let mut transmittance = 1.0f64;
    let mut rgb = [0.0f64; 3];
    for i in 0..set.len() {
        let st = grid.stencil(&set.positions[i]).expect("marched sample inside bounds");
        let sigma = grid.density_from_stencil(&st).max(0.0);
        let alpha = 1.0 - (-sigma * set.spacings[i]).exp();
        let weight = transmittance * alpha;
        if sigma > 0.0 && weight > 0.0 {
            let sh = grid.sh_from_stencil(&st);
            let (_, c) = color_from_sh(&basis, &sh);
            for ch in 0..3 {
                rgb[ch] += weight * c[ch];
            }
        }
        samples.push(SampleRecord { s: set.s[i], sigma, weight });
        transmittance *= 1.0 - alpha;
        if cfg.early_termination && transmittance < cfg.early_term_threshold {
            break;
        }
    }
    let bg = cfg.background();
    if bg != 0.0 {
        for ch in rgb.iter_mut() {
            *ch += transmittance * bg;
        }
    }
    RayContext {
        ray: *ray,
        samples,
        rgb,
        final_transmittance: transmittance,
    }
}

/// Volume rendering of a single ray: weights w_k = T_k (1 - exp(-sigma_k
/// delta_k)) with multiplicative transmittance, optional white background,
/// optional early termination.
pub fn render_ray(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig) -> RenderResult {
    let ctx = render_ray_ctx(grid, ray, cfg);
    RenderResult {
        rgb: ctx.rgb,
        final_transmittance: ctx.final_transmittance,
        weights: ctx.samples.iter().map(|s| s.weight).collect(),
    }
}

/// Mean of per-sub-frame renders along the trajectory (the blur model).
pub fn render_blurred_pixel(
    grid: &VoxelGrid,
    traj: &BezierTrajectory,
    k: &Intrinsics,
    x: (f64, f64),
    n: usize,
    cfg: &RenderConfig,
) -> Result<[f64; 3]> {
    let rays = rays_along_trajectory(k, traj, x, n)?;
    let mut acc = [0.0f64; 3];
    for ray in &rays {
        let r = render_ray(grid, ray, cfg);
        for ch in 0..3 {
            acc[ch] += r.rgb[ch];
        }
    }
    let inv = 1.0 / n as f64;
    Ok([acc[0] * inv, acc[1] * inv, acc[2] * inv])
}

/// Sharp full-frame render at one pose. With `threads > 1` rows render in
/// parallel; per-pixel results are identical either way.
pub fn render_image(
    grid: &VoxelGrid,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
    threads: usize,
) -> Result<ImageBuf> {
    let mut img = ImageBuf::new(k.width, k.height);
    let render_row = |y: u32, row: &mut [f64]| -> Result<()> {
        for x in 0..k.width {
            let ray = ray_for_pixel(k, pose, (x as f64, y as f64))?;
            let r = render_ray(grid, &ray, cfg);
            let o = (x * 3) as usize;
            row[o..o + 3].copy_from_slice(&r.rgb);
        }
        Ok(())
    };
    let row_len = (k.width * 3) as usize;
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

/// Gradient sink co-indexed with a grid plus the geometric pull-back of one
/// backward call.
#[derive(Debug, Clone)]
pub struct GradAccum {
    pub d_density: Vec<f64>,
    pub d_sh: Vec<f64>,
}

impl GradAccum {
    pub fn zeros(grid: &VoxelGrid) -> Self {
        GradAccum {
            d_density: vec![0.0; grid.node_count()],
            d_sh: vec![0.0; grid.node_count() * SH_PER_NODE],
        }
    }

    pub fn add_from(&mut self, other: &GradAccum) {
        for (a, b) in self.d_density.iter_mut().zip(&other.d_density) {
            *a += b;
        }
        for (a, b) in self.d_sh.iter_mut().zip(&other.d_sh) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_density.iter().all(|v| v.is_finite()) && self.d_sh.iter().all(|v| v.is_finite())
    }
}

/// Loss gradient with respect to the ray geometry.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayGrad {
    pub d_origin: Vector3<f64>,
    pub d_direction: Vector3<f64>,
}

/// Analytic backward pass for one recorded ray.
///
/// `upstream` is dL/d(rgb of this ray). `sparsity_coeff` adds
/// `coeff * 4 sigma / (1 + 2 sigma^2)` to every sample's density gradient
/// (the per-sample sparsity penalty derivative, already divided by the
/// sample count). Grid gradients accumulate into `accum`; the returned
/// [`RayGrad`] carries the geometry pull-back for trajectory chains.
pub fn backward_ray(
    grid: &VoxelGrid,
    ctx: &RayContext,
    upstream: [f64; 3],
    sparsity_coeff: f64,
    cfg: &RenderConfig,
    accum: &mut GradAccum,
) -> RayGrad {
    let dir = ctx.ray.direction;
    let basis = sh_basis_unchecked(&dir);
    let bg = cfg.background();

    let n = ctx.samples.len();
    // Reconstruct per-sample transmittance prefix: T_{k+1} = T_k - w_k.
    let mut t_next = Vec::with_capacity(n);
    let mut t = 1.0f64;
    for rec in &ctx.samples {
        t -= rec.weight;
        t_next.push(t);
    }

    // Suffix color sums S_k = sum_{j>k} w_j c_j + T_final * bg, built during
    // the reverse sweep.
    let mut suffix = [
        ctx.final_transmittance * bg,
        ctx.final_transmittance * bg,
        ctx.final_transmittance * bg,
    ];
    let mut d_origin = Vector3::zeros();
    let mut d_dir = Vector3::zeros();
    let mut d_basis = [0.0f64; SH_COUNT];

    for k in (0..n).rev() {
        let rec = &ctx.samples[k];
        let pos = ctx.ray.point_at(rec.s);
        let Some(st) = grid.stencil(&pos) else { continue };

        // Recompute the sample color and its pre-clamp values.
        let sh = grid.sh_from_stencil(&st);
        let (pre, c) = color_from_sh(&basis, &sh);

        // Color-path gradient, gated by the clamp.
        let mut g_c = [0.0f64; 3];
        for ch in 0..3 {
            if pre[ch] > 0.0 && pre[ch] < 1.0 {
                g_c[ch] = upstream[ch] * rec.weight;
            }
        }

        // d rgb / d sigma_k = delta * (T_{k+1} c_k - S_k).
        let delta = grid.min_cell_size() * cfg.step_ratio;
        let mut d_sigma = 0.0;
        for ch in 0..3 {
            d_sigma += upstream[ch] * delta * (t_next[k] * c[ch] - suffix[ch]);
        }
        if rec.sigma > 0.0 {
            d_sigma += sparsity_coeff * 4.0 * rec.sigma / (1.0 + 2.0 * rec.sigma * rec.sigma);
        }

        // Scatter into grid parameters and accumulate the position gradient.
        let mut d_pos = [0.0f64; 3];
        let density_active = rec.sigma > 0.0;
        for corner in 0..8 {
            let node = st.nodes[corner];
            let w = st.weights[corner];
            let occupied = grid.occupancy()[node];
            if density_active && occupied {
                accum.d_density[node] += d_sigma * w;
            }
            // SH gradient and the color part of the position gradient.
            let off = node * SH_PER_NODE;
            let mut corner_color_dot = 0.0;
            for ch in 0..3 {
                if g_c[ch] == 0.0 {
                    continue;
                }
                let base = off + ch * SH_COUNT;
                let mut dot = 0.0;
                for i in 0..SH_COUNT {
                    let shv = grid.sh()[base + i] as f64;
                    accum.d_sh[base + i] += g_c[ch] * w * basis[i];
                    dot += basis[i] * shv;
                    d_basis[i] += g_c[ch] * w * shv;
                }
                corner_color_dot += g_c[ch] * dot;
            }
            if density_active && occupied {
                let raw = grid.density()[node] as f64;
                for a in 0..3 {
                    d_pos[a] += d_sigma * st.d_weights[corner][a] * raw;
                }
            }
            if corner_color_dot != 0.0 {
                for a in 0..3 {
                    d_pos[a] += corner_color_dot * st.d_weights[corner][a];
                }
            }
        }

        let d_pos_v = Vector3::new(d_pos[0], d_pos[1], d_pos[2]);
        d_origin += d_pos_v;
        d_dir += d_pos_v * rec.s;

        for ch in 0..3 {
            suffix[ch] += rec.weight * c[ch];
        }
    }

    // Direction sensitivity through the per-ray SH basis.
    let jac = sh_basis_jacobian(&dir);
    for i in 0..SH_COUNT {
        if d_basis[i] != 0.0 {
            for a in 0..3 {
                d_dir[a] += d_basis[i] * jac[i][a];
            }
        }
    }

    RayGrad {
        d_origin,
        d_direction: d_dir,
    }
}

/// Pull a unit-direction gradient back through `dir = u / |u|` and
/// `u = R v`, accumulating dL/dR and returning nothing for v (fixed pixel).
pub fn direction_grad_to_rotation(
    d_direction: &Vector3<f64>,
    unit_dir: &Vector3<f64>,
    cam_vec: &Vector3<f64>,
    u_norm: f64,
    d_rotation: &mut Matrix3<f64>,
) {
    // d u = (I - d d^T)/|u| applied to the direction gradient.
    let proj = d_direction - unit_dir * unit_dir.dot(d_direction);
    let d_u = proj / u_norm;
    *d_rotation += d_u * cam_vec.transpose();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{exp_map, pose_at, BezierTrajectory, Twist};
    use crate::voxel::Bounds;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym_bounds() -> Bounds {
        Bounds::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]).unwrap()
    }

    fn ray_z(x: f64, y: f64, z: f64) -> Ray {
        Ray::new(Vector3::new(x, y, z), Vector3::new(0.0, 0.0, 1.0)).unwrap()
    }

    /// Grid with zero density on the outermost node shell so grids stay
    /// differentiable across sample entry and exit.
    fn random_grid(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> VoxelGrid {
        let mut g = VoxelGrid::new(dims, sym_bounds(), 0.0).unwrap();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let idx = g.node_index(i, j, k);
                    let boundary = i == 0
                        || j == 0
                        || k == 0
                        || i == dims[0] - 1
                        || j == dims[1] - 1
                        || k == dims[2] - 1;
                    if !boundary {
                        g.density_mut()[idx] = rng.random_range(0.05f32..3.0);
                        for t in 0..SH_PER_NODE {
                            g.sh_mut()[idx * SH_PER_NODE + t] = rng.random_range(-0.25f32..0.25);
                        }
                    }
                }
            }
        }
        g
    }

    #[test]
    fn march_misses_return_empty() {
        let g = VoxelGrid::new([4, 4, 4], sym_bounds(), 0.1).unwrap();
        let ray = ray_z(5.0, 5.0, -3.0);
        assert!(march(&g, &ray, &RenderConfig::default()).is_empty());
    }

    #[test]
    fn march_unit_cube_axis_ray() {
        // Unit cube with min cell 0.25 at dims 5 and ratio 1.0 -> step 0.25.
        let b = Bounds::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        let g = VoxelGrid::new([5, 5, 5], b, 0.1).unwrap();
        let cfg = RenderConfig { step_ratio: 1.0, ..Default::default() };
        let ray = ray_z(0.5, 0.5, -2.0);
        let set = march(&g, &ray, &cfg);
        assert_eq!(set.len(), 4);
        assert!(set.spacings.iter().all(|&d| d == 0.25));
        for p in &set.positions {
            assert!(p.z > 2.0 - 2.0 + 0.0 && p.z < 1.0);
        }
    }

    #[test]
    fn halving_step_ratio_doubles_samples() {
        let g = VoxelGrid::new([9, 9, 9], sym_bounds(), 0.1).unwrap();
        let ray = ray_z(0.1, -0.2, -4.0);
        let coarse = march(&g, &ray, &RenderConfig { step_ratio: 1.0, ..Default::default() });
        let fine = march(&g, &ray, &RenderConfig { step_ratio: 0.5, ..Default::default() });
        let twice = 2 * coarse.len();
        assert!(
            (fine.len() as i64 - twice as i64).abs() <= 1,
            "{} vs {}",
            fine.len(),
            coarse.len()
        );
    }

    #[test]
    fn empty_space_renders_background() {
        let g = VoxelGrid::new([4, 4, 4], sym_bounds(), 0.0).unwrap();
        let ray = ray_z(0.0, 0.0, -3.0);
        let r = render_ray(&g, &ray, &RenderConfig::default());
        assert_eq!(r.rgb, [0.0, 0.0, 0.0]);
        assert_eq!(r.final_transmittance, 1.0);

        let white = RenderConfig { white_background: true, ..Default::default() };
        let r = render_ray(&g, &ray, &white);
        assert_eq!(r.rgb, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_sample_compositing_matches_closed_form() {
        // sigma = (1, 2), delta = (0.5, 0.5), colors red then green.
        let sigmas = [1.0f64, 2.0];
        let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let delta = 0.5;
        let mut t = 1.0;
        let mut rgb = [0.0f64; 3];
        let mut weights = Vec::new();
        for (sig, col) in sigmas.iter().zip(colors) {
            let alpha = 1.0 - (-sig * delta).exp();
            let w = t * alpha;
            for ch in 0..3 {
                rgb[ch] += w * col[ch];
            }
            weights.push(w);
            t *= 1.0 - alpha;
        }
        let w1 = 1.0 - (-0.5f64).exp();
        let w2 = (-0.5f64).exp() * (1.0 - (-1.0f64).exp());
        assert_relative_eq!(weights[0], w1, epsilon = 1e-15);
        assert_relative_eq!(weights[1], w2, epsilon = 1e-15);
        assert_relative_eq!(rgb[0], 0.39346934028736658, epsilon = 1e-12);
        assert_relative_eq!(rgb[1], 0.38340049956420363, epsilon = 1e-12);
        assert_eq!(rgb[2], 0.0);
        assert_relative_eq!(weights[0] + weights[1] + t, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn opaque_sample_dominates() {
        let mut g = VoxelGrid::new([2, 2, 2], sym_bounds(), 1e9).unwrap();
        let w = (0.5 / crate::sh::SH_C0) as f32;
        for i in 0..8 {
            g.sh_mut()[i * SH_PER_NODE] = w; // saturated red
        }
        let ray = ray_z(0.0, 0.0, -3.0);
        let r = render_ray(&g, &ray, &RenderConfig::default());
        assert_relative_eq!(r.rgb[0], 1.0, epsilon = 1e-9);
        assert!(r.rgb[1] - 0.5 < 1e-9);
        assert!(r.final_transmittance < 1e-12);
    }

    #[test]
    fn weights_telescope_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = RenderConfig::default().exact();
        for _ in 0..50 {
            let g = random_grid(&mut rng, [8, 8, 8]);
            let ray = Ray::new(
                Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -4.0),
                Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    1.0,
                )
                .normalize(),
            )
            .unwrap();
            let r = render_ray(&g, &ray, &cfg);
            let total: f64 = r.weights.iter().sum::<f64>() + r.final_transmittance;
            assert!((total - 1.0).abs() < 1e-6, "sum {total}");
            // Transmittance reconstructed from weights is non-increasing.
            let mut t = 1.0;
            for w in &r.weights {
                assert!(*w >= 0.0);
                let next = t - w;
                assert!(next <= t + 1e-15);
                t = next;
            }
        }
    }

    #[test]
    fn early_termination_changes_little() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut g = random_grid(&mut rng, [8, 8, 8]);
            // Boost densities so rays actually saturate.
            for v in g.density_mut() {
                *v *= 10.0;
            }
            let ray = ray_z(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), -4.0);
            let exact = render_ray(&g, &ray, &RenderConfig::default().exact());
            let fast = render_ray(&g, &ray, &RenderConfig::default());
            for ch in 0..3 {
                assert!((exact.rgb[ch] - fast.rgb[ch]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn blur_with_constant_trajectory_equals_sharp_render() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_grid(&mut rng, [8, 8, 8]);
        let pose = exp_map(&Twist::new(
            Vector3::new(0.05, -0.02, 0.01),
            Vector3::new(0.1, 0.2, -3.5),
        ))
        .unwrap();
        let traj = crate::se3::init_trajectory(&pose, 3).unwrap();
        let k = Intrinsics::from_fov(45.0, 32, 32).unwrap();
        let cfg = RenderConfig::default();
        for (px, py) in [(4.0, 7.0), (16.0, 16.0), (30.0, 2.0)] {
            // n = 2 samples the curve at its endpoints, where Bernstein
            // weights select a control twist without rounding: the blur
            // average of two bitwise-identical renders is exact.
            let curve_pose = pose_at(&traj, 0.0).unwrap();
            let sharp = render_ray(&g, &ray_for_pixel(&k, &curve_pose, (px, py)).unwrap(), &cfg);
            let blurred = render_blurred_pixel(&g, &traj, &k, (px, py), 2, &cfg).unwrap();
            assert_eq!(blurred, sharp.rgb);

            // Interior sub-frame times blend the identical control twists
            // through floating-point weights; equality holds to 1e-12.
            let blurred = render_blurred_pixel(&g, &traj, &k, (px, py), 7, &cfg).unwrap();
            for ch in 0..3 {
                assert!((blurred[ch] - sharp.rgb[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_averages_two_distinct_views() {
        // Left half red, right half green, fully opaque; two poses shifted
        // so the center pixel sees pure red then pure green. Colors are
        // painted on every node (density only in the wall slab) so the
        // entry-face interpolation never mixes wall color with background.
        let b = sym_bounds();
        let mut g = VoxelGrid::new([16, 16, 16], b, 0.0).unwrap();
        let on = (0.5 / crate::sh::SH_C0) as f32;
        let off = (-0.5 / crate::sh::SH_C0) as f32;
        for i in 0..16 {
            for j in 0..16 {
                for k in 0..16 {
                    let idx = g.node_index(i, j, k);
                    let p = g.node_position(i, j, k);
                    if p.z > 0.0 {
                        g.density_mut()[idx] = 1e6;
                    }
                    let ch = if p.x < 0.0 { 0 } else { 1 };
                    g.sh_mut()[idx * SH_PER_NODE + ch * SH_COUNT] = on;
                    g.sh_mut()[idx * SH_PER_NODE + (1 - ch) * SH_COUNT] = off;
                    g.sh_mut()[idx * SH_PER_NODE + 2 * SH_COUNT] = off;
                }
            }
        }
        let a = Twist::new(Vector3::zeros(), Vector3::new(-0.5, 0.0, -3.0));
        let c = Twist::new(Vector3::zeros(), Vector3::new(0.5, 0.0, -3.0));
        let traj = BezierTrajectory::new(vec![a, c]).unwrap();
        let k = Intrinsics::from_fov(40.0, 33, 33).unwrap();
        let cfg = RenderConfig::default();
        let center = (16.0, 16.0);
        let rgb = render_blurred_pixel(&g, &traj, &k, center, 2, &cfg).unwrap();
        assert_relative_eq!(rgb[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(rgb[1], 0.5, epsilon = 1e-6);
        assert!(rgb[2] < 1e-6);
    }

    #[test]
    fn blur_rejects_single_subframe() {
        let g = VoxelGrid::new([2, 2, 2], sym_bounds(), 0.1).unwrap();
        let traj = crate::se3::init_trajectory(&Pose::identity(), 1).unwrap();
        let k = Intrinsics::from_fov(45.0, 8, 8).unwrap();
        let err = render_blurred_pixel(&g, &traj, &k, (4.0, 4.0), 1, &RenderConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn render_image_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random_grid(&mut rng, [8, 8, 8]);
        let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -3.0)).unwrap();
        let k = Intrinsics::from_fov(45.0, 16, 16).unwrap();
        let cfg = RenderConfig::default();
        let a = render_image(&g, &pose, &k, &cfg, 1).unwrap();
        let b = render_image(&g, &pose, &k, &cfg, 1).unwrap();
        assert_eq!(a.data, b.data);
        let c = render_image(&g, &pose, &k, &cfg, 4).unwrap();
        assert_eq!(a.data, c.data);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_grid(&mut rng, [6, 6, 6]);
        let ray = ray_z(0.1, 0.2, -3.0);
        let cfg = RenderConfig::default().exact();
        let ctx = render_ray_ctx(&g, &ray, &cfg);
        let mut accum = GradAccum::zeros(&g);
        let rg = backward_ray(&g, &ctx, [0.0; 3], 0.0, &cfg, &mut accum);
        assert!(accum.d_density.iter().all(|&v| v == 0.0));
        assert!(accum.d_sh.iter().all(|&v| v == 0.0));
        assert_eq!(rg.d_origin, Vector3::zeros());
        assert_eq!(rg.d_direction, Vector3::zeros());
    }

    /// Scalar loss used by the gradient checks: a fixed projection of the
    /// rendered color.
    fn proj_loss(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig, a: &[f64; 3]) -> f64 {
        let r = render_ray(grid, ray, cfg);
        a[0] * r.rgb[0] + a[1] * r.rgb[1] + a[2] * r.rgb[2]
    }

    #[test]
    fn grid_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = RenderConfig::default().exact();
        let a = [0.7, -0.4, 0.2];
        let g = random_grid(&mut rng, [6, 6, 6]);
        let ray = Ray::new(
            Vector3::new(0.07, -0.13, -3.0),
            Vector3::new(0.04, 0.03, 1.0).normalize(),
        )
        .unwrap();
        let ctx = render_ray_ctx(&g, &ray, &cfg);
        let mut accum = GradAccum::zeros(&g);
        backward_ray(&g, &ctx, a, 0.0, &cfg, &mut accum);

        let h = 1e-4;
        let mut checked = 0;
        for node in 0..g.node_count() {
            if accum.d_density[node].abs() < 1e-8 {
                continue;
            }
            let mut gp = g.clone();
            gp.density_mut()[node] += h as f32;
            let mut gm = g.clone();
            gm.density_mut()[node] -= h as f32;
            let actual_h =
                (gp.density()[node] as f64 - gm.density()[node] as f64) / 2.0;
            let fd = (proj_loss(&gp, &ray, &cfg, &a) - proj_loss(&gm, &ray, &cfg, &a))
                / (2.0 * actual_h);
            let rel = (fd - accum.d_density[node]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-3, "density node {node}: fd {fd} vs {}", accum.d_density[node]);
            checked += 1;
            if checked >= 20 {
                break;
            }
        }
        assert!(checked > 5, "too few density params exercised");

        let mut checked = 0;
        for p in 0..g.node_count() * SH_PER_NODE {
            if accum.d_sh[p].abs() < 1e-8 {
                continue;
            }
            let mut gp = g.clone();
            gp.sh_mut()[p] += h as f32;
            let mut gm = g.clone();
            gm.sh_mut()[p] -= h as f32;
            let actual_h = (gp.sh()[p] as f64 - gm.sh()[p] as f64) / 2.0;
            let fd = (proj_loss(&gp, &ray, &cfg, &a) - proj_loss(&gm, &ray, &cfg, &a))
                / (2.0 * actual_h);
            let rel = (fd - accum.d_sh[p]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-3, "sh param {p}: fd {fd} vs {}", accum.d_sh[p]);
            checked += 1;
            if checked >= 20 {
                break;
            }
        }
        assert!(checked > 5, "too few sh params exercised");
    }

    #[test]
    fn ray_geometry_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = RenderConfig::default().exact();
        let a = [0.6, 0.3, -0.5];
        for case in 0..10 {
            let g = random_grid(&mut rng, [6, 6, 6]);
            let origin = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                -3.0,
            );
            let u = Vector3::new(
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                1.0,
            );
            let ray = Ray::new(origin, u.normalize()).unwrap();
            let ctx = render_ray_ctx(&g, &ray, &cfg);
            let mut accum = GradAccum::zeros(&g);
            let rg = backward_ray(&g, &ctx, a, 0.0, &cfg, &mut accum);

            let h = 1e-6;
            for axis in 0..3 {
                let mut op = origin;
                let mut om = origin;
                op[axis] += h;
                om[axis] -= h;
                let fp = proj_loss(&g, &Ray::new(op, ray.direction).unwrap(), &cfg, &a);
                let fm = proj_loss(&g, &Ray::new(om, ray.direction).unwrap(), &cfg, &a);
                let fd = (fp - fm) / (2.0 * h);
                let scale = rg.d_origin.amax().max(1.0);
                assert!(
                    (fd - rg.d_origin[axis]).abs() / scale < 2e-3,
                    "case {case} origin axis {axis}: fd {fd} vs {}",
                    rg.d_origin[axis]
                );
            }
            // Direction: perturb the unnormalized vector and chain through
            // the normalization analytically.
            for axis in 0..3 {
                let mut up = u;
                let mut um = u;
                up[axis] += h;
                um[axis] -= h;
                let fp = proj_loss(&g, &Ray::new(origin, up.normalize()).unwrap(), &cfg, &a);
                let fm = proj_loss(&g, &Ray::new(origin, um.normalize()).unwrap(), &cfg, &a);
                let fd = (fp - fm) / (2.0 * h);
                let d = ray.direction;
                let proj = rg.d_direction - d * d.dot(&rg.d_direction);
                let expected = proj[axis] / u.norm();
                let scale = proj.amax().max(1.0);
                assert!(
                    (fd - expected).abs() / scale < 2e-3,
                    "case {case} dir axis {axis}: fd {fd} vs {expected}"
                );
            }
        }
    }
}
