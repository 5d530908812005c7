//! Joint optimization of the voxel grid and per-view camera trajectories:
//! loss assembly, dual optimizers (Adam on control twists, RMSProp on grid
//! parameters), epoch-wise batch sampling, and the coarse-to-fine schedule.
//!
//! Trainable state lives in f32 (the checkpoint wire format) so a saved
//! state reloads exactly; all math runs in f64 on the fly.

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::ray_for_pixel;
use crate::error::{Error, Result};
use crate::loss::{loss_color, loss_color_grad, loss_sparsity, loss_tv, loss_tv_grad, total_loss};
use crate::metrics::psnr;
use crate::optim::{adam_update, rmsprop_update};
use crate::render::{
    backward_ray, direction_grad_to_rotation, render_image, render_ray_ctx, GradAccum,
    RayContext, RenderConfig,
};
use crate::se3::{
    bernstein_weights, blended_twist, exp_map, init_trajectory, se3_left_jacobian,
    subframe_times, BezierTrajectory, Twist,
};
use crate::seeding::{rng_for, TAG_EPOCH};
use crate::synth::Dataset;
use crate::voxel::{VoxelGrid, SH_PER_NODE};

pub const TWIST_DOF: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_tv: f64,
    pub lambda_s: f64,
    pub lr_traj: f64,
    pub lr_density: f64,
    pub lr_sh: f64,
    /// Pixels per batch (each renders one ray per sub-frame).
    pub batch_rays: usize,
    pub n_subframes: usize,
    pub bezier_order: usize,
    pub total_iters: u64,
    pub upsample_every: u64,
    pub upsample_factors: [usize; 3],
    pub prune_threshold: f64,
    pub grid_dims: [usize; 3],
    /// Budget on grid parameter scalars; upsampling past it aborts.
    pub max_params: usize,
    pub step_ratio: f64,
    pub white_background: bool,
    pub early_termination: bool,
    pub init_density: f32,
    pub seed: u64,
    /// Checkpoint cadence in iterations; 0 emits only the final state.
    pub checkpoint_every: u64,
    /// Test-view PSNR cadence in iterations; 0 disables during training.
    pub eval_every: u64,
    /// Ablation mode: fit the blurry images with single sharp rays at the
    /// fixed initial poses (no blur model, no trajectory optimization).
    pub disable_blur_model: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_tv: 5e-4,
            lambda_s: 1e-12,
            lr_traj: 5e-4,
            lr_density: 0.1,
            lr_sh: 0.01,
            batch_rays: 25_000,
            n_subframes: 21,
            bezier_order: 7,
            total_iters: 200_000,
            upsample_every: 40_000,
            upsample_factors: [2, 2, 1],
            prune_threshold: 1e-2,
            grid_dims: [32, 32, 32],
            max_params: 256 * 256 * 128 * 28,
            step_ratio: 0.5,
            white_background: false,
            early_termination: true,
            init_density: 0.1,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            disable_blur_model: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tv >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(self.lr_traj >= 0.0 && self.lr_density >= 0.0 && self.lr_sh >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if self.batch_rays < 1 {
            return Err(Error::Config("batch_rays must be >= 1".into()));
        }
        if self.n_subframes < 2 {
            return Err(Error::Config("n_subframes must be >= 2".into()));
        }
        if self.bezier_order < 1 {
            return Err(Error::Config("bezier_order must be >= 1".into()));
        }
        if self.grid_dims.iter().any(|&d| d < 2) {
            return Err(Error::Config("grid_dims must be >= 2 per axis".into()));
        }
        if self.upsample_factors.iter().any(|&f| f < 1) {
            return Err(Error::Config("upsample_factors must be >= 1".into()));
        }
        if !(self.step_ratio > 0.0) {
            return Err(Error::Config("step_ratio must be positive".into()));
        }
        if !(self.prune_threshold >= 0.0) {
            return Err(Error::Config("prune_threshold must be >= 0".into()));
        }
        if self.upsample_every == 0 {
            return Err(Error::Config("upsample_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            step_ratio: self.step_ratio,
            early_termination: self.early_termination,
            early_term_threshold: 1e-4,
            white_background: self.white_background,
        }
    }
}

/// Everything that persists across a save/load cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub iteration: u64,
    pub grid: VoxelGrid,
    /// Per view: 6 * (order + 1) control-twist coordinates in
    /// (wx, wy, wz, nx, ny, nz) order per control point.
    pub twists: Vec<Vec<f32>>,
    pub adam_m: Vec<Vec<f32>>,
    pub adam_v: Vec<Vec<f32>>,
    pub adam_t: u64,
    pub rms_density: Vec<f32>,
    pub rms_sh: Vec<f32>,
    pub seed: u64,
}

impl TrainState {
    pub fn trajectory(&self, view: usize) -> Result<BezierTrajectory> {
        let coords = &self.twists[view];
        let controls: Vec<Twist> = coords
            .chunks_exact(TWIST_DOF)
            .map(|c| {
                Twist::from_array([
                    c[0] as f64, c[1] as f64, c[2] as f64,
                    c[3] as f64, c[4] as f64, c[5] as f64,
                ])
            })
            .collect();
        BezierTrajectory::new(controls)
    }

    pub fn trajectories(&self) -> Result<Vec<BezierTrajectory>> {
        (0..self.twists.len()).map(|v| self.trajectory(v)).collect()
    }
}

/// Per-step loss report plus the transient-memory accounting used by the
/// benchmark command.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: u64,
    pub color: f64,
    pub tv: f64,
    pub sparsity: f64,
    pub total: f64,
    /// Peak bytes of per-ray forward context plus gradient buffers held
    /// within the step.
    pub transient_bytes: usize,
    pub sample_count: usize,
}

/// Loss parts plus gradients for one batch, before any update.
pub struct BatchEval {
    pub color: f64,
    pub tv: f64,
    pub sparsity: f64,
    pub total: f64,
    pub grid_grads: GradAccum,
    pub twist_grads: Vec<Vec<f64>>,
    pub transient_bytes: usize,
    pub sample_count: usize,
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub color: f64,
    pub tv: f64,
    pub sparsity: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_psnr: Option<f64>,
}

struct PixelWork {
    view: usize,
    px: u32,
    py: u32,
    target: [f64; 3],
    pred: [f64; 3],
    ctxs: Vec<RayContext>,
}

#[derive(Clone)]
struct PoseGrad {
    d_rotation: Matrix3<f64>,
    d_translation: Vector3<f64>,
}

impl PoseGrad {
    fn zero() -> Self {
        PoseGrad {
            d_rotation: Matrix3::zeros(),
            d_translation: Vector3::zeros(),
        }
    }
}

pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub state: TrainState,
    pub trace: Vec<TraceRow>,
    threads: usize,
    perm_cache: Vec<(u64, Vec<u32>)>,
}

impl<'a> Trainer<'a> {
    /// Fresh trainer: uniform grid, trajectories constant at each view's
    /// initial pose.
    pub fn new(config: TrainConfig, dataset: &'a Dataset, threads: usize) -> Result<Self> {
        config.validate()?;
        if dataset.views.is_empty() {
            return Err(Error::invalid("dataset has no training views"));
        }
        let k0 = dataset.views[0].intrinsics;
        if dataset
            .views
            .iter()
            .any(|v| v.intrinsics.width != k0.width || v.intrinsics.height != k0.height)
        {
            return Err(Error::invalid("training views must share image dimensions"));
        }
        let grid = VoxelGrid::new(config.grid_dims, dataset.bounds, config.init_density)?;
        if grid.param_count() > config.max_params {
            return Err(Error::Capacity {
                requested: grid.param_count(),
                budget: config.max_params,
            });
        }
        let mut twists = Vec::with_capacity(dataset.views.len());
        for view in &dataset.views {
            let traj = init_trajectory(&view.initial_pose, config.bezier_order)?;
            let mut coords = Vec::with_capacity(TWIST_DOF * (config.bezier_order + 1));
            for ct in traj.control_twists() {
                coords.extend(ct.to_array().iter().map(|&v| v as f32));
            }
            twists.push(coords);
        }
        let adam_m: Vec<Vec<f32>> = twists.iter().map(|t| vec![0.0; t.len()]).collect();
        let adam_v = adam_m.clone();
        let rms_density = vec![0.0; grid.node_count()];
        let rms_sh = vec![0.0; grid.node_count() * SH_PER_NODE];
        let seed = config.seed;
        let state = TrainState {
            config,
            iteration: 0,
            grid,
            twists,
            adam_m,
            adam_v,
            adam_t: 0,
            rms_density,
            rms_sh,
            seed,
        };
        Ok(Trainer {
            dataset,
            state,
            trace: Vec::new(),
            threads,
            perm_cache: Vec::new(),
        })
    }

    /// Resume from a saved state.
    pub fn from_state(state: TrainState, dataset: &'a Dataset, threads: usize) -> Result<Self> {
        state.config.validate()?;
        if state.twists.len() != dataset.views.len() {
            return Err(Error::invalid(
                "checkpoint trajectory count does not match dataset views",
            ));
        }
        Ok(Trainer {
            dataset,
            state,
            trace: Vec::new(),
            threads,
            perm_cache: Vec::new(),
        })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.state.grid
    }

    fn total_pixels(&self) -> usize {
        let k = self.dataset.views[0].intrinsics;
        self.dataset.views.len() * (k.width as usize) * (k.height as usize)
    }

    fn perm(&mut self, epoch: u64) -> &[u32] {
        if !self.perm_cache.iter().any(|(e, _)| *e == epoch) {
            let total = self.total_pixels();
            let mut perm: Vec<u32> = (0..total as u32).collect();
            perm.shuffle(&mut rng_for(self.state.seed, TAG_EPOCH, epoch));
            if self.perm_cache.len() >= 2 {
                self.perm_cache.remove(0);
            }
            self.perm_cache.push((epoch, perm));
        }
        &self.perm_cache.iter().find(|(e, _)| *e == epoch).unwrap().1
    }

    /// Pixels of the batch at an iteration: contiguous positions of the
    /// epoch-wise shuffled pixel stream, so every pixel is visited once per
    /// epoch.
    pub fn batch_pixels(&mut self, iteration: u64) -> Vec<(usize, u32, u32)> {
        let total = self.total_pixels() as u64;
        let b = self.state.config.batch_rays as u64;
        let k = self.dataset.views[0].intrinsics;
        let (w, h) = (k.width as u64, k.height as u64);
        let mut out = Vec::with_capacity(b as usize);
        for g in iteration * b..(iteration + 1) * b {
            let epoch = g / total;
            let pos = (g % total) as usize;
            let flat = self.perm(epoch)[pos] as u64;
            let view = (flat / (w * h)) as usize;
            let rem = flat % (w * h);
            out.push((view, (rem % w) as u32, (rem / w) as u32));
        }
        out
    }

    /// Sub-frame poses of every view at the current twists, with the
    /// blended twist kept for the backward chain.
    fn subframe_poses(&self) -> Result<Vec<Vec<(Twist, crate::se3::Pose)>>> {
        let times = subframe_times(self.state.config.n_subframes)?;
        let mut out = Vec::with_capacity(self.dataset.views.len());
        for v in 0..self.dataset.views.len() {
            let traj = self.state.trajectory(v)?;
            let mut per_view = Vec::with_capacity(times.len());
            for &t in &times {
                let xi = blended_twist(&traj, t)?;
                per_view.push((xi, exp_map(&xi)?));
            }
            out.push(per_view);
        }
        Ok(out)
    }

    /// Loss, gradient buffers, and memory accounting for one pixel batch
    /// at the current parameters. Gradients include the TV term scaled by
    /// lambda_tv; twist gradients are per view (empty in sharp-baseline
    /// mode). No parameters change.
    pub fn evaluate_batch(&self, batch: &[(usize, u32, u32)], with_grads: bool) -> Result<BatchEval> {
        let config = &self.state.config;
        let rcfg = config.render_config();
        let n_sub = if config.disable_blur_model { 1 } else { config.n_subframes };

        let poses = if config.disable_blur_model {
            Vec::new()
        } else {
            self.subframe_poses()?
        };

        let grid = &self.state.grid;
        let dataset = self.dataset;

        // Forward: render every sub-frame ray of every batch pixel and keep
        // the contexts for the backward pass (the O(batch * subframes)
        // transient claim is exactly this buffer).
        let forward = |&(view, px, py): &(usize, u32, u32)| -> Result<PixelWork> {
            let obs = &dataset.views[view];
            let target = obs.blurry.pixel(px, py);
            let mut ctxs = Vec::with_capacity(n_sub);
            let mut pred = [0.0f64; 3];
            if config.disable_blur_model {
                let ray = ray_for_pixel(&obs.intrinsics, &obs.initial_pose, (px as f64, py as f64))?;
                let ctx = render_ray_ctx(grid, &ray, &rcfg);
                for ch in 0..3 {
                    pred[ch] += ctx.rgb[ch];
                }
                ctxs.push(ctx);
            } else {
                for (_, pose) in &poses[view] {
                    let ray = ray_for_pixel(&obs.intrinsics, pose, (px as f64, py as f64))?;
                    let ctx = render_ray_ctx(grid, &ray, &rcfg);
                    for ch in 0..3 {
                        pred[ch] += ctx.rgb[ch];
                    }
                    ctxs.push(ctx);
                }
            }
            let inv = 1.0 / n_sub as f64;
            for ch in pred.iter_mut() {
                *ch *= inv;
            }
            Ok(PixelWork { view, px, py, target, pred, ctxs })
        };

        let works: Vec<PixelWork> = if self.threads > 1 {
            batch.par_iter().map(forward).collect::<Result<_>>()?
        } else {
            batch.iter().map(forward).collect::<Result<_>>()?
        };

        let preds: Vec<[f64; 3]> = works.iter().map(|w| w.pred).collect();
        let targets: Vec<[f64; 3]> = works.iter().map(|w| w.target).collect();
        let color = loss_color(&preds, &targets)?;
        let upstream = loss_color_grad(&preds, &targets);

        let sample_count: usize = works
            .iter()
            .map(|w| w.ctxs.iter().map(|c| c.samples.len()).sum::<usize>())
            .sum();
        let sparsity = loss_sparsity(
            works
                .iter()
                .flat_map(|w| w.ctxs.iter())
                .flat_map(|c| c.samples.iter().map(|s| s.sigma)),
        );
        let sparsity_coeff = if sample_count > 0 {
            config.lambda_s / sample_count as f64
        } else {
            0.0
        };

        let tv = loss_tv(grid);
        let total = total_loss(color, tv, sparsity, config.lambda_tv, config.lambda_s)
            .map_err(|e| Error::Numeric(format!("iteration {}: {e}", self.state.iteration)))?;

        let context_bytes: usize = works
            .iter()
            .map(|w| w.ctxs.iter().map(|c| c.transient_bytes()).sum::<usize>())
            .sum();

        if !with_grads {
            return Ok(BatchEval {
                color,
                tv,
                sparsity,
                total,
                grid_grads: GradAccum { d_density: Vec::new(), d_sh: Vec::new() },
                twist_grads: Vec::new(),
                transient_bytes: context_bytes,
                sample_count,
            });
        }

        // Backward: scatter into grid-gradient buffers and per-(view,
        // sub-frame) pose gradients.
        let n_views = dataset.views.len();
        let pose_slots = n_views * n_sub;
        let backward_pixel = |accum: &mut GradAccum,
                              pose_grads: &mut Vec<PoseGrad>,
                              (idx, work): (usize, &PixelWork)| {
            let up = upstream[idx];
            let ray_up = [
                up[0] / n_sub as f64,
                up[1] / n_sub as f64,
                up[2] / n_sub as f64,
            ];
            let obs = &dataset.views[work.view];
            for (i, ctx) in work.ctxs.iter().enumerate() {
                let rg = backward_ray(grid, ctx, ray_up, sparsity_coeff, &rcfg, accum);
                if config.disable_blur_model {
                    continue;
                }
                let slot = work.view * n_sub + i;
                let pg = &mut pose_grads[slot];
                pg.d_translation += rg.d_origin;
                let cam_vec = Vector3::new(
                    (work.px as f64 + 0.5 - obs.intrinsics.cx) / obs.intrinsics.fx,
                    (work.py as f64 + 0.5 - obs.intrinsics.cy) / obs.intrinsics.fy,
                    1.0,
                );
                let u = poses[work.view][i].1.rotation() * cam_vec;
                direction_grad_to_rotation(
                    &rg.d_direction,
                    &ctx.ray.direction,
                    &cam_vec,
                    u.norm(),
                    &mut pg.d_rotation,
                );
            }
        };

        let (mut accum, pose_grads) = if self.threads > 1 {
            works
                .par_iter()
                .enumerate()
                .fold(
                    || (GradAccum::zeros(grid), vec![PoseGrad::zero(); pose_slots]),
                    |(mut acc, mut pgs), item| {
                        backward_pixel(&mut acc, &mut pgs, item);
                        (acc, pgs)
                    },
                )
                .reduce(
                    || (GradAccum::zeros(grid), vec![PoseGrad::zero(); pose_slots]),
                    |(mut a, mut pa), (b, pb)| {
                        a.add_from(&b);
                        for (x, y) in pa.iter_mut().zip(&pb) {
                            x.d_rotation += y.d_rotation;
                            x.d_translation += y.d_translation;
                        }
                        (a, pa)
                    },
                )
        } else {
            let mut acc = GradAccum::zeros(grid);
            let mut pgs = vec![PoseGrad::zero(); pose_slots];
            for item in works.iter().enumerate() {
                backward_pixel(&mut acc, &mut pgs, item);
            }
            (acc, pgs)
        };

        loss_tv_grad(grid, config.lambda_tv, &mut accum);
        if !accum.is_finite() {
            return Err(Error::Numeric(format!(
                "iteration {}: non-finite gradients",
                self.state.iteration
            )));
        }

        let grad_buffer_bytes = (accum.d_density.len() + accum.d_sh.len()) * 8
            + pose_slots * std::mem::size_of::<PoseGrad>();
        let transient_bytes = context_bytes + grad_buffer_bytes;

        // Chain pose gradients to control-twist gradients.
        let mut twist_grads: Vec<Vec<f64>> = Vec::new();
        if !config.disable_blur_model {
            let times = subframe_times(config.n_subframes)?;
            let weights: Vec<Vec<f64>> = times
                .iter()
                .map(|&t| bernstein_weights(config.bezier_order, t))
                .collect::<Result<_>>()?;
            for v in 0..n_views {
                let n_coords = self.state.twists[v].len();
                let mut grad = vec![0.0f64; n_coords];
                for i in 0..n_sub {
                    let pg = &pose_grads[v * n_sub + i];
                    let (xi, pose) = &poses[v][i];
                    // World-frame increment gradient: rotation part by the
                    // generator projection, translation coupling by t x g_t.
                    let r = pose.rotation();
                    let gr = pg.d_rotation * r.transpose();
                    let mut eps = Vector6::zeros();
                    eps[0] = gr[(2, 1)] - gr[(1, 2)];
                    eps[1] = gr[(0, 2)] - gr[(2, 0)];
                    eps[2] = gr[(1, 0)] - gr[(0, 1)];
                    let t_cross = pose.translation().cross(&pg.d_translation);
                    eps[0] += t_cross[0];
                    eps[1] += t_cross[1];
                    eps[2] += t_cross[2];
                    eps[3] = pg.d_translation[0];
                    eps[4] = pg.d_translation[1];
                    eps[5] = pg.d_translation[2];
                    let d_xi = se3_left_jacobian(xi).transpose() * eps;
                    for (j, w) in weights[i].iter().enumerate() {
                        if *w == 0.0 {
                            continue;
                        }
                        for c in 0..TWIST_DOF {
                            grad[j * TWIST_DOF + c] += w * d_xi[c];
                        }
                    }
                }
                twist_grads.push(grad);
            }
        }

        Ok(BatchEval {
            color,
            tv,
            sparsity,
            total,
            grid_grads: accum,
            twist_grads,
            transient_bytes,
            sample_count,
        })
    }

    /// One optimization step over a fresh batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let iteration = self.state.iteration;
        let batch = self.batch_pixels(iteration);
        let eval = self.evaluate_batch(&batch, true)?;
        let config = self.state.config.clone();

        // Adam on control twists.
        if !config.disable_blur_model && config.lr_traj > 0.0 {
            self.state.adam_t += 1;
            let adam_t = self.state.adam_t;
            for v in 0..self.state.twists.len() {
                let grad = &eval.twist_grads[v];
                let params = &mut self.state.twists[v];
                let m = &mut self.state.adam_m[v];
                let mv = &mut self.state.adam_v[v];
                for c in 0..params.len() {
                    let (p, nm, nv) = adam_update(
                        params[c] as f64,
                        grad[c],
                        m[c] as f64,
                        mv[c] as f64,
                        adam_t,
                        config.lr_traj,
                    );
                    params[c] = p as f32;
                    m[c] = nm as f32;
                    mv[c] = nv as f32;
                }
            }
        }

        // RMSProp on the grid parameters.
        if config.lr_density > 0.0 {
            let density = self.state.grid.density_mut();
            for i in 0..density.len() {
                let (p, sq) = rmsprop_update(
                    density[i] as f64,
                    eval.grid_grads.d_density[i],
                    self.state.rms_density[i] as f64,
                    config.lr_density,
                );
                density[i] = p as f32;
                self.state.rms_density[i] = sq as f32;
            }
        }
        if config.lr_sh > 0.0 {
            let sh = self.state.grid.sh_mut();
            for i in 0..sh.len() {
                let (p, sq) = rmsprop_update(
                    sh[i] as f64,
                    eval.grid_grads.d_sh[i],
                    self.state.rms_sh[i] as f64,
                    config.lr_sh,
                );
                sh[i] = p as f32;
                self.state.rms_sh[i] = sq as f32;
            }
        }

        self.state.iteration += 1;
        Ok(StepReport {
            iteration,
            color: eval.color,
            tv: eval.tv,
            sparsity: eval.sparsity,
            total: eval.total,
            transient_bytes: eval.transient_bytes,
            sample_count: eval.sample_count,
        })
    }

    /// Mean PSNR of the engine's sharp renders at the held-out test poses,
    /// or None when the dataset carries no test views.
    pub fn test_psnr(&self) -> Result<Option<f64>> {
        if self.dataset.test_views.is_empty() {
            return Ok(None);
        }
        let rcfg = self.state.config.render_config();
        let mut acc = 0.0;
        for tv in &self.dataset.test_views {
            let img = render_image(&self.state.grid, &tv.pose, &tv.intrinsics, &rcfg, self.threads)?;
            acc += psnr(&img, &tv.sharp)?;
        }
        Ok(Some(acc / self.dataset.test_views.len() as f64))
    }

    /// Prune then upsample the grid and rebuild the RMSProp accumulators
    /// (fresh zeros for the new parameters).
    fn upsample_grid(&mut self) -> Result<()> {
        let config = &self.state.config;
        let pruned = self.state.grid.prune(config.prune_threshold)?;
        let up = pruned.upsample(config.upsample_factors, Some(config.max_params))?;
        self.state.rms_density = vec![0.0; up.node_count()];
        self.state.rms_sh = vec![0.0; up.node_count() * SH_PER_NODE];
        self.state.grid = up;
        Ok(())
    }

    /// Run to `total_iters`, upsampling on schedule and invoking the hook
    /// at every checkpoint boundary, on capacity abort, and at the end.
    pub fn run(
        &mut self,
        mut hook: Option<&mut dyn FnMut(&TrainState, &[TraceRow]) -> Result<()>>,
    ) -> Result<()> {
        let total = self.state.config.total_iters;
        while self.state.iteration < total {
            let iter = self.state.iteration;
            if iter > 0 && iter % self.state.config.upsample_every == 0 {
                match self.upsample_grid() {
                    Ok(()) => {}
                    Err(e @ Error::Capacity { .. }) => {
                        if let Some(h) = hook.as_mut() {
                            h(&self.state, &self.trace)?;
                        }
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            let report = self.step()?;
            let test_psnr = if self.state.config.eval_every > 0
                && self.state.iteration % self.state.config.eval_every == 0
            {
                self.test_psnr()?
            } else {
                None
            };
            self.trace.push(TraceRow {
                iteration: report.iteration,
                color: report.color,
                tv: report.tv,
                sparsity: report.sparsity,
                total: report.total,
                test_psnr,
            });
            if self.state.config.checkpoint_every > 0
                && self.state.iteration % self.state.config.checkpoint_every == 0
                && self.state.iteration < total
            {
                if let Some(h) = hook.as_mut() {
                    h(&self.state, &self.trace)?;
                }
            }
        }
        if let Some(h) = hook.as_mut() {
            h(&self.state, &self.trace)?;
        }
        Ok(())
    }
}
