//! Implementations behind the `exblurf` subcommands.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::config::{
    BenchmarkConfig, EvalCliConfig, GenerateConfig, PoseSource, RenderCliConfig, TrainCliConfig,
};
use crate::io::lock::OutDirLock;
use crate::io::report::{
    AteReport, BenchmarkPoint, BenchmarkReport, EvalReport, LinearFit, PsnrDb, TestViewMetrics,
    ViewAte, EVAL_REPORT_VERSION,
};
use crate::io::{checkpoint, manifest, pfm, png, write_json};
use crate::metrics::{ate, psnr, ssim, TrajectorySamples};
use crate::render::render_image;
use crate::se3::{pose_at, subframe_times, Pose};
use crate::synth::{generate_dataset, BlurParams, CameraRing, Dataset, Primitive, SceneSpec};
use crate::train::{TrainState, Trainer};
use crate::voxel::Bounds;

/// Times at which estimated and ground-truth trajectories are compared;
/// stated in the report metadata.
pub const ATE_SAMPLE_COUNT: usize = 21;

pub fn cmd_generate(cfg: &GenerateConfig, out: &Path, threads: usize) -> Result<()> {
    cfg.validate()?;
    let _lock = OutDirLock::acquire(out)?;
    let dataset = generate_dataset(
        &cfg.scene,
        &cfg.camera,
        cfg.n_views,
        cfg.n_test_views,
        &cfg.blur,
        cfg.n_oracle,
        cfg.seed,
        threads,
    )?;
    manifest::save_dataset(out, &dataset)?;
    println!(
        "generate: wrote {} training views and {} test views to {}",
        dataset.views.len(),
        dataset.test_views.len(),
        out.display()
    );
    Ok(())
}

fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:08}.bin"))
}

/// Newest checkpoint in a directory by iteration number.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let mut best: Option<(u64, PathBuf)> = None;
    if !dir.is_dir() {
        return Ok(None);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(num) = name
            .strip_prefix("checkpoint_")
            .and_then(|s| s.strip_suffix(".bin"))
        else {
            continue;
        };
        if let Ok(iter) = num.parse::<u64>() {
            if best.as_ref().map_or(true, |(b, _)| iter > *b) {
                best = Some((iter, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

pub fn cmd_train(
    cfg: &TrainCliConfig,
    out: &Path,
    seed_override: Option<u64>,
    threads: usize,
    resume: bool,
) -> Result<()> {
    cfg.validate()?;
    let (_, dataset) = manifest::load_dataset(Path::new(&cfg.dataset))?;
    let _lock = OutDirLock::acquire(out)?;

    let mut trainer = if resume {
        let path = latest_checkpoint(out)?.ok_or_else(|| {
            Error::Config(format!("--resume: no checkpoint found in {}", out.display()))
        })?;
        let state = checkpoint::load(&path)?;
        println!("train: resuming from {} at iteration {}", path.display(), state.iteration);
        Trainer::from_state(state, &dataset, threads)?
    } else {
        let mut train_cfg = cfg.train.clone();
        if let Some(seed) = seed_override {
            train_cfg.seed = seed;
        }
        Trainer::new(train_cfg, &dataset, threads)?
    };

    let out_dir = out.to_path_buf();
    let mut hook = move |state: &TrainState, trace: &[crate::train::TraceRow]| -> Result<()> {
        checkpoint::save(&checkpoint_path(&out_dir, state.iteration), state)?;
        write_json(&out_dir.join("trace.json"), &trace)?;
        Ok(())
    };
    let run_result = trainer.run(Some(&mut hook));
    // The hook has already written a checkpoint on capacity aborts.
    run_result?;

    if let Some(row) = trainer.trace.last() {
        println!(
            "train: finished at iteration {} with loss {:.6e}",
            trainer.state.iteration, row.total
        );
    } else {
        println!("train: finished at iteration {}", trainer.state.iteration);
    }
    Ok(())
}

fn orbit_poses(dataset: &Dataset, frames: usize) -> Result<Vec<Pose>> {
    let center = dataset.bounds.center();
    let mut radius = 0.0;
    let mut height = 0.0;
    for view in &dataset.views {
        let t = view.initial_pose.translation();
        let dx = t[0] - center[0];
        let dy = t[1] - center[1];
        radius += (dx * dx + dy * dy).sqrt();
        height += t[2] - center[2];
    }
    let n = dataset.views.len() as f64;
    let (radius, height) = (radius / n, height / n);
    (0..frames)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / frames as f64;
            let eye = center
                + nalgebra::Vector3::new(radius * az.cos(), radius * az.sin(), height);
            crate::synth::look_at(&eye, &center)
        })
        .collect()
}

pub fn cmd_render(cfg: &RenderCliConfig, out: &Path, threads: usize) -> Result<()> {
    cfg.validate()?;
    let state = checkpoint::load(Path::new(&cfg.checkpoint))?;
    let (_, dataset) = manifest::load_dataset(Path::new(&cfg.dataset))?;
    let _lock = OutDirLock::acquire(out)?;
    let rcfg = state.config.render_config();
    let k = dataset.views[0].intrinsics;

    let poses: Vec<Pose> = match cfg.pose_source {
        PoseSource::Test => dataset.test_views.iter().map(|t| t.pose.clone()).collect(),
        PoseSource::GtSubframes => {
            let times = subframe_times(cfg.n_subframes)?;
            let mut poses = Vec::new();
            for view in &dataset.views {
                let traj = view.gt_trajectory.as_ref().ok_or_else(|| {
                    Error::Config("gt-subframes needs ground-truth trajectories".into())
                })?;
                for &t in &times {
                    poses.push(pose_at(traj, t)?);
                }
            }
            poses
        }
        PoseSource::OptimizedMidpoints => {
            let mut poses = Vec::new();
            for v in 0..state.twists.len() {
                poses.push(pose_at(&state.trajectory(v)?, 0.5)?);
            }
            poses
        }
        PoseSource::Orbit => orbit_poses(&dataset, cfg.orbit_frames)?,
    };
    if poses.is_empty() {
        return Err(Error::Config("pose source produced no poses".into()));
    }

    for (i, pose) in poses.iter().enumerate() {
        let img = render_image(&state.grid, pose, &k, &rcfg, threads)?;
        pfm::write(&out.join(format!("render_{i:04}.pfm")), &img)?;
        png::write(&out.join(format!("render_{i:04}.png")), &img)?;
    }
    println!("render: wrote {} images to {}", poses.len(), out.display());
    Ok(())
}

pub fn cmd_eval(cfg: &EvalCliConfig, out: &Path, threads: usize) -> Result<()> {
    cfg.validate()?;
    let state = checkpoint::load(Path::new(&cfg.checkpoint))?;
    let (_, dataset) = manifest::load_dataset(Path::new(&cfg.dataset))?;
    let has_gt_traj = dataset.views.iter().any(|v| v.gt_trajectory.is_some());
    if dataset.test_views.is_empty() && !has_gt_traj {
        return Err(Error::Config(
            "nothing to evaluate: dataset has neither test views nor ground-truth trajectories"
                .into(),
        ));
    }
    let _lock = OutDirLock::acquire(out)?;
    let rcfg = state.config.render_config();

    let mut test_metrics = Vec::new();
    for (i, tv) in dataset.test_views.iter().enumerate() {
        let img = render_image(&state.grid, &tv.pose, &tv.intrinsics, &rcfg, threads)?;
        let p = psnr(&img, &tv.sharp)?;
        let s = ssim(&img, &tv.sharp)?;
        println!("eval: test view {i}: psnr {p:.3} dB, ssim {s:.4}");
        test_metrics.push(TestViewMetrics { view: i, psnr_db: PsnrDb(p), ssim: s });
    }
    let mean_psnr = if test_metrics.is_empty() {
        None
    } else {
        Some(PsnrDb(
            test_metrics.iter().map(|m| m.psnr_db.0).sum::<f64>() / test_metrics.len() as f64,
        ))
    };
    let mean_ssim = if test_metrics.is_empty() {
        None
    } else {
        Some(test_metrics.iter().map(|m| m.ssim).sum::<f64>() / test_metrics.len() as f64)
    };

    let ate_report = if has_gt_traj {
        let times = subframe_times(ATE_SAMPLE_COUNT)?;
        let mut per_view = Vec::new();
        for (v, view) in dataset.views.iter().enumerate() {
            let Some(gt_traj) = &view.gt_trajectory else { continue };
            let est_traj = state.trajectory(v)?;
            let est = TrajectorySamples::new(
                times.clone(),
                times.iter().map(|&t| pose_at(&est_traj, t)).collect::<Result<_>>()?,
            )?;
            let gt = TrajectorySamples::new(
                times.clone(),
                times.iter().map(|&t| pose_at(gt_traj, t)).collect::<Result<_>>()?,
            )?;
            let r = ate(&est, &gt)?;
            println!(
                "eval: view {v}: ate_pos {:.6}, ate_rot {:.6}{}",
                r.ate_pos,
                r.ate_rot,
                if r.degenerate_alignment { " (translation-only alignment)" } else { "" }
            );
            per_view.push(ViewAte {
                view: v,
                ate_pos: r.ate_pos,
                ate_rot: r.ate_rot,
                degenerate_alignment: r.degenerate_alignment,
            });
        }
        let pooled = |f: fn(&ViewAte) -> f64| -> f64 {
            (per_view.iter().map(|v| f(v) * f(v)).sum::<f64>() / per_view.len() as f64).sqrt()
        };
        Some(AteReport {
            units: "scene units".into(),
            sampling: format!("{ATE_SAMPLE_COUNT} uniform exposure times per view"),
            pooled_pos: pooled(|v| v.ate_pos),
            pooled_rot: pooled(|v| v.ate_rot),
            per_view,
        })
    } else {
        None
    };

    let report = EvalReport {
        version: EVAL_REPORT_VERSION,
        checkpoint_iteration: state.iteration,
        test_views: test_metrics,
        mean_psnr_db: mean_psnr,
        mean_ssim,
        lpips: "n/a".into(),
        ate: ate_report,
    };
    write_json(&out.join("report.json"), &report)?;
    if let Some(p) = &report.mean_psnr_db {
        println!("eval: mean psnr {:.3} dB", p.0);
    }
    if let Some(a) = &report.ate {
        println!("eval: pooled ate_pos {:.6}, ate_rot {:.6}", a.pooled_pos, a.pooled_rot);
    }
    Ok(())
}

/// Scene used by the memory benchmark: small, deterministic, and dense
/// enough that rays collect a realistic number of samples.
fn benchmark_dataset(cfg: &BenchmarkConfig, threads: usize) -> Result<Dataset> {
    let scene = SceneSpec {
        bounds: Bounds::new([-1.0; 3], [1.0; 3])?,
        grid_resolution: cfg.grid_dims,
        primitives: vec![
            Primitive::Sphere {
                center: [0.0, 0.0, 0.0],
                radius: 0.45,
                density: 25.0,
                albedo: [0.8, 0.3, 0.2],
            },
            Primitive::Box {
                center: [0.45, -0.35, 0.2],
                size: [0.35, 0.3, 0.3],
                density: 25.0,
                albedo: [0.2, 0.5, 0.9],
            },
        ],
    };
    let ring = CameraRing {
        radius: 2.6,
        height: 0.5,
        fov_deg: 45.0,
        image_width: cfg.image_size,
        image_height: cfg.image_size,
    };
    let blur = BlurParams { bezier_order: 3, rot_max: 0.04, trans_max: 0.06 };
    generate_dataset(&scene, &ring, 3, 0, &blur, 4, cfg.seed, threads)
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let c1 = cov / var;
    let c0 = my - c1 * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (c0 + c1 * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let max_relative_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| ((y - (c0 + c1 * x)) / y).abs())
        .fold(0.0, f64::max);
    LinearFit { c0, c1, r_squared, max_relative_residual }
}

/// Creates the benchmark report; shared by the CLI and the acceptance
/// suite.
pub fn run_memory_benchmark(cfg: &BenchmarkConfig, threads: usize) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let dataset = benchmark_dataset(cfg, threads)?;
    let mut points = Vec::new();
    let measure = |n: usize, batch: usize| -> Result<BenchmarkPoint> {
        let train_cfg = crate::train::TrainConfig {
            batch_rays: batch,
            n_subframes: n,
            bezier_order: 3,
            grid_dims: cfg.grid_dims,
            total_iters: 1,
            seed: cfg.seed,
            ..Default::default()
        };
        let mut trainer = Trainer::new(train_cfg, &dataset, threads)?;
        let report = trainer.step()?;
        Ok(BenchmarkPoint {
            n_subframes: n,
            batch_rays: batch,
            model_param_bytes: trainer.grid().param_bytes(),
            peak_transient_bytes: report.transient_bytes,
        })
    };
    for &n in &cfg.n_values {
        points.push(measure(n, cfg.batch_rays)?);
    }
    let doubled_batch = cfg.batch_rays_doubled.unwrap_or(cfg.batch_rays * 2);
    let n_for_double = *cfg.n_values.last().unwrap();
    let doubled = measure(n_for_double, doubled_batch)?;
    let base = points
        .iter()
        .find(|p| p.n_subframes == n_for_double)
        .expect("measured above");
    let doubled_batch_ratio =
        doubled.peak_transient_bytes as f64 / base.peak_transient_bytes as f64;

    let xs: Vec<f64> = points
        .iter()
        .map(|p| (p.batch_rays * p.n_subframes) as f64)
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.peak_transient_bytes as f64).collect();
    let transient_fit = linear_fit(&xs, &ys);
    points.push(doubled);

    Ok(BenchmarkReport {
        version: 1,
        points,
        transient_fit,
        doubled_batch_ratio,
    })
}

pub fn cmd_benchmark_memory(cfg: &BenchmarkConfig, out: &Path, threads: usize) -> Result<()> {
    let report = run_memory_benchmark(cfg, threads)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("memory_report.json"), &report)?;
    println!("benchmark-memory: N  batch  model_bytes  peak_transient_bytes");
    for p in &report.points {
        println!(
            "benchmark-memory: {:>2}  {:>5}  {:>11}  {:>20}",
            p.n_subframes, p.batch_rays, p.model_param_bytes, p.peak_transient_bytes
        );
    }
    println!(
        "benchmark-memory: fit peak = {:.1} + {:.3} * B*N (r^2 {:.6}, max residual {:.4}%)",
        report.transient_fit.c0,
        report.transient_fit.c1,
        report.transient_fit.r_squared,
        report.transient_fit.max_relative_residual * 100.0
    );
    println!(
        "benchmark-memory: doubling the batch scaled transients by {:.3}",
        report.doubled_batch_ratio
    );
    Ok(())
}
