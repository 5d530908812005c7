//! Image-quality metrics (PSNR, single-scale SSIM) and absolute trajectory
//! error with closed-form rigid alignment.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::img::ImageBuf;
use crate::se3::Pose;

/// Peak signal-to-noise ratio in dB over all channels; +infinity when the
/// images are identical.
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::invalid("psnr images must share dimensions"));
    }
    let mut mse = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) on [0, 1]
/// data, computed per channel over valid window positions and averaged.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::invalid("ssim images must share dimensions"));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {w}x{h}"
        )));
    }
    let win = gaussian_window();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for ch in 0..3 {
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let g = win[wy * SSIM_WINDOW + wx];
                        let pa = a.pixel((x0 + wx) as u32, (y0 + wy) as u32)[ch];
                        let pb = b.pixel((x0 + wx) as u32, (y0 + wy) as u32)[ch];
                        mu_a += g * pa;
                        mu_b += g * pb;
                        aa += g * pa * pa;
                        bb += g * pb * pb;
                        ab += g * pa * pb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Poses sampled along one trajectory at strictly increasing times in
/// [0, 1].
#[derive(Debug, Clone)]
pub struct TrajectorySamples {
    times: Vec<f64>,
    poses: Vec<Pose>,
}

impl TrajectorySamples {
    pub fn new(times: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if times.len() != poses.len() {
            return Err(Error::invalid("times and poses length mismatch"));
        }
        if times.len() < 2 {
            return Err(Error::invalid("need at least 2 trajectory samples"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("times must be strictly increasing"));
        }
        if times.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::invalid("times must lie in [0, 1]"));
        }
        Ok(TrajectorySamples { times, poses })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }
}

/// Absolute trajectory error after rigid alignment.
#[derive(Debug, Clone, Copy)]
pub struct AteResult {
    /// RMSE of aligned position errors, scene units.
    pub ate_pos: f64,
    /// RMSE of geodesic rotation angles, radians.
    pub ate_rot: f64,
    /// Alignment fell back to translation-only (collinear or < 3 points).
    pub degenerate_alignment: bool,
}

/// Rigid (rotation + translation, no scale) alignment of the estimated
/// positions onto ground truth, then RMSE of position and rotation errors.
pub fn ate(est: &TrajectorySamples, gt: &TrajectorySamples) -> Result<AteResult> {
    if est.times.len() != gt.times.len() {
        return Err(Error::invalid("trajectory sample counts differ"));
    }
    if est
        .times
        .iter()
        .zip(&gt.times)
        .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::invalid("trajectory sample times differ"));
    }
    let n = est.times.len();
    let est_pos: Vec<Vector3<f64>> = est.poses.iter().map(|p| *p.translation()).collect();
    let gt_pos: Vec<Vector3<f64>> = gt.poses.iter().map(|p| *p.translation()).collect();

    let mean = |v: &[Vector3<f64>]| v.iter().sum::<Vector3<f64>>() / n as f64;
    let e_mean = mean(&est_pos);
    let g_mean = mean(&gt_pos);

    // Cross covariance of centered point sets.
    let mut cov = Matrix3::<f64>::zeros();
    for (e, g) in est_pos.iter().zip(&gt_pos) {
        cov += (g - g_mean) * (e - e_mean).transpose();
    }

    let svd = cov.svd(true, true);
    let degenerate = n < 3 || svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(1e-300);

    let (r_align, t_align) = if degenerate {
        (Matrix3::identity(), g_mean - e_mean)
    } else {
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let d = (u * v_t).determinant();
        let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
        let r = u * fix * v_t;
        (r, g_mean - r * e_mean)
    };

    let mut pos_sq = 0.0;
    let mut rot_sq = 0.0;
    for i in 0..n {
        let aligned = r_align * est_pos[i] + t_align;
        pos_sq += (aligned - gt_pos[i]).norm_squared();
        let rel = (r_align * est.poses[i].rotation()).transpose() * gt.poses[i].rotation();
        // atan2 form of the geodesic angle: stable near identity, where the
        // acos form amplifies rounding into ~1e-8 phantom angles.
        let sin_vec = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        ) * 0.5;
        let cos = (rel.trace() - 1.0) / 2.0;
        let angle = sin_vec.norm().atan2(cos);
        rot_sq += angle * angle;
    }
    Ok(AteResult {
        ate_pos: (pos_sq / n as f64).sqrt(),
        ate_rot: (rot_sq / n as f64).sqrt(),
        degenerate_alignment: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{exp_map, subframe_times, Twist};
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(w: u32, h: u32, v: f64) -> ImageBuf {
        let mut img = ImageBuf::new(w, h);
        for p in img.data.iter_mut() {
            *p = v;
        }
        img
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = uniform(8, 8, 0.4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_tenth_offset_is_twenty_db() {
        let a = uniform(16, 16, 0.4);
        let b = uniform(16, 16, 0.5);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "psnr {p}");
    }

    #[test]
    fn psnr_is_symmetric_and_monotone_in_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = ImageBuf::new(16, 16);
        for p in a.data.iter_mut() {
            *p = rng.random_range(0.2..0.8);
        }
        let mut last = f64::INFINITY;
        for amp in [0.01f64, 0.02, 0.05, 0.1, 0.2] {
            let mut b = a.clone();
            let mut noise_rng = ChaCha8Rng::seed_from_u64(3);
            for p in b.data.iter_mut() {
                *p += noise_rng.random_range(-amp..amp);
            }
            let fwd = psnr(&a, &b).unwrap();
            let bwd = psnr(&b, &a).unwrap();
            assert!((fwd - bwd).abs() < 1e-12);
            assert!(fwd < last, "amp {amp}: {fwd} !< {last}");
            last = fwd;
        }
    }

    #[test]
    fn psnr_rejects_dimension_mismatch() {
        assert!(psnr(&uniform(4, 4, 0.0), &uniform(4, 5, 0.0)).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = ImageBuf::new(16, 12);
        for p in a.data.iter_mut() {
            *p = rng.random_range(0.0..1.0);
        }
        let s = ssim(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "ssim {s}");
    }

    #[test]
    fn ssim_negative_image_scores_low() {
        let mut a = ImageBuf::new(22, 22);
        for y in 0..22 {
            for x in 0..22 {
                let v = if (x / 3 + y / 3) % 2 == 0 { 0.9 } else { 0.1 };
                a.set_pixel(x, y, [v, v, v]);
            }
        }
        let mut b = a.clone();
        for p in b.data.iter_mut() {
            *p = 1.0 - *p;
        }
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.5, "ssim of inverted pattern {s}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = ImageBuf::new(14, 14);
        let mut b = ImageBuf::new(14, 14);
        for p in a.data.iter_mut() {
            *p = rng.random_range(0.0..1.0);
        }
        for p in b.data.iter_mut() {
            *p = rng.random_range(0.0..1.0);
        }
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        assert!(ssim(&uniform(10, 10, 0.5), &uniform(10, 10, 0.5)).is_err());
    }

    fn curve_samples(rng: &mut ChaCha8Rng, n: usize) -> TrajectorySamples {
        let times = subframe_times(n).unwrap();
        let poses: Vec<Pose> = times
            .iter()
            .map(|&t| {
                exp_map(&Twist::new(
                    Vector3::new(0.3 * t, -0.2 * t * t, 0.1 * (1.0 - t)),
                    Vector3::new(
                        t + rng.random_range(-0.01..0.01),
                        t * t,
                        (3.0 * t).sin() * 0.5,
                    ),
                ))
                .unwrap()
            })
            .collect();
        TrajectorySamples::new(times, poses).unwrap()
    }

    #[test]
    fn ate_of_identical_trajectories_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = curve_samples(&mut rng, 11);
        let r = ate(&s, &s).unwrap();
        assert!(r.ate_pos < 1e-12);
        assert!(r.ate_rot < 1e-9);
    }

    #[test]
    fn ate_invariant_to_global_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let gt = curve_samples(&mut rng, 15);
        let g = exp_map(&Twist::new(
            Vector3::new(0.7, -0.5, 0.9),
            Vector3::new(5.0, -2.0, 3.0),
        ))
        .unwrap();
        let est = TrajectorySamples::new(
            gt.times().to_vec(),
            gt.poses().iter().map(|p| g.compose(p)).collect(),
        )
        .unwrap();
        let r = ate(&est, &gt).unwrap();
        assert!(r.ate_pos < 1e-9, "ate_pos {}", r.ate_pos);
        assert!(r.ate_rot < 1e-9, "ate_rot {}", r.ate_rot);
        assert!(!r.degenerate_alignment);
    }

    #[test]
    fn ate_detects_unremovable_offset() {
        // Ground truth on a planar circle, estimate offset out of plane by
        // alternating +/- 0.1. The offsets have zero mean and zero moment
        // against the centered positions, so the optimal rigid alignment is
        // the identity and the full 0.1 RMSE remains.
        let times = subframe_times(8).unwrap();
        let mut gt_poses = Vec::new();
        let mut est_poses = Vec::new();
        for i in 0..8 {
            let th = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
            let p = Vector3::new(th.cos(), th.sin(), 0.0);
            gt_poses.push(Pose::new(Matrix3::identity(), p).unwrap());
            let off = if i % 2 == 0 { 0.1 } else { -0.1 };
            est_poses.push(Pose::new(Matrix3::identity(), p + Vector3::new(0.0, 0.0, off)).unwrap());
        }
        let gt = TrajectorySamples::new(times.clone(), gt_poses).unwrap();
        let est = TrajectorySamples::new(times, est_poses).unwrap();
        let r = ate(&est, &gt).unwrap();
        assert!((r.ate_pos - 0.1).abs() < 1e-9, "ate_pos {}", r.ate_pos);
    }

    #[test]
    fn ate_constant_estimate_falls_back_to_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gt = curve_samples(&mut rng, 9);
        let pose = gt.poses()[4].clone();
        let est = TrajectorySamples::new(
            gt.times().to_vec(),
            vec![pose; gt.poses().len()],
        )
        .unwrap();
        let r = ate(&est, &gt).unwrap();
        assert!(r.degenerate_alignment);
        // RMS spread of the GT positions about their centroid.
        let mean: Vector3<f64> =
            gt.poses().iter().map(|p| *p.translation()).sum::<Vector3<f64>>() / 9.0;
        let expected = (gt
            .poses()
            .iter()
            .map(|p| (p.translation() - mean).norm_squared())
            .sum::<f64>()
            / 9.0)
            .sqrt();
        assert!((r.ate_pos - expected).abs() < 1e-9);
    }

    #[test]
    fn ate_rejects_mismatched_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = curve_samples(&mut rng, 9);
        let b = curve_samples(&mut rng, 11);
        assert!(ate(&a, &b).is_err());
    }

    #[test]
    fn trajectory_samples_validate_times() {
        let p = Pose::identity();
        assert!(TrajectorySamples::new(vec![0.0, 0.0], vec![p.clone(), p.clone()]).is_err());
        assert!(TrajectorySamples::new(vec![0.0], vec![p.clone()]).is_err());
        assert!(TrajectorySamples::new(vec![0.0, 1.5], vec![p.clone(), p]).is_err());
    }
}
