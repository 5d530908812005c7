//! SE(3) rigid motions: twists, poses, and Bézier trajectories in the Lie
//! algebra, with analytic derivatives of the exponential map.
//!
//! A twist is ordered (omega, nu): axis-angle rotation first, translation
//! second. The exponential map follows Rodrigues' formula with the SO(3)
//! left Jacobian applied to the translation part. Bézier trajectories blend
//! control twists coordinate-wise in se(3) and apply a single exponential,
//! so the curve lives in the algebra, not on the manifold.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the Rodrigues / left-Jacobian coefficient
/// functions switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Series threshold for the translation block of the SE(3) Jacobian.
/// Its coefficient functions cancel two to four leading orders, so the
/// closed forms lose absolute accuracy already around 1e-3 rad.
const Q_SERIES_ANGLE: f64 = 1e-3;

/// Margin kept from the logarithm branch cut at pi.
pub const LOG_BRANCH_MARGIN: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Element of se(3): rotation part `omega` (axis-angle, radians) and
/// translation part `nu` (scene units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub nu: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, nu: Vector3<f64>) -> Self {
        Twist { omega, nu }
    }

    pub fn zero() -> Self {
        Twist::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.nu.iter()).all(|v| v.is_finite())
    }

    /// Coordinates in the fixed serialization order (ωx, ωy, ωz, νx, νy, νz).
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega.x, self.omega.y, self.omega.z,
            self.nu.x, self.nu.y, self.nu.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist::new(Vector3::new(a[0], a[1], a[2]), Vector3::new(a[3], a[4], a[5]))
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }
}

/// Element of SE(3) stored as a rotation matrix and translation vector.
/// Construction through [`Pose::new`] enforces orthonormality.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Validates that `rotation` is orthonormal with determinant +1
    /// (within 1e-9 per entry).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite entries"));
        }
        let gram = rotation.transpose() * rotation;
        let max_dev = (gram - Matrix3::identity()).abs().max();
        if max_dev > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal: max |R'R - I| = {max_dev:.3e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation determinant {det:.12} is not +1"
            )));
        }
        Ok(Pose { rotation, translation })
    }

    /// For internal use where orthonormality holds by construction.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Group composition: `self` after `other` as matrix product.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_t = self.rotation.transpose();
        Pose {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Bézier curve of order M ≥ 1 with M+1 control twists.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierTrajectory {
    control_twists: Vec<Twist>,
}

impl BezierTrajectory {
    pub fn new(control_twists: Vec<Twist>) -> Result<Self> {
        if control_twists.len() < 2 {
            return Err(Error::invalid(format!(
                "trajectory needs order >= 1 (two control twists), got {}",
                control_twists.len()
            )));
        }
        if !control_twists.iter().all(Twist::is_finite) {
            return Err(Error::invalid("control twists contain non-finite entries"));
        }
        Ok(BezierTrajectory { control_twists })
    }

    pub fn order(&self) -> usize {
        self.control_twists.len() - 1
    }

    pub fn control_twists(&self) -> &[Twist] {
        &self.control_twists
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y,
        v.z, 0.0, -v.x,
        -v.y, v.x, 0.0,
    )
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// sin(t)/t with series fallback.
fn coef_sinc(theta: f64, theta2: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
    } else {
        theta.sin() / theta
    }
}

/// (1 - cos t)/t^2 with series fallback.
fn coef_one_minus_cos(theta: f64, theta2: f64) -> f64 {
    if theta < SMALL_ANGLE {
        0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    } else {
        (1.0 - theta.cos()) / theta2
    }
}

/// (t - sin t)/t^3 with series fallback.
fn coef_theta_minus_sin(theta: f64, theta2: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta2 * theta)
    }
}

/// Rotation part of the exponential map (Rodrigues' formula).
pub(crate) fn rotation_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let a = coef_sinc(theta, theta2);
    let b = coef_one_minus_cos(theta, theta2);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3); also the V matrix mapping nu to the translation.
pub(crate) fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let b = coef_one_minus_cos(theta, theta2);
    let c = coef_theta_minus_sin(theta, theta2);
    Matrix3::identity() + k * b + k * k * c
}

/// Inverse of the SO(3) left Jacobian.
fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let e = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        // 1/t^2 - (1 + cos t)/(2 t sin t), regular at pi.
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * e
}

/// SE(3) exponential: Rodrigues rotation plus left-Jacobian translation.
pub fn exp_map(xi: &Twist) -> Result<Pose> {
    if !xi.is_finite() {
        return Err(Error::invalid("twist contains non-finite entries"));
    }
    let rotation = rotation_exp(&xi.omega);
    let translation = so3_left_jacobian(&xi.omega) * xi.nu;
    Ok(Pose::from_parts_unchecked(rotation, translation))
}

/// SE(3) logarithm. Errors when the rotation angle is within
/// [`LOG_BRANCH_MARGIN`] of pi, where the map is not uniquely defined.
pub fn log_map(pose: &Pose) -> Result<Twist> {
    let r = pose.rotation();
    let gram_dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if gram_dev > ORTHONORMAL_TOL || (r.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::invalid("log_map input rotation is not orthonormal"));
    }
    let angle = pose.rotation_angle();
    if angle >= std::f64::consts::PI - LOG_BRANCH_MARGIN {
        return Err(Error::LogBranchCut {
            angle,
            margin: LOG_BRANCH_MARGIN,
        });
    }
    let half_dev = vee(&(r - r.transpose())) * 0.5; // = sin(angle) * axis
    let scale = if angle < SMALL_ANGLE {
        let a2 = angle * angle;
        1.0 + a2 / 6.0 + 7.0 * a2 * a2 / 360.0
    } else {
        angle / angle.sin()
    };
    let omega = half_dev * scale;
    let nu = so3_left_jacobian_inv(&omega) * pose.translation();
    Ok(Twist::new(omega, nu))
}

/// Bernstein weights B_{j,M}(t) for j = 0..=M.
///
/// Weights at t = 0 and t = 1 select an endpoint exactly (no rounding).
pub fn bernstein_weights(order: usize, t: f64) -> Result<Vec<f64>> {
    if order < 1 {
        return Err(Error::invalid("Bézier order must be at least 1"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "curve parameter {t} outside [0, 1]"
        )));
    }
    let m = order;
    let mut weights = Vec::with_capacity(m + 1);
    let mut binom = 1.0f64;
    for j in 0..=m {
        if j > 0 {
            binom *= (m - j + 1) as f64 / j as f64;
        }
        let w = binom * (1.0 - t).powi((m - j) as i32) * t.powi(j as i32);
        weights.push(w);
    }
    Ok(weights)
}

/// Normalized sub-frame times: n uniformly spaced values spanning [0, 1].
pub fn subframe_times(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "blur composition needs at least 2 sub-frames, got {n}; use the sharp render path for n = 1"
        )));
    }
    let denom = (n - 1) as f64;
    Ok((0..n).map(|i| i as f64 / denom).collect())
}

/// Coordinate-wise Bernstein blend of the control twists.
pub fn blended_twist(traj: &BezierTrajectory, t: f64) -> Result<Twist> {
    let weights = bernstein_weights(traj.order(), t)?;
    let mut omega = Vector3::zeros();
    let mut nu = Vector3::zeros();
    for (w, ct) in weights.iter().zip(traj.control_twists()) {
        omega += ct.omega * *w;
        nu += ct.nu * *w;
    }
    Ok(Twist::new(omega, nu))
}

/// Pose at normalized exposure time t: exp of the blended twist.
pub fn pose_at(traj: &BezierTrajectory, t: f64) -> Result<Pose> {
    exp_map(&blended_twist(traj, t)?)
}

/// Constant trajectory holding `pose` at every t; all control twists equal
/// log_map(pose).
pub fn init_trajectory(pose: &Pose, order: usize) -> Result<BezierTrajectory> {
    if order < 1 {
        return Err(Error::invalid("Bézier order must be at least 1"));
    }
    let xi = log_map(pose)?;
    BezierTrajectory::new(vec![xi; order + 1])
}

/// Q block of the SE(3) left Jacobian (Barfoot's closed form), relating a
/// perturbation of omega to the world-frame translation increment.
fn q_matrix(omega: &Vector3<f64>, nu: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = skew(omega);
    let v = skew(nu);

    // Coefficients cancel up to four leading orders; switch to series early.
    let (a, b, c) = if theta < Q_SERIES_ANGLE {
        let a = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
        let b = 1.0 / 24.0 - theta2 / 720.0 + theta2 * theta2 / 40320.0;
        let d = -1.0 / 120.0 + theta2 / 5040.0 - theta2 * theta2 / 362880.0;
        (a, b, b - 3.0 * d)
    } else {
        let t3 = theta2 * theta;
        let t4 = theta2 * theta2;
        let t5 = t4 * theta;
        let a = (theta - theta.sin()) / t3;
        let b = (1.0 - theta2 / 2.0 - theta.cos()) / t4;
        let d = (theta - theta.sin() - t3 / 6.0) / t5;
        (a, b, b - 3.0 * d)
    };

    let wv = w * v;
    let vw = v * w;
    let wvw = wv * w;
    v * 0.5
        + (wv + vw + wvw) * a
        - (w * wv + vw * w - wvw * 3.0) * b
        - (wvw * w + w * wvw) * (0.5 * c)
}

/// Full 6x6 left Jacobian of SE(3) in (omega, nu) ordering: maps an additive
/// twist perturbation to the world-frame pose increment epsilon, i.e.
/// exp(xi + d) ≈ exp(J d) ∘ exp(xi).
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let jl = so3_left_jacobian(&xi.omega);
    let q = q_matrix(&xi.omega, &xi.nu);
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    j.fixed_view_mut::<3, 3>(3, 0).copy_from(&q);
    j
}

/// Sensitivity of the pose at time t to each control twist: the Bernstein
/// weight times the left Jacobian of the blended twist. Block j maps a
/// perturbation of control twist j to the world-frame pose increment.
pub fn d_pose_d_controls(traj: &BezierTrajectory, t: f64) -> Result<Vec<Matrix6<f64>>> {
    let weights = bernstein_weights(traj.order(), t)?;
    let xi = blended_twist(traj, t)?;
    let j = se3_left_jacobian(&xi);
    Ok(weights.iter().map(|w| j * *w).collect())
}
