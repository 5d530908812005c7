//! Real spherical harmonics up to degree 2 in the standard normalization
//! with Condon-Shortley phase, ordered
//! (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2).

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const SH_COUNT: usize = 9;

/// Y_0^0 = 1 / (2 sqrt(pi)).
pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2_XY: f64 = 1.0925484305920792;
const SH_C2_YZ: f64 = -1.0925484305920792;
const SH_C2_ZZ: f64 = 0.31539156525252005;
const SH_C2_XZ: f64 = -1.0925484305920792;
const SH_C2_XXYY: f64 = 0.5462742152960396;

/// Basis evaluated at a unit direction. Errors if `d` is not unit length
/// within 1e-9.
pub fn sh_basis(d: &Vector3<f64>) -> Result<[f64; SH_COUNT]> {
    if (d.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "direction norm {} is not 1 within 1e-9",
            d.norm()
        )));
    }
    Ok(sh_basis_unchecked(d))
}

pub(crate) fn sh_basis_unchecked(d: &Vector3<f64>) -> [f64; SH_COUNT] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2_XY * x * y,
        SH_C2_YZ * y * z,
        SH_C2_ZZ * (2.0 * z * z - x * x - y * y),
        SH_C2_XZ * x * z,
        SH_C2_XXYY * (x * x - y * y),
    ]
}

/// Derivative of each basis function with respect to the direction
/// components; rows follow the basis ordering.
pub(crate) fn sh_basis_jacobian(d: &Vector3<f64>) -> [[f64; 3]; SH_COUNT] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [SH_C2_XY * y, SH_C2_XY * x, 0.0],
        [0.0, SH_C2_YZ * z, SH_C2_YZ * y],
        [-2.0 * SH_C2_ZZ * x, -2.0 * SH_C2_ZZ * y, 4.0 * SH_C2_ZZ * z],
        [SH_C2_XZ * z, 0.0, SH_C2_XZ * x],
        [2.0 * SH_C2_XXYY * x, -2.0 * SH_C2_XXYY * y, 0.0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    #[test]
    fn constant_term_for_any_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = sh_basis(&random_unit(&mut rng)).unwrap();
            assert!((b[0] - 0.28209479177).abs() < 1e-9);
        }
    }

    #[test]
    fn degree_one_at_north_pole() {
        let b = sh_basis(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(b[1], 0.0);
        assert!((b[2] - 0.4886025119029199).abs() < 1e-12);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn parity_under_direction_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let d = random_unit(&mut rng);
            let b = sh_basis(&d).unwrap();
            let bn = sh_basis(&(-d)).unwrap();
            // Degree 0 and 2 even, degree 1 odd.
            assert_eq!(b[0], bn[0]);
            for i in 1..4 {
                assert!((b[i] + bn[i]).abs() < 1e-15);
            }
            for i in 4..9 {
                assert!((b[i] - bn[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_non_unit_direction() {
        assert!(sh_basis(&Vector3::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..50 {
            let d = random_unit(&mut rng);
            let jac = sh_basis_jacobian(&d);
            for axis in 0..3 {
                let mut dp = d;
                let mut dm = d;
                dp[axis] += h;
                dm[axis] -= h;
                // Evaluate the raw polynomials off the sphere on purpose.
                let bp = sh_basis_unchecked(&dp);
                let bm = sh_basis_unchecked(&dm);
                for i in 0..SH_COUNT {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    assert!(
                        (fd - jac[i][axis]).abs() < 1e-8,
                        "basis {i} axis {axis}: fd {fd} vs {}",
                        jac[i][axis]
                    );
                }
            }
        }
    }
}
