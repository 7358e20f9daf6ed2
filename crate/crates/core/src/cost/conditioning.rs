//! Determinant and condition-number measures of a square matrix, with
//! gradients with respect to its (independent) entries.

use nalgebra::{Cholesky, Matrix6};

use crate::error::{Error, Result};

/// Number of stiffness parameters.
pub const N_F: usize = 6;

/// `log det A` of a symmetric positive definite matrix.
pub fn log_det(a: &Matrix6<f64>) -> Result<f64> {
    let chol = Cholesky::new(*a).ok_or_else(|| {
        Error::Degenerate("normal matrix has a non-positive determinant".into())
    })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn inverse(a: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    a.try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Degenerate("normal matrix is singular".into()))
}

/// Entrywise p-norm `(Σ |a_ij|^p)^(1/p)`.
pub fn entrywise_norm(a: &Matrix6<f64>, p: f64) -> f64 {
    let m = a.amax();
    if m == 0.0 {
        return 0.0;
    }
    m * a.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// `∂ log‖A‖_p / ∂A = sign(A) |A|^(p-1) / ‖A‖_p^p`.
fn log_norm_gradient(a: &Matrix6<f64>, p: f64) -> Matrix6<f64> {
    let n = entrywise_norm(a, p);
    a.map(|v| v.signum() * (v.abs() / n).powf(p - 1.0) / n)
}

/// `κ_p = ‖A‖_p ‖A⁻¹‖_p` with the entrywise p-norm.
pub fn p_norm_cond(a: &Matrix6<f64>, p: f64) -> Result<f64> {
    let b = inverse(a)?;
    Ok(entrywise_norm(a, p) * entrywise_norm(&b, p))
}

/// `∂ log κ_p / ∂A`.
pub fn log_p_norm_cond_gradient(a: &Matrix6<f64>, p: f64) -> Result<Matrix6<f64>> {
    let b = inverse(a)?;
    let g1 = log_norm_gradient(a, p);
    let g2 = log_norm_gradient(&b, p);
    Ok(g1 - b.transpose() * g2 * b.transpose())
}

pub fn frobenius_cond(a: &Matrix6<f64>) -> Result<f64> {
    let b = inverse(a)?;
    Ok(a.norm() * b.norm())
}

/// Ratio of extreme singular values.
pub fn two_norm_cond(a: &Matrix6<f64>) -> Result<f64> {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || min <= f64::EPSILON * max {
        return Err(Error::Degenerate("normal matrix is singular".into()));
    }
    Ok(max / min)
}

/// Upper bound factor `n_f^(2(1 − 2/p))` relating κ_F to κ_p.
pub fn p_norm_bound_factor(p: f64) -> f64 {
    (N_F as f64).powf(2.0 * (1.0 - 2.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(seed: u64) -> Matrix6<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        m * m.transpose() + Matrix6::identity() * 0.05
    }

    #[test]
    fn identity_values() {
        let i = Matrix6::identity();
        assert!((p_norm_cond(&i, 8.0).unwrap() - 6f64.powf(0.25)).abs() < 1e-14);
        assert!((p_norm_cond(&i, 8.0).unwrap() - 1.5651).abs() < 1e-4);
        assert!((frobenius_cond(&i).unwrap() - 6.0).abs() < 1e-14);
        assert!((two_norm_cond(&i).unwrap() - 1.0).abs() < 1e-14);
        assert!(log_det(&i).unwrap().abs() < 1e-15);
    }

    #[test]
    fn diagonal_frobenius_matches_svd() {
        let a = Matrix6::from_diagonal(&nalgebra::Vector6::new(2.0, 1.0, 1.0, 1.0, 1.0, 1.0));
        let sv = a.singular_values();
        let inv_sv = sv.map(|s| 1.0 / s);
        let oracle = sv.norm() * inv_sv.norm();
        assert!((frobenius_cond(&a).unwrap() - oracle).abs() < 1e-14);
        assert!((oracle - (9.0f64).sqrt() * (5.25f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn singular_is_degenerate() {
        let mut a = Matrix6::identity();
        a[(5, 5)] = 0.0;
        assert!(matches!(log_det(&a), Err(Error::Degenerate(_))));
        assert!(matches!(p_norm_cond(&a, 8.0), Err(Error::Degenerate(_))));
        assert!(matches!(frobenius_cond(&a), Err(Error::Degenerate(_))));
        assert!(matches!(two_norm_cond(&a), Err(Error::Degenerate(_))));
    }

    #[test]
    fn two_norm_equals_eigen_ratio() {
        for seed in 0..10 {
            let a = random_spd(seed);
            let eig = a.symmetric_eigenvalues();
            let oracle = eig.max() / eig.min();
            assert!((two_norm_cond(&a).unwrap() - oracle).abs() < 1e-9 * oracle);
        }
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let a = random_spd(4);
        let eig = a.symmetric_eigenvalues();
        let oracle: f64 = eig.iter().map(|v| v.ln()).sum();
        assert!((log_det(&a).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn log_kappa_gradient_matches_finite_differences() {
        let a = random_spd(7);
        let g = log_p_norm_cond_gradient(&a, 8.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let h = 1e-6;
                let mut ap = a;
                ap[(i, j)] += h;
                let mut am = a;
                am[(i, j)] -= h;
                let fd = (p_norm_cond(&ap, 8.0).unwrap().ln() - p_norm_cond(&am, 8.0).unwrap().ln()) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-6 * (1.0 + fd.abs()), "({i},{j}) {fd} vs {}", g[(i, j)]);
            }
        }
    }

    proptest! {
        #[test]
        fn bound_chain_holds(seed in 0u64..10_000, p in 2.0f64..16.0) {
            let a = random_spd(seed);
            let k2 = two_norm_cond(&a).unwrap();
            let kf = frobenius_cond(&a).unwrap();
            let kp = p_norm_cond(&a, p).unwrap();
            prop_assert!(1.0 <= k2 * (1.0 + 1e-12));
            prop_assert!(k2 <= kf * (1.0 + 1e-12));
            prop_assert!(kf <= p_norm_bound_factor(p) * kp * (1.0 + 1e-12));
        }

        #[test]
        fn conditioning_is_scale_invariant(seed in 0u64..10_000, c in 1e-3f64..1e3) {
            let a = random_spd(seed);
            let ac = a * c;
            prop_assert!((p_norm_cond(&ac, 8.0).unwrap() / p_norm_cond(&a, 8.0).unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((frobenius_cond(&ac).unwrap() / frobenius_cond(&a).unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((two_norm_cond(&ac).unwrap() / two_norm_cond(&a).unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((log_det(&ac).unwrap() - log_det(&a).unwrap() - 6.0 * c.ln()).abs() < 1e-9);
        }
    }
}
