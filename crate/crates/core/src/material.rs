//! Plane-stress stiffness parameterisations.
//!
//! A [`StiffnessVector`] packs the six independent entries of the symmetric
//! 3×3 plane-stress elasticity matrix in the order
//! `[D11, D12, D16, D22, D26, D66]` (GPa), acting on the Voigt strain
//! `[ε11, ε22, γ12]` with engineering shear.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six unknown stiffness components, Voigt order `[D11, D12, D16, D22, D26, D66]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessVector(pub [f64; 6]);

impl StiffnessVector {
    pub fn components(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let [d11, d12, d16, d22, d26, d66] = self.0;
        Matrix3::new(d11, d12, d16, d12, d22, d26, d16, d26, d66)
    }

    /// Packs a (symmetrised) 3×3 matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let s = |i: usize, j: usize| 0.5 * (m[(i, j)] + m[(j, i)]);
        StiffnessVector([s(0, 0), s(0, 1), s(0, 2), s(1, 1), s(1, 2), s(2, 2)])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// Expresses a stiffness given in a frame whose axis 1 sits at `beta_deg`
    /// (counterclockwise) from global axis 1 in the global frame.
    pub fn rotated(&self, beta_deg: f64) -> Self {
        let t = strain_transform(beta_deg);
        StiffnessVector::from_matrix(&(t.transpose() * self.matrix() * t))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Maps global Voigt strains (engineering shear) to a frame rotated by `beta_deg`.
pub fn strain_transform(beta_deg: f64) -> Matrix3<f64> {
    let b = beta_deg.to_radians();
    let (s, c) = b.sin_cos();
    Matrix3::new(
        c * c,
        s * s,
        c * s,
        s * s,
        c * c,
        -c * s,
        -2.0 * c * s,
        2.0 * c * s,
        c * c - s * s,
    )
}

/// Engineering constants of a plane-stress orthotropic lamina.
///
/// `e_xx` is along the strong axis, which sits at `beta` degrees
/// counterclockwise from global axis 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthotropicParams {
    pub e_xx: f64,
    pub e_yy: f64,
    pub g_xy: f64,
    pub nu_xy: f64,
    pub beta: f64,
}

impl OrthotropicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_xx > 0.0 && self.e_yy > 0.0 && self.g_xy > 0.0) {
            return Err(Error::Parameter(format!(
                "moduli must be positive (E_xx={}, E_yy={}, G_xy={})",
                self.e_xx, self.e_yy, self.g_xy
            )));
        }
        if !(0.0..=90.0).contains(&self.beta) {
            return Err(Error::Parameter(format!(
                "anisotropy angle {} outside [0, 90] degrees",
                self.beta
            )));
        }
        if self.nu_xy * self.nu_xy * self.e_yy / self.e_xx >= 1.0 {
            return Err(Error::Parameter(format!(
                "compliance not positive definite (nu_xy={}, E_yy/E_xx={})",
                self.nu_xy,
                self.e_yy / self.e_xx
            )));
        }
        Ok(())
    }

    pub fn nu_yx(&self) -> f64 {
        self.nu_xy * self.e_yy / self.e_xx
    }

    /// Stiffness in the material frame (no rotation).
    pub fn local_stiffness(&self) -> StiffnessVector {
        let denom = 1.0 - self.nu_xy * self.nu_yx();
        let q11 = self.e_xx / denom;
        let q22 = self.e_yy / denom;
        let q12 = self.nu_xy * self.e_yy / denom;
        StiffnessVector([q11, q12, 0.0, q22, 0.0, self.g_xy])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyDescriptors {
    pub alpha1: f64,
    pub alpha2: f64,
}

pub fn isotropic_stiffness(e: f64, nu: f64) -> Result<StiffnessVector> {
    if !(e > 0.0) {
        return Err(Error::Parameter(format!("Young's modulus {e} must be positive")));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Parameter(format!(
            "Poisson ratio {nu} outside [0, 0.5)"
        )));
    }
    let d11 = e / (1.0 - nu * nu);
    Ok(StiffnessVector([
        d11,
        nu * d11,
        0.0,
        d11,
        0.0,
        e / (2.0 * (1.0 + nu)),
    ]))
}

pub fn orthotropic_stiffness(p: &OrthotropicParams) -> Result<StiffnessVector> {
    p.validate()?;
    let local = p.local_stiffness();
    if p.beta == 0.0 {
        return Ok(local);
    }
    let mut global = local.rotated(p.beta);
    if p.beta == 90.0 {
        // exact axis swap
        global.0[2] = 0.0;
        global.0[4] = 0.0;
    }
    Ok(global)
}

fn shear_reference(e_xx: f64, e_yy: f64, nu_xy: f64) -> f64 {
    1.0 / (1.0 / e_xx + 1.0 / e_yy + 2.0 * nu_xy / e_xx)
}

pub fn anisotropy_ratios(p: &OrthotropicParams) -> AnisotropyDescriptors {
    AnisotropyDescriptors {
        alpha1: p.e_xx / p.e_yy,
        alpha2: p.g_xy / shear_reference(p.e_xx, p.e_yy, p.nu_xy),
    }
}

/// Inverse of [`anisotropy_ratios`] with `E_xx` pinned to `e_scale`.
pub fn params_from_descriptors(
    alpha1: f64,
    alpha2: f64,
    beta: f64,
    nu_xy: f64,
    e_scale: f64,
) -> Result<OrthotropicParams> {
    if !(alpha1 > 0.0 && alpha2 > 0.0) {
        return Err(Error::Parameter(format!(
            "anisotropy ratios must be positive (alpha1={alpha1}, alpha2={alpha2})"
        )));
    }
    let e_xx = e_scale;
    let e_yy = e_xx / alpha1;
    let g_xy = alpha2 * shear_reference(e_xx, e_yy, nu_xy);
    let p = OrthotropicParams {
        e_xx,
        e_yy,
        g_xy,
        nu_xy,
        beta,
    };
    p.validate()?;
    Ok(p)
}

/// Engineering constants recovered from a global-frame stiffness when the
/// material orientation is known. Used to attribute identification errors.
pub fn engineering_constants(theta: &StiffnessVector, beta: f64) -> Option<OrthotropicParams> {
    let local = theta.rotated(-beta).matrix();
    let s = local.try_inverse()?;
    Some(OrthotropicParams {
        e_xx: 1.0 / s[(0, 0)],
        e_yy: 1.0 / s[(1, 1)],
        g_xy: 1.0 / s[(2, 2)],
        nu_xy: -s[(0, 1)] / s[(0, 0)],
        beta,
    })
}

/// Default modulus scale (GPa) for descriptor-based materials.
pub const DEFAULT_E_SCALE: f64 = 200.0;

/// The orthotropic material grid used by the gallery and identification sweeps:
/// alpha1 in {4..20 step 4}, alpha2 in {0.5..1.5 step 0.25}, beta in {0..90 step 15}.
pub fn table_grid() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(175);
    for a1 in [4.0, 8.0, 12.0, 16.0, 20.0] {
        for a2 in [0.5, 0.75, 1.0, 1.25, 1.5] {
            for beta in [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0] {
                out.push((a1, a2, beta));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Rotates the 4th-order plane stiffness tensor component by component.
    fn tensor_rotation_oracle(local: &StiffnessVector, beta_deg: f64) -> [f64; 6] {
        let m = local.matrix();
        // voigt index of tensor pair (engineering shear absorbed by the 1/2 factors)
        let voigt = |i: usize, j: usize| -> usize {
            match (i, j) {
                (0, 0) => 0,
                (1, 1) => 1,
                _ => 2,
            }
        };
        let c = |i, j, k, l| m[(voigt(i, j), voigt(k, l))];
        let b = beta_deg.to_radians();
        let r = [[b.cos(), -b.sin()], [b.sin(), b.cos()]];
        let mut g = [[[[0.0; 2]; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let mut acc = 0.0;
                        for a in 0..2 {
                            for bb in 0..2 {
                                for cc in 0..2 {
                                    for d in 0..2 {
                                        acc += r[i][a] * r[j][bb] * r[k][cc] * r[l][d]
                                            * c(a, bb, cc, d);
                                    }
                                }
                            }
                        }
                        g[i][j][k][l] = acc;
                    }
                }
            }
        }
        [
            g[0][0][0][0],
            g[0][0][1][1],
            g[0][0][0][1],
            g[1][1][1][1],
            g[1][1][0][1],
            g[0][1][0][1],
        ]
    }

    #[test]
    fn isotropic_reference_values() {
        let d = isotropic_stiffness(200.0, 0.3).unwrap().0;
        assert_relative_eq!(d[0], 219.78021978021977, epsilon = 1e-10);
        assert_relative_eq!(d[1], 65.93406593406593, epsilon = 1e-10);
        assert_relative_eq!(d[5], 76.92307692307692, epsilon = 1e-10);
        assert_eq!(d[0], d[3]);
        assert_eq!((d[2], d[4]), (0.0, 0.0));
    }

    #[test]
    fn isotropic_decoupled() {
        let d = isotropic_stiffness(1.0, 0.0).unwrap().0;
        assert_eq!(d, [1.0, 0.0, 0.0, 1.0, 0.0, 0.5]);
    }

    #[test]
    fn isotropic_rejects_bad_input() {
        assert!(isotropic_stiffness(0.0, 0.3).is_err());
        assert!(isotropic_stiffness(200.0, 0.5).is_err());
        assert!(isotropic_stiffness(200.0, -0.1).is_err());
    }

    #[test]
    fn isotropic_descriptors_are_unity() {
        let p = OrthotropicParams {
            e_xx: 200.0,
            e_yy: 200.0,
            g_xy: 200.0 / 2.6,
            nu_xy: 0.3,
            beta: 0.0,
        };
        let a = anisotropy_ratios(&p);
        assert_relative_eq!(a.alpha1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(a.alpha2, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn table_point_descriptors() {
        let gsv = shear_reference(12.0, 1.0, 0.3);
        let p = OrthotropicParams {
            e_xx: 12.0,
            e_yy: 1.0,
            g_xy: gsv,
            nu_xy: 0.3,
            beta: 0.0,
        };
        let a = anisotropy_ratios(&p);
        assert_relative_eq!(a.alpha1, 12.0);
        assert_relative_eq!(a.alpha2, 1.0);

        let gsv = shear_reference(4.0, 1.0, 0.3);
        let p = OrthotropicParams {
            e_xx: 4.0,
            e_yy: 1.0,
            g_xy: 0.5 * gsv,
            nu_xy: 0.3,
            beta: 0.0,
        };
        let a = anisotropy_ratios(&p);
        assert_relative_eq!(a.alpha1, 4.0);
        assert_relative_eq!(a.alpha2, 0.5);
    }

    #[test]
    fn descriptor_inversion() {
        let p = params_from_descriptors(12.0, 1.0, 0.0, 0.3, 12.0).unwrap();
        assert_relative_eq!(p.e_yy, 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.g_xy, shear_reference(12.0, 1.0, 0.3), epsilon = 1e-14);

        let iso = params_from_descriptors(1.0, 1.0, 30.0, 0.3, 200.0).unwrap();
        let d = orthotropic_stiffness(&iso).unwrap();
        let reference = isotropic_stiffness(200.0, 0.3).unwrap();
        for k in 0..6 {
            assert!((d.0[k] - reference.0[k]).abs() < 1e-10 * 220.0);
        }
    }

    #[test]
    fn descriptor_round_trip_over_table_grid() {
        for (a1, a2, beta) in table_grid() {
            let p = params_from_descriptors(a1, a2, beta, 0.3, DEFAULT_E_SCALE).unwrap();
            let a = anisotropy_ratios(&p);
            assert!(((a.alpha1 - a1) / a1).abs() < 1e-12);
            assert!(((a.alpha2 - a2) / a2).abs() < 1e-12);
        }
    }

    #[test]
    fn table_grid_is_positive_definite() {
        let grid = table_grid();
        assert_eq!(grid.len(), 175);
        for (a1, a2, beta) in grid {
            let d = orthotropic_stiffness(&params_from_descriptors(a1, a2, beta, 0.3, DEFAULT_E_SCALE).unwrap()).unwrap();
            assert!(d.is_positive_definite(), "{a1} {a2} {beta}");
        }
    }

    #[test]
    fn zero_angle_has_no_coupling() {
        let p = params_from_descriptors(12.0, 1.0, 0.0, 0.3, 200.0).unwrap();
        let d = orthotropic_stiffness(&p).unwrap();
        assert_eq!(d.0[2], 0.0);
        assert_eq!(d.0[4], 0.0);
    }

    #[test]
    fn right_angle_swaps_axes() {
        let p0 = params_from_descriptors(12.0, 1.0, 0.0, 0.3, 200.0).unwrap();
        let p90 = OrthotropicParams { beta: 90.0, ..p0 };
        let d0 = orthotropic_stiffness(&p0).unwrap().0;
        let d90 = orthotropic_stiffness(&p90).unwrap().0;
        assert_relative_eq!(d90[0], d0[3], max_relative = 1e-12);
        assert_relative_eq!(d90[3], d0[0], max_relative = 1e-12);
        assert_relative_eq!(d90[1], d0[1], max_relative = 1e-12);
        assert_relative_eq!(d90[5], d0[5], max_relative = 1e-12);
        assert_eq!((d90[2], d90[4]), (0.0, 0.0));
    }

    #[test]
    fn forty_five_degrees_matches_tensor_rotation() {
        let p = params_from_descriptors(12.0, 1.0, 45.0, 0.3, 200.0).unwrap();
        let d = orthotropic_stiffness(&p).unwrap().0;
        let oracle = tensor_rotation_oracle(&p.local_stiffness(), 45.0);
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..6 {
            assert!((d[k] - oracle[k]).abs() < 1e-12 * scale, "{k}: {} vs {}", d[k], oracle[k]);
        }
    }

    #[test]
    fn rotation_agrees_with_tensor_oracle_for_all_grid_angles() {
        for beta in [0.0, 15.0, 30.0, 60.0, 75.0, 33.3] {
            let p = params_from_descriptors(8.0, 0.75, beta, 0.3, 200.0).unwrap();
            let d = p.local_stiffness().rotated(beta).0;
            let oracle = tensor_rotation_oracle(&p.local_stiffness(), beta);
            for k in 0..6 {
                assert!((d[k] - oracle[k]).abs() < 1e-11 * 200.0);
            }
        }
    }

    #[test]
    fn indefinite_compliance_rejected() {
        assert!(params_from_descriptors(0.05, 1.0, 0.0, 0.3, 200.0).is_err());
        assert!(params_from_descriptors(-1.0, 1.0, 0.0, 0.3, 200.0).is_err());
    }

    #[test]
    fn engineering_constants_recovered() {
        let p = params_from_descriptors(16.0, 1.25, 30.0, 0.3, 200.0).unwrap();
        let d = orthotropic_stiffness(&p).unwrap();
        let back = engineering_constants(&d, 30.0).unwrap();
        assert_relative_eq!(back.e_xx, p.e_xx, max_relative = 1e-10);
        assert_relative_eq!(back.e_yy, p.e_yy, max_relative = 1e-10);
        assert_relative_eq!(back.g_xy, p.g_xy, max_relative = 1e-10);
        assert_relative_eq!(back.nu_xy, p.nu_xy, max_relative = 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rotation_is_reversible(a1 in 1.0f64..20.0, a2 in 0.5f64..1.5, beta in 0.0f64..90.0) {
                let p = params_from_descriptors(a1, a2, beta, 0.3, 200.0).unwrap();
                let d = p.local_stiffness();
                let back = d.rotated(beta).rotated(-beta);
                for k in 0..6 {
                    prop_assert!((back.0[k] - d.0[k]).abs() <= 1e-12 * d.norm());
                }
            }

            #[test]
            fn ratios_scale_invariant(a1 in 1.0f64..20.0, a2 in 0.5f64..1.5, scale in 1e-3f64..1e3) {
                let p = params_from_descriptors(a1, a2, 0.0, 0.3, 200.0).unwrap();
                let q = OrthotropicParams { e_xx: p.e_xx * scale, e_yy: p.e_yy * scale, g_xy: p.g_xy * scale, ..p };
                let (a, b) = (anisotropy_ratios(&p), anisotropy_ratios(&q));
                prop_assert!((a.alpha1 - b.alpha1).abs() < 1e-12 * a.alpha1);
                prop_assert!((a.alpha2 - b.alpha2).abs() < 1e-12 * a.alpha2);
            }
        }
    }
}
