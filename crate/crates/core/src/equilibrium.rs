//! The identification system: per-element kinematic matrices `A_e` with
//! `A_e θ = F_int,e`, their density-weighted assembly, the free/fixed
//! partition with summed reaction rows, and the weighted normal equations.

use nalgebra::{DMatrix, DVector, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::{gauss_strains, interpolate, ElementKinematics};
use crate::mesh::{BoundarySetup, StructuredMesh};

pub type ElementA = SMatrix<f64, 8, 6>;

/// Strain arrangement with `ε̃ θ = D ε` for `θ = [D11, D12, D16, D22, D26, D66]`.
pub fn strain_matrix(eps: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
    let (e11, e22, g12) = (eps[0], eps[1], eps[2]);
    SMatrix::<f64, 3, 6>::from_row_slice(&[
        e11, e22, g12, 0.0, 0.0, 0.0, //
        0.0, e11, 0.0, e22, g12, 0.0, //
        0.0, 0.0, e11, 0.0, e22, g12,
    ])
}

pub fn element_a(strains: &[Vector3<f64>; 4], kin: &ElementKinematics) -> ElementA {
    let mut a = ElementA::zeros();
    for (b, eps) in kin.b.iter().zip(strains) {
        a += b.transpose() * strain_matrix(eps) * kin.det_j;
    }
    a
}

/// `A_glob = ∪ ρ̃_e A_e` from Gauss-point strains (possibly noisy).
pub fn assemble_a_glob_from_strains(
    mesh: &StructuredMesh,
    kin: &ElementKinematics,
    rho_phys: &[f64],
    strains: &[[Vector3<f64>; 4]],
) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(mesh.n_dofs(), 6);
    for e in 0..mesh.n_elements() {
        let s = interpolate(rho_phys[e]);
        let ae = element_a(&strains[e], kin);
        for (i, &d) in mesh.element_dofs(e).iter().enumerate() {
            for j in 0..6 {
                a[(d, j)] += s * ae[(i, j)];
            }
        }
    }
    a
}

pub fn assemble_a_glob(
    mesh: &StructuredMesh,
    kin: &ElementKinematics,
    rho_phys: &[f64],
    u: &[f64],
) -> DMatrix<f64> {
    let strains = gauss_strains(mesh, kin, u);
    assemble_a_glob_from_strains(mesh, kin, rho_phys, &strains)
}

/// Weights balancing free-DOF equilibrium rows against measured reaction rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Weights {
    /// Mesh-independent choice derived from the DOF counts.
    #[default]
    Consistent,
    /// `λ_r = λ_q = 1`.
    Legacy,
    Manual { lambda_r: f64, lambda_q: f64 },
}

impl Weights {
    pub fn resolve(&self, boundary: &BoundarySetup) -> Result<(f64, f64)> {
        match *self {
            Weights::Consistent => consistent_weights(boundary),
            Weights::Legacy => Ok((1.0, 1.0)),
            Weights::Manual { lambda_r, lambda_q } => {
                if !(lambda_r >= 0.0 && lambda_q > 0.0) {
                    return Err(Error::Config(format!(
                        "weights need lambda_r >= 0 and lambda_q > 0 (got {lambda_r}, {lambda_q})"
                    )));
                }
                Ok((lambda_r, lambda_q))
            }
        }
    }
}

/// `(λ_r*, λ_q*)` with `λ_r* = Σ|fix,s| / |free|` and `λ_q* = sqrt(Σ|fix,s| + |free|)`.
pub fn consistent_weights(boundary: &BoundarySetup) -> Result<(f64, f64)> {
    consistent_weights_from_counts(boundary.n_free(), boundary.n_measured())
}

pub fn consistent_weights_from_counts(n_free: usize, n_measured: usize) -> Result<(f64, f64)> {
    if n_free == 0 {
        return Err(Error::Config("no free degrees of freedom".into()));
    }
    let lr = n_measured as f64 / n_free as f64;
    let lq = ((n_measured + n_free) as f64).sqrt();
    Ok((lr, lq))
}

/// Stacked, weighted least-squares system and its normal equations.
#[derive(Debug, Clone)]
pub struct WeightedSystem {
    /// `√λ_q [A_free ; √λ_r A_fix]`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda_r: f64,
    pub lambda_q: f64,
    pub a_eqb: Matrix6<f64>,
    pub b_eqb: Vector6<f64>,
    /// Unweighted summed rows, one per measured subset.
    pub a_fix: Vec<Vector6<f64>>,
}

pub fn build_weighted_system(
    a_glob: &DMatrix<f64>,
    boundary: &BoundarySetup,
    reactions: &[f64],
    lambda_r: f64,
    lambda_q: f64,
) -> Result<WeightedSystem> {
    boundary.validate()?;
    if reactions.len() != boundary.subsets.len() {
        return Err(Error::Run(format!(
            "{} reactions for {} measured subsets",
            reactions.len(),
            boundary.subsets.len()
        )));
    }
    let free = boundary.free_dofs();
    let n_s = boundary.subsets.len();
    let sq = lambda_q.sqrt();
    let sr = lambda_r.sqrt();
    let a_fix: Vec<Vector6<f64>> = boundary
        .subsets
        .iter()
        .map(|s| {
            let mut row = Vector6::zeros();
            for &d in &s.dofs {
                for j in 0..6 {
                    row[j] += a_glob[(d, j)];
                }
            }
            row
        })
        .collect();
    let mut a = DMatrix::zeros(free.len() + n_s, 6);
    for (r, &d) in free.iter().enumerate() {
        for j in 0..6 {
            a[(r, j)] = sq * a_glob[(d, j)];
        }
    }
    let mut b = DVector::zeros(free.len() + n_s);
    for (s, row) in a_fix.iter().enumerate() {
        for j in 0..6 {
            a[(free.len() + s, j)] = sq * sr * row[j];
        }
        b[free.len() + s] = sq * sr * reactions[s];
    }
    let a_eqb = Matrix6::from_fn(|i, j| dot2(a.column(i).iter(), a.column(j).iter()));
    let b_eqb = Vector6::from_fn(|i, _| dot2(a.column(i).iter(), b.iter()));
    Ok(WeightedSystem {
        a,
        b,
        lambda_r,
        lambda_q,
        a_eqb,
        b_eqb,
        a_fix,
    })
}

/// Dot product accumulated in twice the working precision.
fn dot2<'a>(x: impl Iterator<Item = &'a f64>, y: impl Iterator<Item = &'a f64>) -> f64 {
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for (&a, &b) in x.zip(y) {
        let p = a * b;
        let pe = a.mul_add(b, -p);
        let s = hi + p;
        let z = s - hi;
        lo += (hi - (s - z)) + (p - z) + pe;
        hi = s;
    }
    hi + lo
}

impl WeightedSystem {
    /// Back-propagates `G = ∂c/∂A_eqb` (symmetric) to `∂c/∂A_glob`, one row per DOF.
    /// Fixed DOFs outside every measured subset get zero rows.
    pub fn a_glob_gradient(
        &self,
        g: &Matrix6<f64>,
        a_glob: &DMatrix<f64>,
        boundary: &BoundarySetup,
    ) -> DMatrix<f64> {
        let gs = (g + g.transpose()) * 0.5;
        let n = a_glob.nrows();
        let mut w = DMatrix::zeros(n, 6);
        let fixed = boundary.fixed_mask();
        for d in 0..n {
            if fixed[d] {
                continue;
            }
            let row = Vector6::from_fn(|j, _| a_glob[(d, j)]);
            let gr = gs * row * (2.0 * self.lambda_q);
            for j in 0..6 {
                w[(d, j)] = gr[j];
            }
        }
        for (s, subset) in boundary.subsets.iter().enumerate() {
            let gr = gs * self.a_fix[s] * (2.0 * self.lambda_q * self.lambda_r);
            for &d in &subset.dofs {
                for j in 0..6 {
                    w[(d, j)] = gr[j];
                }
            }
        }
        w
    }

    /// Least-squares estimate `θ = A_eqb⁻¹ b_eqb`.
    pub fn solve(&self) -> Result<Vector6<f64>> {
        let chol = nalgebra::Cholesky::new(self.a_eqb).ok_or_else(|| {
            Error::Degenerate("normal matrix is not positive definite".into())
        })?;
        Ok(chol.solve(&self.b_eqb))
    }
}
