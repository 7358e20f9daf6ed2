//! Mesh-refinement study of the identification system on a plate with one
//! hole, comparing the weighting choices for free and measured rows.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost::diagnostics;
use crate::equilibrium::consistent_weights;
use crate::error::{Error, Result};
use crate::fe::ElementModel;
use crate::material::StiffnessVector;
use crate::mesh::{BoundarySetup, LoadCase, StructuredMesh};
use crate::sensitivity::{analyze, finite_difference_check, DesignProblem, GradCheckRow};

/// Stiffness used for the refinement study (GPa).
pub const STUDY_THETA: [f64; 6] = [323.0, 100.03, 50.015, 190.0, 80.024, 144.930];

/// Plate with a centred circular hole of radius `radius` (mm). Elements whose
/// centre falls inside the hole are void.
pub fn plate_with_hole(mesh: &StructuredMesh, radius: f64) -> Vec<f64> {
    let (cx, cy) = (0.5 * mesh.lx, 0.5 * mesh.ly);
    (0..mesh.n_elements())
        .map(|e| {
            let (x, y) = mesh.element_centre(e);
            if (x - cx).powi(2) + (y - cy).powi(2) < radius * radius {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `(1, 1)`
    Unit,
    /// `(λ_r*, 1)`
    RowsOnly,
    /// `(λ_r*, λ_q*)`
    Consistent,
}

impl WeightMode {
    pub const ALL: [WeightMode; 3] = [WeightMode::Unit, WeightMode::RowsOnly, WeightMode::Consistent];

    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Unit => "unit",
            WeightMode::RowsOnly => "rows_only",
            WeightMode::Consistent => "consistent",
        }
    }

    pub fn weights(self, boundary: &BoundarySetup) -> Result<(f64, f64)> {
        let (lr, lq) = consistent_weights(boundary)?;
        Ok(match self {
            WeightMode::Unit => (1.0, 1.0),
            WeightMode::RowsOnly => (lr, 1.0),
            WeightMode::Consistent => (lr, lq),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub mode: WeightMode,
    pub nx: usize,
    pub ny: usize,
    pub n_dofs: usize,
    pub lambda_r: f64,
    pub lambda_q: f64,
    /// Eigenvalues of `A_eqb`, largest first.
    pub eigenvalues: [f64; 6],
    pub inv_det: f64,
    pub kappa_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySlopes {
    pub mode: WeightMode,
    pub eigenvalues: [f64; 6],
    pub inv_det: f64,
    pub kappa_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightsStudy {
    pub rows: Vec<StudyRow>,
    pub slopes: Vec<StudySlopes>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs the uniaxial plate-with-hole on every mesh and fits log-log slopes
/// against the number of DOFs for each weighting mode.
pub fn weights_study(
    theta: &StiffnessVector,
    meshes: &[(usize, usize)],
    size: (f64, f64),
    strain: f64,
    hole_radius: f64,
) -> Result<WeightsStudy> {
    if meshes.len() < 2 {
        return Err(Error::Config("the weights study needs at least two meshes".into()));
    }
    let mut rows = Vec::new();
    for &(nx, ny) in meshes {
        let mesh = StructuredMesh::new(nx, ny, size.0, size.1)?;
        let boundary = BoundarySetup::new(&mesh, LoadCase::Uniaxial, strain * size.1);
        let rho = plate_with_hole(&mesh, hole_radius);
        let model = ElementModel::new(&mesh, theta);
        for mode in WeightMode::ALL {
            let (lr, lq) = mode.weights(&boundary)?;
            let (state, _) = analyze(&mesh, &model, &boundary, &rho, lr, lq)?;
            let a = state.system.a_eqb;
            let mut eig: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            let d = diagnostics(&a, crate::cost::DEFAULT_P)?;
            rows.push(StudyRow {
                mode,
                nx,
                ny,
                n_dofs: mesh.n_dofs(),
                lambda_r: lr,
                lambda_q: lq,
                eigenvalues: std::array::from_fn(|k| eig[k]),
                inv_det: d.inv_det,
                kappa_2: d.kappa_2,
            });
        }
    }
    let slopes = WeightMode::ALL
        .iter()
        .map(|&mode| {
            let sel: Vec<&StudyRow> = rows.iter().filter(|r| r.mode == mode).collect();
            let x: Vec<f64> = sel.iter().map(|r| r.n_dofs as f64).collect();
            let fit = |f: &dyn Fn(&StudyRow) -> f64| log_log_slope(&x, &sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            StudySlopes {
                mode,
                eigenvalues: std::array::from_fn(|k| fit(&|r| r.eigenvalues[k])),
                inv_det: fit(&|r| r.inv_det),
                kappa_2: fit(&|r| r.kappa_2),
            }
        })
        .collect();
    Ok(WeightsStudy { rows, slopes })
}

/// Design variables drawn uniformly from `[0.1, 0.9]`.
pub fn random_design(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.1..0.9)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub seed: u64,
    pub psi: f64,
    pub rows: Vec<GradCheckRow>,
    /// Largest componentwise relative error.
    pub max_rel_err: f64,
    /// `‖g − g_fd‖₂ / ‖g_fd‖₂`.
    pub normwise: f64,
}

/// Adjoint gradient against central differences over every design variable
/// at a random design; the cost is normalised at the uniform design 0.5.
pub fn gradient_check(problem: &DesignProblem, phi: f64, psi: f64, seed: u64, h: f64) -> Result<GradCheck> {
    let n = problem.n_design();
    let ctx = problem.capture_context(&vec![0.5; n], 1.0, phi)?;
    let x = random_design(n, seed);
    let vars: Vec<usize> = (0..n).collect();
    let rows = finite_difference_check(problem, &x, psi, phi, &ctx, &vars, h)?;
    let max_rel_err = rows.iter().fold(0.0f64, |m, r| m.max(r.rel_err));
    let diff: f64 = rows.iter().map(|r| (r.analytic - r.fd).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = rows.iter().map(|r| r.fd * r.fd).sum::<f64>().sqrt();
    Ok(GradCheck {
        seed,
        psi,
        rows,
        max_rel_err,
        normwise: if norm == 0.0 { diff } else { diff / norm },
    })
}
