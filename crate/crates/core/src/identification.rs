//! Synthetic identification benchmark: forward "experiments" on a fixed
//! topology, Gaussian strain noise at the Gauss points, least-squares
//! recovery of the six stiffness components and error bookkeeping.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost::diagnostics;
use crate::equilibrium::{assemble_a_glob_from_strains, build_weighted_system, WeightedSystem};
use crate::error::{Error, Result};
use crate::fe::ElementModel;
use crate::material::{engineering_constants, StiffnessVector};
use crate::mesh::{BoundarySetup, StructuredMesh};
use crate::sensitivity::analyze;

/// Relative noise level used throughout: `γ_f = 1e-3 · ū / L_y`.
pub const NOISE_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of every Gauss-point strain component.
    pub gamma_f: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn nominal(boundary: &BoundarySetup, mesh: &StructuredMesh, seed: u64) -> Self {
        NoiseModel {
            gamma_f: NOISE_FACTOR * boundary.u_bar / mesh.ly,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_f >= 0.0 && self.gamma_f.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("noise level must be >= 0 (got {})", self.gamma_f)))
        }
    }

    /// Adds i.i.d. `N(0, γ_f)` to each strain component, in element / Gauss-point order.
    pub fn perturb(&self, strains: &[[Vector3<f64>; 4]]) -> Result<Vec<[Vector3<f64>; 4]>> {
        self.validate()?;
        if self.gamma_f == 0.0 {
            return Ok(strains.to_vec());
        }
        let normal = Normal::new(0.0, self.gamma_f).map_err(|e| Error::Config(format!("noise model: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(strains
            .iter()
            .map(|gp| gp.map(|eps| eps + Vector3::from_fn(|_, _| normal.sample(&mut rng))))
            .collect())
    }
}

/// Elements with density >= 0.5 connect the bottom grip row to the top one
/// through shared edges.
pub fn is_connected(mesh: &StructuredMesh, rho: &[f64]) -> bool {
    let solid: Vec<bool> = rho.iter().map(|&r| r >= 0.5).collect();
    let mut seen = vec![false; rho.len()];
    let mut stack: Vec<usize> = (0..mesh.nx).map(|ix| mesh.element(ix, 0)).filter(|&e| solid[e]).collect();
    for &e in &stack {
        seen[e] = true;
    }
    while let Some(e) = stack.pop() {
        let (ix, iy) = mesh.element_ij(e);
        if iy + 1 == mesh.ny {
            return true;
        }
        let mut push = |jx: usize, jy: usize| {
            let n = mesh.element(jx, jy);
            if solid[n] && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        };
        if ix > 0 {
            push(ix - 1, iy);
        }
        if ix + 1 < mesh.nx {
            push(ix + 1, iy);
        }
        if iy > 0 {
            push(ix, iy - 1);
        }
        push(ix, iy + 1);
    }
    false
}

/// A synthetic experiment: the noise-free response of a topology and material.
#[derive(Debug)]
pub struct Experiment {
    pub theta_gt: StiffnessVector,
    pub beta: f64,
    pub strains: Vec<[Vector3<f64>; 4]>,
    /// Summed reactions per measured subset (never perturbed).
    pub reactions: Vec<f64>,
    /// Noise-free weighted system; its conditioning characterises the specimen.
    pub clean: WeightedSystem,
    model: ElementModel,
}

/// Runs the forward problem of `rho` (binary or physical densities) under `theta_gt`.
pub fn synthesize(
    mesh: &StructuredMesh,
    boundary: &BoundarySetup,
    rho: &[f64],
    theta_gt: &StiffnessVector,
    beta: f64,
    weights: (f64, f64),
) -> Result<Experiment> {
    if rho.len() != mesh.n_elements() {
        return Err(Error::Config(format!(
            "topology has {} values, the mesh has {} elements",
            rho.len(),
            mesh.n_elements()
        )));
    }
    if !is_connected(mesh, rho) {
        return Err(Error::Run("topology does not connect the grips".into()));
    }
    let model = ElementModel::new(mesh, theta_gt);
    let (state, _) = analyze(mesh, &model, boundary, rho, weights.0, weights.1)?;
    Ok(Experiment {
        theta_gt: *theta_gt,
        beta,
        strains: state.strains,
        reactions: state.reactions,
        clean: state.system,
        model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentificationReport {
    /// Identified `[D11, D12, D16, D22, D26, D66]` (GPa).
    pub theta: [f64; 6],
    /// `‖θ − θ_gt‖₂ / ‖θ_gt‖₂`.
    pub rel_error: f64,
    /// `|θ_i − θ_gt,i| / ‖θ_gt‖₂` per component.
    pub component_errors: [f64; 6],
    /// Relative errors of `E_xx, E_yy, G_xy, ν_xy` in the material frame.
    pub constant_errors: Option<[f64; 4]>,
    /// `1/det(A_eqb)` of the noise-free system (mm⁻¹²).
    pub inv_det: f64,
    pub kappa_2: f64,
}

impl Experiment {
    pub fn mesh_check(&self, mesh: &StructuredMesh) -> Result<()> {
        if self.strains.len() != mesh.n_elements() {
            return Err(Error::Config("experiment belongs to a different mesh".into()));
        }
        Ok(())
    }

    /// Least-squares identification from noisy strains and the exact reactions.
    pub fn identify(
        &self,
        mesh: &StructuredMesh,
        boundary: &BoundarySetup,
        rho: &[f64],
        noise: &NoiseModel,
    ) -> Result<IdentificationReport> {
        self.mesh_check(mesh)?;
        let noisy = noise.perturb(&self.strains)?;
        let a_glob = assemble_a_glob_from_strains(mesh, &self.model.kin, rho, &noisy);
        let sys = build_weighted_system(&a_glob, boundary, &self.reactions, self.clean.lambda_r, self.clean.lambda_q)?;
        let theta = sys.solve()?;
        let d = diagnostics(&self.clean.a_eqb, crate::cost::DEFAULT_P)?;
        Ok(self.report(theta, d.inv_det, d.kappa_2))
    }

    fn report(&self, theta: Vector6<f64>, inv_det: f64, kappa_2: f64) -> IdentificationReport {
        let gt = Vector6::from_column_slice(self.theta_gt.components());
        let norm = gt.norm();
        let diff = theta - gt;
        let identified = StiffnessVector([theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]]);
        let constant_errors = engineering_constants(&self.theta_gt, self.beta).and_then(|t| {
            let i = engineering_constants(&identified, self.beta)?;
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            Some([
                rel(i.e_xx, t.e_xx),
                rel(i.e_yy, t.e_yy),
                rel(i.g_xy, t.g_xy),
                rel(i.nu_xy, t.nu_xy),
            ])
        });
        IdentificationReport {
            theta: identified.0,
            rel_error: diff.norm() / norm,
            component_errors: std::array::from_fn(|k| diff[k].abs() / norm),
            constant_errors,
            inv_det,
            kappa_2,
        }
    }
}

/// Checks `‖δθ‖/‖θ‖ ≤ κ₂ ‖δb‖/‖b‖` for a right-hand-side perturbation; returns
/// the two sides.
pub fn amplification_sides(a_eqb: &Matrix6<f64>, b_eqb: &Vector6<f64>, db: &Vector6<f64>) -> Result<(f64, f64)> {
    let chol = nalgebra::Cholesky::new(*a_eqb)
        .ok_or_else(|| Error::Degenerate("normal matrix is not positive definite".into()))?;
    let theta = chol.solve(b_eqb);
    let dtheta = chol.solve(db);
    let k2 = crate::cost::two_norm_cond(a_eqb)?;
    Ok((dtheta.norm() / theta.norm(), k2 * db.norm() / b_eqb.norm()))
}

/// Hole centres of the reference layouts, as fractions of the design region.
pub fn hole_layout(n_holes: usize) -> Result<Vec<(f64, f64)>> {
    let q = [0.25, 0.75];
    let t = [1.0 / 6.0, 0.5, 5.0 / 6.0];
    Ok(match n_holes {
        1 => vec![(0.5, 0.5)],
        2 => vec![(0.5, 0.25), (0.5, 0.75)],
        3 => t.iter().map(|&y| (0.5, y)).collect(),
        4 => q.iter().flat_map(|&y| q.iter().map(move |&x| (x, y))).collect(),
        5 => {
            let mut v: Vec<(f64, f64)> = q.iter().flat_map(|&y| q.iter().map(move |&x| (x, y))).collect();
            v.push((0.5, 0.5));
            v
        }
        6 => t.iter().flat_map(|&y| q.iter().map(move |&x| (x, y))).collect(),
        _ => return Err(Error::Config(format!("reference topologies have 1 to 6 holes (got {n_holes})"))),
    })
}

fn holes_field(mesh: &StructuredMesh, centres: &[(f64, f64)], frame: usize, r: f64) -> Vec<f64> {
    let wx = (mesh.nx - 2 * frame) as f64;
    let wy = (mesh.ny - 2 * frame) as f64;
    let c: Vec<(f64, f64)> = centres
        .iter()
        .map(|&(a, b)| (frame as f64 + a * wx, frame as f64 + b * wy))
        .collect();
    (0..mesh.n_elements())
        .map(|e| {
            let (ix, iy) = mesh.element_ij(e);
            let (x, y) = (ix as f64 + 0.5, iy as f64 + 0.5);
            let inside = c.iter().any(|&(cx, cy)| (x - cx).powi(2) + (y - cy).powi(2) < r * r);
            if inside {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Binary plate with `n_holes` equal circular holes whose common radius gives
/// mean density `volume_fraction` (within 0.5 %). `volume_fraction = 1` is the full plate.
pub fn reference_topology(mesh: &StructuredMesh, n_holes: usize, volume_fraction: f64, frame: usize) -> Result<Vec<f64>> {
    let centres = hole_layout(n_holes)?;
    if !(volume_fraction > 0.0 && volume_fraction <= 1.0) {
        return Err(Error::Config(format!("volume fraction must lie in (0, 1] (got {volume_fraction})")));
    }
    if volume_fraction == 1.0 {
        return Ok(vec![1.0; mesh.n_elements()]);
    }
    if 2 * frame >= mesh.nx.min(mesh.ny) {
        return Err(Error::Config(format!("a {frame}-layer frame leaves no room for holes")));
    }
    let mean = |f: &[f64]| f.iter().sum::<f64>() / f.len() as f64;
    let (mut lo, mut hi) = (0.0, mesh.nx.max(mesh.ny) as f64);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..80 {
        let r = 0.5 * (lo + hi);
        let field = holes_field(mesh, &centres, frame, r);
        let v = mean(&field);
        let err = (v - volume_fraction).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, field));
        }
        if v > volume_fraction {
            lo = r;
        } else {
            hi = r;
        }
    }
    let (err, field) = best.expect("bisection ran");
    if err > 0.005 {
        return Err(Error::Config(format!(
            "{n_holes} holes cannot reach volume fraction {volume_fraction} on a {}x{} mesh",
            mesh.nx, mesh.ny
        )));
    }
    let frame_mask = mesh.frame_mask(frame);
    if field.iter().zip(&frame_mask).any(|(&v, &f)| f && v == 0.0) {
        return Err(Error::Config(format!(
            "{n_holes} holes at volume fraction {volume_fraction} reach into the {frame}-layer frame"
        )));
    }
    Ok(field)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Median and quartiles (linear interpolation), NaNs dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    Quartiles {
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
    }
}

/// One (topology, load, material) cell, aggregated over noise seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub topology: String,
    pub load: String,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub inv_det: f64,
    pub kappa_2: f64,
    /// Median over seeds of the relative identification error.
    pub median_error: f64,
    /// Median over seeds of the `E_xx, E_yy, G_xy, ν_xy` errors.
    pub median_constant_errors: [f64; 4],
    /// Set when the cell could not be evaluated.
    pub failure: Option<String>,
}

impl SweepCell {
    /// Index of the largest of the `E_xx, E_yy, G_xy` median errors.
    pub fn hardest_modulus(&self) -> usize {
        let e = &self.median_constant_errors;
        (0..3).fold(0, |m, k| if e[k] > e[m] { k } else { m })
    }
}

/// Evaluates one cell over `seeds` noise realisations.
#[allow(clippy::too_many_arguments)]
pub fn sweep_cell(
    mesh: &StructuredMesh,
    boundary: &BoundarySetup,
    topology: (&str, &[f64]),
    material: (f64, f64, f64, StiffnessVector),
    weights: (f64, f64),
    gamma_f: f64,
    seeds: &[u64],
) -> SweepCell {
    let (alpha1, alpha2, beta, theta) = material;
    let mut cell = SweepCell {
        topology: topology.0.to_string(),
        load: boundary.load.to_string(),
        alpha1,
        alpha2,
        beta,
        inv_det: f64::NAN,
        kappa_2: f64::NAN,
        median_error: f64::NAN,
        median_constant_errors: [f64::NAN; 4],
        failure: None,
    };
    let run = || -> Result<(f64, f64, Vec<IdentificationReport>)> {
        let exp = synthesize(mesh, boundary, topology.1, &theta, beta, weights)?;
        let d = diagnostics(&exp.clean.a_eqb, crate::cost::DEFAULT_P)?;
        let reports = seeds
            .iter()
            .map(|&seed| exp.identify(mesh, boundary, topology.1, &NoiseModel { gamma_f, seed }))
            .collect::<Result<Vec<_>>>()?;
        Ok((d.inv_det, d.kappa_2, reports))
    };
    match run() {
        Ok((inv_det, kappa_2, reports)) => {
            cell.inv_det = inv_det;
            cell.kappa_2 = kappa_2;
            let errs: Vec<f64> = reports.iter().map(|r| r.rel_error).collect();
            cell.median_error = quartiles(&errs).median;
            cell.median_constant_errors = std::array::from_fn(|k| {
                let v: Vec<f64> = reports
                    .iter()
                    .map(|r| r.constant_errors.map_or(f64::NAN, |c| c[k]))
                    .collect();
                quartiles(&v).median
            });
        }
        Err(e) => cell.failure = Some(e.to_string()),
    }
    cell
}
