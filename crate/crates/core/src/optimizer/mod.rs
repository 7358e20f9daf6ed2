//! Volume-constrained design loop: initialisation, projection continuation,
//! inner moving-asymptote iterations and the robust (eroded / intermediate /
//! dilated) formulation.

mod mma;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost::{check_p, diagnostics, CostContext, Diagnostics};
use crate::error::{Error, Result};
use crate::filter::{grey_index, hard_threshold, FilterContext};
use crate::registry::Registry;
use crate::sensitivity::{analyze, DesignProblem, Evaluation};

pub use mma::{Mma, MmaSettings};

/// Tolerance the step enforces on the volume equality.
pub const VOLUME_TOL: f64 = 1e-9;

/// A scalar equality `value(x) = target` with its gradient at the current point.
pub struct EqualityConstraint<'a> {
    pub value: &'a dyn Fn(&[f64]) -> f64,
    pub gradient: &'a [f64],
    pub target: f64,
    pub tolerance: f64,
}

/// One bounded, volume-preserving update of the design variables.
pub trait ConstrainedStep: std::fmt::Debug + Send {
    fn name(&self) -> &'static str;

    /// Forgets the iteration history (called at every continuation loop).
    fn reset(&mut self);

    /// Returns the next design, inside `[0, 1]` and satisfying the constraint.
    fn step(&mut self, x: &[f64], grad: &[f64], con: &EqualityConstraint) -> Result<Vec<f64>>;
}

pub fn registry() -> Registry<dyn ConstrainedStep, MmaSettings> {
    let mut r: Registry<dyn ConstrainedStep, MmaSettings> = Registry::new("optimiser");
    r.register("mma", |s| {
        s.validate()?;
        Ok(Box::new(Mma::new(*s)))
    });
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitMode {
    Even,
    Noisy {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// A full element field (CSV or PGM) from an earlier run.
    File { path: PathBuf },
}

fn default_sigma() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub volume_fraction: f64,
    pub max_iters: usize,
    /// Inner loops stop once `max |Δx|` drops below this.
    pub tolerance: f64,
    pub robust: bool,
    /// Dilated, intermediate and eroded projection thresholds.
    pub thresholds: [f64; 3],
    pub init: InitMode,
    pub cost: String,
    pub p: f64,
    pub method: String,
    pub mma: MmaSettings,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            volume_fraction: 0.8,
            max_iters: 50,
            tolerance: 1e-4,
            robust: false,
            thresholds: [0.25, 0.5, 0.75],
            init: InitMode::Even,
            cost: "det".into(),
            p: crate::cost::DEFAULT_P,
            method: "mma".into(),
            mma: MmaSettings::default(),
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let v = self.volume_fraction;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Config(format!("volume_fraction must lie in (0, 1) (got {v})")));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive (got {})", self.tolerance)));
        }
        let [lo, mid, hi] = self.thresholds;
        if !(0.0 < lo && lo < mid && mid < hi && hi < 1.0) || (lo + hi - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "thresholds must increase strictly inside (0, 1) with the outer pair summing to 1 (got {:?})",
                self.thresholds
            )));
        }
        if let InitMode::Noisy { sigma } = self.init {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!("init sigma must be >= 0 (got {sigma})")));
            }
        }
        if !crate::cost::registry().contains(&self.cost) {
            return Err(Error::Config(format!(
                "unknown cost '{}' (available: {})",
                self.cost,
                crate::cost::registry().names().join(", ")
            )));
        }
        check_p(self.p)?;
        if !registry().contains(&self.method) {
            return Err(Error::Config(format!(
                "unknown optimiser '{}' (available: {})",
                self.method,
                registry().names().join(", ")
            )));
        }
        self.mma.validate()
    }
}

/// Mean physical density of the uniform design `x ≡ c` at projection sharpness `psi`.
fn shifted_volume(filter: &FilterContext, base: &[f64], c: f64, psi: f64, phi: f64) -> f64 {
    let x: Vec<f64> = base.iter().map(|b| (b + c).clamp(0.0, 1.0)).collect();
    filter.volume(&filter.densities(&x, psi, phi).rho_phys)
}

/// Finds the shift `c` with `mean ρ_phys(clamp(base + c)) = target` at `ψ = 1`.
fn bisect_shift(filter: &FilterContext, base: &[f64], target: f64, phi: f64) -> Result<Vec<f64>> {
    let spread = base.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let (mut lo, mut hi) = (-1.0 - spread, 1.0 + spread);
    let (v_lo, v_hi) = (
        shifted_volume(filter, base, lo, 1.0, phi),
        shifted_volume(filter, base, hi, 1.0, phi),
    );
    if !(v_lo < target && target < v_hi) {
        return Err(Error::Config(format!(
            "volume fraction {target} is outside the reachable range ({v_lo:.6}, {v_hi:.6}) for this frame"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = shifted_volume(filter, base, mid, 1.0, phi);
        if (v - target).abs() <= 1e-13 {
            lo = mid;
            hi = mid;
            break;
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    Ok(base.iter().map(|b| (b + c).clamp(0.0, 1.0)).collect())
}

/// Initial design variables.
pub fn initialize(filter: &FilterContext, mode: &InitMode, volume_fraction: f64, phi: f64, seed: u64) -> Result<Vec<f64>> {
    let n = filter.n_design();
    match mode {
        InitMode::Even => bisect_shift(filter, &vec![0.0; n], volume_fraction, phi),
        InitMode::Noisy { sigma } => {
            let normal = Normal::new(0.0, *sigma).map_err(|e| Error::Config(format!("init noise: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            bisect_shift(filter, &noise, volume_fraction, phi)
        }
        InitMode::File { path } => {
            let full = crate::io::read_field(path)?;
            if full.len() != filter.mesh.n_elements() {
                return Err(Error::Config(format!(
                    "{} holds {} values, the mesh has {} elements",
                    path.display(),
                    full.len(),
                    filter.mesh.n_elements()
                )));
            }
            if full.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("{} has densities outside [0, 1]", path.display())));
            }
            Ok(filter.restrict(&full))
        }
    }
}

/// Per-branch values of a robust iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchRecord {
    pub cost_eroded: f64,
    pub cost_intermediate: f64,
    pub cost_dilated: f64,
    pub volume_eroded: f64,
    pub volume_intermediate: f64,
    pub volume_dilated: f64,
    /// 0 eroded, 1 intermediate, 2 dilated.
    pub active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub loop_index: usize,
    pub iteration: usize,
    pub psi: f64,
    /// Normalised cost (1 at the initial design).
    pub cost: f64,
    /// `1/det(A_eqb)` (mm⁻¹²).
    pub inv_det: f64,
    /// The constrained volume: intermediate field, or dilated in robust mode.
    pub volume: f64,
    pub volume_target: f64,
    pub grey_index: f64,
    pub max_change: f64,
    pub kappa_2: f64,
    pub branches: Option<BranchRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSnapshot {
    pub loop_index: usize,
    pub psi: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rho_phys: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub x: Vec<f64>,
    /// Intermediate physical field at the end of the last loop.
    pub rho_phys: Vec<f64>,
    pub binary: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub snapshots: Vec<LoopSnapshot>,
    pub grey_index: f64,
    pub final_diagnostics: Diagnostics,
    /// `None` when the thresholded design carries no load.
    pub binary_diagnostics: Option<Diagnostics>,
}

/// Cost, gradient and constraint data at one design.
struct Point {
    eval: Evaluation,
    cost: f64,
    gradient: Vec<f64>,
    volume: f64,
    volume_gradient: Vec<f64>,
    branches: Option<BranchRecord>,
}

#[derive(Debug)]
pub struct Optimizer {
    pub problem: DesignProblem,
    settings: OptimizerSettings,
    stepper: Box<dyn ConstrainedStep>,
    schedule: Vec<f64>,
    phi: f64,
    x: Vec<f64>,
    ctx: CostContext,
    history: Vec<IterationRecord>,
    snapshots: Vec<LoopSnapshot>,
}

impl Optimizer {
    /// `phi` is the threshold of the standard formulation; `schedule` the ψ values.
    pub fn new(problem: DesignProblem, settings: OptimizerSettings, schedule: Vec<f64>, phi: f64, seed: u64) -> Result<Self> {
        settings.validate()?;
        if schedule.is_empty() {
            return Err(Error::Config("empty continuation schedule".into()));
        }
        let stepper = registry().create(&settings.method, &settings.mma)?;
        let phi = if settings.robust { settings.thresholds[1] } else { phi };
        let x = initialize(&problem.filter, &settings.init, settings.volume_fraction, phi, seed)?;
        let ctx = problem.capture_context(&x, 1.0, phi)?;
        Ok(Optimizer {
            problem,
            settings,
            stepper,
            schedule,
            phi,
            x,
            ctx,
            history: Vec::new(),
            snapshots: Vec::new(),
        })
    }

    pub fn design(&self) -> &[f64] {
        &self.x
    }

    /// Physical densities of the current design (for failure dumps).
    pub fn current_physical(&self, psi: f64) -> Vec<f64> {
        self.problem.filter.densities(&self.x, psi, self.phi).rho_phys
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn context(&self) -> &CostContext {
        &self.ctx
    }

    fn constrained_phi(&self) -> f64 {
        if self.settings.robust {
            self.settings.thresholds[0]
        } else {
            self.phi
        }
    }

    fn point(&self, x: &[f64], psi: f64) -> Result<Point> {
        let mut pt = self.point_raw(x, psi)?;
        if is_point_symmetric(x) {
            symmetrize(&mut pt.gradient);
            symmetrize(&mut pt.volume_gradient);
        }
        Ok(pt)
    }

    fn point_raw(&self, x: &[f64], psi: f64) -> Result<Point> {
        let pb = &self.problem;
        if !self.settings.robust {
            let eval = pb.evaluate(x, psi, self.phi, &self.ctx, true)?;
            let volume_gradient = pb.filter.volume_gradient(&eval.state.triple, psi, self.phi);
            return Ok(Point {
                cost: eval.cost,
                gradient: eval.gradient.clone().expect("gradient requested"),
                volume: eval.volume,
                volume_gradient,
                branches: None,
                eval,
            });
        }
        let [dil, mid, ero] = self.settings.thresholds;
        let mut evals = Vec::with_capacity(3);
        for phi in [ero, mid, dil] {
            evals.push(pb.evaluate(x, psi, phi, &self.ctx, true)?);
        }
        // Ties go to the eroded branch.
        let mut active = 0;
        for b in 1..3 {
            if evals[b].cost > evals[active].cost {
                active = b;
            }
        }
        let branches = BranchRecord {
            cost_eroded: evals[0].cost,
            cost_intermediate: evals[1].cost,
            cost_dilated: evals[2].cost,
            volume_eroded: evals[0].volume,
            volume_intermediate: evals[1].volume,
            volume_dilated: evals[2].volume,
            active,
        };
        let volume_gradient = pb.filter.volume_gradient(&evals[2].state.triple, psi, dil);
        let cost = evals[active].cost;
        let gradient = evals[active].gradient.clone().expect("gradient requested");
        let volume = evals[2].volume;
        let eval = evals.swap_remove(1);
        Ok(Point {
            eval,
            cost,
            gradient,
            volume,
            volume_gradient,
            branches: Some(branches),
        })
    }

    fn record(&mut self, loop_index: usize, iteration: usize, psi: f64, pt: &Point, target: f64, max_change: f64) -> Result<()> {
        let d = diagnostics(&pt.eval.state.system.a_eqb, self.settings.p)?;
        self.history.push(IterationRecord {
            loop_index,
            iteration,
            psi,
            cost: pt.cost,
            inv_det: d.inv_det,
            volume: pt.volume,
            volume_target: target,
            grey_index: grey_index(&pt.eval.state.triple.rho_phys),
            max_change,
            kappa_2: d.kappa_2,
            branches: pt.branches,
        });
        Ok(())
    }

    /// Runs every continuation loop.
    pub fn run(&mut self) -> Result<OptimizationResult> {
        self.run_with(|_| {})
    }

    /// As [`Optimizer::run`], calling `on_loop` after each continuation loop.
    pub fn run_with(&mut self, mut on_loop: impl FnMut(&LoopSnapshot)) -> Result<OptimizationResult> {
        self.history.clear();
        self.snapshots.clear();
        let v_m = self.settings.volume_fraction;
        let cphi = self.constrained_phi();
        let schedule = self.schedule.clone();
        let mut last: Option<Point> = None;
        for (l, &psi) in schedule.iter().enumerate() {
            let at = |it: usize| move |e: Error| Error::Run(format!("loop {l} (psi = {psi}), iteration {it}: {e}"));
            self.stepper.reset();
            let target = if self.settings.robust {
                let f = &self.problem.filter;
                let [dil, mid, _] = self.settings.thresholds;
                let t_dil = f.volume(&f.densities(&self.x, psi, dil).rho_phys);
                let t_mid = f.volume(&f.densities(&self.x, psi, mid).rho_phys);
                v_m * t_dil / t_mid
            } else {
                v_m
            };
            let mut pt = self.point(&self.x.clone(), psi).map_err(at(0))?;
            if l == 0 {
                self.record(0, 0, psi, &pt, target, 0.0).map_err(at(0))?;
            }
            let mut iterations = 0;
            let mut converged = false;
            for it in 1..=self.settings.max_iters {
                let x = self.x.clone();
                let filter = &self.problem.filter;
                let value = |y: &[f64]| filter.volume(&filter.densities(y, psi, cphi).rho_phys);
                let con = EqualityConstraint {
                    value: &value,
                    gradient: &pt.volume_gradient,
                    target,
                    tolerance: VOLUME_TOL,
                };
                let next = self.stepper.step(&x, &pt.gradient, &con).map_err(at(it))?;
                let change = next.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                self.x = next;
                pt = self.point(&self.x.clone(), psi).map_err(at(it))?;
                self.record(l, it, psi, &pt, target, change).map_err(at(it))?;
                iterations = it;
                if change < self.settings.tolerance {
                    converged = true;
                    break;
                }
            }
            let snap = LoopSnapshot {
                loop_index: l,
                psi,
                iterations,
                converged,
                rho_phys: pt.eval.state.triple.rho_phys.clone(),
            };
            on_loop(&snap);
            self.snapshots.push(snap);
            last = Some(pt);
        }
        let pt = last.expect("schedule is not empty");
        let rho_phys = pt.eval.state.triple.rho_phys.clone();
        let binary = hard_threshold(&rho_phys, &self.problem.filter.passive);
        let final_diagnostics = diagnostics(&pt.eval.state.system.a_eqb, self.settings.p)?;
        let binary_diagnostics = evaluate_physical(&self.problem, &binary)
            .ok()
            .and_then(|a| diagnostics(&a, self.settings.p).ok());
        Ok(OptimizationResult {
            x: self.x.clone(),
            grey_index: grey_index(&rho_phys),
            rho_phys,
            binary,
            history: self.history.clone(),
            snapshots: self.snapshots.clone(),
            final_diagnostics,
            binary_diagnostics,
        })
    }
}

// Design elements are the non-frame elements in ascending order and the
// 180° map sends element e to n_e − 1 − e, so design index k mirrors to n − 1 − k.
fn is_point_symmetric(x: &[f64]) -> bool {
    let n = x.len();
    (0..n / 2).all(|k| x[k] == x[n - 1 - k])
}

/// The loading, frame and any plane stiffness are invariant under the 180°
/// map, so at a symmetric design the exact derivatives are symmetric too;
/// averaging mirrored entries only removes round-off that would otherwise
/// grow into a spurious asymmetric design.
fn symmetrize(v: &mut [f64]) {
    let n = v.len();
    for k in 0..n / 2 {
        let a = 0.5 * (v[k] + v[n - 1 - k]);
        v[k] = a;
        v[n - 1 - k] = a;
    }
}

/// `A_eqb` of an explicit physical density field under the problem's loading.
pub fn evaluate_physical(problem: &DesignProblem, rho_phys: &[f64]) -> Result<nalgebra::Matrix6<f64>> {
    let (state, _) = analyze(
        &problem.mesh,
        &problem.model,
        &problem.boundary,
        rho_phys,
        problem.lambda_r,
        problem.lambda_q,
    )?;
    Ok(state.system.a_eqb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{cost_by_name, CostOptions};
    use crate::equilibrium::consistent_weights;
    use crate::fe::ElementModel;
    use crate::filter::{continuation_schedule, FilterSettings};
    use crate::material::isotropic_stiffness;
    use crate::mesh::{BoundarySetup, StructuredMesh};

    fn problem(nx: usize, ny: usize) -> DesignProblem {
        let mesh = StructuredMesh::new(nx, ny, 50.0, 100.0).unwrap();
        let boundary = BoundarySetup::uniaxial(&mesh, 0.5);
        let (lambda_r, lambda_q) = consistent_weights(&boundary).unwrap();
        let theta = isotropic_stiffness(200.0, 0.3).unwrap();
        DesignProblem {
            model: ElementModel::new(&mesh, &theta),
            filter: FilterContext::new(&mesh, &FilterSettings::default()).unwrap(),
            cost: cost_by_name("det", &CostOptions::default()).unwrap(),
            mesh,
            boundary,
            theta,
            lambda_r,
            lambda_q,
            p: 8.0,
        }
    }

    #[test]
    fn even_init_hits_volume() {
        let pb = problem(20, 40);
        let x = initialize(&pb.filter, &InitMode::Even, 0.8, 0.5, 0).unwrap();
        let v = pb.filter.volume(&pb.filter.densities(&x, 1.0, 0.5).rho_phys);
        assert!((v - 0.8).abs() < 1e-6, "{v}");
        assert!(x.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn noisy_init_is_reproducible_and_feasible() {
        let pb = problem(20, 40);
        let mode = InitMode::Noisy { sigma: 0.2 };
        let a = initialize(&pb.filter, &mode, 0.8, 0.5, 7).unwrap();
        let b = initialize(&pb.filter, &mode, 0.8, 0.5, 7).unwrap();
        let c = initialize(&pb.filter, &mode, 0.8, 0.5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        let v = pb.filter.volume(&pb.filter.densities(&a, 1.0, 0.5).rho_phys);
        assert!((v - 0.8).abs() < 1e-6);
    }

    #[test]
    fn unreachable_volume_is_a_config_error() {
        let pb = problem(20, 40);
        // The passive frame alone exceeds this fraction.
        let err = initialize(&pb.filter, &InitMode::Even, 0.05, 0.5, 0).unwrap_err();
        assert!(err.is_config(), "{err}");
    }

    #[test]
    fn settings_validation() {
        assert!(OptimizerSettings::default().validate().is_ok());
        for bad in [
            OptimizerSettings {
                volume_fraction: 1.0,
                ..Default::default()
            },
            OptimizerSettings {
                thresholds: [0.2, 0.5, 0.75],
                ..Default::default()
            },
            OptimizerSettings {
                cost: "volume".into(),
                ..Default::default()
            },
            OptimizerSettings {
                p: 1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().unwrap_err().is_config());
        }
    }

    fn short_run(robust: bool) -> OptimizationResult {
        let settings = OptimizerSettings {
            robust,
            max_iters: 6,
            ..Default::default()
        };
        let schedule = continuation_schedule(4.0).unwrap();
        let mut opt = Optimizer::new(problem(12, 24), settings, schedule, 0.5, 0).unwrap();
        opt.run().unwrap()
    }

    #[test]
    fn short_run_keeps_constraints_and_normalisation() {
        let res = short_run(false);
        assert_eq!(res.history[0].iteration, 0);
        assert!((res.history[0].cost - 1.0).abs() < 1e-12);
        for r in &res.history {
            assert!((r.volume - 0.8).abs() <= 1e-6, "{r:?}");
        }
        assert!(res.x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(res.snapshots.len(), 3);
        let last = res.history.last().unwrap();
        assert!(last.cost < 1.0, "cost did not decrease: {}", last.cost);
    }

    #[test]
    fn robust_run_orders_branch_volumes() {
        let res = short_run(true);
        for r in &res.history {
            let b = r.branches.expect("robust record");
            assert!(b.volume_eroded <= b.volume_intermediate && b.volume_intermediate <= b.volume_dilated);
            assert!((r.volume - r.volume_target).abs() <= 1e-6);
            assert!((b.volume_dilated - r.volume).abs() == 0.0);
        }
        let first = res.history[0].branches.unwrap();
        let costs = [first.cost_eroded, first.cost_intermediate, first.cost_dilated];
        let (lo, hi) = costs.iter().fold((f64::MAX, 0.0f64), |(l, h), &c| (l.min(c), h.max(c)));
        assert!(hi / lo < 1.05, "psi = 1 branch costs differ: {costs:?}");
    }

    #[test]
    fn runs_are_deterministic() {
        let a = short_run(false);
        let b = short_run(false);
        assert_eq!(a.history, b.history);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn even_start_keeps_point_symmetry() {
        let res = short_run(false);
        let pb = problem(12, 24);
        assert!(is_point_symmetric(&res.x));
        for snap in &res.snapshots {
            for e in 0..pb.mesh.n_elements() {
                let m = pb.mesh.point_mirror(e);
                assert!((snap.rho_phys[e] - snap.rho_phys[m]).abs() < 1e-6, "loop {}", snap.loop_index);
            }
        }
    }

    #[test]
    fn design_mirror_matches_mesh_mirror() {
        let pb = problem(12, 24);
        let d = pb.filter.design_elements();
        let n = d.len();
        for k in 0..n {
            assert_eq!(pb.mesh.point_mirror(d[k]), d[n - 1 - k]);
        }
    }

    #[test]
    fn symmetrize_only_touches_mirrored_pairs() {
        let mut v = vec![1.0, 2.0, 5.0, 4.0, 3.0];
        symmetrize(&mut v);
        assert_eq!(v, vec![2.0, 3.0, 5.0, 3.0, 2.0]);
        assert!(is_point_symmetric(&v));
        assert!(!is_point_symmetric(&[1.0, 2.0, 1.5]));
    }
}
