//! Forward evaluation of a design and its adjoint gradient through
//! interpolation, filtering and projection.

use nalgebra::{DMatrix, Matrix6, SVector, Vector3};

use crate::cost::{CostContext, CostFunction, CostInput};
use crate::equilibrium::{assemble_a_glob_from_strains, build_weighted_system, element_a, WeightedSystem};
use crate::error::Result;
use crate::fe::{
    assemble_stiffness, gather, gauss_strains, interpolate, interpolate_derivative, solve_equilibrium,
    ElementModel, Equilibrium,
};
use crate::filter::{DensityTriple, FilterContext};
use crate::material::StiffnessVector;
use crate::mesh::{BoundarySetup, StructuredMesh};

/// Everything needed to turn design variables into a cost.
#[derive(Debug)]
pub struct DesignProblem {
    pub mesh: StructuredMesh,
    pub boundary: BoundarySetup,
    pub theta: StiffnessVector,
    pub model: ElementModel,
    pub filter: FilterContext,
    pub cost: Box<dyn CostFunction>,
    pub lambda_r: f64,
    pub lambda_q: f64,
    pub p: f64,
}

/// Equilibrium and identification system of a physical density field.
#[derive(Debug)]
pub struct PhysicalState {
    pub u: Vec<f64>,
    pub reactions: Vec<f64>,
    pub strains: Vec<[Vector3<f64>; 4]>,
    pub a_glob: DMatrix<f64>,
    pub system: WeightedSystem,
}

pub fn analyze(
    mesh: &StructuredMesh,
    model: &ElementModel,
    boundary: &BoundarySetup,
    rho_phys: &[f64],
    lambda_r: f64,
    lambda_q: f64,
) -> Result<(PhysicalState, Equilibrium)> {
    let k = assemble_stiffness(mesh, model, rho_phys)?;
    let eq = solve_equilibrium(&k, boundary)?;
    let strains = gauss_strains(mesh, &model.kin, &eq.u);
    let a_glob = assemble_a_glob_from_strains(mesh, &model.kin, rho_phys, &strains);
    let reactions = eq.subset_reactions(boundary);
    let system = build_weighted_system(&a_glob, boundary, &reactions, lambda_r, lambda_q)?;
    let state = PhysicalState {
        u: eq.u.clone(),
        reactions,
        strains,
        a_glob,
        system,
    };
    Ok((state, eq))
}

/// Physical state of one design.
#[derive(Debug)]
pub struct ForwardState {
    pub triple: DensityTriple,
    pub u: Vec<f64>,
    pub reactions: Vec<f64>,
    pub strains: Vec<[Vector3<f64>; 4]>,
    pub a_glob: DMatrix<f64>,
    pub system: WeightedSystem,
}

#[derive(Debug)]
pub struct Evaluation {
    pub state: ForwardState,
    pub cost: f64,
    pub volume: f64,
    /// `dcost/dx` over design variables.
    pub gradient: Option<Vec<f64>>,
    /// `dcost/dρ_phys` over all elements, before the filter chain.
    pub gradient_phys: Option<Vec<f64>>,
    /// Linear solves with the stiffness factor (forward + adjoint).
    pub solves: usize,
}

impl DesignProblem {
    pub fn n_design(&self) -> usize {
        self.filter.n_design()
    }

    fn forward(&self, x: &[f64], psi: f64, phi: f64) -> Result<(ForwardState, Equilibrium)> {
        let triple = self.filter.densities(x, psi, phi);
        let (phys, eq) = analyze(
            &self.mesh,
            &self.model,
            &self.boundary,
            &triple.rho_phys,
            self.lambda_r,
            self.lambda_q,
        )?;
        let state = ForwardState {
            triple,
            u: phys.u,
            reactions: phys.reactions,
            strains: phys.strains,
            a_glob: phys.a_glob,
            system: phys.system,
        };
        Ok((state, eq))
    }

    /// Reference values for cost normalisation, taken at design `x`.
    pub fn capture_context(&self, x: &[f64], psi: f64, phi: f64) -> Result<CostContext> {
        let (state, _) = self.forward(x, psi, phi)?;
        CostContext::capture(
            &CostInput {
                a_eqb: &state.system.a_eqb,
                strains: &state.strains,
            },
            self.p,
            self.cost.uses_strains(),
        )
    }

    pub fn evaluate(&self, x: &[f64], psi: f64, phi: f64, ctx: &CostContext, with_gradient: bool) -> Result<Evaluation> {
        let (state, eq) = self.forward(x, psi, phi)?;
        let ce = self.cost.evaluate(
            &CostInput {
                a_eqb: &state.system.a_eqb,
                strains: &state.strains,
            },
            ctx,
        )?;
        let volume = self.filter.volume(&state.triple.rho_phys);
        let (gradient, gradient_phys) = if with_gradient {
            let g_phys = self.physical_gradient(&state, &eq, &ce.grad_a_eqb, ce.grad_strains.as_deref());
            let g = self.filter.chain(&g_phys, &state.triple, psi, phi);
            (Some(g), Some(g_phys))
        } else {
            (None, None)
        };
        let solves = eq.solve_count();
        Ok(Evaluation {
            state,
            cost: ce.value,
            volume,
            gradient,
            gradient_phys,
            solves,
        })
    }

    /// `dcost/dρ_phys`: explicit dependence through `ρ̃ A_e` plus one adjoint
    /// solve for the dependence through the displacement field.
    fn physical_gradient(
        &self,
        state: &ForwardState,
        eq: &Equilibrium,
        g_aeqb: &Matrix6<f64>,
        g_strain: Option<&[[Vector3<f64>; 4]]>,
    ) -> Vec<f64> {
        let mesh = &self.mesh;
        let kin = &self.model.kin;
        let rho = &state.triple.rho_phys;
        let w = state.system.a_glob_gradient(g_aeqb, &state.a_glob, &self.boundary);
        let n_e = mesh.n_elements();
        let mut partial = vec![0.0; n_e];
        let mut dcdu = vec![0.0; mesh.n_dofs()];
        for e in 0..n_e {
            let dofs = mesh.element_dofs(e);
            let we = nalgebra::SMatrix::<f64, 8, 6>::from_fn(|i, j| w[(dofs[i], j)]);
            let ae = element_a(&state.strains[e], kin);
            partial[e] = interpolate_derivative(rho[e]) * we.component_mul(&ae).sum();
            // ∂/∂U_e of Σ W_e ⊙ (ρ̃ A_e(U_e))
            let s = interpolate(rho[e]);
            let mut ge = SVector::<f64, 8>::zeros();
            for (gp, b) in kin.b.iter().enumerate() {
                let m = b * we;
                let mut d_eps = Vector3::new(
                    m[(0, 0)] + m[(1, 1)] + m[(2, 2)],
                    m[(0, 1)] + m[(1, 3)] + m[(2, 4)],
                    m[(0, 2)] + m[(1, 4)] + m[(2, 5)],
                ) * (s * kin.det_j);
                if let Some(gs) = g_strain {
                    d_eps += gs[e][gp];
                }
                ge += b.transpose() * d_eps;
            }
            for (i, &d) in dofs.iter().enumerate() {
                dcdu[d] += ge[i];
            }
        }
        let gamma = eq.solve_free(&dcdu);
        for e in 0..n_e {
            let dofs = mesh.element_dofs(e);
            let ue = gather(&eq.u, &dofs);
            let ge = gather(&gamma, &dofs);
            let adj = (ge.transpose() * self.model.ke * ue)[(0, 0)];
            partial[e] -= interpolate_derivative(rho[e]) * adj;
        }
        partial
    }
}

/// One row of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckRow {
    /// Index into the design vector.
    pub variable: usize,
    /// Mesh element of that variable.
    pub element: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

/// Central differences with step `h·max(1, |x_i|)` on the listed design variables.
pub fn finite_difference_check(
    problem: &DesignProblem,
    x: &[f64],
    psi: f64,
    phi: f64,
    ctx: &CostContext,
    variables: &[usize],
    h: f64,
) -> Result<Vec<GradCheckRow>> {
    let ev = problem.evaluate(x, psi, phi, ctx, true)?;
    let g = ev.gradient.expect("gradient requested");
    let mut rows = Vec::with_capacity(variables.len());
    for &i in variables {
        let step = h * x[i].abs().max(1.0);
        let mut xp = x.to_vec();
        xp[i] += step;
        let mut xm = x.to_vec();
        xm[i] -= step;
        let fp = problem.evaluate(&xp, psi, phi, ctx, false)?.cost;
        let fm = problem.evaluate(&xm, psi, phi, ctx, false)?.cost;
        let fd = (fp - fm) / (2.0 * step);
        let scale = g[i].abs().max(fd.abs());
        let rel_err = if scale == 0.0 { 0.0 } else { (g[i] - fd).abs() / scale };
        rows.push(GradCheckRow {
            variable: i,
            element: problem.filter.design_elements()[i],
            analytic: g[i],
            fd,
            rel_err,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{cost_by_name, CostOptions};
    use crate::equilibrium::consistent_weights;
    use crate::filter::FilterSettings;
    use crate::material::{isotropic_stiffness, params_from_descriptors, orthotropic_stiffness};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(nx: usize, ny: usize, theta: StiffnessVector, cost: &str, frame: usize) -> DesignProblem {
        let mesh = StructuredMesh::new(nx, ny, 50.0, 100.0).unwrap();
        let boundary = BoundarySetup::uniaxial(&mesh, 0.5);
        let (lambda_r, lambda_q) = consistent_weights(&boundary).unwrap();
        let settings = FilterSettings {
            frame_layers: Some(frame),
            ..FilterSettings::default()
        };
        DesignProblem {
            model: ElementModel::new(&mesh, &theta),
            filter: FilterContext::new(&mesh, &settings).unwrap(),
            cost: cost_by_name(cost, &CostOptions::default()).unwrap(),
            mesh,
            boundary,
            theta,
            lambda_r,
            lambda_q,
            p: 8.0,
        }
    }

    fn random_design(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.2..1.0)).collect()
    }

    fn ortho() -> StiffnessVector {
        orthotropic_stiffness(&params_from_descriptors(4.0, 0.5, 30.0, 0.3, 200.0).unwrap()).unwrap()
    }

    #[test]
    fn one_adjoint_solve_per_gradient() {
        let pb = problem(8, 16, isotropic_stiffness(200.0, 0.3).unwrap(), "det", 1);
        let x = random_design(pb.n_design(), 1);
        let ctx = pb.capture_context(&x, 1.0, 0.5).unwrap();
        let ev = pb.evaluate(&x, 1.0, 0.5, &ctx, true).unwrap();
        assert!((ev.cost - 1.0).abs() < 1e-12);
        assert_eq!(ev.solves, 2);
        let ev = pb.evaluate(&x, 1.0, 0.5, &ctx, false).unwrap();
        assert_eq!(ev.solves, 1);
    }

    #[test]
    fn det_gradient_matches_finite_differences() {
        // Step 1e-4 keeps the difference well above the log-det round-off.
        for (th, seed) in [(ortho(), 2), (isotropic_stiffness(200.0, 0.3).unwrap(), 5)] {
            let pb = problem(8, 16, th, "det", 1);
            let ctx = pb.capture_context(&random_design(pb.n_design(), seed + 1), 1.0, 0.5).unwrap();
            let x = random_design(pb.n_design(), seed);
            let vars: Vec<usize> = (0..pb.n_design()).collect();
            for psi in [1.0, 8.0] {
                let rows = finite_difference_check(&pb, &x, psi, 0.5, &ctx, &vars, 1e-4).unwrap();
                let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
                assert!(worst < 1e-5, "psi {psi}: worst relative error {worst}");
            }
        }
    }

    #[test]
    fn other_costs_match_finite_differences() {
        for cost in ["kappa_p", "kappa_f", "min_dist"] {
            let pb = problem(6, 12, ortho(), cost, 1);
            let x0 = random_design(pb.n_design(), 7);
            let ctx = pb.capture_context(&x0, 1.0, 0.5).unwrap();
            let x = random_design(pb.n_design(), 8);
            let vars: Vec<usize> = (0..pb.n_design()).step_by(3).collect();
            let rows = finite_difference_check(&pb, &x, 1.0, 0.5, &ctx, &vars, 1e-6).unwrap();
            let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
            assert!(worst < 1e-4, "{cost}: worst relative error {worst}");
        }
    }

    #[test]
    fn symmetric_design_gives_symmetric_gradient() {
        let pb = problem(8, 16, isotropic_stiffness(200.0, 0.3).unwrap(), "det", 1);
        let n = pb.mesh.n_elements();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut full = vec![0.0; n];
        for e in 0..n {
            let m = pb.mesh.point_mirror(e);
            if m >= e {
                let v = rng.random_range(0.3..1.0);
                full[e] = v;
                full[m] = v;
            }
        }
        let x = pb.filter.restrict(&full);
        let ctx = pb.capture_context(&x, 1.0, 0.5).unwrap();
        let g = pb.evaluate(&x, 4.0, 0.5, &ctx, true).unwrap().gradient.unwrap();
        let gfull = pb.filter.expand(&g);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for e in pb.filter.design_elements() {
            let m = pb.mesh.point_mirror(*e);
            assert!((gfull[*e] - gfull[m]).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn saturated_projection_kills_gradient() {
        let pb = problem(8, 16, isotropic_stiffness(200.0, 0.3).unwrap(), "det", 1);
        let x = vec![1.0; pb.n_design()];
        let ctx = pb.capture_context(&x, 1.0, 0.5).unwrap();
        let g = pb.evaluate(&x, 512.0, 0.5, &ctx, true).unwrap().gradient.unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-100));
    }

    #[test]
    fn void_elements_have_no_explicit_partial() {
        let pb = problem(6, 12, isotropic_stiffness(200.0, 0.3).unwrap(), "det", 1);
        assert_eq!(interpolate_derivative(0.0), 0.0);
        // a void physical density contributes nothing
        let x = vec![1.0; pb.n_design()];
        let ctx = pb.capture_context(&x, 1.0, 0.5).unwrap();
        let ev = pb.evaluate(&x, 1.0, 0.5, &ctx, true).unwrap();
        assert_eq!(ev.gradient.unwrap().len(), pb.n_design());
    }
}
