//! Plane-stress finite elements on a structured square mesh.

mod banded;
mod element;

pub use banded::{BandCholesky, SymBandMatrix};
pub use element::{
    b_matrix, det_j, element_stiffness, element_stiffness_with, BMatrix, ElementKinematics,
    Matrix8, GAUSS_POINTS,
};

use nalgebra::{SVector, Vector3};

use crate::error::{Error, Result};
use crate::material::StiffnessVector;
use crate::mesh::{BoundarySetup, StructuredMesh};

/// Stiffness floor for void elements.
pub const RHO_MIN: f64 = 1e-9;

/// Cubic interpolation `ρ̃ = ρ_min + ρ³(1 − ρ_min)`.
pub fn interpolate(rho: f64) -> f64 {
    RHO_MIN + rho * rho * rho * (1.0 - RHO_MIN)
}

/// `dρ̃/dρ`.
pub fn interpolate_derivative(rho: f64) -> f64 {
    3.0 * rho * rho * (1.0 - RHO_MIN)
}

fn check_densities(rho: &[f64], n: usize) -> Result<()> {
    if rho.len() != n {
        return Err(Error::Run(format!("density vector has {} entries, mesh has {n} elements", rho.len())));
    }
    if let Some((e, v)) = rho.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Run(format!("density {v} of element {e} outside [0, 1]")));
    }
    Ok(())
}

/// Unit-density element data shared by every element of a mesh.
#[derive(Debug, Clone)]
pub struct ElementModel {
    pub kin: ElementKinematics,
    pub ke: Matrix8,
}

impl ElementModel {
    pub fn new(mesh: &StructuredMesh, theta: &StiffnessVector) -> Self {
        let kin = ElementKinematics::new(mesh.le);
        let ke = element_stiffness_with(&theta.matrix(), &kin);
        ElementModel { kin, ke }
    }
}

pub fn gather(u: &[f64], dofs: &[usize; 8]) -> SVector<f64, 8> {
    SVector::<f64, 8>::from_fn(|i, _| u[dofs[i]])
}

pub fn assemble_stiffness(
    mesh: &StructuredMesh,
    model: &ElementModel,
    rho_phys: &[f64],
) -> Result<SymBandMatrix> {
    check_densities(rho_phys, mesh.n_elements())?;
    let mut k = SymBandMatrix::zeros(mesh.n_dofs(), mesh.dof_bandwidth());
    for (e, &rho) in rho_phys.iter().enumerate() {
        let s = interpolate(rho);
        let dofs = mesh.element_dofs(e);
        for a in 0..8 {
            for b in 0..=a {
                // lower triangle of the element block in global order
                let (i, j) = (dofs[a], dofs[b]);
                k.add(i, j, s * model.ke[(a, b)]);
            }
        }
    }
    Ok(k)
}

/// Forward solution together with the factor of the free-DOF block,
/// kept for adjoint solves.
#[derive(Debug)]
pub struct Equilibrium {
    pub u: Vec<f64>,
    /// `K U` on every DOF; zero (to round-off) on free DOFs.
    pub reactions: Vec<f64>,
    free: Vec<usize>,
    factor: BandCholesky,
}

impl Equilibrium {
    /// Solves `K_ff x = rhs` with the stored factor; `rhs` is indexed by global DOF
    /// and the result is zero on fixed DOFs.
    pub fn solve_free(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.free.iter().map(|&d| rhs[d]).collect();
        self.factor.solve_in_place(&mut x);
        let mut out = vec![0.0; rhs.len()];
        for (&d, v) in self.free.iter().zip(x) {
            out[d] = v;
        }
        out
    }

    pub fn solve_count(&self) -> usize {
        self.factor.solve_count()
    }

    /// Summed reaction of each measured subset.
    pub fn subset_reactions(&self, boundary: &BoundarySetup) -> Vec<f64> {
        boundary
            .subsets
            .iter()
            .map(|s| s.dofs.iter().map(|&d| self.reactions[d]).sum())
            .collect()
    }
}

pub fn solve_equilibrium(k: &SymBandMatrix, boundary: &BoundarySetup) -> Result<Equilibrium> {
    let n = k.size();
    if n != boundary.n_dofs() {
        return Err(Error::Run(format!(
            "stiffness has {n} DOFs, boundary setup expects {}",
            boundary.n_dofs()
        )));
    }
    let free = boundary.free_dofs();
    let mut uc = vec![0.0; n];
    for &(d, v) in &boundary.dirichlet {
        uc[d] = v;
    }
    let kuc = k.matvec(&uc);
    let factor = k.restrict(&free).cholesky()?;
    let mut x: Vec<f64> = free.iter().map(|&d| -kuc[d]).collect();
    factor.solve_in_place(&mut x);
    let mut u = uc;
    for (&d, v) in free.iter().zip(x) {
        u[d] = v;
    }
    let reactions = k.matvec(&u);
    Ok(Equilibrium {
        u,
        reactions,
        free,
        factor,
    })
}

/// Voigt strains `[ε11, ε22, γ12]` at the four Gauss points of every element.
pub fn gauss_strains(mesh: &StructuredMesh, kin: &ElementKinematics, u: &[f64]) -> Vec<[Vector3<f64>; 4]> {
    (0..mesh.n_elements())
        .map(|e| {
            let ue = gather(u, &mesh.element_dofs(e));
            [kin.b[0] * ue, kin.b[1] * ue, kin.b[2] * ue, kin.b[3] * ue]
        })
        .collect()
}
