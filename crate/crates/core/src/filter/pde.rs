//! Implicit density filter: bilinear scalar elements for `−R²∇²ρ̄ + ρ̄ = ρ`
//! with natural (zero-flux) boundaries, factorised once.

use crate::error::Result;
use crate::fe::{BandCholesky, SymBandMatrix};
use crate::mesh::StructuredMesh;

use super::DensityFilter;

// Unit-square bilinear element, nodes counterclockwise from bottom-left.
const LAPLACE: [[f64; 4]; 4] = [
    [4.0, -1.0, -2.0, -1.0],
    [-1.0, 4.0, -1.0, -2.0],
    [-2.0, -1.0, 4.0, -1.0],
    [-1.0, -2.0, -1.0, 4.0],
];
const MASS: [[f64; 4]; 4] = [
    [4.0, 2.0, 1.0, 2.0],
    [2.0, 4.0, 2.0, 1.0],
    [1.0, 2.0, 4.0, 2.0],
    [2.0, 1.0, 2.0, 4.0],
];

#[derive(Debug)]
pub struct PdeFilter {
    mesh: StructuredMesh,
    factor: BandCholesky,
}

impl PdeFilter {
    /// `r_elem` is the length parameter in element units.
    pub fn new(mesh: &StructuredMesh, r_elem: f64) -> Result<Self> {
        let r2 = r_elem * r_elem;
        let mut k = SymBandMatrix::zeros(mesh.n_nodes(), mesh.node_bandwidth());
        for e in 0..mesh.n_elements() {
            let nodes = mesh.element_nodes(e);
            for a in 0..4 {
                for b in 0..=a {
                    k.add(nodes[a], nodes[b], r2 * LAPLACE[a][b] / 6.0 + MASS[a][b] / 36.0);
                }
            }
        }
        Ok(PdeFilter {
            mesh: mesh.clone(),
            factor: k.cholesky()?,
        })
    }

    /// Nodal load `T ρ` (each element spreads a quarter to each node).
    fn to_nodes(&self, rho: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.mesh.n_nodes()];
        for (e, &r) in rho.iter().enumerate() {
            for n in self.mesh.element_nodes(e) {
                t[n] += 0.25 * r;
            }
        }
        t
    }

    fn to_elements(&self, nodal: &[f64]) -> Vec<f64> {
        (0..self.mesh.n_elements())
            .map(|e| 0.25 * self.mesh.element_nodes(e).iter().map(|&n| nodal[n]).sum::<f64>())
            .collect()
    }

    pub fn solve_count(&self) -> usize {
        self.factor.solve_count()
    }
}

impl DensityFilter for PdeFilter {
    fn name(&self) -> &'static str {
        "pde"
    }

    fn apply(&self, rho: &[f64]) -> Vec<f64> {
        let mut t = self.to_nodes(rho);
        self.factor.solve_in_place(&mut t);
        self.to_elements(&t)
    }

    // Tᵀ K⁻¹ T is symmetric.
    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        self.apply(g)
    }
}
