//! Explicit cone-kernel density filter.

use crate::mesh::StructuredMesh;

use super::DensityFilter;

/// `ρ̄_e = Σ_i H_ei ρ_i / Σ_i H_ei`, `H_ei = max(0, r − Δ(e, i))` with `Δ`
/// the centre distance in element units.
#[derive(Debug, Clone)]
pub struct ConvolutionFilter {
    /// Per element: (neighbour, weight) pairs and the row sum.
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl ConvolutionFilter {
    pub fn new(mesh: &StructuredMesh, r_elem: f64) -> Self {
        let reach = r_elem.ceil() as isize;
        let rows = (0..mesh.n_elements())
            .map(|e| {
                let (ix, iy) = mesh.element_ij(e);
                let mut row = Vec::new();
                let mut sum = 0.0;
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        let jx = ix as isize + dx;
                        let jy = iy as isize + dy;
                        if jx < 0 || jy < 0 || jx >= mesh.nx as isize || jy >= mesh.ny as isize {
                            continue;
                        }
                        let w = r_elem - ((dx * dx + dy * dy) as f64).sqrt();
                        if w > 0.0 {
                            row.push((mesh.element(jx as usize, jy as usize), w));
                            sum += w;
                        }
                    }
                }
                (row, sum)
            })
            .collect();
        ConvolutionFilter { rows }
    }
}

impl DensityFilter for ConvolutionFilter {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn apply(&self, rho: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(row, sum)| row.iter().map(|&(j, w)| w * rho[j]).sum::<f64>() / sum)
            .collect()
    }

    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        for (e, (row, sum)) in self.rows.iter().enumerate() {
            let ge = g[e] / sum;
            for &(j, w) in row {
                out[j] += w * ge;
            }
        }
        out
    }
}
