//! Structured square-element meshes and displacement-controlled boundary setups.
//!
//! Nodes are numbered row-major from the bottom-left corner
//! (`node = iy * (nx + 1) + ix`); DOFs are interleaved, `2 * node` for the
//! x-displacement and `2 * node + 1` for y. Elements follow the same row-major
//! ordering and list their nodes counterclockwise starting bottom-left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Element edge length (mm).
    pub le: f64,
}

impl StructuredMesh {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("mesh needs at least one element per direction (got {nx}x{ny})")));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Config(format!("domain size must be positive (got {lx}x{ly})")));
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        if (hx - hy).abs() > 1e-12 * hx.max(hy) {
            return Err(Error::Config(format!(
                "elements must be square: Lx/nx = {hx} but Ly/ny = {hy}"
            )));
        }
        Ok(StructuredMesh {
            nx,
            ny,
            lx,
            ly,
            le: hx,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let ix = node % (self.nx + 1);
        let iy = node / (self.nx + 1);
        (ix as f64 * self.le, iy as f64 * self.le)
    }

    pub fn element(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    pub fn element_centre(&self, e: usize) -> (f64, f64) {
        let (ix, iy) = self.element_ij(e);
        ((ix as f64 + 0.5) * self.le, (iy as f64 + 0.5) * self.le)
    }

    /// Counterclockwise node list: (ix,iy), (ix+1,iy), (ix+1,iy+1), (ix,iy+1).
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ix, iy) = self.element_ij(e);
        [
            self.node(ix, iy),
            self.node(ix + 1, iy),
            self.node(ix + 1, iy + 1),
            self.node(ix, iy + 1),
        ]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    /// Half-bandwidth of the assembled vector-valued stiffness.
    pub fn dof_bandwidth(&self) -> usize {
        2 * (self.nx + 2) + 1
    }

    /// Half-bandwidth of a scalar (one DOF per node) operator.
    pub fn node_bandwidth(&self) -> usize {
        self.nx + 2
    }

    /// Element index under the 180° point map about the domain centre.
    pub fn point_mirror(&self, e: usize) -> usize {
        let (ix, iy) = self.element_ij(e);
        self.element(self.nx - 1 - ix, self.ny - 1 - iy)
    }

    /// Elements within `layers` of any outer edge.
    pub fn frame_mask(&self, layers: usize) -> Vec<bool> {
        (0..self.n_elements())
            .map(|e| {
                let (ix, iy) = self.element_ij(e);
                ix < layers || iy < layers || ix + layers >= self.nx || iy + layers >= self.ny
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadCase {
    Uniaxial,
    Biaxial,
}

impl std::fmt::Display for LoadCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadCase::Uniaxial => write!(f, "uniaxial"),
            LoadCase::Biaxial => write!(f, "biaxial"),
        }
    }
}

impl std::str::FromStr for LoadCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniaxial" => Ok(LoadCase::Uniaxial),
            "biaxial" => Ok(LoadCase::Biaxial),
            other => Err(Error::Config(format!("unknown load case '{other}'"))),
        }
    }
}

/// A set of fixed DOFs along one direction whose summed reaction is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredSubset {
    pub name: String,
    pub dofs: Vec<usize>,
    /// Expected sign of the summed reaction (+1 / -1).
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySetup {
    pub load: LoadCase,
    pub u_bar: f64,
    /// Sorted fixed DOFs with their prescribed values (mm).
    pub dirichlet: Vec<(usize, f64)>,
    pub subsets: Vec<MeasuredSubset>,
    n_dofs: usize,
    fixed_mask: Vec<bool>,
}

impl BoundarySetup {
    /// Builds a setup from a per-DOF map of prescribed values.
    pub fn from_prescribed(
        load: LoadCase,
        u_bar: f64,
        prescribed: &[Option<f64>],
        subsets: Vec<MeasuredSubset>,
    ) -> Self {
        let dirichlet: Vec<(usize, f64)> = prescribed
            .iter()
            .enumerate()
            .filter_map(|(d, v)| v.map(|v| (d, v)))
            .collect();
        let fixed_mask = prescribed.iter().map(Option::is_some).collect();
        BoundarySetup {
            load,
            u_bar,
            dirichlet,
            subsets,
            n_dofs: prescribed.len(),
            fixed_mask,
        }
    }

    /// Tensile test: both grips clamped in x, bottom held in y, top pulled by `u_bar`.
    pub fn uniaxial(mesh: &StructuredMesh, u_bar: f64) -> Self {
        let mut prescribed = vec![None; mesh.n_dofs()];
        let mut top = Vec::new();
        let mut bottom = Vec::new();
        for ix in 0..=mesh.nx {
            let b = mesh.node(ix, 0);
            let t = mesh.node(ix, mesh.ny);
            prescribed[2 * b] = Some(0.0);
            prescribed[2 * b + 1] = Some(0.0);
            prescribed[2 * t] = Some(0.0);
            prescribed[2 * t + 1] = Some(u_bar);
            top.push(2 * t + 1);
            bottom.push(2 * b + 1);
        }
        let subsets = vec![
            MeasuredSubset {
                name: "top_uy".into(),
                dofs: top,
                sign: 1.0,
            },
            MeasuredSubset {
                name: "bottom_uy".into(),
                dofs: bottom,
                sign: -1.0,
            },
        ];
        Self::from_prescribed(LoadCase::Uniaxial, u_bar, &prescribed, subsets)
    }

    /// Uniaxial grips plus a horizontal extension `u_bar * Lx / Ly` of the
    /// right edge against a held left edge (side nodes between the grips).
    pub fn biaxial(mesh: &StructuredMesh, u_bar: f64) -> Self {
        let base = Self::uniaxial(mesh, u_bar);
        let mut prescribed: Vec<Option<f64>> = vec![None; mesh.n_dofs()];
        for &(d, v) in &base.dirichlet {
            prescribed[d] = Some(v);
        }
        let side = u_bar * mesh.lx / mesh.ly;
        let mut right = Vec::new();
        for iy in 1..mesh.ny {
            let l = mesh.node(0, iy);
            let r = mesh.node(mesh.nx, iy);
            prescribed[2 * l] = Some(0.0);
            prescribed[2 * r] = Some(side);
            right.push(2 * r);
        }
        let mut subsets = base.subsets;
        subsets.push(MeasuredSubset {
            name: "right_ux".into(),
            dofs: right,
            sign: 1.0,
        });
        Self::from_prescribed(LoadCase::Biaxial, u_bar, &prescribed, subsets)
    }

    pub fn new(mesh: &StructuredMesh, load: LoadCase, u_bar: f64) -> Self {
        match load {
            LoadCase::Uniaxial => Self::uniaxial(mesh, u_bar),
            LoadCase::Biaxial => Self::biaxial(mesh, u_bar),
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed_mask[dof]
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed_mask
    }

    pub fn n_free(&self) -> usize {
        self.n_dofs - self.dirichlet.len()
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.n_dofs).filter(|&d| !self.fixed_mask[d]).collect()
    }

    pub fn n_measured(&self) -> usize {
        self.subsets.iter().map(|s| s.dofs.len()).sum()
    }

    /// Checks the subset contract: disjoint, single direction, all fixed.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_dofs];
        for s in &self.subsets {
            let Some(&first) = s.dofs.first() else {
                return Err(Error::Config(format!("measured subset '{}' is empty", s.name)));
            };
            for &d in &s.dofs {
                if d % 2 != first % 2 {
                    return Err(Error::Config(format!(
                        "measured subset '{}' mixes displacement directions",
                        s.name
                    )));
                }
                if !self.fixed_mask[d] {
                    return Err(Error::Config(format!(
                        "measured subset '{}' contains free DOF {d}",
                        s.name
                    )));
                }
                if seen[d] {
                    return Err(Error::Config(format!("DOF {d} appears in two measured subsets")));
                }
                seen[d] = true;
            }
        }
        Ok(())
    }
}

/// Scales the applied displacement with the specimen length: `ū = strain · Ly`.
pub fn nominal_displacement(mesh: &StructuredMesh, strain: f64) -> f64 {
    strain * mesh.ly
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting() {
        let m = StructuredMesh::new(2, 2, 2.0, 2.0).unwrap();
        assert_eq!((m.n_elements(), m.n_nodes(), m.n_dofs()), (4, 9, 18));
        let m = StructuredMesh::new(60, 120, 50.0, 100.0).unwrap();
        assert_eq!(m.n_dofs(), 14_762);
        let m = StructuredMesh::new(281, 562, 50.0, 100.0).unwrap();
        assert_eq!(m.n_elements(), 157_922);
    }

    #[test]
    fn rejects_rectangular_elements() {
        assert!(matches!(StructuredMesh::new(10, 10, 50.0, 100.0), Err(Error::Config(_))));
    }

    #[test]
    fn connectivity_and_bandwidth() {
        let m = StructuredMesh::new(3, 2, 3.0, 2.0).unwrap();
        assert_eq!(m.element_nodes(0), [0, 1, 5, 4]);
        assert_eq!(m.element_nodes(5), [6, 7, 11, 10]);
        for e in 0..m.n_elements() {
            let d = m.element_dofs(e);
            let span = d.iter().max().unwrap() - d.iter().min().unwrap();
            assert!(span <= m.dof_bandwidth());
        }
    }

    #[test]
    fn uniaxial_boundary() {
        let m = StructuredMesh::new(60, 120, 50.0, 100.0).unwrap();
        let ub = nominal_displacement(&m, 0.005);
        assert!((ub - 0.5).abs() < 1e-15);
        let b = BoundarySetup::uniaxial(&m, ub);
        assert_eq!(b.subsets.len(), 2);
        assert_eq!(b.n_measured(), 122);
        assert_eq!(b.n_free(), 14_762 - 4 * 61);
        b.validate().unwrap();
        let top = m.node(7, 120);
        assert!(b.dirichlet.contains(&(2 * top + 1, 0.5)));
        assert!(b.dirichlet.contains(&(2 * top, 0.0)));
    }

    #[test]
    fn biaxial_boundary() {
        let m = StructuredMesh::new(8, 16, 50.0, 100.0).unwrap();
        let b = BoundarySetup::biaxial(&m, 0.5);
        assert_eq!(b.subsets.len(), 3);
        b.validate().unwrap();
        let r = m.node(8, 5);
        let (_, v) = b.dirichlet.iter().find(|(d, _)| *d == 2 * r).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn subset_validation_catches_mixing() {
        let m = StructuredMesh::new(4, 8, 4.0, 8.0).unwrap();
        let mut b = BoundarySetup::uniaxial(&m, 0.1);
        b.subsets[0].dofs.push(0);
        assert!(b.validate().is_err());
    }

    #[test]
    fn frame_and_mirror() {
        let m = StructuredMesh::new(6, 12, 6.0, 12.0).unwrap();
        let f = m.frame_mask(1);
        assert_eq!(f.iter().filter(|&&x| !x).count(), 4 * 10);
        for e in 0..m.n_elements() {
            assert_eq!(m.point_mirror(m.point_mirror(e)), e);
            assert_eq!(f[e], f[m.point_mirror(e)]);
        }
    }
}
