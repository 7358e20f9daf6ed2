//! Density regularisation: averaging filters, tanh projection with ψ
//! continuation, grey-level measure and hard thresholding.
//!
//! Design variables live on the non-frame elements only. The full design
//! field has the frame set to 1, is averaged, projected, and the frame is
//! overwritten with 1 again.

mod conv;
mod pde;

pub use conv::ConvolutionFilter;
pub use pde::PdeFilter;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;
use crate::registry::Registry;

/// A linear averaging map on element densities.
pub trait DensityFilter: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, rho: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, g: &[f64]) -> Vec<f64>;
}

pub struct FilterBuild {
    pub mesh: StructuredMesh,
    /// Cone radius in element units.
    pub r_min: f64,
}

pub fn registry() -> Registry<dyn DensityFilter, FilterBuild> {
    let mut r: Registry<dyn DensityFilter, FilterBuild> = Registry::new("filter");
    r.register("pde", |b| Ok(Box::new(PdeFilter::new(&b.mesh, pde_length(b.r_min))?)))
        .register("conv", |b| Ok(Box::new(ConvolutionFilter::new(&b.mesh, b.r_min))));
    r
}

pub fn filter_by_name(name: &str, mesh: &StructuredMesh, r_min: f64) -> Result<Box<dyn DensityFilter>> {
    registry().create(name, &FilterBuild { mesh: mesh.clone(), r_min })
}

pub const FILTER_NAMES: [&str; 2] = ["pde", "conv"];

/// Helmholtz length equivalent to a cone radius: `R = r / (2√3)`.
pub fn pde_length(r_min: f64) -> f64 {
    r_min / (2.0 * 3f64.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub kind: String,
    /// Filter neighbourhood area over domain area.
    pub sbar_fd: f64,
    pub phi: f64,
    pub psi_max: f64,
    /// Passive frame thickness in elements; derived from the filter length when absent.
    pub frame_layers: Option<usize>,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            kind: "pde".into(),
            sbar_fd: 0.15,
            phi: 0.5,
            psi_max: 512.0,
            frame_layers: None,
        }
    }
}

/// Radii derived from the neighbourhood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterGeometry {
    /// Cone radius (mm).
    pub r_min_abs: f64,
    /// Cone radius in element units.
    pub r_min: f64,
    /// Helmholtz length (mm).
    pub big_r_min: f64,
}

impl FilterGeometry {
    pub fn new(mesh: &StructuredMesh, sbar_fd: f64) -> Result<Self> {
        if !(sbar_fd > 0.0 && sbar_fd <= 1.0) {
            return Err(Error::Config(format!("sbar_fd must lie in (0, 1] (got {sbar_fd})")));
        }
        let r_min_abs = (sbar_fd * mesh.lx * mesh.ly / std::f64::consts::PI).sqrt();
        Ok(FilterGeometry {
            r_min_abs,
            r_min: r_min_abs / mesh.le,
            big_r_min: pde_length(r_min_abs),
        })
    }

    /// Default frame thickness: the Helmholtz length rounded up to whole elements.
    pub fn frame_layers(&self, mesh: &StructuredMesh) -> usize {
        (self.big_r_min / mesh.le - 1e-9).ceil().max(1.0) as usize
    }
}

pub fn project(rho_avg: f64, psi: f64, phi: f64) -> f64 {
    let a = (psi * phi).tanh();
    (a + (psi * (rho_avg - phi)).tanh()) / (a + (psi * (1.0 - phi)).tanh())
}

pub fn project_derivative(rho_avg: f64, psi: f64, phi: f64) -> f64 {
    let a = (psi * phi).tanh();
    let c = (psi * (rho_avg - phi)).cosh();
    psi / (c * c) / (a + (psi * (1.0 - phi)).tanh())
}

/// ψ = 1, 2, 4, …, ψ_max.
pub fn continuation_schedule(psi_max: f64) -> Result<Vec<f64>> {
    let k = psi_max.log2();
    if !(psi_max >= 1.0) || (k - k.round()).abs() > 1e-12 {
        return Err(Error::Config(format!("psi_max must be a power of two >= 1 (got {psi_max})")));
    }
    Ok((0..=k.round() as i32).map(|i| 2f64.powi(i)).collect())
}

/// `(4/n) Σ ρ(1 − ρ)`: 0 for a binary field, 1 for a uniform 0.5 field.
pub fn grey_index(rho_phys: &[f64]) -> f64 {
    4.0 * rho_phys.iter().map(|r| r * (1.0 - r)).sum::<f64>() / rho_phys.len() as f64
}

/// 1 where `ρ ≥ 0.5` or the element is passive, else 0.
pub fn hard_threshold(rho_phys: &[f64], passive: &[bool]) -> Vec<f64> {
    rho_phys
        .iter()
        .zip(passive)
        .map(|(&r, &p)| if p || r >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityTriple {
    /// Full-length design field (frame = 1).
    pub rho: Vec<f64>,
    pub rho_avg: Vec<f64>,
    pub rho_phys: Vec<f64>,
}

/// Filter plus passive frame: maps design variables to physical densities
/// and pulls gradients back.
#[derive(Debug)]
pub struct FilterContext {
    pub mesh: StructuredMesh,
    pub geometry: FilterGeometry,
    pub filter: Box<dyn DensityFilter>,
    pub passive: Vec<bool>,
    design: Vec<usize>,
}

impl FilterContext {
    pub fn new(mesh: &StructuredMesh, settings: &FilterSettings) -> Result<Self> {
        let geometry = FilterGeometry::new(mesh, settings.sbar_fd)?;
        if !(settings.phi > 0.0 && settings.phi < 1.0) {
            return Err(Error::Config(format!("phi must lie in (0, 1) (got {})", settings.phi)));
        }
        continuation_schedule(settings.psi_max)?;
        let layers = settings.frame_layers.unwrap_or_else(|| geometry.frame_layers(mesh));
        let filter = filter_by_name(&settings.kind, mesh, geometry.r_min)?;
        Self::with_filter(mesh, geometry, filter, layers)
    }

    pub fn with_filter(
        mesh: &StructuredMesh,
        geometry: FilterGeometry,
        filter: Box<dyn DensityFilter>,
        frame_layers: usize,
    ) -> Result<Self> {
        let passive = mesh.frame_mask(frame_layers);
        let design: Vec<usize> = (0..mesh.n_elements()).filter(|&e| !passive[e]).collect();
        if design.is_empty() {
            return Err(Error::Config(format!(
                "a {frame_layers}-layer passive frame leaves no design elements on a {}x{} mesh",
                mesh.nx, mesh.ny
            )));
        }
        Ok(FilterContext {
            mesh: mesh.clone(),
            geometry,
            filter,
            passive,
            design,
        })
    }

    pub fn n_design(&self) -> usize {
        self.design.len()
    }

    pub fn design_elements(&self) -> &[usize] {
        &self.design
    }

    pub fn passive_fraction(&self) -> f64 {
        1.0 - self.design.len() as f64 / self.mesh.n_elements() as f64
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut rho = vec![1.0; self.mesh.n_elements()];
        for (&e, &v) in self.design.iter().zip(x) {
            rho[e] = v;
        }
        rho
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.design.iter().map(|&e| full[e]).collect()
    }

    pub fn densities(&self, x: &[f64], psi: f64, phi: f64) -> DensityTriple {
        let rho = self.expand(x);
        let rho_avg: Vec<f64> = self.filter.apply(&rho).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let rho_phys = rho_avg
            .iter()
            .zip(&self.passive)
            .map(|(&a, &p)| if p { 1.0 } else { project(a, psi, phi) })
            .collect();
        DensityTriple { rho, rho_avg, rho_phys }
    }

    /// Pulls `∂f/∂ρ_phys` back to the design variables.
    pub fn chain(&self, g_phys: &[f64], triple: &DensityTriple, psi: f64, phi: f64) -> Vec<f64> {
        let g_avg: Vec<f64> = g_phys
            .iter()
            .zip(&triple.rho_avg)
            .zip(&self.passive)
            .map(|((&g, &a), &p)| if p { 0.0 } else { g * project_derivative(a, psi, phi) })
            .collect();
        self.restrict(&self.filter.apply_transpose(&g_avg))
    }

    /// Mean physical density over the whole domain.
    pub fn volume(&self, rho_phys: &[f64]) -> f64 {
        rho_phys.iter().sum::<f64>() / rho_phys.len() as f64
    }

    /// `∂ volume / ∂x`.
    pub fn volume_gradient(&self, triple: &DensityTriple, psi: f64, phi: f64) -> Vec<f64> {
        let n = self.mesh.n_elements() as f64;
        self.chain(&vec![1.0 / n; self.mesh.n_elements()], triple, psi, phi)
    }
}
