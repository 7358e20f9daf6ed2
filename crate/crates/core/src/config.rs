//! Run configuration: a TOML document with one table per concern.
//!
//! ```toml
//! seed = 0
//! output = "out"
//!
//! [mesh]
//! nx = 60
//! ny = 120
//! lx = 50.0
//! ly = 100.0
//!
//! [material]
//! kind = "orthotropic"   # or "isotropic" (e, nu) / "stiffness" (theta, beta)
//! alpha1 = 12.0
//! alpha2 = 1.0
//! beta = 0.0
//!
//! [boundary]
//! load = "uniaxial"      # or "biaxial"
//! strain = 0.005         # ū / L_y
//! weights = { mode = "consistent" }
//!
//! [optimizer]            # see OptimizerSettings
//! [filter]               # see FilterSettings
//! [identification]
//! [identification.sweep]
//! [study]
//! [gallery]
//! [grad_check]
//! ```
//!
//! Every table and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{cost_by_name, CostOptions};
use crate::equilibrium::Weights;
use crate::error::{Error, Result};
use crate::fe::ElementModel;
use crate::filter::{FilterContext, FilterGeometry, FilterSettings};
use crate::material::{isotropic_stiffness, orthotropic_stiffness, params_from_descriptors, StiffnessVector, DEFAULT_E_SCALE};
use crate::mesh::{BoundarySetup, LoadCase, StructuredMesh};
use crate::optimizer::OptimizerSettings;
use crate::sensitivity::DesignProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            nx: 60,
            ny: 120,
            lx: 50.0,
            ly: 100.0,
        }
    }
}

fn default_nu() -> f64 {
    0.3
}

fn default_e_scale() -> f64 {
    DEFAULT_E_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaterialConfig {
    Isotropic {
        e: f64,
        nu: f64,
    },
    Orthotropic {
        alpha1: f64,
        alpha2: f64,
        beta: f64,
        #[serde(default = "default_nu")]
        nu_xy: f64,
        #[serde(default = "default_e_scale")]
        e_scale: f64,
    },
    /// Global-frame `[D11, D12, D16, D22, D26, D66]` (GPa).
    Stiffness {
        theta: [f64; 6],
        #[serde(default)]
        beta: f64,
    },
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig::Isotropic { e: 200.0, nu: 0.3 }
    }
}

impl MaterialConfig {
    pub fn stiffness(&self) -> Result<StiffnessVector> {
        match *self {
            MaterialConfig::Isotropic { e, nu } => isotropic_stiffness(e, nu),
            MaterialConfig::Orthotropic {
                alpha1,
                alpha2,
                beta,
                nu_xy,
                e_scale,
            } => orthotropic_stiffness(&params_from_descriptors(alpha1, alpha2, beta, nu_xy, e_scale)?),
            MaterialConfig::Stiffness { theta, .. } => {
                let s = StiffnessVector(theta);
                if s.is_positive_definite() {
                    Ok(s)
                } else {
                    Err(Error::Parameter("stiffness matrix is not positive definite".into()))
                }
            }
        }
    }

    pub fn beta(&self) -> f64 {
        match *self {
            MaterialConfig::Isotropic { .. } => 0.0,
            MaterialConfig::Orthotropic { beta, .. } | MaterialConfig::Stiffness { beta, .. } => beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub load: LoadCase,
    /// Imposed displacement over specimen height.
    pub strain: f64,
    pub weights: Weights,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            load: LoadCase::Uniaxial,
            strain: 0.005,
            weights: Weights::Consistent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub holes: Vec<usize>,
    pub volume_fractions: Vec<f64>,
    pub loads: Vec<LoadCase>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub beta: Vec<f64>,
    pub nu_xy: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            holes: (1..=6).collect(),
            volume_fractions: vec![0.9],
            loads: vec![LoadCase::Uniaxial],
            alpha1: vec![12.0],
            alpha2: vec![1.0],
            beta: vec![0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0],
            nu_xy: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    /// Density field (`.pgm` or `.csv`); a reference layout is used when absent.
    pub topology: Option<PathBuf>,
    pub holes: usize,
    pub volume_fraction: f64,
    /// Frame kept solid around reference holes; the filter frame when absent.
    pub frame_layers: Option<usize>,
    /// Strain noise standard deviation; `1e-3 · strain` when absent.
    pub gamma_f: Option<f64>,
    pub seeds: usize,
    pub sweep: SweepConfig,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        IdentificationConfig {
            topology: None,
            holes: 4,
            volume_fraction: 0.9,
            frame_layers: None,
            gamma_f: None,
            seeds: 20,
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Stiffness of the plate (GPa).
    pub theta: [f64; 6],
    pub meshes: Vec<[usize; 2]>,
    /// Radius of the centred hole (mm).
    pub hole_radius: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            theta: crate::studies::STUDY_THETA,
            meshes: vec![[20, 40], [40, 80], [80, 160]],
            hole_radius: 12.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GalleryConfig {
    /// Only the first `limit` cells of the material grid.
    pub limit: Option<usize>,
    pub nu_xy: f64,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        GalleryConfig { limit: None, nu_xy: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub h: f64,
    pub psi: Vec<f64>,
    /// Number of random density samples.
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-6,
            psi: vec![1.0, 8.0],
            samples: 3,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub mesh: MeshConfig,
    pub material: MaterialConfig,
    pub boundary: BoundaryConfig,
    pub optimizer: OptimizerSettings,
    pub filter: FilterSettings,
    pub identification: IdentificationConfig,
    pub study: StudyConfig,
    pub gallery: GalleryConfig,
    pub grad_check: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output: PathBuf::from("out"),
            mesh: MeshConfig::default(),
            material: MaterialConfig::default(),
            boundary: BoundaryConfig::default(),
            optimizer: OptimizerSettings::default(),
            filter: FilterSettings::default(),
            identification: IdentificationConfig::default(),
            study: StudyConfig::default(),
            gallery: GalleryConfig::default(),
            grad_check: GradCheckConfig::default(),
        }
    }
}

/// Line of `[table]` (or of the first `key =` line when `table` is empty).
fn anchor(text: &str, table: &str) -> usize {
    let header = format!("[{table}]");
    text.lines()
        .position(|l| l.trim_start().starts_with(&header))
        .map_or(1, |i| i + 1)
}

fn anchored(text: &str, table: &str, e: Error) -> Error {
    let where_ = if table.is_empty() { "top level".to_string() } else { format!("[{table}]") };
    match e {
        Error::Config(m) | Error::Parameter(m) => {
            Error::Config(format!("line {} ({where_}): {m}", anchor(text, table)))
        }
        other => other,
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl RunConfig {
    /// Parses and validates a configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate().map_err(|(table, e)| anchored(text, table, e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((cfg, text))
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, Error)> {
        let mesh = self.mesh().map_err(|e| ("mesh", e))?;
        self.material.stiffness().map_err(|e| ("material", e))?;
        check(self.boundary.strain > 0.0 && self.boundary.strain.is_finite(), || {
            format!("strain must be positive (got {})", self.boundary.strain)
        })
        .and_then(|_| self.boundary.weights.resolve(&self.boundary_setup(&mesh, self.boundary.load)))
        .map_err(|e| ("boundary", e))?;
        self.optimizer.validate().map_err(|e| ("optimizer", e))?;
        FilterGeometry::new(&mesh, self.filter.sbar_fd)
            .and_then(|_| check(self.filter.phi > 0.0 && self.filter.phi < 1.0, || format!("phi must lie in (0, 1) (got {})", self.filter.phi)))
            .and_then(|_| crate::filter::continuation_schedule(self.filter.psi_max).map(|_| ()))
            .and_then(|_| check(crate::filter::registry().contains(&self.filter.kind), || format!("unknown filter '{}'", self.filter.kind)))
            .map_err(|e| ("filter", e))?;
        let id = &self.identification;
        check((1..=6).contains(&id.holes), || format!("holes must be 1..6 (got {})", id.holes))
            .and_then(|_| check(id.volume_fraction > 0.0 && id.volume_fraction <= 1.0, || format!("volume_fraction must lie in (0, 1] (got {})", id.volume_fraction)))
            .and_then(|_| check(id.seeds >= 1, || "seeds must be at least 1".into()))
            .and_then(|_| check(id.gamma_f.is_none_or(|g| g >= 0.0 && g.is_finite()), || "gamma_f must be >= 0".into()))
            .map_err(|e| ("identification", e))?;
        let sw = &id.sweep;
        check(sw.holes.iter().all(|h| (1..=6).contains(h)), || "sweep holes must be 1..6".into())
            .and_then(|_| check(sw.volume_fractions.iter().all(|&v| v > 0.0 && v <= 1.0), || "sweep volume fractions must lie in (0, 1]".into()))
            .and_then(|_| check(!sw.holes.is_empty() && !sw.volume_fractions.is_empty() && !sw.loads.is_empty(), || "sweep needs holes, volume_fractions and loads".into()))
            .and_then(|_| check(!sw.alpha1.is_empty() && !sw.alpha2.is_empty() && !sw.beta.is_empty(), || "sweep needs alpha1, alpha2 and beta values".into()))
            .map_err(|e| ("identification.sweep", e))?;
        check(self.study.meshes.len() >= 2, || "study needs at least two meshes".into())
            .and_then(|_| check(self.study.hole_radius > 0.0, || "hole_radius must be positive".into()))
            .and_then(|_| check(StiffnessVector(self.study.theta).is_positive_definite(), || "study theta is not positive definite".into()))
            .map_err(|e| ("study", e))?;
        let g = &self.grad_check;
        check(g.h > 0.0 && g.h < 1.0, || format!("h must lie in (0, 1) (got {})", g.h))
            .and_then(|_| check(!g.psi.is_empty() && g.psi.iter().all(|&p| p > 0.0), || "psi values must be positive".into()))
            .and_then(|_| check(g.samples >= 1 && g.tolerance > 0.0, || "samples >= 1 and tolerance > 0 required".into()))
            .map_err(|e| ("grad_check", e))?;
        Ok(())
    }

    pub fn mesh(&self) -> Result<StructuredMesh> {
        StructuredMesh::new(self.mesh.nx, self.mesh.ny, self.mesh.lx, self.mesh.ly)
    }

    pub fn boundary_setup(&self, mesh: &StructuredMesh, load: LoadCase) -> BoundarySetup {
        BoundarySetup::new(mesh, load, self.boundary.strain * mesh.ly)
    }

    /// Frame thickness used for the design domain and reference holes.
    pub fn frame_layers(&self, mesh: &StructuredMesh) -> Result<usize> {
        let g = FilterGeometry::new(mesh, self.filter.sbar_fd)?;
        Ok(self.filter.frame_layers.unwrap_or_else(|| g.frame_layers(mesh)))
    }

    /// The optimisation problem for `theta` on the configured mesh and load.
    pub fn design_problem(&self, theta: &StiffnessVector) -> Result<DesignProblem> {
        let mesh = self.mesh()?;
        let boundary = self.boundary_setup(&mesh, self.boundary.load);
        let (lambda_r, lambda_q) = self.boundary.weights.resolve(&boundary)?;
        let opts = CostOptions { p: self.optimizer.p };
        Ok(DesignProblem {
            model: ElementModel::new(&mesh, theta),
            filter: FilterContext::new(&mesh, &self.filter)?,
            cost: cost_by_name(&self.optimizer.cost, &opts)?,
            boundary,
            theta: *theta,
            lambda_r,
            lambda_q,
            p: self.optimizer.p,
            mesh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_the_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn full_example_parses() {
        let text = r#"
seed = 7
output = "runs/a"

[mesh]
nx = 30
ny = 60

[material]
kind = "orthotropic"
alpha1 = 12.0
alpha2 = 1.0
beta = 15.0

[boundary]
load = "biaxial"
weights = { mode = "manual", lambda_r = 0.5, lambda_q = 2.0 }

[optimizer]
volume_fraction = 0.85
robust = true
init = { mode = "noisy", sigma = 0.1 }

[filter]
kind = "conv"

[identification]
holes = 2
seeds = 5

[identification.sweep]
loads = ["uniaxial", "biaxial"]
"#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.mesh.nx, 30);
        assert_eq!(c.material.beta(), 15.0);
        assert_eq!(c.boundary.load, LoadCase::Biaxial);
        assert!(c.optimizer.robust);
        assert_eq!(c.identification.sweep.loads.len(), 2);
        let pb = c.design_problem(&c.material.stiffness().unwrap()).unwrap();
        assert_eq!((pb.lambda_r, pb.lambda_q), (0.5, 2.0));
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let e = RunConfig::parse("[mesh]\nnx = 10\nnz = 3\n").unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn invalid_values_point_at_their_table() {
        let text = "seed = 1\n\n[material]\nkind = \"isotropic\"\ne = 200.0\nnu = 0.7\n";
        let e = RunConfig::parse(text).unwrap_err();
        assert!(e.to_string().contains("line 3 ([material])"), "{e}");
        let e = RunConfig::parse("[optimizer]\nvolume_fraction = 1.5\n").unwrap_err();
        assert!(e.to_string().contains("line 1 ([optimizer])"), "{e}");
        let e = RunConfig::parse("[filter]\nkind = \"box\"\n").unwrap_err();
        assert!(e.to_string().contains("[filter]"), "{e}");
        assert!(RunConfig::parse("[mesh]\nnx = \"ten\"\n").unwrap_err().is_config());
    }
}
