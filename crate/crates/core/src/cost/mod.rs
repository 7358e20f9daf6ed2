//! Design costs on the normal matrix `A_eqb` (and, for one variant, on the
//! Gauss-point strain cloud). Every cost is normalised by its value at the
//! start of a run, so it starts at 1 (or −1 for the distance cost).

pub mod conditioning;
pub mod min_dist;

use std::fmt::Debug;

use nalgebra::{Matrix6, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::registry::Registry;

pub use conditioning::{
    entrywise_norm, frobenius_cond, log_det, p_norm_bound_factor, p_norm_cond, two_norm_cond,
};

pub const DEFAULT_P: f64 = 8.0;

pub struct CostInput<'a> {
    pub a_eqb: &'a Matrix6<f64>,
    /// Gauss-point strains; only read by strain-space costs.
    pub strains: &'a [[Vector3<f64>; 4]],
}

/// Reference values captured once at the initial design.
#[derive(Debug, Clone, PartialEq)]
pub struct CostContext {
    pub a_eqb_init: Matrix6<f64>,
    pub log_det_init: f64,
    pub kappa_p_init: f64,
    pub kappa_f_init: f64,
    pub d_min_init: Option<f64>,
    pub p: f64,
}

impl CostContext {
    pub fn capture(input: &CostInput, p: f64, with_strains: bool) -> Result<Self> {
        let a = input.a_eqb;
        let d_min_init = if with_strains {
            let d = min_dist::min_pairwise_distance(&min_dist::principal_points(input.strains))?;
            if !(d > 0.0) {
                return Err(Error::Init(
                    "strain points coincide at the initial design; use a noisy initialisation".into(),
                ));
            }
            Some(d)
        } else {
            None
        };
        Ok(CostContext {
            a_eqb_init: *a,
            log_det_init: log_det(a)?,
            kappa_p_init: p_norm_cond(a, p)?,
            kappa_f_init: frobenius_cond(a)?,
            d_min_init,
            p,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CostEval {
    pub value: f64,
    /// `∂cost/∂A_eqb`, entries treated as independent.
    pub grad_a_eqb: Matrix6<f64>,
    /// `∂cost/∂ε` per Gauss point, for strain-space costs.
    pub grad_strains: Option<Vec<[Vector3<f64>; 4]>>,
}

pub trait CostFunction: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn uses_strains(&self) -> bool {
        false
    }

    fn evaluate(&self, input: &CostInput, ctx: &CostContext) -> Result<CostEval>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostOptions {
    pub p: f64,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions { p: DEFAULT_P }
    }
}

/// `det(A_init) / det(A)`.
#[derive(Debug, Clone, Copy)]
pub struct DetCost;

impl CostFunction for DetCost {
    fn name(&self) -> &'static str {
        "det"
    }

    fn evaluate(&self, input: &CostInput, ctx: &CostContext) -> Result<CostEval> {
        let value = (ctx.log_det_init - log_det(input.a_eqb)?).exp();
        let inv = conditioning::inverse(input.a_eqb)?;
        Ok(CostEval {
            value,
            grad_a_eqb: -inv.transpose() * value,
            grad_strains: None,
        })
    }
}

/// `(κ_p / κ_p,init)^p`.
#[derive(Debug, Clone, Copy)]
pub struct KappaPCost {
    pub p: f64,
}

impl CostFunction for KappaPCost {
    fn name(&self) -> &'static str {
        "kappa_p"
    }

    fn evaluate(&self, input: &CostInput, ctx: &CostContext) -> Result<CostEval> {
        let k = p_norm_cond(input.a_eqb, self.p)?;
        let k0 = if self.p == ctx.p { ctx.kappa_p_init } else { p_norm_cond(&ctx.a_eqb_init, self.p)? };
        let value = (k / k0).powf(self.p);
        let g = conditioning::log_p_norm_cond_gradient(input.a_eqb, self.p)?;
        Ok(CostEval {
            value,
            grad_a_eqb: g * (self.p * value),
            grad_strains: None,
        })
    }
}

/// `κ_F / κ_F,init`.
#[derive(Debug, Clone, Copy)]
pub struct KappaFCost;

impl CostFunction for KappaFCost {
    fn name(&self) -> &'static str {
        "kappa_f"
    }

    fn evaluate(&self, input: &CostInput, ctx: &CostContext) -> Result<CostEval> {
        let value = frobenius_cond(input.a_eqb)? / ctx.kappa_f_init;
        let g = conditioning::log_p_norm_cond_gradient(input.a_eqb, 2.0)?;
        Ok(CostEval {
            value,
            grad_a_eqb: g * value,
            grad_strains: None,
        })
    }
}

/// Smoothed negative minimum pairwise distance in principal-strain space.
#[derive(Debug, Clone, Copy)]
pub struct MinDistCost {
    pub p: f64,
}

impl CostFunction for MinDistCost {
    fn name(&self) -> &'static str {
        "min_dist"
    }

    fn uses_strains(&self) -> bool {
        true
    }

    fn evaluate(&self, input: &CostInput, ctx: &CostContext) -> Result<CostEval> {
        let d0 = ctx
            .d_min_init
            .ok_or_else(|| Error::Init("distance cost used without a captured initial spacing".into()))?;
        let pts = min_dist::principal_points(input.strains);
        let (value, pg) = min_dist::min_distance_cost(&pts, self.p, d0);
        Ok(CostEval {
            value,
            grad_a_eqb: Matrix6::zeros(),
            grad_strains: Some(min_dist::strain_gradient(input.strains, &pg)),
        })
    }
}

pub fn registry() -> Registry<dyn CostFunction, CostOptions> {
    let mut r: Registry<dyn CostFunction, CostOptions> = Registry::new("cost");
    r.register("det", |_| Ok(Box::new(DetCost)))
        .register("kappa_p", |o| {
            check_p(o.p)?;
            Ok(Box::new(KappaPCost { p: o.p }))
        })
        .register("kappa_f", |_| Ok(Box::new(KappaFCost)))
        .register("min_dist", |o| {
            check_p(o.p)?;
            Ok(Box::new(MinDistCost { p: o.p }))
        });
    r
}

pub fn cost_by_name(name: &str, opts: &CostOptions) -> Result<Box<dyn CostFunction>> {
    registry().create(name, opts)
}

pub fn check_p(p: f64) -> Result<()> {
    if p >= 2.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("norm order p must be >= 2 (got {p})")))
    }
}

/// Conditioning measures reported alongside the cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `1/det(A_eqb)` in mm⁻¹².
    pub inv_det: f64,
    pub kappa_2: f64,
    pub kappa_f: f64,
    pub kappa_p: f64,
}

pub fn diagnostics(a_eqb: &Matrix6<f64>, p: f64) -> Result<Diagnostics> {
    let d = Diagnostics {
        inv_det: (-log_det(a_eqb)?).exp(),
        kappa_2: two_norm_cond(a_eqb)?,
        kappa_f: frobenius_cond(a_eqb)?,
        kappa_p: p_norm_cond(a_eqb, p)?,
    };
    debug_assert!(
        d.kappa_2 <= d.kappa_f * (1.0 + 1e-9) && d.kappa_f <= p_norm_bound_factor(p) * d.kappa_p * (1.0 + 1e-9),
        "conditioning bound chain violated: {d:?}"
    );
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(seed: u64) -> Matrix6<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        m * m.transpose() + Matrix6::identity() * 0.1
    }

    fn eval(name: &str, a: &Matrix6<f64>, ctx: &CostContext) -> CostEval {
        let c = cost_by_name(name, &CostOptions::default()).unwrap();
        c.evaluate(&CostInput { a_eqb: a, strains: &[] }, ctx).unwrap()
    }

    #[test]
    fn all_costs_start_at_one() {
        let a = random_spd(1);
        let ctx = CostContext::capture(&CostInput { a_eqb: &a, strains: &[] }, 8.0, false).unwrap();
        for name in ["det", "kappa_p", "kappa_f"] {
            assert!((eval(name, &a, &ctx).value - 1.0).abs() < 1e-12, "{name}");
        }
    }

    #[test]
    fn det_cost_scaling() {
        let a = random_spd(2);
        let ctx = CostContext::capture(&CostInput { a_eqb: &a, strains: &[] }, 8.0, false).unwrap();
        let v = eval("det", &(a * 2.0), &ctx).value;
        assert!((v - 2f64.powi(-6)).abs() < 1e-14);
        for name in ["kappa_p", "kappa_f"] {
            assert!((eval(name, &(a * 3.7), &ctx).value - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // perturbations stay symmetric, so the check is on g_ij + g_ji
        let a0 = random_spd(3);
        let ctx = CostContext::capture(&CostInput { a_eqb: &a0, strains: &[] }, 8.0, false).unwrap();
        let a = random_spd(4) * 0.5 + a0 * 0.5;
        for name in ["det", "kappa_p", "kappa_f"] {
            let g = eval(name, &a, &ctx).grad_a_eqb;
            for (i, j) in [(0, 0), (1, 4), (5, 2), (3, 3)] {
                let h = 1e-6;
                let mut ap = a;
                let mut am = a;
                ap[(i, j)] += h;
                am[(i, j)] -= h;
                if i != j {
                    ap[(j, i)] += h;
                    am[(j, i)] -= h;
                }
                let fd = (eval(name, &ap, &ctx).value - eval(name, &am, &ctx).value) / (2.0 * h);
                let an = if i == j { g[(i, j)] } else { g[(i, j)] + g[(j, i)] };
                assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "{name} ({i},{j}): {fd} vs {an}");
            }
        }
    }

    #[test]
    fn registry_lists_every_cost() {
        assert_eq!(registry().names(), vec!["det", "kappa_p", "kappa_f", "min_dist"]);
        assert!(cost_by_name("trace", &CostOptions::default()).unwrap_err().is_config());
        assert!(cost_by_name("kappa_p", &CostOptions { p: 1.0 }).is_err());
    }

    #[test]
    fn coincident_init_points_are_rejected() {
        let a = Matrix6::identity();
        let s = [[Vector3::new(1e-3, 0.0, 0.0); 4]];
        let err = CostContext::capture(&CostInput { a_eqb: &a, strains: &s }, 8.0, true).unwrap_err();
        assert!(matches!(err, Error::Init(_)));
    }

    #[test]
    fn diagnostics_identity() {
        let d = diagnostics(&Matrix6::identity(), 8.0).unwrap();
        assert_eq!((d.inv_det, d.kappa_2), (1.0, 1.0));
    }
}
