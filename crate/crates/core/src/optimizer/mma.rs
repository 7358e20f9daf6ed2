//! Moving-asymptote update with a scalar equality constraint.
//!
//! The objective is replaced by the usual separable convex approximation
//! `Σ p_j/(U_j − x_j) + q_j/(x_j − L_j)`; the constraint enters linearised
//! through its multiplier, so each variable has a closed-form minimiser. The
//! multiplier is then found by bisection on the *true* constraint value, which
//! makes the equality hold to the requested tolerance after every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ConstrainedStep, EqualityConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmaSettings {
    /// Largest change of a variable in one step.
    pub move_limit: f64,
    pub asy_init: f64,
    pub asy_incr: f64,
    pub asy_decr: f64,
}

impl Default for MmaSettings {
    fn default() -> Self {
        MmaSettings {
            move_limit: 0.2,
            asy_init: 0.5,
            asy_incr: 1.2,
            asy_decr: 0.7,
        }
    }
}

impl MmaSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.move_limit > 0.0
            && self.move_limit <= 1.0
            && self.asy_init > 0.0
            && self.asy_init <= 1.0
            && self.asy_incr >= 1.0
            && self.asy_decr > 0.0
            && self.asy_decr <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid moving-asymptote settings: {self:?}")))
        }
    }
}

// Curvature floor, relative to the largest gradient entry.
const RAA0: f64 = 1e-5;
const ALBEFA: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Mma {
    settings: MmaSettings,
    iter: usize,
    x_old1: Vec<f64>,
    x_old2: Vec<f64>,
    low: Vec<f64>,
    upp: Vec<f64>,
}

impl Mma {
    pub fn new(settings: MmaSettings) -> Self {
        Mma {
            settings,
            iter: 0,
            x_old1: Vec::new(),
            x_old2: Vec::new(),
            low: Vec::new(),
            upp: Vec::new(),
        }
    }

    fn update_asymptotes(&mut self, x: &[f64]) {
        let s = &self.settings;
        let n = x.len();
        if self.iter < 2 || self.low.len() != n {
            self.low = x.iter().map(|&v| v - s.asy_init).collect();
            self.upp = x.iter().map(|&v| v + s.asy_init).collect();
            return;
        }
        for j in 0..n {
            let trend = (x[j] - self.x_old1[j]) * (self.x_old1[j] - self.x_old2[j]);
            let f = if trend < 0.0 {
                s.asy_decr
            } else if trend > 0.0 {
                s.asy_incr
            } else {
                1.0
            };
            let lo = x[j] - f * (self.x_old1[j] - self.low[j]);
            let up = x[j] + f * (self.upp[j] - self.x_old1[j]);
            self.low[j] = lo.clamp(x[j] - 10.0, x[j] - 0.01);
            self.upp[j] = up.clamp(x[j] + 0.01, x[j] + 10.0);
        }
    }
}

/// Per-variable data of the convex subproblem.
struct Sub {
    low: f64,
    upp: f64,
    alpha: f64,
    beta: f64,
    p: f64,
    q: f64,
    ux2: f64,
    xl2: f64,
    dv: f64,
}

impl Sub {
    fn solve(&self, lambda: f64) -> f64 {
        let c = lambda * self.dv;
        let (mut pp, mut qq) = (self.p, self.q);
        if c > 0.0 {
            pp += c * self.ux2;
        } else {
            qq -= c * self.xl2;
        }
        let (sp, sq) = (pp.sqrt(), qq.sqrt());
        ((sp * self.low + sq * self.upp) / (sp + sq)).clamp(self.alpha, self.beta)
    }
}

fn solve_all(subs: &[Sub], lambda: f64) -> Vec<f64> {
    subs.iter().map(|s| s.solve(lambda)).collect()
}

/// Bisection on the multiplier; `None` when `[lo_x, hi_x]` cannot reach the target.
fn find_multiplier(subs: &[Sub], con: &EqualityConstraint, scale: f64) -> Option<Vec<f64>> {
    let tol = con.tolerance;
    let res = |l: f64| -> (Vec<f64>, f64) {
        let x = solve_all(subs, l);
        let r = (con.value)(&x) - con.target;
        (x, r)
    };
    let (x0, r0) = res(0.0);
    if r0.abs() <= tol {
        return Some(x0);
    }
    // Residual decreases with the multiplier.
    let (mut lo, mut hi) = if r0 > 0.0 { (0.0, scale) } else { (-scale, 0.0) };
    let mut expand = 0;
    loop {
        let probe = if r0 > 0.0 { hi } else { lo };
        let (x, r) = res(probe);
        if r.abs() <= tol {
            return Some(x);
        }
        if (r0 > 0.0 && r < 0.0) || (r0 < 0.0 && r > 0.0) {
            break;
        }
        expand += 1;
        if expand > 60 {
            return None;
        }
        if r0 > 0.0 {
            lo = hi;
            hi *= 10.0;
        } else {
            hi = lo;
            lo *= 10.0;
        }
    }
    let mut best = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (x, r) = res(mid);
        if r.abs() <= tol {
            return Some(x);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        best = Some((x, r));
        if hi - lo <= f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
    }
    // The constraint may jump by more than the tolerance across one ulp of λ.
    best.filter(|(_, r)| r.abs() <= tol).map(|(x, _)| x)
}

impl ConstrainedStep for Mma {
    fn name(&self) -> &'static str {
        "mma"
    }

    fn reset(&mut self) {
        self.iter = 0;
        self.x_old1.clear();
        self.x_old2.clear();
    }

    fn step(&mut self, x: &[f64], grad: &[f64], con: &EqualityConstraint) -> Result<Vec<f64>> {
        let n = x.len();
        if grad.len() != n || con.gradient.len() != n {
            return Err(Error::Run("gradient length does not match the design".into()));
        }
        self.update_asymptotes(x);
        let ml = self.settings.move_limit;
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let reg = if gmax > 0.0 { RAA0 * gmax } else { RAA0 };
        let build = |low: &[f64], upp: &[f64], move_limit: f64| -> Vec<Sub> {
            (0..n)
                .map(|j| {
                    let (l, u) = (low[j], upp[j]);
                    let alpha = (l + ALBEFA * (x[j] - l)).max(x[j] - move_limit).max(0.0);
                    let beta = (u - ALBEFA * (u - x[j])).min(x[j] + move_limit).min(1.0);
                    let g = grad[j];
                    let ux2 = (u - x[j]) * (u - x[j]);
                    let xl2 = (x[j] - l) * (x[j] - l);
                    Sub {
                        low: l,
                        upp: u,
                        alpha,
                        beta,
                        p: ux2 * (1.001 * g.max(0.0) + 0.001 * (-g).max(0.0) + reg),
                        q: xl2 * (0.001 * g.max(0.0) + 1.001 * (-g).max(0.0) + reg),
                        ux2,
                        xl2,
                        dv: con.gradient[j],
                    }
                })
                .collect()
        };
        let vmax = con.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let scale = if vmax > 0.0 { (gmax / vmax).max(1e-12) } else { 1.0 };
        let subs = build(&self.low, &self.upp, ml);
        let next = match find_multiplier(&subs, con, scale) {
            Some(v) => v,
            None => {
                // Infeasible within the current asymptotes: reset them and
                // allow the full box so the equality can be restored.
                self.reset();
                self.low = x.iter().map(|&v| v - 1.0).collect();
                self.upp = x.iter().map(|&v| v + 1.0).collect();
                let wide = build(&self.low, &self.upp, 1.0);
                find_multiplier(&wide, con, scale).ok_or_else(|| {
                    Error::Run(format!(
                        "volume target {} is unreachable within the bounds",
                        con.target
                    ))
                })?
            }
        };
        self.x_old2 = std::mem::replace(&mut self.x_old1, x.to_vec());
        self.iter += 1;
        Ok(next)
    }
}
