//! Spread of Gauss-point strains in principal-strain space, measured by a
//! smoothed minimum over all pairwise distances.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// In-plane principal strains `(ε_I, ε_II)` from Voigt `[ε11, ε22, γ12]`.
pub fn principal_strains(eps: &Vector3<f64>) -> [f64; 2] {
    let m = 0.5 * (eps[0] + eps[1]);
    let r = (0.25 * (eps[0] - eps[1]).powi(2) + 0.25 * eps[2] * eps[2]).sqrt();
    [m + r, m - r]
}

/// Jacobian rows `∂ε_I/∂ε` and `∂ε_II/∂ε`.
fn principal_jacobian(eps: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let r = (0.25 * (eps[0] - eps[1]).powi(2) + 0.25 * eps[2] * eps[2]).sqrt();
    let dr = if r > 0.0 {
        Vector3::new(0.25 * (eps[0] - eps[1]) / r, -0.25 * (eps[0] - eps[1]) / r, 0.25 * eps[2] / r)
    } else {
        Vector3::zeros()
    };
    let dm = Vector3::new(0.5, 0.5, 0.0);
    [dm + dr, dm - dr]
}

pub fn principal_points(strains: &[[Vector3<f64>; 4]]) -> Vec<[f64; 2]> {
    strains.iter().flatten().map(principal_strains).collect()
}

pub fn min_pairwise_distance(points: &[[f64; 2]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Init("need at least two strain points".into()));
    }
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    Ok(best)
}

/// `−(Σ (d_i/d0)^p)^(1/p)` and its gradient with respect to each point.
pub fn min_distance_cost(points: &[[f64; 2]], p: f64, d0: f64) -> (f64, Vec<[f64; 2]>) {
    let n = points.len();
    let mut qmax: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
            qmax = qmax.max(d / d0);
        }
    }
    let mut grad = vec![[0.0; 2]; n];
    if qmax == 0.0 {
        return (0.0, grad);
    }
    // S = qmax^p Σ (q/qmax)^p
    let mut s_scaled = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
            s_scaled += (d / d0 / qmax).powf(p);
        }
    }
    let norm = qmax * s_scaled.powf(1.0 / p);
    // ∂cost/∂d_i = −(q_i/‖q‖_p)^(p−1) / d0
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            if d == 0.0 {
                continue;
            }
            let gd = -(d / d0 / norm).powf(p - 1.0) / d0;
            let (gx, gy) = (gd * dx / d, gd * dy / d);
            grad[i][0] += gx;
            grad[i][1] += gy;
            grad[j][0] -= gx;
            grad[j][1] -= gy;
        }
    }
    (-norm, grad)
}

/// Maps principal-point gradients back to Voigt strains per Gauss point.
pub fn strain_gradient(strains: &[[Vector3<f64>; 4]], point_grad: &[[f64; 2]]) -> Vec<[Vector3<f64>; 4]> {
    strains
        .iter()
        .enumerate()
        .map(|(e, gps)| {
            std::array::from_fn(|g| {
                let jac = principal_jacobian(&gps[g]);
                let pg = point_grad[4 * e + g];
                jac[0] * pg[0] + jac[1] * pg[1]
            })
        })
        .collect()
}
