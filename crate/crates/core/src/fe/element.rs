//! Bilinear square element: shape-function gradients, 2×2 Gauss rule,
//! stiffness and strain-displacement matrices.

use nalgebra::{Matrix3, SMatrix};

use crate::material::StiffnessVector;

pub type Matrix8 = SMatrix<f64, 8, 8>;
/// Strain-displacement matrix, `ε = B · U_e` with Voigt `[ε11, ε22, γ12]`.
pub type BMatrix = SMatrix<f64, 3, 8>;

const G: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// Parent-space Gauss points (ξ, η), each with unit weight, in the order
/// bottom-left, bottom-right, top-right, top-left.
pub const GAUSS_POINTS: [(f64, f64); 4] = [(-G, -G), (G, -G), (G, G), (-G, G)];

const NODE_SIGNS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// B at parent point (ξ, η) for a square element of edge `le`.
pub fn b_matrix(xi: f64, eta: f64, le: f64) -> BMatrix {
    let mut b = BMatrix::zeros();
    // dN/dx = (2/le) dN/dξ
    let scale = 2.0 / le;
    for (a, &(sx, sy)) in NODE_SIGNS.iter().enumerate() {
        let dx = 0.25 * sx * (1.0 + sy * eta) * scale;
        let dy = 0.25 * sy * (1.0 + sx * xi) * scale;
        b[(0, 2 * a)] = dx;
        b[(1, 2 * a + 1)] = dy;
        b[(2, 2 * a)] = dy;
        b[(2, 2 * a + 1)] = dx;
    }
    b
}

/// Jacobian determinant of the parent map for a square of edge `le`.
pub fn det_j(le: f64) -> f64 {
    0.25 * le * le
}

/// B matrices at the four Gauss points.
#[derive(Debug, Clone)]
pub struct ElementKinematics {
    pub b: [BMatrix; 4],
    pub det_j: f64,
}

impl ElementKinematics {
    pub fn new(le: f64) -> Self {
        ElementKinematics {
            b: GAUSS_POINTS.map(|(xi, eta)| b_matrix(xi, eta, le)),
            det_j: det_j(le),
        }
    }
}

pub fn element_stiffness(theta: &StiffnessVector, le: f64) -> Matrix8 {
    let kin = ElementKinematics::new(le);
    element_stiffness_with(&theta.matrix(), &kin)
}

pub fn element_stiffness_with(d: &Matrix3<f64>, kin: &ElementKinematics) -> Matrix8 {
    let mut k = Matrix8::zeros();
    for b in &kin.b {
        k += b.transpose() * d * b * kin.det_j;
    }
    // exact symmetry
    let kt = k.transpose();
    (k + kt) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::isotropic_stiffness;
    use nalgebra::SymmetricEigen;

    /// Gauss–Legendre nodes/weights on [-1, 1] via Newton on P_n.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    }

    /// Element stiffness integrated in physical coordinates with an independent
    /// shape-function derivation and a 10-point rule per direction.
    fn stiffness_oracle(d: &Matrix3<f64>, le: f64) -> Matrix8 {
        let corners = [(0.0, 0.0), (le, 0.0), (le, le), (0.0, le)];
        let rule = gauss_legendre(10);
        let mut k = Matrix8::zeros();
        for &(u, wu) in &rule {
            for &(v, wv) in &rule {
                let x = 0.5 * le * (u + 1.0);
                let y = 0.5 * le * (v + 1.0);
                let mut b = BMatrix::zeros();
                for (a, &(xa, ya)) in corners.iter().enumerate() {
                    // N_a = (1 - |x - xa|/le)(1 - |y - ya|/le)
                    let fx = 1.0 - (x - xa).abs() / le;
                    let fy = 1.0 - (y - ya).abs() / le;
                    let sx = if xa == 0.0 { -1.0 } else { 1.0 };
                    let sy = if ya == 0.0 { -1.0 } else { 1.0 };
                    let dndx = sx / le * fy;
                    let dndy = sy / le * fx;
                    b[(0, 2 * a)] = dndx;
                    b[(1, 2 * a + 1)] = dndy;
                    b[(2, 2 * a)] = dndy;
                    b[(2, 2 * a + 1)] = dndx;
                }
                k += b.transpose() * d * b * (wu * wv * 0.25 * le * le);
            }
        }
        k
    }

    #[test]
    fn symmetric_with_three_rigid_modes() {
        let theta = StiffnessVector([323.0, 100.03, 50.015, 190.0, 80.024, 144.930]);
        let k = element_stiffness(&theta, 0.7);
        assert_eq!(k, k.transpose());
        let eig = SymmetricEigen::new(k).eigenvalues;
        let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let zeros = eig.iter().filter(|v| v.abs() < 1e-10 * max).count();
        assert_eq!(zeros, 3);
    }

    #[test]
    fn translation_is_stress_free() {
        let theta = isotropic_stiffness(200.0, 0.3).unwrap();
        let k = element_stiffness(&theta, 1.3);
        let tx = SMatrix::<f64, 8, 1>::from_fn(|i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
        let ty = SMatrix::<f64, 8, 1>::from_fn(|i, _| if i % 2 == 1 { 1.0 } else { 0.0 });
        assert!((k * tx).norm() < 1e-12 * k.norm());
        assert!((k * ty).norm() < 1e-12 * k.norm());
    }

    #[test]
    fn matches_high_order_quadrature() {
        let theta = isotropic_stiffness(200.0, 0.3).unwrap();
        let k = element_stiffness(&theta, 1.0);
        let oracle = stiffness_oracle(&theta.matrix(), 1.0);
        assert!((k - oracle).abs().max() < 1e-12 * oracle.abs().max());
    }

    #[test]
    fn stiffness_is_size_independent() {
        let theta = isotropic_stiffness(200.0, 0.3).unwrap();
        let a = element_stiffness(&theta, 1.0);
        let b = element_stiffness(&theta, 3.7);
        assert!((a - b).abs().max() < 1e-12 * a.abs().max());
    }
}
