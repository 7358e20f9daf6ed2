//! Symmetric banded storage and an in-place band Cholesky factorisation.
//!
//! Row-major numbering on a structured grid keeps every coupling within a
//! fixed half-bandwidth, so a dense band factorisation is a direct sparse
//! solver with no fill outside the band.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix; row `i` stores columns `i-bw ..= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry `(i, j)` of the full symmetric matrix; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds to the symmetric pair `(i, j)`/`(j, i)`; only one call per pair.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let off = j0 + self.bw - i;
            let mut acc = 0.0;
            for (k, j) in (j0..i).enumerate() {
                let a = row[off + k];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc + row[self.bw] * x[i];
        }
        y
    }

    /// Extracts the sub-matrix over `keep` (sorted, ascending) in its own numbering.
    pub fn restrict(&self, keep: &[usize]) -> SymBandMatrix {
        let mut out = SymBandMatrix::zeros(keep.len(), self.bw);
        for (a, &i) in keep.iter().enumerate() {
            for b in a.saturating_sub(self.bw)..=a {
                let j = keep[b];
                if i - j <= self.bw {
                    let s = out.slot(a, b);
                    out.data[s] = self.data[self.slot(i, j)];
                }
            }
        }
        out
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        BandCholesky::factor(self.clone())
    }
}

/// `L Lᵀ` factor of a [`SymBandMatrix`], stored in the same band layout.
#[derive(Debug)]
pub struct BandCholesky {
    l: SymBandMatrix,
    solves: AtomicUsize,
}

impl BandCholesky {
    pub fn factor(mut m: SymBandMatrix) -> Result<Self> {
        let n = m.n;
        let w = m.bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(m.bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(m.bw));
                let ri = i * w + (k0 + m.bw - i);
                let rj = j * w + (k0 + m.bw - j);
                let len = j - k0;
                let mut dot = 0.0;
                for t in 0..len {
                    dot += m.data[ri + t] * m.data[rj + t];
                }
                let sij = i * w + (j + m.bw - i);
                let v = m.data[sij] - dot;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::Solver(format!(
                            "matrix not positive definite at pivot {i} (value {v:e})"
                        )));
                    }
                    m.data[sij] = v.sqrt();
                } else {
                    let djj = m.data[j * w + m.bw];
                    m.data[sij] = v / djj;
                }
            }
        }
        Ok(BandCholesky {
            l: m,
            solves: AtomicUsize::new(0),
        })
    }

    pub fn size(&self) -> usize {
        self.l.n
    }

    /// Number of right-hand sides solved with this factor so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.l.n);
        self.solves.fetch_add(1, Ordering::Relaxed);
        let n = self.l.n;
        let bw = self.l.bw;
        let w = bw + 1;
        let d = &self.l.data;
        // forward: L y = b
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let base = i * w + (j0 + bw - i);
            let mut acc = x[i];
            for (t, j) in (j0..i).enumerate() {
                acc -= d[base + t] * x[j];
            }
            x[i] = acc / d[i * w + bw];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            x[i] /= d[i * w + bw];
            let xi = x[i];
            let j0 = i.saturating_sub(bw);
            let base = i * w + (j0 + bw - i);
            for (t, j) in (j0..i).enumerate() {
                x[j] -= d[base + t] * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd_band(n: usize, bw: usize, seed: u64) -> (SymBandMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut band = SymBandMatrix::zeros(n, bw);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v: f64 = rng.random_range(-1.0..1.0);
                band.add(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
            let v = 2.0 * bw as f64 + rng.random_range(0.0..1.0);
            band.add(i, i, v);
            dense[(i, i)] = v;
        }
        (band, dense)
    }

    #[test]
    fn matches_dense_solve() {
        let (band, dense) = random_spd_band(40, 5, 3);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = band.cholesky().unwrap().solve(&b);
        let reference = dense.cholesky().unwrap().solve(&DVector::from_vec(b));
        for i in 0..40 {
            assert!((x[i] - reference[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_matches_dense() {
        let (band, dense) = random_spd_band(17, 4, 9);
        let x: Vec<f64> = (0..17).map(|i| 1.0 + i as f64 * 0.1).collect();
        let y = band.matvec(&x);
        let y_ref = &dense * DVector::from_vec(x);
        for i in 0..17 {
            assert!((y[i] - y_ref[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn restrict_keeps_entries() {
        let (band, dense) = random_spd_band(12, 3, 1);
        let keep = [0, 2, 3, 5, 6, 7, 11];
        let r = band.restrict(&keep);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                let expected = if i.abs_diff(j) <= 3 { dense[(i, j)] } else { 0.0 };
                assert_eq!(r.get(a, b), expected);
            }
        }
    }

    #[test]
    fn indefinite_is_reported() {
        let mut m = SymBandMatrix::zeros(2, 1);
        m.add(0, 0, 1.0);
        m.add(1, 0, 2.0);
        m.add(1, 1, 1.0);
        assert!(matches!(m.cholesky(), Err(Error::Solver(_))));
    }

    #[test]
    fn counts_solves() {
        let (band, _) = random_spd_band(5, 2, 0);
        let f = band.cholesky().unwrap();
        f.solve(&[1.0; 5]);
        f.solve(&[2.0; 5]);
        assert_eq!(f.solve_count(), 2);
    }
}
