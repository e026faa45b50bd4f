//! Symmetric positive-definite banded matrices and their Cholesky factor.

#[derive(Debug, Clone)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    /// Row-major lower band: entry (i, j), j <= i <= j + bw, at
    /// `i * (bw + 1) + (i - j)`.
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to entry (i, j) of the symmetric matrix.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let idx = self.at(i, j);
        self.data[idx] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.at(i, j)]
        }
    }

    /// In-place Cholesky factorization; returns `false` if a pivot is not
    /// positive.
    pub fn factor(&mut self) -> bool {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = self.data[self.at(j, j)];
            for k in lo..j {
                let l = self.data[self.at(j, k)];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            let jj = self.at(j, j);
            self.data[jj] = d;
            for i in j + 1..(j + bw + 1).min(n) {
                let lo_i = i.saturating_sub(bw);
                let mut v = self.data[self.at(i, j)];
                for k in lo_i.max(lo)..j {
                    v -= self.data[self.at(i, k)] * self.data[self.at(j, k)];
                }
                let ij = self.at(i, j);
                self.data[ij] = v / d;
            }
        }
        true
    }

    /// Solves `L L^T x = b` in place after [`factor`](Self::factor).
    pub fn solve_factored(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut v = b[i];
            for k in i.saturating_sub(bw)..i {
                v -= self.data[self.at(i, k)] * b[k];
            }
            b[i] = v / self.data[self.at(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                v -= self.data[self.at(k, i)] * b[k];
            }
            b[i] = v / self.data[self.at(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(n, bw) in &[(1usize, 0usize), (5, 1), (12, 3), (30, 7), (9, 20)] {
            let bw_eff = bw.min(n.saturating_sub(1));
            let mut band = BandedSpd::zeros(n, bw_eff);
            let mut dense = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(bw_eff)..=i {
                    let v = if i == j {
                        n as f64 + rng.random::<f64>()
                    } else {
                        rng.random::<f64>() - 0.5
                    };
                    band.add(i, j, v);
                    dense[(i, j)] += v;
                    if i != j {
                        dense[(j, i)] += v;
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let expected = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
            assert!((band.get(0, 0) - dense[(0, 0)]).abs() < 1e-15);
            assert!(band.factor());
            let mut x = b;
            band.solve_factored(&mut x);
            for i in 0..n {
                assert!((x[i] - expected[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut band = BandedSpd::zeros(2, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, 1.0);
        band.add(1, 0, 2.0);
        assert!(!band.factor());
    }
}
