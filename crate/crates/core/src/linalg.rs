//! Banded LU factorization with partial pivoting.
//!
//! Galerkin matrices for P1 elements on tensor grids have bandwidth of
//! order one row of the grid, so a dense band solver is enough.

use crate::error::{Error, Result};

/// Square matrix stored by diagonals. Row pivoting can push fill-in up to
/// `lower` extra super-diagonals, which the storage reserves.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        Self {
            n,
            lower,
            upper,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.lower
    }

    pub fn upper(&self) -> usize {
        self.upper
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // column offset j - i lies in [-lower, upper + lower]
        i * self.width + (j + self.lower - i)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.lower >= i && j <= i + self.upper + self.lower
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` at `(i, j)`. Panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.lower >= i && j <= i + self.upper,
            "entry ({i}, {j}) outside band"
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower);
                let hi = (i + self.upper + self.lower + 1).min(self.n);
                (lo..hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Solves `A x = b` in place of a copy of `self`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut lu = self.clone();
        let piv = lu.factorize()?;
        Ok(lu.substitute(&piv, b))
    }

    fn factorize(&mut self) -> Result<Vec<usize>> {
        let n = self.n;
        let reach = self.upper + self.lower;
        let mut piv = vec![0; n];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + self.lower).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= f64::EPSILON * scale * 1e-4 || best == 0.0 {
                return Err(Error::SingularMatrix(k));
            }
            piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let f = self.data[ik] / pivot;
                self.data[ik] = f;
                if f == 0.0 {
                    continue;
                }
                for j in k + 1..=jmax {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= f * kj;
                }
            }
        }
        Ok(piv)
    }

    fn substitute(&self, piv: &[usize], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let reach = self.upper + self.lower;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, piv[k]);
            let last = (k + self.lower).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.data[self.idx(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + reach).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=jmax {
                s -= self.data[self.idx(k, j)] * x[j];
            }
            x[k] = s / self.data[self.idx(k, k)];
        }
        x
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn tridiagonal_laplacian() {
        let n = 9;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
                a.add(i - 1, i, -1.0);
            }
        }
        let x = a.solve(&vec![1.0; n]).unwrap();
        let h = 1.0 / (n + 1) as f64;
        for (i, xi) in x.iter().enumerate() {
            let t = (i + 1) as f64 * h;
            assert!((xi * h * h - t * (1.0 - t) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = BandMatrix::zeros(3, 1, 1);
        assert!(matches!(a.solve(&[1.0; 3]), Err(Error::SingularMatrix(0))));
    }

    proptest! {
        #[test]
        fn matches_dense_elimination(
            n in 2usize..14,
            lower in 0usize..4,
            upper in 0usize..4,
            seed in proptest::collection::vec(-1.0f64..1.0, 14 * 14 + 14),
        ) {
            let mut a = BandMatrix::zeros(n, lower, upper);
            for i in 0..n {
                for j in i.saturating_sub(lower)..(i + upper + 1).min(n) {
                    a.add(i, j, seed[i * 14 + j]);
                }
                a.add(i, i, if seed[i] >= 0.0 { 0.05 } else { -0.05 });
            }
            let b: Vec<f64> = seed[196..196 + n].to_vec();
            let dense = a.to_dense();
            let x = a.solve(&b).unwrap();
            let y = dense_solve(dense, b.clone());
            let r = a.mul_vec(&x);
            for i in 0..n {
                prop_assert!((r[i] - b[i]).abs() < 1e-8 * (1.0 + norm_inf(&y)));
            }
        }
    }
}
