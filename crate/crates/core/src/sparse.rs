//! Minimal sparse kernel: CSR symmetric matrices assembled from triplets and a
//! banded Cholesky factorization for the SPD systems that arise here (graded
//! tensor meshes have small bandwidth).

// index-based loops mirror the CSR/banded storage layout; iterator forms
// obscure the row/column arithmetic here
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Triplets {
    pub n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets { n, entries: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.entries.push((i as u32, j as u32, v));
    }

    pub fn into_csr(mut self) -> Csr {
        // stable sort keeps per-triangle accumulation order deterministic
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut iter = self.entries.into_iter().peekable();
        for row in 0..self.n as u32 {
            while let Some(&(i, j, _)) = iter.peek() {
                if i != row {
                    break;
                }
                let mut v = 0.0;
                while let Some(&(i2, j2, v2)) = iter.peek() {
                    if i2 == row && j2 == j {
                        v += v2;
                        iter.next();
                    } else {
                        break;
                    }
                }
                cols.push(j);
                vals.push(v);
            }
            row_ptr[row as usize + 1] = cols.len();
        }
        Csr { n: self.n, row_ptr, cols, vals }
    }
}

#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.cols[lo..hi].binary_search(&(j as u32)) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |a_ij - a_ji| over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                if j > i {
                    d = d.max((self.vals[k] - self.get(j, i)).abs());
                }
            }
        }
        d
    }

    /// Quadratic form xᵀ A y.
    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut r = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                r += self.vals[k] * y[self.cols[k] as usize];
            }
            s += x[i] * r;
        }
        s
    }

    /// Restriction to the index subset `idx` (symmetric sub-block).
    pub fn restrict(&self, idx: &[usize]) -> Csr {
        let mut inv = vec![u32::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            inv[i] = k as u32;
        }
        let mut t = Triplets::new(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = inv[self.cols[p] as usize];
                if j != u32::MAX {
                    t.push(k, j as usize, self.vals[p]);
                }
            }
        }
        t.into_csr()
    }

    /// ca·A + cb·B on identical dimensions.
    pub fn linear_combination(&self, ca: f64, other: &Csr, cb: f64) -> Csr {
        assert_eq!(self.n, other.n);
        let mut t = Triplets::new(self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push(i, self.cols[k] as usize, ca * self.vals[k]);
            }
            for k in other.row_ptr[i]..other.row_ptr[i + 1] {
                t.push(i, other.cols[k] as usize, cb * other.vals[k]);
            }
        }
        t.into_csr()
    }

    /// Coordinate-format text lines "row col value" for external inspection.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s.push_str(&format!("{} {} {:.16e}\n", i, self.cols[k], self.vals[k]));
            }
        }
        s
    }
}

/// Banded Cholesky factor L of an SPD matrix, stored as a dense band.
pub struct BandChol {
    n: usize,
    bw: usize,
    // row-major band: slot (i, j) with j in [i-bw, i] at i*(bw+1) + (j + bw - i)
    data: Vec<f64>,
}

impl BandChol {
    pub fn factor(a: &Csr) -> Result<BandChol> {
        let n = a.n;
        let mut bw = 0usize;
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[k] as usize;
                bw = bw.max(i.abs_diff(j));
            }
        }
        let w = bw + 1;
        let mut band = vec![0.0f64; n * w];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[k] as usize;
                if j <= i {
                    band[i * w + (j + bw - i)] = a.vals[k];
                }
            }
        }
        // in-place band Cholesky
        for j in 0..n {
            let djj = band[j * w + bw];
            let mut s = djj;
            let k0 = j.saturating_sub(bw);
            for k in k0..j {
                let l = band[j * w + (k + bw - j)];
                s -= l * l;
            }
            if s <= 0.0 {
                return Err(Error::Assembly(format!(
                    "matrix not positive definite at pivot {j} (value {s:.3e})"
                )));
            }
            let ljj = s.sqrt();
            band[j * w + bw] = ljj;
            let imax = (j + bw).min(n - 1);
            for i in (j + 1)..=imax {
                let mut s = band[i * w + (j + bw - i)];
                let k0 = i.saturating_sub(bw).max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                band[i * w + (j + bw - i)] = s / ljj;
            }
        }
        Ok(BandChol { n, bw, data: band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i];
            let k0 = i.saturating_sub(bw);
            for k in k0..i {
                s -= self.data[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.data[i * w + bw];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            let imax = (i + bw).min(n - 1);
            for k in (i + 1)..=imax {
                s -= self.data[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.data[i * w + bw];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> Csr {
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
            }
        }
        t.into_csr()
    }

    #[test]
    fn triplets_accumulate() {
        let mut t = Triplets::new(2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 0, -1.0);
        let a = t.into_csr();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn band_cholesky_solves() {
        let a = laplacian_1d(50);
        let chol = BandChol::factor(&a).unwrap();
        let xref: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.apply(&xref);
        let x = chol.solve(&b);
        let err: f64 = x.iter().zip(&xref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "err = {err}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut t = Triplets::new(2);
        t.push(0, 0, 1.0);
        t.push(1, 1, -1.0);
        assert!(BandChol::factor(&t.into_csr()).is_err());
    }

    #[test]
    fn restriction_keeps_subblock() {
        let a = laplacian_1d(6);
        let r = a.restrict(&[1, 2, 4]);
        assert_eq!(r.get(0, 0), 2.0);
        assert_eq!(r.get(0, 1), -1.0);
        assert_eq!(r.get(1, 2), 0.0); // nodes 2 and 4 not adjacent
    }
}
