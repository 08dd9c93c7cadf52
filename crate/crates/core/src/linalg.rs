//! Small dense eigenvalue helpers and a banded LU factorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which a (Jacobi-scaled) eigenvalue of the scale
/// matrix is treated as zero.
const NULL_TOL: f64 = 1e-12;

/// Outcome of maximizing `ξᵀPξ / ξᵀSξ` over `ξ ≠ 0` for PSD `P`, `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioBound {
    /// Largest ratio; `+∞` when some `ξ` has `ξᵀSξ = 0 < ξᵀPξ`.
    pub value: f64,
    /// Maximizing direction (or the null-space witness when infinite).
    pub direction: DVector<f64>,
}

/// Largest generalized eigenvalue of the pencil `(P, S)` with `S` possibly
/// singular. Null directions of `S` are handled exactly: the ratio is
/// infinite when `P` does not vanish on them.
pub fn max_generalized_ratio(p: &DMatrix<f64>, s: &DMatrix<f64>) -> RatioBound {
    let n = p.nrows();
    let p_scale = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let p_tol = 1e-13 * p_scale.max(f64::MIN_POSITIVE);

    // Jacobi scaling so that tiny but positive diagonal weights are kept.
    let diag: Vec<f64> = (0..n).map(|i| s[(i, i)].max(0.0)).collect();
    let active: Vec<usize> = (0..n).filter(|&i| diag[i] > 0.0).collect();
    for i in (0..n).filter(|i| diag[*i] <= 0.0) {
        if p[(i, i)] > p_tol {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            return RatioBound {
                value: f64::INFINITY,
                direction: e,
            };
        }
    }
    if active.is_empty() {
        return RatioBound {
            value: 0.0,
            direction: DVector::zeros(n),
        };
    }
    let m = active.len();
    let inv_sqrt: Vec<f64> = active.iter().map(|&i| 1.0 / diag[i].sqrt()).collect();
    let s_hat = DMatrix::from_fn(m, m, |a, b| {
        s[(active[a], active[b])] * inv_sqrt[a] * inv_sqrt[b]
    });
    let p_hat = DMatrix::from_fn(m, m, |a, b| {
        p[(active[a], active[b])] * inv_sqrt[a] * inv_sqrt[b]
    });
    let p_hat_scale = p_hat.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let eig = SymmetricEigen::new(s_hat);
    let lift = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for (a, &i) in active.iter().enumerate() {
            out[i] = v[a] * inv_sqrt[a];
        }
        out
    };

    let mut range_cols = Vec::new();
    for j in 0..m {
        let lam = eig.eigenvalues[j];
        let v = eig.eigenvectors.column(j).into_owned();
        if lam <= NULL_TOL {
            let q = (v.transpose() * &p_hat * &v)[(0, 0)];
            if q > 1e-13 * p_hat_scale.max(f64::MIN_POSITIVE) {
                return RatioBound {
                    value: f64::INFINITY,
                    direction: lift(&v),
                };
            }
        } else {
            range_cols.push(j);
        }
    }
    // Restrict to range(S): T = Λ^{-1/2} Vᵀ P V Λ^{-1/2}.
    let r = range_cols.len();
    let basis = DMatrix::from_fn(m, r, |a, c| {
        eig.eigenvectors[(a, range_cols[c])] / eig.eigenvalues[range_cols[c]].sqrt()
    });
    let t = basis.transpose() * &p_hat * &basis;
    let t = (&t + t.transpose()) * 0.5;
    let teig = SymmetricEigen::new(t);
    let (imax, vmax) = teig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let dir_hat = &basis * teig.eigenvectors.column(imax);
    RatioBound {
        value: vmax.max(0.0),
        direction: lift(&dir_hat),
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Largest absolute asymmetry `|aᵢⱼ − aⱼᵢ|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Square banded matrix with `lower` sub- and `upper` super-diagonals,
/// stored row by row with room for the fill-in of partial pivoting.
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

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.lower
    }

    pub fn upper(&self) -> usize {
        self.upper
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.lower - i)
    }

    /// True when `(i, j)` lies inside the declared band.
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.lower >= i && j <= i + self.upper && i < self.n && j < self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Nonzero entries of row `i` within the band, as `(column, value)`.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = i.saturating_sub(self.lower);
        let hi = (i + self.upper).min(self.n - 1);
        (lo..=hi).map(move |j| (j, self.get(i, j)))
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row_entries(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// LU factorization with partial (row) pivoting, in place.
    ///
    /// Each row tracks the last column it may occupy, so elimination costs
    /// `O(n·lower·upper)` unless pivoting actually widens the rows.
    pub fn factorize(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.lower;
        let mut row_end: Vec<usize> = (0..n).map(|i| (i + self.upper).min(n - 1)).collect();
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut piv = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in (k + 1)..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            pivots[k] = piv;
            if best == 0.0 {
                return Err(Error::SingularMatrix { column: k });
            }
            if piv != k {
                let last = row_end[k].max(row_end[piv]);
                let a = self.slot(k, k);
                let b = self.slot(piv, k);
                for off in 0..=(last - k) {
                    self.data.swap(a + off, b + off);
                }
                row_end.swap(k, piv);
                row_end[k] = last;
                row_end[piv] = last;
            }
            let len = row_end[k] - k + 1;
            let pivot_start = self.slot(k, k);
            let inv = 1.0 / self.data[pivot_start];
            for i in (k + 1)..=last_row {
                let row_start = self.slot(i, k);
                let factor = self.data[row_start] * inv;
                self.data[row_start] = factor;
                if factor == 0.0 {
                    continue;
                }
                row_end[i] = row_end[i].max(row_end[k]);
                // rows k and i are disjoint slices of `data`
                let (head, tail) = self.data.split_at_mut(row_start);
                let src = &head[pivot_start + 1..pivot_start + len];
                let dst = &mut tail[1..len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= factor * s;
                }
            }
        }
        Ok(BandLu {
            band: self,
            pivots,
            row_end,
        })
    }
}

/// Factors produced by [`BandMatrix::factorize`].
#[derive(Debug, Clone)]
pub struct BandLu {
    band: BandMatrix,
    pivots: Vec<usize>,
    row_end: Vec<usize>,
}

impl BandLu {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.band;
        let n = a.n;
        let kl = a.lower;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in (k + 1)..=(k + kl).min(n - 1) {
                    b[i] -= a.data[a.slot(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let last = self.row_end[i];
            let start = a.slot(i, i);
            let row = &a.data[start..start + (last - i + 1)];
            let mut acc = b[i];
            for (off, v) in row.iter().enumerate().skip(1) {
                acc -= v * b[i + off];
            }
            b[i] = acc / row[0];
        }
    }
}
