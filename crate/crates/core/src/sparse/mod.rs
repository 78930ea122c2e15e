//! Compressed sparse row matrices and a direct solver for them.
//!
//! The solver reorders the matrix with reverse Cuthill-McKee and factorizes
//! the resulting band: Cholesky for symmetric positive definite systems, LU
//! with partial pivoting otherwise. On structured quadrilateral meshes the
//! band is the natural fill envelope, so this is the whole direct-solve story.

mod banded;
mod ordering;

pub use banded::{BandCholesky, BandLu};
pub use ordering::reverse_cuthill_mckee;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from `(row, col, value)` triplets. Duplicate
    /// entries are summed in input order, so the result is deterministic.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1));

        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len() / 2);
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len() / 2);
        let mut last: Option<(usize, usize)> = None;
        for t in order {
            let (r, c, v) = triplets[t];
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = 0.0);
        out
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Entrywise sum; both matrices must share dimension (patterns may differ).
    pub fn add(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.n != other.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: other.n,
            });
        }
        let mut triplets = self.triplets();
        triplets.extend(other.triplets());
        Ok(CsrMatrix::from_triplets(self.n, &triplets))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        CsrMatrix::from_triplets(self.n, &t)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// `vᵀ A u`.
    pub fn bilinear(&self, v: &[f64], u: &[f64]) -> f64 {
        v.iter().zip(self.mul_vec(u)).map(|(a, b)| a * b).sum()
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let tol = rel_tol * self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.n).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol))
    }

    /// Half bandwidth of the matrix after symmetric permutation `perm`
    /// (`perm[old] = new`), as `(lower, upper)`.
    fn bandwidth(&self, perm: &[usize]) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for r in 0..self.n {
            for (c, _) in self.row(r) {
                let (pr, pc) = (perm[r], perm[c]);
                if pr > pc {
                    lower = lower.max(pr - pc);
                } else {
                    upper = upper.max(pc - pr);
                }
            }
        }
        (lower, upper)
    }
}

/// A factorized square matrix. Read-only after construction, so concurrent
/// solves with distinct right-hand sides are safe.
#[derive(Debug)]
pub struct Factorization {
    /// `perm[old] = new`.
    perm: Vec<usize>,
    kind: FactorKind,
}

#[derive(Debug)]
enum FactorKind {
    Cholesky(BandCholesky),
    Lu(BandLu),
}

impl Factorization {
    /// Factorizes `a`. With `symmetric` set, Cholesky is tried first and LU
    /// is used if the matrix turns out not to be positive definite.
    pub fn new(a: &CsrMatrix, symmetric: bool) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        let (lower, upper) = a.bandwidth(&perm);
        if symmetric {
            let band = lower.max(upper);
            if let Some(chol) = BandCholesky::factor(a, &perm, band) {
                return Ok(Self {
                    perm,
                    kind: FactorKind::Cholesky(chol),
                });
            }
        }
        let lu = BandLu::factor(a, &perm, lower, upper).map_err(|row| {
            let original = perm.iter().position(|&p| p == row).unwrap_or(row);
            Error::Singular { row: original }
        })?;
        Ok(Self {
            perm,
            kind: FactorKind::Lu(lu),
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.kind, FactorKind::Cholesky(_))
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(rhs, false)
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(rhs, true)
    }

    fn solve_impl(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: rhs.len(),
            });
        }
        let mut x = vec![0.0; n];
        for (old, &new) in self.perm.iter().enumerate() {
            x[new] = rhs[old];
        }
        match (&self.kind, transpose) {
            (FactorKind::Cholesky(c), _) => c.solve_in_place(&mut x),
            (FactorKind::Lu(lu), false) => lu.solve_in_place(&mut x),
            (FactorKind::Lu(lu), true) => lu.solve_transpose_in_place(&mut x),
        }
        Ok(self.perm.iter().map(|&new| x[new]).collect())
    }
}
