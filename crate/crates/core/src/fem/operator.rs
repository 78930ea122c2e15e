use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use super::FeSpace;
use crate::sparse::{CsrMatrix, Factorization};
use crate::{Error, Result};

/// A system matrix with Dirichlet conditions eliminated symmetrically and a
/// lazily computed, cached factorization.
#[derive(Debug)]
pub struct SparseOperator {
    /// The assembled form before boundary conditions (row = test dof).
    pub raw: CsrMatrix,
    matrix: CsrMatrix,
    /// Couplings of free rows to Dirichlet columns, for lifting.
    lifting: Vec<(usize, usize, f64)>,
    pub space: Arc<FeSpace>,
    symmetric: bool,
    factor: OnceLock<Factorization>,
    factor_lock: Mutex<()>,
    factorizations: AtomicUsize,
}

impl SparseOperator {
    pub fn new(raw: CsrMatrix, space: Arc<FeSpace>) -> Result<Self> {
        if raw.nrows() != space.n_dofs() {
            return Err(Error::Dimension {
                expected: space.n_dofs(),
                found: raw.nrows(),
            });
        }
        let symmetric = raw.is_symmetric(1e-12);
        let mut triplets = Vec::with_capacity(raw.nnz());
        let mut lifting = Vec::new();
        for r in 0..raw.nrows() {
            if space.is_dirichlet(r) {
                triplets.push((r, r, 1.0));
                continue;
            }
            for (c, v) in raw.row(r) {
                if space.is_dirichlet(c) {
                    lifting.push((r, c, v));
                } else {
                    triplets.push((r, c, v));
                }
            }
        }
        Ok(Self {
            matrix: CsrMatrix::from_triplets(raw.nrows(), &triplets),
            raw,
            lifting,
            space,
            symmetric,
            factor: OnceLock::new(),
            factor_lock: Mutex::new(()),
            factorizations: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.raw.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// The matrix with boundary conditions imposed.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn factorization_count(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    fn factorization(&self) -> Result<&Factorization> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let _guard = self.factor_lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = Factorization::new(&self.matrix, self.symmetric)?;
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        Ok(self.factor.get_or_init(|| f))
    }

    fn check(&self, rhs: &[f64]) -> Result<()> {
        if rhs.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: rhs.len(),
            });
        }
        Ok(())
    }

    /// Solves `A u = rhs` with the space's Dirichlet values.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.check(rhs)?;
        let mut b = rhs.to_vec();
        for &(r, c, v) in &self.lifting {
            b[r] -= v * self.space.dirichlet[&c];
        }
        for (&d, &g) in &self.space.dirichlet {
            b[d] = g;
        }
        self.factorization()?.solve(&b)
    }

    /// Solves `A u = rhs` with homogeneous Dirichlet values.
    pub fn solve_homogeneous(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.check(rhs)?;
        let mut b = rhs.to_vec();
        for &d in self.space.dirichlet.keys() {
            b[d] = 0.0;
        }
        self.factorization()?.solve(&b)
    }

    /// Solves the adjoint system `A^T z = rhs`, `z = 0` on Dirichlet dofs.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.symmetric {
            return self.solve_homogeneous(rhs);
        }
        self.check(rhs)?;
        let mut b = rhs.to_vec();
        for &d in self.space.dirichlet.keys() {
            b[d] = 0.0;
        }
        self.factorization()?.solve_transpose(&b)
    }

    /// `v^T A u` with the unconstrained form.
    pub fn form(&self, u: &[f64], v: &[f64]) -> f64 {
        self.raw.bilinear(v, u)
    }
}
