//! Sparse symmetric solves backed by faer.
//!
//! Newton and stability matrices are symmetric but indefinite. An unpivoted
//! sparse LDLᵀ is tried first since it is several times cheaper than LU; the
//! answer is checked against the matrix and, if the relative residual stays
//! above the contract after refinement, the system is redone with a pivoted
//! sparse LU.

use std::cell::OnceCell;
use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::{LdltParams, LdltRegularization};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, MatMut, Par, Side, Spec};

use crate::error::{Error, Result};

/// Target relative residual for every linear solve.
pub const LINEAR_TOL: f64 = 1e-12;

/// Square sparse matrix assembled from triplets; duplicates are summed.
pub fn assemble(n: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseColMat<usize, f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(n, n, &t).map_err(|e| Error::LinearSolve(format!("assembly: {e:?}")))
}

pub fn matvec(a: &SparseColMat<usize, f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    let cp = a.col_ptr();
    let ri = a.row_idx();
    let v = a.val();
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for p in cp[j]..cp[j + 1] {
            y[ri[p]] += v[p] * xj;
        }
    }
    y
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Caches symbolic analyses across matrices sharing one sparsity pattern.
#[derive(Default)]
pub struct SymmetricSolver {
    chol: Option<(usize, Arc<SymbolicCholesky<usize>>)>,
}

impl SymmetricSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor(&mut self, a: SparseColMat<usize, f64>) -> Result<Factorization> {
        let nnz = a.compute_nnz();
        if self.chol.as_ref().map(|c| c.0) != Some(nnz) {
            let sym = factorize_symbolic_cholesky(
                a.symbolic(),
                Side::Lower,
                SymmetricOrdering::Amd,
                CholeskySymbolicParams::default(),
            )
            .map_err(|e| Error::LinearSolve(format!("symbolic analysis: {e:?}")))?;
            self.chol = Some((nnz, Arc::new(sym)));
        }
        let sym = self.chol.as_ref().unwrap().1.clone();
        let mut values = vec![0.0; sym.len_val()];
        let par = Par::Seq;
        let params: Spec<LdltParams, f64> = Default::default();
        let ok = {
            let mut buf = MemBuffer::new(sym.factorize_numeric_ldlt_scratch::<f64>(par, params));
            sym.factorize_numeric_ldlt(
                &mut values,
                a.as_ref(),
                Side::Lower,
                LdltRegularization::default(),
                par,
                MemStack::new(&mut buf),
                params,
            )
            .is_ok()
        };
        Ok(Factorization {
            a,
            ldlt: if ok && values.iter().all(|v| v.is_finite()) { Some((sym, values)) } else { None },
            lu: OnceCell::new(),
        })
    }
}

pub struct Factorization {
    a: SparseColMat<usize, f64>,
    ldlt: Option<(Arc<SymbolicCholesky<usize>>, Vec<f64>)>,
    lu: OnceCell<std::result::Result<Lu<usize, f64>, String>>,
}

impl Factorization {
    pub fn matrix(&self) -> &SparseColMat<usize, f64> {
        &self.a
    }

    fn ldlt_solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let (sym, values) = self.ldlt.as_ref()?;
        let mut x = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let par = Par::Seq;
        let mut buf = MemBuffer::new(sym.solve_in_place_scratch::<f64>(1, par));
        LdltRef::new(sym, values).solve_in_place_with_conj(Conj::No, x.as_mut(), par, MemStack::new(&mut buf));
        Some((0..b.len()).map(|i| x[(i, 0)]).collect())
    }

    fn lu(&self) -> Result<&Lu<usize, f64>> {
        let r = self.lu.get_or_init(|| {
            let sym = SymbolicLu::try_new(self.a.symbolic()).map_err(|e| format!("{e:?}"))?;
            Lu::try_new_with_symbolic(sym, self.a.as_ref()).map_err(|e| format!("{e:?}"))
        });
        r.as_ref().map_err(|e| Error::LinearSolve(format!("sparse LU: {e}")))
    }

    fn lu_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        use faer::linalg::solvers::SolveCore;
        let lu = self.lu()?;
        let mut x = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let xm: MatMut<'_, f64> = x.as_mut();
        lu.solve_in_place_with_conj(Conj::No, xm);
        Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
    }

    fn refine(&self, b: &[f64], mut x: Vec<f64>, use_lu: bool) -> Result<(Vec<f64>, f64)> {
        let bn = norm(b).max(f64::MIN_POSITIVE);
        let mut rel = f64::INFINITY;
        for _ in 0..3 {
            let ax = matvec(&self.a, &x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            rel = norm(&r) / bn;
            if !rel.is_finite() || rel <= LINEAR_TOL {
                break;
            }
            let d = if use_lu {
                self.lu_solve(&r)?
            } else {
                match self.ldlt_solve(&r) {
                    Some(d) => d,
                    None => break,
                }
            };
            for (xi, di) in x.iter_mut().zip(d) {
                *xi += di;
            }
        }
        Ok((x, rel))
    }

    /// Solve `A x = b` to relative residual `LINEAR_TOL`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if let Some(x) = self.ldlt_solve(b) {
            if x.iter().all(|v| v.is_finite()) {
                let (x, rel) = self.refine(b, x, false)?;
                if rel <= LINEAR_TOL {
                    return Ok(x);
                }
                log::debug!("LDLT residual {rel:.2e}; falling back to LU");
            }
        }
        let x = self.lu_solve(b)?;
        let (x, rel) = self.refine(b, x, true)?;
        if rel <= 1e3 * LINEAR_TOL {
            Ok(x)
        } else {
            Err(Error::LinearSolve(format!("relative residual {rel:.2e} after refinement")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_like(m: usize, shift: f64) -> Vec<(usize, usize, f64)> {
        let idx = |i: usize, j: usize| i * m + j;
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let r = idx(i, j);
                t.push((r, r, -4.0 + shift));
                if i > 0 {
                    t.push((r, idx(i - 1, j), 1.0));
                }
                if i + 1 < m {
                    t.push((r, idx(i + 1, j), 1.0));
                }
                if j > 0 {
                    t.push((r, idx(i, j - 1), 1.0));
                }
                if j + 1 < m {
                    t.push((r, idx(i, j + 1), 1.0));
                }
            }
        }
        t
    }

    fn check(shift: f64) {
        let m = 20;
        let a = assemble(m * m, &laplacian_like(m, shift)).unwrap();
        let x0: Vec<f64> = (0..m * m).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let b = matvec(&a, &x0);
        let mut s = SymmetricSolver::new();
        let f = s.factor(a).unwrap();
        let x = f.solve(&b).unwrap();
        let err = x.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "shift {shift}: err {err}");
    }

    #[test]
    fn solves_definite_system() {
        check(0.0);
    }

    #[test]
    fn solves_indefinite_system() {
        // shifts the spectrum of the 2D Laplacian across zero
        check(3.1);
    }

    #[test]
    fn symbolic_analysis_is_reused() {
        let m = 10;
        let mut s = SymmetricSolver::new();
        for shift in [0.0, 0.5, 1.0] {
            let a = assemble(m * m, &laplacian_like(m, shift)).unwrap();
            let b = vec![1.0; m * m];
            let f = s.factor(a).unwrap();
            let x = f.solve(&b).unwrap();
            let r = matvec(f.matrix(), &x);
            assert!(r.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-10));
        }
        assert!(s.chol.is_some());
    }
}
