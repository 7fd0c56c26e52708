//! Sparse Cholesky backend. The symbolic analysis (fill-reducing ordering and
//! elimination tree) depends only on the sparsity pattern, so it is computed
//! once per problem and reused for every numeric factorization.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Side};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct CholeskySolver {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicLlt<usize>,
}

impl CholeskySolver {
    /// The pattern is symmetric, so the CSR arrays double as CSC arrays.
    pub fn analyze(a: &CsrMatrix) -> Result<Self> {
        let (row_ptr, col_idx, _) = a.parts();
        let col_ptr = row_ptr.to_vec();
        let row_idx: Vec<usize> = col_idx.iter().map(|&c| c as usize).collect();
        let n = a.n();
        let symbolic = {
            let pattern = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
            SymbolicLlt::try_new(pattern, Side::Lower)
                .map_err(|e| Error::Singular(format!("symbolic factorization failed: {e:?}")))?
        };
        Ok(Self {
            col_ptr,
            row_idx,
            symbolic,
        })
    }

    /// Factorizes `a` (same pattern as at analysis) and overwrites `b` with
    /// the solution.
    pub fn solve(&self, a: &CsrMatrix, b: &mut [f64]) -> Result<()> {
        let n = a.n();
        let pattern = SymbolicSparseColMatRef::new_checked(n, n, &self.col_ptr, None, &self.row_idx);
        let (_, _, values) = a.parts();
        let mat = SparseColMatRef::new(pattern, values);
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Lower)
            .map_err(|e| Error::Singular(format!("matrix is not positive definite: {e:?}")))?;
        llt.solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(b, n, 1));
        Ok(())
    }
}
