use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Mat, Side};

use super::assembly::LinearSystem;
use super::field::FeField;
use super::scalar::{norm2, Scalar};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Relative residual accepted after a direct solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[allow(clippy::large_enum_variant)]
enum Factor<S: Scalar> {
    Cholesky(Llt<usize, S>),
    Lu(Lu<usize, S>),
}

/// Factorization of the free-free block, reusable for many right-hand sides
/// and Dirichlet traces.
pub struct FactoredSystem<S: Scalar> {
    matrix: CsrMatrix<S>,
    free: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
    factor: Option<Factor<S>>,
}

impl<S: Scalar> FactoredSystem<S> {
    /// Factorizes the rows and columns of `matrix` whose `constrained` flag is false.
    pub fn new(matrix: &CsrMatrix<S>, constrained: &[bool]) -> Result<Self> {
        let n = matrix.nrows;
        if constrained.len() != n || matrix.ncols != n {
            return Err(Error::arg("constraint mask does not match the matrix"));
        }
        let mut free = vec![None; n];
        let mut free_nodes = Vec::new();
        for (k, &c) in constrained.iter().enumerate() {
            if !c {
                free[k] = Some(free_nodes.len());
                free_nodes.push(k);
            }
        }
        let nf = free_nodes.len();
        if nf == 0 {
            return Ok(Self { matrix: matrix.clone(), free, free_nodes, factor: None });
        }
        // reduced matrix in CSC layout (transpose of the reduced CSR)
        let mut counts = vec![0usize; nf + 1];
        for &r in &free_nodes {
            for (c, _) in matrix.row(r) {
                if let Some(fc) = free[c] {
                    counts[fc + 1] += 1;
                }
            }
        }
        for i in 0..nf {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let nnz = col_ptr[nf];
        let mut row_idx = vec![0usize; nnz];
        let mut vals = vec![S::zero(); nnz];
        for (fr, &r) in free_nodes.iter().enumerate() {
            for (c, v) in matrix.row(r) {
                if let Some(fc) = free[c] {
                    row_idx[next[fc]] = fr;
                    vals[next[fc]] = v;
                    next[fc] += 1;
                }
            }
        }
        let symbolic = SymbolicSparseColMatRef::new_checked(nf, nf, &col_ptr, None, &row_idx);
        let mat = SparseColMatRef::new(symbolic, &vals);
        let factor = if S::IS_COMPLEX {
            None
        } else {
            mat.sp_cholesky(Side::Lower).ok().map(Factor::Cholesky)
        };
        let factor = match factor {
            Some(f) => f,
            None => Factor::Lu(mat.sp_lu().map_err(|e| {
                Error::numerical(format!("sparse LU failed on {nf} unknowns: {e:?}"))
            })?),
        };
        Ok(Self { matrix: matrix.clone(), free, free_nodes, factor: Some(factor) })
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, Some(Factor::Cholesky(_)))
    }

    /// Solves with load `rhs` and prescribed values `trace` on constrained
    /// nodes (entries at free nodes of `trace` are ignored).
    pub fn solve(&self, rhs: &[S], trace: &[S]) -> Result<Vec<S>> {
        let solutions = self.solve_many(&[rhs], &[trace])?;
        Ok(solutions.into_iter().next().unwrap())
    }

    /// Batched form of [`FactoredSystem::solve`].
    pub fn solve_many(&self, rhs: &[&[S]], traces: &[&[S]]) -> Result<Vec<Vec<S>>> {
        let n = self.matrix.nrows;
        if rhs.len() != traces.len() || rhs.iter().chain(traces).any(|v| v.len() != n) {
            return Err(Error::arg("right-hand side length does not match the system"));
        }
        let nf = self.free_nodes.len();
        let mut full: Vec<Vec<S>> = traces
            .iter()
            .map(|t| (0..n).map(|k| if self.free[k].is_some() { S::zero() } else { t[k] }).collect())
            .collect();
        let Some(factor) = &self.factor else {
            return Ok(full);
        };
        let mut b = Mat::<S>::zeros(nf, rhs.len());
        for (col, (f, u)) in rhs.iter().zip(&full).enumerate() {
            for (fr, &r) in self.free_nodes.iter().enumerate() {
                let mut v = f[r];
                for (c, a) in self.matrix.row(r) {
                    if self.free[c].is_none() {
                        v -= a * u[c];
                    }
                }
                b[(fr, col)] = v;
            }
        }
        let rhs_reduced = b.clone();
        match factor {
            Factor::Cholesky(f) => f.solve_in_place(b.as_mut()),
            Factor::Lu(f) => f.solve_in_place(b.as_mut()),
        }
        for (col, u) in full.iter_mut().enumerate() {
            for (fr, &r) in self.free_nodes.iter().enumerate() {
                u[r] = b[(fr, col)];
            }
            let res = self.reduced_residual(u, &rhs_reduced, col);
            let scale = (0..nf).map(|i| rhs_reduced[(i, col)].modulus().powi(2)).sum::<f64>().sqrt();
            let ok = u.iter().all(|v| v.is_finite_value());
            if !ok || res > RESIDUAL_TOLERANCE * scale.max(f64::MIN_POSITIVE) && res > 1e-300 {
                return Err(Error::numerical(format!(
                    "linear solve residual {res:.3e} against load norm {scale:.3e} on {nf} unknowns; \
                     matrix is singular or severely ill-conditioned (diagonal ratio {:.3e})",
                    self.diagonal_ratio()
                )));
            }
        }
        Ok(full)
    }

    fn reduced_residual(&self, u: &[S], rhs: &Mat<S>, col: usize) -> f64 {
        let mut acc = 0.0;
        for (fr, &r) in self.free_nodes.iter().enumerate() {
            let mut v = -rhs[(fr, col)];
            for (c, a) in self.matrix.row(r) {
                if self.free[c].is_some() {
                    v += a * u[c];
                }
            }
            acc += v.modulus().powi(2);
        }
        acc.sqrt()
    }

    fn diagonal_ratio(&self) -> f64 {
        let d: Vec<f64> = self.free_nodes.iter().map(|&r| self.matrix.get(r, r).modulus()).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Solves an assembled system by sparse direct factorization.
pub fn solve<'m, S: Scalar>(mesh: &'m TriMesh, system: &LinearSystem<S>) -> Result<FeField<'m, S>> {
    if system.rhs.len() != mesh.num_nodes() {
        return Err(Error::arg("system size differs from the mesh node count"));
    }
    let mask: Vec<bool> = system.constraints.iter().map(|c| c.is_some()).collect();
    let trace: Vec<S> = system.constraints.iter().map(|c| c.unwrap_or(S::zero())).collect();
    let factored = FactoredSystem::new(&system.matrix, &mask)?;
    let values = factored.solve(&system.rhs, &trace)?;
    FeField::new(mesh, values)
}

/// Relative residual `‖K u − f‖ / ‖f‖` over free nodes.
pub fn relative_residual<S: Scalar>(system: &LinearSystem<S>, u: &[S]) -> f64 {
    let r = system.residual(u);
    let f: Vec<S> = system
        .rhs
        .iter()
        .zip(&system.constraints)
        .map(|(&f, c)| if c.is_some() { S::zero() } else { f })
        .collect();
    let scale = norm2(&f);
    let res = norm2(&r);
    if scale == 0.0 {
        res
    } else {
        res / scale
    }
}
