//! Dense linear-algebra kernels: row-major matrices, matrix-vector products,
//! a Cholesky SPD solver, and the Moore-Penrose pseudo-inverse for
//! full-row-rank matrices.
//!
//! Single-threaded kernels are deliberate: the detectors only need `O(MN)`
//! products per layer and one `O(M^3)` factorization per channel draw, which
//! is cheap at the problem sizes this crate targets (N up to a few hundred).

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Dense real matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    /// Build from row-major data. Rejects shape/data length mismatch and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.rows];
        self.matvec_into(x, &mut out)?;
        Ok(out)
    }

    /// `self * x` written into `out`, avoiding the allocation in hot loops.
    pub fn matvec_into(&self, x: &[S], out: &mut [S]) -> Result<()> {
        if x.len() != self.cols || out.len() != self.rows {
            return Err(Error::dim(format!(
                "matvec: {}x{} with input {} output {}",
                self.rows,
                self.cols,
                x.len(),
                out.len()
            )));
        }
        for (row, o) in self.data.chunks_exact(self.cols).zip(out.iter_mut()) {
            *o = dot(row, x);
        }
        Ok(())
    }

    /// `self^T * x`.
    pub fn tr_matvec(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.cols];
        self.tr_matvec_into(x, &mut out)?;
        Ok(out)
    }

    /// `self^T * x` written into `out`. Traverses rows so the access stays
    /// contiguous in the row-major layout.
    pub fn tr_matvec_into(&self, x: &[S], out: &mut [S]) -> Result<()> {
        if x.len() != self.rows || out.len() != self.cols {
            return Err(Error::dim(format!(
                "tr_matvec: {}x{} with input {} output {}",
                self.rows,
                self.cols,
                x.len(),
                out.len()
            )));
        }
        out.fill(S::zero());
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x.iter()) {
            axpy(xi, row, out);
        }
        Ok(())
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                axpy(self.get(r, k), other.row(k), orow);
            }
        }
        Ok(out)
    }

    /// Gram matrix `self * self^T` (exactly symmetric by construction).
    pub fn gram_rows(&self) -> Self {
        Self::from_fn(self.rows, self.rows, |i, j| dot(self.row(i), self.row(j)))
    }

    pub fn frob_norm(&self) -> S {
        self.data
            .iter()
            .map(|&v| v * v)
            .fold(S::zero(), |a, b| a + b)
            .sqrt()
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lower-triangular Cholesky factor of `a`, or the failing pivot index.
fn cholesky<S: Scalar>(a: &DenseMatrix<S>) -> std::result::Result<DenseMatrix<S>, usize> {
    let k = a.rows();
    let mut l = DenseMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                let d = a.get(i, i) - s;
                if d <= S::zero() || !d.is_finite() {
                    return Err(i);
                }
                l.set(i, j, d.sqrt());
            } else {
                l.set(i, j, (a.get(i, j) - s) / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve `A X = B` for symmetric positive definite `A` by Cholesky
/// factorization. If a pivot fails, retries once with a trace-scaled jitter
/// on the diagonal before giving up.
pub fn solve_spd<S: Scalar>(a: &DenseMatrix<S>, b: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
    let k = a.rows();
    if a.cols() != k || k == 0 {
        return Err(Error::dim(format!("solve_spd: A is {}x{}", a.rows(), a.cols())));
    }
    if b.rows() != k {
        return Err(Error::dim(format!(
            "solve_spd: A is {k}x{k} but B has {} rows",
            b.rows()
        )));
    }
    // Symmetry to 1e-10 relative to the largest entry.
    let scale = a
        .as_slice()
        .iter()
        .fold(S::zero(), |m, &v| m.max(v.abs()))
        .max(S::one());
    let tol = cast::<S>(1e-10) * scale;
    for i in 0..k {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > tol {
                return Err(Error::InvalidParam(format!(
                    "solve_spd: matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let l = match cholesky(a) {
        Ok(l) => l,
        Err(_) => {
            let mut trace = S::zero();
            for i in 0..k {
                trace += a.get(i, i);
            }
            let jitter = cast::<S>(1e-12) * trace / cast::<S>(k as f64);
            let mut aj = a.clone();
            for i in 0..k {
                aj.set(i, i, aj.get(i, i) + jitter);
            }
            cholesky(&aj).map_err(|pivot| Error::NotPositiveDefinite { pivot })?
        }
    };

    // Column-wise L y = b, then L^T x = y.
    let mut x = DenseMatrix::zeros(k, b.cols());
    let mut col = vec![S::zero(); k];
    for c in 0..b.cols() {
        for i in 0..k {
            let s = dot(&l.row(i)[..i], &col[..i]);
            col[i] = (b.get(i, c) - s) / l.get(i, i);
        }
        for i in (0..k).rev() {
            let mut s = col[i];
            for j in i + 1..k {
                s -= l.get(j, i) * col[j];
            }
            col[i] = s / l.get(i, i);
        }
        for i in 0..k {
            x.set(i, c, col[i]);
        }
    }
    Ok(x)
}

/// Moore-Penrose pseudo-inverse `H^T (H H^T)^{-1}` of a full-row-rank
/// `M x N` matrix with `M <= N`. Rank deficiency surfaces as the solver's
/// factorization error.
pub fn pseudo_inverse<S: Scalar>(h: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
    if h.rows() > h.cols() {
        return Err(Error::dim(format!(
            "pseudo_inverse: {}x{} has more rows than columns",
            h.rows(),
            h.cols()
        )));
    }
    let gram = h.gram_rows();
    // (H H^T)^{-1} H, transposed, equals H^T (H H^T)^{-1}.
    Ok(solve_spd(&gram, h)?.transpose())
}
