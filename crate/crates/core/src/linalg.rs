//! Dense complex matrices and the handful of kernels the physics and
//! estimation layers need.
//!
//! Storage is row-major. For a composite system A⊗B the basis state
//! |i⟩_A|j⟩_B sits at index `i * d_B + j`.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
#[cfg(test)]
use crate::error::Error;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Absolute entrywise tolerance for treating a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&x| c(x, 0.0)).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// |ψ⟩⟨ψ|
    pub fn outer(psi: &[C64]) -> Self {
        let n = psi.len();
        Self::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
    }

    /// |i⟩⟨j| in dimension n.
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(i, j)] = ONE;
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn dagger(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    /// self += s * other
    pub fn axpy(&mut self, s: C64, other: &CMatrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.data[i * self.cols + i]).sum()
    }

    pub fn diag(&self) -> Vec<C64> {
        (0..self.rows.min(self.cols)).map(|i| self.data[i * self.cols + i]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// max |M − M†| over entries.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// (M + M†)/2
    pub fn hermitian_part(&self) -> Self {
        let n = self.rows;
        Self::from_fn(n, n, |i, j| (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5)
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Tr(self · other) without forming the product.
    pub fn trace_product(&self, other: &CMatrix) -> C64 {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.rows, other.cols);
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self.data[i * self.cols + k] * other.data[k * other.cols + i];
            }
        }
        acc
    }

    /// [self, other]
    pub fn commutator(&self, other: &CMatrix) -> CMatrix {
        &self.matmul(other) - &other.matmul(self)
    }

    /// self · M · self†
    pub fn sandwich(&self, m: &CMatrix) -> CMatrix {
        self.matmul(&self.matmul(m).dagger()).dagger()
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
}

/// out = a · b (out is overwritten).
pub fn matmul_into(a: &CMatrix, b: &CMatrix, out: &mut CMatrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, b.cols);
    let n = b.cols;
    out.data.iter_mut().for_each(|z| *z = ZERO);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == ZERO {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

/// Compressed sparse row matrix used for the fixed operators applied on
/// every integrator step.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    /// Drops entries with modulus `<= drop_tol`.
    pub fn from_dense(m: &CMatrix, drop_tol: f64) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..m.rows {
            for j in 0..m.cols {
                let z = m[(i, j)];
                if z.norm() > drop_tol {
                    col_idx.push(j);
                    vals.push(z);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { rows: m.rows, cols: m.cols, row_ptr, col_idx, vals }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Stored values in row-major pattern order.
    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.vals
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.vals[k];
            }
        }
        m
    }

    /// y = S x
    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for i in 0..self.rows {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.rows];
        self.apply_into(x, &mut y);
        y
    }

    /// ⟨x|S|x⟩
    pub fn expectation(&self, x: &[C64]) -> C64 {
        let mut acc = ZERO;
        for i in 0..self.rows {
            let mut row = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.vals[k] * x[self.col_idx[k]];
            }
            acc += x[i].conj() * row;
        }
        acc
    }

    /// Tr(S ρ)
    pub fn trace_with(&self, rho: &CMatrix) -> C64 {
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * rho[(self.col_idx[k], i)];
            }
        }
        acc
    }

    /// out = S · M
    pub fn mul_dense_into(&self, m: &CMatrix, out: &mut CMatrix) {
        debug_assert_eq!(m.rows, self.cols);
        let n = m.cols;
        out.data.iter_mut().for_each(|z| *z = ZERO);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let s = self.vals[k];
                let src = &m.data[self.col_idx[k] * n..(self.col_idx[k] + 1) * n];
                for (o, &v) in out_row.iter_mut().zip(src) {
                    *o += s * v;
                }
            }
        }
    }

    pub fn mul_dense(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.rows, m.cols);
        self.mul_dense_into(m, &mut out);
        out
    }

    /// S · M · S†
    pub fn sandwich(&self, m: &CMatrix) -> CMatrix {
        self.mul_dense(&self.mul_dense(m).dagger()).dagger()
    }
}

/// Kronecker product a ⊗ b.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac, br, bc) = (a.rows, a.cols, b.rows, b.cols);
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    let oc = ac * bc;
    for i in 0..ar {
        for j in 0..ac {
            let aij = a.data[i * ac + j];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out.data[(i * br + k) * oc + j * bc + l] = aij * b.data[k * bc + l];
                }
            }
        }
    }
    out
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

/// Partial trace of an operator on A⊗B, keeping one factor.
pub fn partial_trace(m: &CMatrix, dims: (usize, usize), keep: Subsystem) -> Result<CMatrix> {
    let (da, db) = dims;
    if !m.is_square() || m.rows != da * db {
        return Err(invalid(format!(
            "partial trace of a {}x{} matrix over dims ({da}, {db})",
            m.rows, m.cols
        )));
    }
    let n = da * db;
    Ok(match keep {
        Subsystem::A => CMatrix::from_fn(da, da, |i, j| {
            (0..db).map(|k| m.data[(i * db + k) * n + j * db + k]).sum()
        }),
        Subsystem::B => CMatrix::from_fn(db, db, |i, j| {
            (0..da).map(|k| m.data[(k * db + i) * n + k * db + j]).sum()
        }),
    })
}

/// Eigendecomposition of a Hermitian matrix: `values` ascending, the
/// columns of `vectors` the matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEig {
    /// V f(Λ) V†
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let n = self.values.len();
        let fl: Vec<C64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        CMatrix::from_fn(n, n, |i, j| (0..n).map(|k| v[(i, k)] * fl[k] * v[(j, k)].conj()).sum())
    }

    pub fn max_value(&self) -> f64 {
        *self.values.last().unwrap_or(&f64::NAN)
    }

    pub fn min_value(&self) -> f64 {
        *self.values.first().unwrap_or(&f64::NAN)
    }
}

/// Cyclic Jacobi eigendecomposition for Hermitian matrices.
pub fn hermitian_eig(m: &CMatrix) -> Result<HermitianEig> {
    if !m.is_square() {
        return Err(invalid("eigendecomposition of a non-square matrix"));
    }
    let dev = m.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(invalid(format!("matrix is not Hermitian (deviation {dev:.3e})")));
    }
    let n = m.rows;
    let mut a = m.hermitian_part();
    let mut v = CMatrix::identity(n);
    let total: f64 = a.data.iter().map(|z| z.norm_sqr()).sum();
    if total == 0.0 {
        return Ok(HermitianEig { values: vec![0.0; n], vectors: v });
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off <= 1e-32 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 || r < 1e-300 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let phase = apq / r; // e^{iφ}
                let theta = (aqq - app) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // G = diag(1, e^{-iφ}) · [[c, s], [-s, c]]
                let g00 = c(cs, 0.0);
                let g01 = c(sn, 0.0);
                let g10 = -phase.conj() * sn;
                let g11 = phase.conj() * cs;
                // A <- A G
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * g00 + aiq * g10;
                    a[(i, q)] = aip * g01 + aiq * g11;
                }
                // A <- G† A
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = g00.conj() * apj + g10.conj() * aqj;
                    a[(q, j)] = g01.conj() * apj + g11.conj() * aqj;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = c(a[(p, p)].re, 0.0);
                a[(q, q)] = c(a[(q, q)].re, 0.0);
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * g00 + viq * g10;
                    v[(i, q)] = vip * g01 + viq * g11;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let values = order.iter().map(|&k| a[(k, k)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(HermitianEig { values, vectors })
}

/// exp(−i H t) for Hermitian H.
pub fn unitary_propagator(h: &CMatrix, t: f64) -> Result<CMatrix> {
    let eig = hermitian_eig(h)?;
    Ok(eig.reconstruct_with(|l| C64::from_polar(1.0, -l * t)))
}

/// Principal square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    Ok(eig.reconstruct_with(|l| c(l.max(0.0).sqrt(), 0.0)))
}

/// Pseudo-inverse square root of a PSD matrix; eigenvalues below `cutoff`
/// are treated as zero.
pub fn psd_inv_sqrt(m: &CMatrix, cutoff: f64) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    Ok(eig.reconstruct_with(|l| if l > cutoff { c(1.0 / l.sqrt(), 0.0) } else { ZERO }))
}

/// Number of real parameters describing a d×d PSD matrix.
pub fn psd_param_count(d: usize) -> usize {
    d * d
}

/// Lower-triangular factor T with real diagonal built from `v`: the first
/// `d` entries fill the diagonal, the remaining pairs (re, im) fill the
/// strictly lower triangle row by row.
pub fn cholesky_factor_from_params(v: &[f64], d: usize) -> Result<CMatrix> {
    if v.len() != d * d {
        return Err(invalid(format!(
            "{} parameters for a {d}x{d} PSD matrix (need {})",
            v.len(),
            d * d
        )));
    }
    let mut t = CMatrix::zeros(d, d);
    for i in 0..d {
        t[(i, i)] = c(v[i], 0.0);
    }
    let mut k = d;
    for i in 0..d {
        for j in 0..i {
            t[(i, j)] = c(v[k], v[k + 1]);
            k += 2;
        }
    }
    Ok(t)
}

/// T†T for the lower-triangular factor described by `v`. Always Hermitian PSD.
pub fn psd_from_params(v: &[f64], d: usize) -> Result<CMatrix> {
    let t = cholesky_factor_from_params(v, d)?;
    Ok(t.dagger().matmul(&t))
}

/// Inverse of [`psd_from_params`]: finds `v` with `psd_from_params(v) = m`.
/// Rank-deficient directions get zero parameters.
pub fn psd_params_from_matrix(m: &CMatrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(invalid("PSD parameters of a non-square matrix"));
    }
    let d = m.rows;
    let scale = m.max_abs().max(1e-300);
    let mut t = CMatrix::zeros(d, d);
    for a in (0..d).rev() {
        let mut diag = m[(a, a)].re;
        for k in a + 1..d {
            diag -= t[(k, a)].norm_sqr();
        }
        if diag < -1e-10 * scale {
            return Err(invalid(format!("matrix is not PSD (pivot {diag:.3e})")));
        }
        let taa = diag.max(0.0).sqrt();
        t[(a, a)] = c(taa, 0.0);
        for b in 0..a {
            let mut num = m[(a, b)];
            for k in a + 1..d {
                num -= t[(k, a)].conj() * t[(k, b)];
            }
            t[(a, b)] = if taa > 1e-14 * scale.sqrt() { num / taa } else { ZERO };
        }
    }
    let mut v = Vec::with_capacity(d * d);
    for i in 0..d {
        v.push(t[(i, i)].re);
    }
    for i in 0..d {
        for j in 0..i {
            v.push(t[(i, j)].re);
            v.push(t[(i, j)].im);
        }
    }
    Ok(v)
}

/// Solves the real linear system A x = b by Gaussian elimination with
/// partial pivoting. Pivots below `1e-12` (relative to the largest entry)
/// are reported as singular.
pub fn solve_real(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(invalid("linear system dimensions do not match"));
    }
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col].abs() < 1e-12 * scale {
            return Err(invalid("matrix is singular"));
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r][k] -= f * m[col][k];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Ok(x)
}
