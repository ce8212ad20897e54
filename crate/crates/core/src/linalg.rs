//! Small dense complex linear algebra.
//!
//! Everything here is sized for curvature forms of dimension at most a few
//! dozen: Hermitian eigenvalues come from cyclic Jacobi rotations, and the
//! inverse square root used by the normal-frame construction is assembled
//! from the eigendecomposition.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative tolerance for Hermitian symmetry of stored matrices.
pub const HERMITIAN_TOL: f64 = 1e-12;

const JACOBI_OFF_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(n, m, rows.concat())
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> =
            rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: C64, other: &CMatrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(l, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in add");
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }
}

impl Sub<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch in sub");
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        CMatrix { rows: self.rows, cols: self.cols, data }
    }
}

impl Mul<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs).expect("shape mismatch in mul")
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// A square matrix that is Hermitian up to [`HERMITIAN_TOL`].
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Accepts `m` if it is Hermitian within the relative tolerance.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("{}x{} is not square", m.rows, m.cols)));
        }
        let asym = asymmetry(&m);
        let tol = HERMITIAN_TOL * m.max_abs();
        if asym > tol {
            return Err(Error::NotHermitian { asymmetry: asym, tolerance: tol });
        }
        let (h, _) = hermitize(&m)?;
        Ok(h)
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        Self(CMatrix::from_diag(diag))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// `U* H U`, which stays Hermitian.
    pub fn congruence(&self, u: &CMatrix) -> Result<Self> {
        let m = u.adjoint().matmul(&self.0)?.matmul(u)?;
        Ok(hermitize(&m)?.0)
    }

    pub fn sub(&self, other: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &other.0)
    }

    pub fn neg(&self) -> HermitianMatrix {
        HermitianMatrix(self.0.scale(C64::new(-1.0, 0.0)))
    }

    /// Nested `Vec` view of `[re, im]` pairs for reports.
    pub fn to_pairs(&self) -> Vec<Vec<[f64; 2]>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| [self.0[(i, j)].re, self.0[(i, j)].im]).collect()).collect()
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

/// Largest `|A[i,j] - conj(A[j,i])| / 2`, including the imaginary part of the diagonal.
fn asymmetry(a: &CMatrix) -> f64 {
    let n = a.rows;
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm() / 2.0);
        }
    }
    worst
}

/// Returns `(A + A*) / 2` together with the largest deviation `|A[i,j] - conj(A[j,i])| / 2`.
pub fn hermitize(a: &CMatrix) -> Result<(HermitianMatrix, f64)> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", a.rows, a.cols)));
    }
    let n = a.rows;
    let mut h = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
        }
        h[(i, i)] = C64::new(h[(i, i)].re, 0.0);
    }
    Ok((HermitianMatrix(h), asymmetry(a)))
}

/// Spectrum summary of a Hermitian matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenReport {
    pub eigenvalues: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// `max_k ||H v_k - lambda_k v_k|| / ||H||_F`
    pub residual: f64,
}

/// Eigenvalues (ascending) and unitary eigenvector matrix (columns).
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

fn off_diagonal_norm(a: &CMatrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Full eigendecomposition by cyclic complex Jacobi rotations.
pub fn eigh(h: &HermitianMatrix) -> Result<Eigen> {
    let n = h.dim();
    let mut a = h.0.clone();
    let mut v = CMatrix::identity(n);
    let norm = a.frobenius_norm();
    let target = JACOBI_OFF_TOL * norm;

    let mut converged = off_diagonal_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let b = a[(p, q)];
                let b_abs = b.norm();
                if b_abs <= f64::MIN_POSITIVE {
                    continue;
                }
                let phase = b / b_abs;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * b_abs);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // U restricted to (p, q): [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
                let e = phase.conj();
                let upq = C64::new(s, 0.0);
                let uqp = -e * s;
                let uqq = e * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c + akq * uqp;
                    a[(k, q)] = akp * upq + akq * uqq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c + aqk * uqp.conj();
                    a[(q, k)] = apk * upq + aqk * uqq.conj();
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c + vkq * uqp;
                    v[(k, q)] = vkp * upq + vkq * uqq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::NoConvergence { algorithm: "cyclic Jacobi", iterations: sweeps });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok(Eigen { values, vectors })
}

/// Sorted eigenvalues with a reconstruction residual.
pub fn eigvalsh(h: &HermitianMatrix) -> Result<EigenReport> {
    let eig = eigh(h)?;
    let n = h.dim();
    if n == 0 {
        return Err(Error::Dimension("empty matrix has no spectrum".into()));
    }
    let norm = h.0.frobenius_norm();
    let mut residual = 0.0_f64;
    if norm > 0.0 {
        for (k, &lambda) in eig.values.iter().enumerate() {
            let vk = eig.vectors.column(k);
            let hv = h.0.mat_vec(&vk);
            let r: f64 = hv.iter().zip(&vk).map(|(x, y)| (x - y * lambda).norm_sqr()).sum();
            residual = residual.max(r.sqrt() / norm);
        }
    }
    Ok(EigenReport {
        min: eig.values[0],
        max: eig.values[n - 1],
        eigenvalues: eig.values,
        residual,
    })
}

/// Outcome of a positive-definiteness test with a relative margin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    PositiveDefinite,
    SemidefiniteWithinMargin,
    Indefinite,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::PositiveDefinite => "POSITIVE_DEFINITE",
            Verdict::SemidefiniteWithinMargin => "SEMIDEFINITE_WITHIN_MARGIN",
            Verdict::Indefinite => "INDEFINITE",
        })
    }
}

/// Classifies the smallest eigenvalue against `margin * |trace| / dim`.
pub fn verdict_from_min(min_eigenvalue: f64, trace: f64, dim: usize, margin: f64) -> Verdict {
    let band = margin * trace.abs() / dim as f64;
    if min_eigenvalue > band {
        Verdict::PositiveDefinite
    } else if min_eigenvalue >= -band {
        Verdict::SemidefiniteWithinMargin
    } else {
        Verdict::Indefinite
    }
}

pub fn pd_verdict(h: &HermitianMatrix, margin: f64) -> Result<Verdict> {
    if !(margin >= 0.0) {
        return Err(Error::Precondition(format!("margin must be non-negative, got {margin}")));
    }
    let report = eigvalsh(h)?;
    Ok(verdict_from_min(report.min, h.trace(), h.dim(), margin))
}

fn spectral_function(h: &HermitianMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
    let eig = eigh(h)?;
    let min = eig.values.first().copied().unwrap_or(0.0);
    let max = eig.values.last().copied().unwrap_or(0.0);
    if !(min > 0.0) || min <= f64::EPSILON * max {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let n = h.dim();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lambda) in eig.values.iter().enumerate() {
        let fl = f(lambda);
        for i in 0..n {
            let vik = eig.vectors[(i, k)] * fl;
            for j in 0..n {
                out[(i, j)] += vik * eig.vectors[(j, k)].conj();
            }
        }
    }
    Ok(out)
}

/// `H^{-1/2}` for positive definite `H`.
pub fn inv_sqrt(h: &HermitianMatrix) -> Result<CMatrix> {
    spectral_function(h, |l| 1.0 / l.sqrt())
}

/// `H^{-1}` for positive definite `H`.
pub fn inverse_pd(h: &HermitianMatrix) -> Result<CMatrix> {
    spectral_function(h, |l| 1.0 / l)
}
