//! Dense symmetric matrix kernel.
//!
//! Covariances in this crate are small (d rarely exceeds a few dozen), so
//! everything is stored densely in row-major order and the spectral work is
//! done with cyclic Jacobi rotations. Jacobi is slower than tridiagonal QR for
//! large d but it is deterministic, unconditionally stable on symmetric input
//! and produces orthonormal eigenvectors to working precision.

use crate::error::{Error, Result};

/// Sweep cap for the Jacobi eigensolver.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigenvalues in `(-PSD_CLAMP * ‖A‖_F, 0)` are treated as rounding noise and
/// clamped to zero; anything more negative makes the matrix indefinite.
pub const PSD_CLAMP: f64 = 1e-9;

/// Relative spectral floor used by [`SpdMatrix::is_strictly_pd`].
pub const STRICT_PD_FLOOR: f64 = 1e-12;

const OFF_DIAGONAL_TOL: f64 = 1e-15;

/// Dense symmetric `dim × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from row-major entries, replacing the input
    /// by `(A + Aᵀ) / 2`.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("dimension must be at least 1".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for a {dim}x{dim} matrix, found {}",
                dim * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let mut m = SymMatrix { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::InvalidMatrix(format!(
                "row of length {} in a {dim}-row matrix",
                bad.len()
            )));
        }
        Self::new(dim, rows.concat())
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be at least 1");
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(other)?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(other)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, c: f64, other: &SymMatrix) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// `self · inner · self`, symmetrized. Used for the congruences
    /// `S^{1/2} Σ S^{1/2}` that appear throughout the Bures formulas.
    pub fn sandwich(&self, inner: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(inner)?;
        let left = matmul(&self.data, &inner.data, self.dim);
        let mut out = SymMatrix {
            dim: self.dim,
            data: matmul(&left, &self.data, self.dim),
        };
        out.symmetrize();
        Ok(out)
    }

    /// `self · self`
    pub fn square(&self) -> SymMatrix {
        let mut out = SymMatrix {
            dim: self.dim,
            data: matmul(&self.data, &self.data, self.dim),
        };
        out.symmetrize();
        out
    }

    /// `vᵀ · self · v`
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            acc += v[i] * dot;
        }
        acc
    }

    pub fn eigen(&self) -> Result<SymEigen> {
        sym_eigen(self)
    }

    fn check_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &SymMatrix, f: impl Fn(f64, f64) -> f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for l in 0..n {
            let a_il = a[i * n + l];
            if a_il == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += a_il * b[l * n + j];
            }
        }
    }
    out
}

/// Spectral decomposition `A = V · diag(values) · Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Eigenvalues sorted in descending order.
    pub values: Vec<f64>,
    /// Row-major `d × d`; column `j` is the eigenvector for `values[j]`.
    pub vectors: Vec<f64>,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.vectors[i * n + j]).collect()
    }

    /// `V · diag(f(λ)) · Vᵀ`
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (l, m) in mapped.iter().enumerate() {
                    acc += self.vectors[i * n + l] * m * self.vectors[j * n + l];
                }
                data[i * n + j] = acc;
                data[j * n + i] = acc;
            }
        }
        SymMatrix { dim: n, data }
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map_spectrum(|l| l)
    }

    pub fn min_value(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back in descending order; each eigenvector is signed so
/// that its largest-magnitude component (first one on ties) is positive.
pub fn sym_eigen(a: &SymMatrix) -> Result<SymEigen> {
    let n = a.dim;
    let mut m = a.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let scale = a.frobenius_norm();

    if n > 1 && scale > 0.0 {
        let mut converged = false;
        for sweep in 0..MAX_JACOBI_SWEEPS {
            if off_diagonal_norm(&m, n) <= OFF_DIAGONAL_TOL * scale {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = m[p * n + p];
                    let aqq = m[q * n + q];
                    let g = 100.0 * apq.abs();
                    // Late in the iteration, entries below the diagonal's ulp are noise.
                    if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                        m[p * n + q] = 0.0;
                        m[q * n + p] = 0.0;
                        continue;
                    }
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta.abs() > 1e150 {
                        0.5 / theta
                    } else {
                        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    rotate(&mut m, &mut v, n, p, q, c, s);
                }
            }
        }
        if !converged {
            let off_norm = off_diagonal_norm(&m, n);
            if off_norm > OFF_DIAGONAL_TOL * scale {
                return Err(Error::EigenNoConvergence {
                    dim: n,
                    sweeps: MAX_JACOBI_SWEEPS,
                    off_norm,
                });
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let max_abs = (0..n).map(|r| v[r * n + src].abs()).fold(0.0, f64::max);
        let pivot = (0..n)
            .find(|&r| v[r * n + src].abs() >= max_abs * (1.0 - 1e-9))
            .unwrap_or(0);
        let sign = if v[pivot * n + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[r * n + col] = sign * v[r * n + src];
        }
    }
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * m[i * n + j] * m[i * n + j];
        }
    }
    acc.sqrt()
}

/// Applies `A ← Jᵀ A J`, `V ← V J` for the plane rotation in (p, q).
fn rotate(m: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let akp = m[k * n + p];
        let akq = m[k * n + q];
        m[k * n + p] = c * akp - s * akq;
        m[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = m[p * n + k];
        let aqk = m[q * n + k];
        m[p * n + k] = c * apk - s * aqk;
        m[q * n + k] = s * apk + c * aqk;
    }
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;
    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = c * vkp - s * vkq;
        v[k * n + q] = s * vkp + c * vkq;
    }
}

/// Euclidean distance between matrices viewed as vectors.
pub fn frobenius_distance(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    Ok(a.sub(b)?.frobenius_norm())
}

/// Symmetric positive semidefinite matrix with its spectrum cached.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    base: SymMatrix,
    eigen: SymEigen,
    spectral_floor: f64,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base
    }
}

impl SpdMatrix {
    /// Accepts `a` if its smallest eigenvalue is at least `-PSD_CLAMP · ‖A‖_F`.
    pub fn new(a: SymMatrix) -> Result<Self> {
        let eigen = sym_eigen(&a)?;
        let floor = eigen.min_value();
        if floor < -PSD_CLAMP * a.frobenius_norm() {
            return Err(Error::NotPsd {
                min_eigenvalue: floor,
            });
        }
        Ok(SpdMatrix {
            base: a,
            eigen,
            spectral_floor: floor,
        })
    }

    /// Like [`SpdMatrix::new`] but additionally requires strict positive definiteness.
    pub fn new_strict(a: SymMatrix) -> Result<Self> {
        let m = Self::new(a)?;
        if !m.is_strictly_pd() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: m.spectral_floor,
            });
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim]).expect("identity is PSD")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.base
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    /// Smallest eigenvalue, unclamped.
    pub fn spectral_floor(&self) -> f64 {
        self.spectral_floor
    }

    pub fn is_strictly_pd(&self) -> bool {
        self.spectral_floor >= STRICT_PD_FLOOR * self.eigen.max_value().max(1.0)
    }

    pub fn trace(&self) -> f64 {
        self.base.trace()
    }

    /// Sum of the square roots of the (clamped) eigenvalues, i.e. `tr A^{1/2}`.
    pub fn trace_sqrt(&self) -> f64 {
        self.eigen.values.iter().map(|&l| l.max(0.0).sqrt()).sum()
    }

    pub fn sqrt(&self) -> SpdMatrix {
        let values: Vec<f64> = self
            .eigen
            .values
            .iter()
            .map(|&l| l.max(0.0).sqrt())
            .collect();
        let eigen = SymEigen {
            values,
            vectors: self.eigen.vectors.clone(),
        };
        let base = eigen.reconstruct();
        let spectral_floor = eigen.min_value();
        SpdMatrix {
            base,
            eigen,
            spectral_floor,
        }
    }

    /// `A^{-1/2}`; requires strict positive definiteness.
    pub fn inv_sqrt(&self) -> Result<SymMatrix> {
        if !self.is_strictly_pd() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: self.spectral_floor,
            });
        }
        Ok(self.eigen.map_spectrum(|l| 1.0 / l.sqrt()))
    }

    pub fn inverse(&self) -> Result<SymMatrix> {
        if !self.is_strictly_pd() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: self.spectral_floor,
            });
        }
        Ok(self.eigen.map_spectrum(|l| 1.0 / l))
    }

    /// `ln det A`; requires strict positive definiteness.
    pub fn log_det(&self) -> Result<f64> {
        if !self.is_strictly_pd() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: self.spectral_floor,
            });
        }
        Ok(self.eigen.values.iter().map(|l| l.ln()).sum())
    }
}

/// Principal square root of a PSD matrix.
pub fn spd_sqrt(a: &SpdMatrix) -> SpdMatrix {
    a.sqrt()
}
