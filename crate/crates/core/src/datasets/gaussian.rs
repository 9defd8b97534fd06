//! Closed forms for Gaussian measures: W2 distance and the affine Monge map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N(mean, cov)` with a symmetric positive-definite covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<Vec<f64>>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let g = Self { mean, cov };
        g.validate()?;
        Ok(g)
    }

    pub fn isotropic(mean: &[f64], var: f64) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { var } else { 0.0 }).collect())
            .collect();
        Self {
            mean: mean.to_vec(),
            cov,
        }
    }

    pub fn from_parts(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        Self {
            mean: mean.iter().copied().collect(),
            cov: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn cov_mat(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.cov[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Validation("Gaussian of dimension 0".into()));
        }
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::Validation(format!("covariance must be {d}×{d}")));
        }
        if self.mean.iter().chain(self.cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite Gaussian parameter".into()));
        }
        let c = self.cov_mat();
        let scale = c.amax().max(1.0);
        if (&c - c.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Validation("covariance is not symmetric".into()));
        }
        if c.cholesky().is_none() {
            return Err(Error::Validation("covariance is not positive definite".into()));
        }
        Ok(())
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        self.cov_mat()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Validation("covariance is not positive definite".into()))
    }

    /// Law of `A x + c` for `x` drawn from `self`.
    pub fn pushforward(&self, map: &AffineMap) -> Gaussian {
        let m = &map.linear * self.mean_vec() + &map.offset;
        let c = &map.linear * self.cov_mat() * map.linear.transpose();
        Gaussian::from_parts(&m, &symmetrize(&c))
    }
}

/// `x ↦ A x + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        Self {
            linear: DMatrix::identity(d, d),
            offset: DVector::zeros(d),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.linear * DVector::from_column_slice(x) + &self.offset;
        v.iter().copied().collect()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        AffineMap {
            linear: &self.linear * &inner.linear,
            offset: &self.linear * &inner.offset + &self.offset,
        }
    }

    /// `(1 − t) I + t · self`.
    pub fn interpolate(&self, t: f64) -> AffineMap {
        let d = self.linear.nrows();
        AffineMap {
            linear: DMatrix::identity(d, d) * (1.0 - t) + &self.linear * t,
            offset: &self.offset * t,
        }
    }

    pub fn max_abs_diff(&self, other: &AffineMap) -> f64 {
        (&self.linear - &other.linear)
            .amax()
            .max((&self.offset - &other.offset).amax())
    }

    /// Symmetric with nonnegative spectrum, i.e. the gradient of a convex
    /// quadratic.
    pub fn is_symmetric_psd(&self, tol: f64) -> bool {
        let a = &self.linear;
        if (a - a.transpose()).amax() > tol {
            return false;
        }
        SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().all(|&l| l >= -tol)
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral(m, |l| l.max(0.0).sqrt())
}

fn spectral(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let q = &eig.eigenvectors;
    symmetrize(&(q * d * q.transpose()))
}

/// Monge map from `a` to `b`:
/// `A = Σa^{-1/2} (Σa^{1/2} Σb Σa^{1/2})^{1/2} Σa^{-1/2}`, `c = m_b − A m_a`.
pub fn monge_map(a: &Gaussian, b: &Gaussian) -> Result<AffineMap> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!("dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let sa = a.cov_mat();
    let eig = SymmetricEigen::new(symmetrize(&sa));
    let min = eig.eigenvalues.min();
    if min <= 1e-14 * eig.eigenvalues.max().abs().max(1.0) {
        return Err(Error::Validation(format!(
            "source covariance is singular (smallest eigenvalue {min:e})"
        )));
    }
    let half = spectral(&sa, f64::sqrt);
    let inv_half = spectral(&sa, |l| 1.0 / l.sqrt());
    let mid = sqrtm_psd(&(&half * b.cov_mat() * &half));
    let linear = symmetrize(&(&inv_half * mid * &inv_half));
    let offset = b.mean_vec() - &linear * a.mean_vec();
    Ok(AffineMap { linear, offset })
}

/// Exact W2 between two Gaussians.
///
/// Evaluated as `‖Δm‖² + ‖(I − A) Σa^{1/2}‖_F²`, which keeps full relative
/// accuracy when the measures are close, unlike the trace formula.
pub fn w2(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    let map = monge_map(a, b)?;
    let d = a.dim();
    let dm = b.mean_vec() - a.mean_vec();
    let r = (DMatrix::identity(d, d) - &map.linear) * sqrtm_psd(&a.cov_mat());
    Ok((dm.norm_squared() + r.norm_squared()).sqrt())
}

/// The textbook trace formula
/// `‖Δm‖² + tr(Σa + Σb − 2 (Σa^{1/2} Σb Σa^{1/2})^{1/2})`, clamped at 0.
pub fn w2_trace_formula(a: &Gaussian, b: &Gaussian) -> f64 {
    let (sa, sb) = (a.cov_mat(), b.cov_mat());
    let half = sqrtm_psd(&sa);
    let cross = sqrtm_psd(&(&half * &sb * &half));
    let dm = b.mean_vec() - a.mean_vec();
    (dm.norm_squared() + (sa + sb - cross * 2.0).trace()).max(0.0).sqrt()
}
