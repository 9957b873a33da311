//! Fréchet distance between Gaussian fits of feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal load added to every covariance before the distance.
pub const COV_SHRINKAGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    /// Sample mean and unbiased covariance of the rows of `features`.
    pub fn from_rows(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!("need at least 2 feature rows, got {n}")));
        }
        let d = features[0].len();
        if features.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("feature rows differ in length".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut centered = x;
        for j in 0..d {
            let m = mean[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        Ok(Self { mean, cov })
    }
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// small negative eigenvalues from round-off are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetric(m));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if !v.is_finite() || *v < -1e-8 * scale {
            return Err(Error::DegenerateCovariance(format!("eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})` with both covariances
/// loaded by [`COV_SHRINKAGE`]. The trace term is taken from the symmetric
/// product `S1^{1/2} S2 S1^{1/2}`, which has the same eigenvalues.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.shape() != (d, d) || b.cov.shape() != (d, d) {
        return Err(Error::Shape("feature dimensions differ".into()));
    }
    let eye = DMatrix::<f64>::identity(d, d) * COV_SHRINKAGE;
    let s1 = symmetric(&a.cov) + &eye;
    let s2 = symmetric(&b.cov) + &eye;
    let r1 = sqrtm_psd(&s1)?;
    let inner = &r1 * &s2 * &r1;
    let cross = sqrtm_psd(&inner)?.trace();
    let diff = &a.mean - &b.mean;
    let value = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::DegenerateCovariance("non-finite distance".into()));
    }
    Ok(value.max(0.0))
}

pub fn fid_from_features(gen: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&GaussianFit::from_rows(gen)?, &GaussianFit::from_rows(reference)?)
}
