use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Mean and covariance of a Gaussian family member together with their
/// derivatives along each parameter coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub dmean: Vec<DVector<f64>>,
    pub dcov: Vec<DMatrix<f64>>,
}

impl GaussianMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("covariance is not SPD".into()))?;
        let r = DVector::from_column_slice(x) - &self.mean;
        let z = chol.l().solve_lower_triangular(&r).expect("triangular solve");
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(-0.5 * (self.dim() as f64 * (2.0 * PI).ln() + log_det + z.norm_squared()))
    }

    /// Score from the moment derivatives:
    /// ∂μᵀΣ⁻¹r + ½(rᵀΣ⁻¹∂ΣΣ⁻¹r − tr(Σ⁻¹∂Σ)), r = x − μ.
    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        let inv = linalg::spd_inverse(&self.cov)?;
        let r = DVector::from_column_slice(x) - &self.mean;
        let a = &inv * &r;
        Ok(DVector::from_iterator(
            self.dmean.len(),
            self.dmean.iter().zip(&self.dcov).map(|(dm, dc)| {
                dm.dot(&a) + 0.5 * (a.dot(&(dc * &a)) - (&inv * dc).trace())
            }),
        ))
    }

    /// Fisher information: ∂ᵢμᵀΣ⁻¹∂ⱼμ + ½tr(Σ⁻¹∂ᵢΣΣ⁻¹∂ⱼΣ).
    pub fn fisher(&self) -> Result<DMatrix<f64>> {
        let inv = linalg::spd_inverse(&self.cov)?;
        let n = self.dmean.len();
        let prod: Vec<DMatrix<f64>> = self.dcov.iter().map(|dc| &inv * dc).collect();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.dmean[i].dot(&(&inv * &self.dmean[j]))
                    + 0.5 * (&prod[i] * &prod[j]).trace();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// KL(self ‖ other) in closed form.
    pub fn kl_to(&self, other: &GaussianMoments) -> Result<f64> {
        let k = self.dim() as f64;
        let inv1 = linalg::spd_inverse(&other.cov)?;
        let d = &other.mean - &self.mean;
        let ld0 = linalg::spd_log_det(&self.cov)?;
        let ld1 = linalg::spd_log_det(&other.cov)?;
        let tr = (&inv1 * &self.cov).trace();
        Ok(0.5 * ((tr - k) + d.dot(&(&inv1 * &d)) + (ld1 - ld0)))
    }

    /// Gradient of KL(self ‖ other) along the parameters of `self`.
    pub fn kl_grad_first(&self, other: &GaussianMoments) -> Result<DVector<f64>> {
        let inv0 = linalg::spd_inverse(&self.cov)?;
        let inv1 = linalg::spd_inverse(&other.cov)?;
        let d = &other.mean - &self.mean;
        let a = &inv1 * &d;
        Ok(DVector::from_iterator(
            self.dmean.len(),
            self.dmean.iter().zip(&self.dcov).map(|(dm, dc)| {
                0.5 * ((&inv1 * dc).trace() - (&inv0 * dc).trace()) - a.dot(dm)
            }),
        ))
    }

    /// Moments seen through θ = Aξ: derivatives become linear combinations.
    pub(crate) fn reparameterize(self, a: &DMatrix<f64>) -> GaussianMoments {
        let n = a.ncols();
        let dmean = (0..n)
            .map(|j| {
                self.dmean
                    .iter()
                    .enumerate()
                    .fold(DVector::zeros(self.dim()), |acc, (i, dm)| acc + dm * a[(i, j)])
            })
            .collect();
        let dcov = (0..n)
            .map(|j| {
                self.dcov.iter().enumerate().fold(
                    DMatrix::zeros(self.dim(), self.dim()),
                    |acc, (i, dc)| acc + dc * a[(i, j)],
                )
            })
            .collect();
        GaussianMoments {
            mean: self.mean,
            cov: self.cov,
            dmean,
            dcov,
        }
    }
}

/// Outcome probabilities p and their Jacobian ∂p/∂θ (k × n).
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalProbs {
    pub probs: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}
