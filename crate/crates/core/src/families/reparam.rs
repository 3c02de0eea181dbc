use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Capabilities, CategoricalProbs, Family, GaussianMoments, ParamPoint};
use crate::error::{Error, Result};

/// The family ξ ↦ ρ_{Aξ} for an invertible matrix A.
#[derive(Debug, Clone)]
pub struct LinearReparam {
    inner: Arc<dyn Family>,
    a: DMatrix<f64>,
}

impl LinearReparam {
    pub fn new(inner: Arc<dyn Family>, a: DMatrix<f64>) -> Result<Self> {
        let n = inner.param_dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.nrows(),
            });
        }
        if a.clone().lu().determinant().abs() < 1e-300 {
            return Err(Error::InvalidArgument(
                "reparameterization matrix is singular".into(),
            ));
        }
        Ok(LinearReparam { inner, a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn to_inner(&self, xi: &ParamPoint) -> ParamPoint {
        &self.a * xi
    }

    pub fn from_inner(&self, theta: &ParamPoint) -> ParamPoint {
        self.a
            .clone()
            .lu()
            .solve(theta)
            .expect("nonsingular by construction")
    }
}

impl Family for LinearReparam {
    fn id(&self) -> String {
        format!("reparam({})", self.inner.id())
    }

    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn sample_dim(&self) -> usize {
        self.inner.sample_dim()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn check_domain(&self, xi: &ParamPoint) -> Result<()> {
        self.inner.validate(&self.to_inner(xi))
    }

    fn log_density(&self, xi: &ParamPoint, x: &[f64]) -> Result<f64> {
        self.inner.log_density(&self.to_inner(xi), x)
    }

    fn score(&self, xi: &ParamPoint, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.a.tr_mul(&self.inner.score(&self.to_inner(xi), x)?))
    }

    fn cdf(&self, xi: &ParamPoint, x: f64) -> Result<f64> {
        self.inner.cdf(&self.to_inner(xi), x)
    }

    fn quantile(&self, xi: &ParamPoint, q: f64) -> Result<f64> {
        self.inner.quantile(&self.to_inner(xi), q)
    }

    fn dcdf_dtheta(&self, xi: &ParamPoint, x: f64) -> Result<DVector<f64>> {
        Ok(self.a.tr_mul(&self.inner.dcdf_dtheta(&self.to_inner(xi), x)?))
    }

    fn sample(&self, xi: &ParamPoint, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        self.inner.sample(&self.to_inner(xi), seed, count)
    }

    fn gaussian_moments(&self, xi: &ParamPoint) -> Result<Option<GaussianMoments>> {
        Ok(self
            .inner
            .gaussian_moments(&self.to_inner(xi))?
            .map(|m| m.reparameterize(&self.a)))
    }

    fn categorical_probs(&self, xi: &ParamPoint) -> Result<Option<CategoricalProbs>> {
        Ok(self
            .inner
            .categorical_probs(&self.to_inner(xi))?
            .map(|c| CategoricalProbs {
                probs: c.probs,
                jacobian: c.jacobian * &self.a,
            }))
    }

    fn support_window(&self, xi: &ParamPoint, tail: f64) -> Result<(f64, f64)> {
        self.inner.support_window(&self.to_inner(xi), tail)
    }
}
