use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Capabilities, Family, GaussianMoments, ParamPoint};
use crate::error::{Error, Result};

/// Multivariate Gaussian parameterized by its mean and the log-Cholesky factor
/// of its covariance.
///
/// Layout: the `d` mean coordinates, then the lower triangle of `L` row by
/// row, with diagonal entries stored as logarithms. Σ = LLᵀ, so every finite
/// θ is a valid parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvnLCholesky {
    dim: usize,
}

impl MvnLCholesky {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "mvn_lcholesky dimension must be positive".into(),
            ));
        }
        Ok(MvnLCholesky { dim })
    }

    pub fn dim_from_param_len(n: usize) -> Option<usize> {
        (1..=64).find(|d| d + d * (d + 1) / 2 == n)
    }

    fn tri_index(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dim).flat_map(|i| (0..=i).map(move |j| (i, j)))
    }

    pub fn cholesky_factor(&self, theta: &ParamPoint) -> DMatrix<f64> {
        let d = self.dim;
        let mut l = DMatrix::zeros(d, d);
        for (k, (i, j)) in self.tri_index().enumerate() {
            let v = theta[d + k];
            l[(i, j)] = if i == j { v.exp() } else { v };
        }
        l
    }

    /// Packs a mean and a lower-triangular factor with positive diagonal.
    pub fn pack(&self, mean: &DVector<f64>, l: &DMatrix<f64>) -> ParamPoint {
        let d = self.dim;
        let mut theta = DVector::zeros(self.param_dim());
        theta.rows_mut(0, d).copy_from(mean);
        for (k, (i, j)) in self.tri_index().enumerate() {
            theta[d + k] = if i == j { l[(i, j)].ln() } else { l[(i, j)] };
        }
        theta
    }
}

impl Family for MvnLCholesky {
    fn id(&self) -> String {
        format!("mvn_lcholesky:{}", self.dim)
    }

    fn param_dim(&self) -> usize {
        self.dim + self.dim * (self.dim + 1) / 2
    }

    fn sample_dim(&self) -> usize {
        self.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_cdf: self.dim == 1,
            has_closed_form_fisher: true,
            has_sampler: true,
        }
    }

    fn check_domain(&self, _theta: &ParamPoint) -> Result<()> {
        Ok(())
    }

    fn log_density(&self, theta: &ParamPoint, x: &[f64]) -> Result<f64> {
        self.gaussian_moments(theta)?
            .expect("gaussian family")
            .log_density(x)
    }

    fn score(&self, theta: &ParamPoint, x: &[f64]) -> Result<DVector<f64>> {
        self.gaussian_moments(theta)?.expect("gaussian family").score(x)
    }

    fn cdf(&self, theta: &ParamPoint, x: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::capability(self.id(), "cdf"));
        }
        self.validate(theta)?;
        Ok(super::Gaussian1d::std_cdf((x - theta[0]) / theta[1].exp()))
    }

    fn quantile(&self, theta: &ParamPoint, q: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::capability(self.id(), "quantile"));
        }
        self.validate(theta)?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile level must lie in (0, 1), got {q}"
            )));
        }
        Ok(theta[0] + theta[1].exp() * super::Gaussian1d::std_quantile(q))
    }

    fn sample(&self, theta: &ParamPoint, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        self.validate(theta)?;
        let l = self.cholesky_factor(theta);
        let mean = theta.rows(0, self.dim).into_owned();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(&mut rng));
                (&mean + &l * z).iter().copied().collect()
            })
            .collect())
    }

    fn gaussian_moments(&self, theta: &ParamPoint) -> Result<Option<GaussianMoments>> {
        self.validate(theta)?;
        let d = self.dim;
        let n = self.param_dim();
        let l = self.cholesky_factor(theta);
        let cov = &l * l.transpose();
        let mut dmean = vec![DVector::zeros(d); n];
        let mut dcov = vec![DMatrix::zeros(d, d); n];
        for (i, dm) in dmean.iter_mut().enumerate().take(d) {
            dm[i] = 1.0;
        }
        for (k, (i, j)) in self.tri_index().enumerate() {
            let mut dl = DMatrix::zeros(d, d);
            dl[(i, j)] = if i == j { l[(i, j)] } else { 1.0 };
            let t = &dl * l.transpose();
            dcov[d + k] = &t + t.transpose();
        }
        Ok(Some(GaussianMoments {
            mean: theta.rows(0, d).into_owned(),
            cov,
            dmean,
            dcov,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fd_gradient;

    #[test]
    fn pack_roundtrips_factor() {
        let f = MvnLCholesky::new(2).unwrap();
        let l = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, -0.3, 0.7]);
        let mean = DVector::from_vec(vec![0.2, -1.0]);
        let theta = f.pack(&mean, &l);
        assert!((f.cholesky_factor(&theta) - l).abs().max() < 1e-15);
    }

    #[test]
    fn score_matches_finite_differences() {
        let f = MvnLCholesky::new(2).unwrap();
        let theta = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.4, -0.1]);
        let x = [0.5, 0.8];
        let s = f.score(&theta, &x).unwrap();
        let fd = fd_gradient(|t| f.log_density(t, &x), &theta).unwrap();
        assert!((s - fd).abs().max() < 1e-8);
    }

    #[test]
    fn one_dimensional_case_matches_gaussian1d() {
        let f = MvnLCholesky::new(1).unwrap();
        let theta = DVector::from_vec(vec![0.4, 0.7f64.ln()]);
        let g = DVector::from_vec(vec![0.4, 0.7]);
        let a = f.log_density(&theta, &[1.1]).unwrap();
        let b = super::super::Gaussian1d.log_density(&g, &[1.1]).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!((f.quantile(&theta, 0.3).unwrap() - super::super::Gaussian1d.quantile(&g, 0.3).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn cdf_unavailable_above_one_dimension() {
        let f = MvnLCholesky::new(2).unwrap();
        let theta = DVector::zeros(5);
        assert!(matches!(f.cdf(&theta, 0.0), Err(Error::Capability { .. })));
    }
}
