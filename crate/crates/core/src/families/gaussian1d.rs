use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use super::{Capabilities, Family, GaussianMoments, ParamPoint};
use crate::error::{Error, Result};

/// Univariate Gaussian with θ = (μ, σ), σ > 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Gaussian1d;

fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn check_x(x: &[f64]) -> Result<f64> {
    match x {
        [v] => Ok(*v),
        _ => Err(Error::DimensionMismatch {
            expected: 1,
            got: x.len(),
        }),
    }
}

impl Gaussian1d {
    /// Standard normal quantile.
    pub fn std_quantile(q: f64) -> f64 {
        -SQRT_2 * erfc_inv(2.0 * q)
    }

    pub fn std_cdf(z: f64) -> f64 {
        0.5 * erfc(-z / SQRT_2)
    }
}

impl Family for Gaussian1d {
    fn id(&self) -> String {
        "gaussian1d".into()
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn sample_dim(&self) -> usize {
        1
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_cdf: true,
            has_closed_form_fisher: true,
            has_sampler: true,
        }
    }

    fn check_domain(&self, theta: &ParamPoint) -> Result<()> {
        if theta[1] <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gaussian1d scale must be positive, got {}",
                theta[1]
            )));
        }
        Ok(())
    }

    fn log_density(&self, theta: &ParamPoint, x: &[f64]) -> Result<f64> {
        self.validate(theta)?;
        let x = check_x(x)?;
        let (mu, sigma) = (theta[0], theta[1]);
        let z = (x - mu) / sigma;
        Ok(-0.5 * (2.0 * PI).ln() - sigma.ln() - 0.5 * z * z)
    }

    fn score(&self, theta: &ParamPoint, x: &[f64]) -> Result<DVector<f64>> {
        self.validate(theta)?;
        let x = check_x(x)?;
        let (mu, sigma) = (theta[0], theta[1]);
        let r = x - mu;
        let s2 = sigma * sigma;
        Ok(DVector::from_vec(vec![r / s2, (r * r - s2) / (s2 * sigma)]))
    }

    fn cdf(&self, theta: &ParamPoint, x: f64) -> Result<f64> {
        self.validate(theta)?;
        Ok(Self::std_cdf((x - theta[0]) / theta[1]))
    }

    fn quantile(&self, theta: &ParamPoint, q: f64) -> Result<f64> {
        self.validate(theta)?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile level must lie in (0, 1), got {q}"
            )));
        }
        Ok(theta[0] + theta[1] * Self::std_quantile(q))
    }

    fn dcdf_dtheta(&self, theta: &ParamPoint, x: f64) -> Result<DVector<f64>> {
        self.validate(theta)?;
        let sigma = theta[1];
        let z = (x - theta[0]) / sigma;
        let phi = std_pdf(z);
        Ok(DVector::from_vec(vec![-phi / sigma, -phi * z / sigma]))
    }

    fn sample(&self, theta: &ParamPoint, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        self.validate(theta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                vec![theta[0] + theta[1] * z]
            })
            .collect())
    }

    fn gaussian_moments(&self, theta: &ParamPoint) -> Result<Option<GaussianMoments>> {
        self.validate(theta)?;
        let sigma = theta[1];
        Ok(Some(GaussianMoments {
            mean: DVector::from_element(1, theta[0]),
            cov: DMatrix::from_element(1, 1, sigma * sigma),
            dmean: vec![DVector::from_element(1, 1.0), DVector::zeros(1)],
            dcov: vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 2.0 * sigma)],
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(mu: f64, sigma: f64) -> ParamPoint {
        DVector::from_vec(vec![mu, sigma])
    }

    #[test]
    fn log_density_examples() {
        let g = Gaussian1d;
        let c = -0.5 * (2.0 * PI).ln();
        assert!((g.log_density(&p(0.0, 1.0), &[0.0]).unwrap() - c).abs() < 1e-15);
        assert!((g.log_density(&p(0.0, 1.0), &[1.0]).unwrap() - (c - 0.5)).abs() < 1e-15);
        assert!((c + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn score_examples() {
        let g = Gaussian1d;
        assert_eq!(g.score(&p(0.0, 1.0), &[1.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(g.score(&p(0.0, 1.0), &[0.0]).unwrap().as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn cdf_and_quantile_symmetry() {
        let g = Gaussian1d;
        assert_eq!(g.cdf(&p(0.0, 1.0), 0.0).unwrap(), 0.5);
        assert_eq!(g.cdf(&p(2.0, 3.0), 2.0).unwrap(), 0.5);
        assert_eq!(g.quantile(&p(0.0, 1.0), 0.5).unwrap(), 0.0);
        let q975 = g.quantile(&p(0.0, 1.0), 0.975).unwrap();
        assert!((q975 - 1.959964).abs() < 1e-6);
        assert!((g.cdf(&p(0.0, 1.0), 1.959964).unwrap() - 0.975).abs() < 1e-7);
    }

    #[test]
    fn quantile_rejects_out_of_range_levels() {
        let g = Gaussian1d;
        for q in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                g.quantile(&p(0.0, 1.0), q),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn degenerate_scale_rejected() {
        let g = Gaussian1d;
        for s in [0.0, -1.0] {
            assert!(matches!(
                g.log_density(&p(0.0, s), &[0.0]),
                Err(Error::InvalidParameter(_))
            ));
        }
        assert!(g.validate(&p(f64::NAN, 1.0)).is_err());
        assert!(g.validate(&DVector::from_vec(vec![0.0])).is_err());
    }

    #[test]
    fn dcdf_at_mode_and_tail() {
        let g = Gaussian1d;
        let d = g.dcdf_dtheta(&p(0.0, 1.0), 0.0).unwrap();
        assert!((d[0] + 0.398942280401).abs() < 1e-10);
        assert_eq!(d[1], 0.0);
        let far = g.dcdf_dtheta(&p(0.3, 1.7), 1e3).unwrap();
        assert_eq!(far.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn sampling_is_seeded() {
        let g = Gaussian1d;
        assert!(g.sample(&p(0.0, 1.0), 7, 0).unwrap().is_empty());
        let a = g.sample(&p(0.0, 1.0), 7, 100_000).unwrap();
        let b = g.sample(&p(0.0, 1.0), 7, 100_000).unwrap();
        assert_eq!(a, b);
        let mean = a.iter().map(|x| x[0]).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }
}
