use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Capabilities, Family, GaussianMoments, ParamPoint};
use crate::error::{Error, Result};

/// Exponentiated quadratic kernel a²·exp(−(x−x′)²/(2ℓ²)).
pub fn eq_kernel(x: f64, x_prime: f64, amplitude: f64, length_scale: f64) -> f64 {
    let d = x - x_prime;
    amplitude * amplitude * (-d * d / (2.0 * length_scale * length_scale)).exp()
}

/// `m` equispaced points on [−3, 3]; a single point sits at 0.
pub fn equispaced_inputs(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..m)
            .map(|i| -3.0 + 6.0 * i as f64 / (m - 1) as f64)
            .collect(),
    }
}

/// Centered Gaussian-process prior N(0, K_θ) on fixed inputs, with
/// θ = (log amplitude, log length-scale, log noise) and
/// K_θ = K_EQ + e^{2s}·I.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPriorEq {
    inputs: Vec<f64>,
}

impl GpPriorEq {
    pub fn new(inputs: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() || inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "gp_prior_eq needs at least one finite input".into(),
            ));
        }
        Ok(GpPriorEq { inputs })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    fn kernel_matrix(&self, theta: &ParamPoint) -> DMatrix<f64> {
        let (a, l) = (theta[0].exp(), theta[1].exp());
        let m = self.inputs.len();
        DMatrix::from_fn(m, m, |i, j| eq_kernel(self.inputs[i], self.inputs[j], a, l))
    }

    pub fn covariance(&self, theta: &ParamPoint) -> Result<DMatrix<f64>> {
        self.validate(theta)?;
        let m = self.inputs.len();
        let noise = (2.0 * theta[2]).exp();
        Ok(self.kernel_matrix(theta) + DMatrix::identity(m, m) * noise)
    }

    /// ∂K/∂θᵢ for the three log-hyperparameters.
    pub fn covariance_derivatives(&self, theta: &ParamPoint) -> Result<[DMatrix<f64>; 3]> {
        self.validate(theta)?;
        let m = self.inputs.len();
        let k_eq = self.kernel_matrix(theta);
        let l2 = (2.0 * theta[1]).exp();
        let d_len = DMatrix::from_fn(m, m, |i, j| {
            let d = self.inputs[i] - self.inputs[j];
            k_eq[(i, j)] * d * d / l2
        });
        let d_noise = DMatrix::identity(m, m) * (2.0 * (2.0 * theta[2]).exp());
        Ok([&k_eq * 2.0, d_len, d_noise])
    }
}

impl Family for GpPriorEq {
    fn id(&self) -> String {
        format!("gp_prior_eq:{}", self.inputs.len())
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn sample_dim(&self) -> usize {
        self.inputs.len()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_cdf: false,
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

    fn sample(&self, theta: &ParamPoint, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        let k = self.covariance(theta)?;
        let l = k
            .cholesky()
            .ok_or_else(|| Error::numeric("gp sample", "covariance is not SPD"))?
            .l();
        let m = self.inputs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
                (&l * z).iter().copied().collect()
            })
            .collect())
    }

    fn gaussian_moments(&self, theta: &ParamPoint) -> Result<Option<GaussianMoments>> {
        let cov = self.covariance(theta)?;
        let m = self.inputs.len();
        let dcov = self.covariance_derivatives(theta)?.to_vec();
        Ok(Some(GaussianMoments {
            mean: DVector::zeros(m),
            cov,
            dmean: vec![DVector::zeros(m); 3],
            dcov,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        assert_eq!(eq_kernel(0.3, 0.3, 2.0, 0.5), 4.0);
        assert!((eq_kernel(1.0, 0.0, 1.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((eq_kernel(1.0, 0.0, 1.0, 1.0) - 0.60653).abs() < 1e-5);
        assert_eq!(eq_kernel(1e6, 0.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn covariance_derivatives_match_finite_differences() {
        let f = GpPriorEq::new(equispaced_inputs(5)).unwrap();
        let theta = DVector::from_vec(vec![0.2, -0.3, -1.0]);
        let d = f.covariance_derivatives(&theta).unwrap();
        for (i, di) in d.iter().enumerate() {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (f.covariance(&tp).unwrap() - f.covariance(&tm).unwrap()) / (2.0 * h);
            assert!((fd - di).abs().max() < 1e-8);
        }
    }

    #[test]
    fn inputs_are_equispaced() {
        let x = equispaced_inputs(4);
        assert_eq!(x, vec![-3.0, -1.0, 1.0, 3.0]);
        assert_eq!(equispaced_inputs(1), vec![0.0]);
    }
}
