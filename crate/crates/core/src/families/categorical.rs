use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Capabilities, CategoricalProbs, Family, ParamPoint};
use crate::error::{Error, Result};

/// Categorical distribution over `k` outcomes in softmax (logit) coordinates.
///
/// All `k` logits are free, so the family is invariant to adding a constant to
/// θ and its Fisher information is rank `k − 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalSoftmax {
    k: usize,
}

impl CategoricalSoftmax {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(
                "categorical_softmax needs at least two outcomes".into(),
            ));
        }
        Ok(CategoricalSoftmax { k })
    }

    pub fn probabilities(&self, theta: &ParamPoint) -> Result<DVector<f64>> {
        self.validate(theta)?;
        Ok(softmax(theta))
    }

    fn outcome(&self, x: &[f64]) -> Result<usize> {
        match x {
            [v] if v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < self.k => Ok(*v as usize),
            _ => Err(Error::InvalidArgument(format!(
                "categorical sample must be an outcome index in 0..{}, got {x:?}",
                self.k
            ))),
        }
    }
}

pub(crate) fn softmax(theta: &DVector<f64>) -> DVector<f64> {
    let m = theta.max();
    let e = theta.map(|t| (t - m).exp());
    let s = e.sum();
    e / s
}

fn log_sum_exp(theta: &DVector<f64>) -> f64 {
    let m = theta.max();
    m + theta.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

impl Family for CategoricalSoftmax {
    fn id(&self) -> String {
        format!("categorical_softmax:{}", self.k)
    }

    fn param_dim(&self) -> usize {
        self.k
    }

    fn sample_dim(&self) -> usize {
        1
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
        self.validate(theta)?;
        let i = self.outcome(x)?;
        Ok(theta[i] - log_sum_exp(theta))
    }

    fn score(&self, theta: &ParamPoint, x: &[f64]) -> Result<DVector<f64>> {
        self.validate(theta)?;
        let i = self.outcome(x)?;
        let mut s = -softmax(theta);
        s[i] += 1.0;
        Ok(s)
    }

    fn sample(&self, theta: &ParamPoint, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        let p = self.probabilities(theta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = self.k - 1;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                vec![idx as f64]
            })
            .collect())
    }

    fn categorical_probs(&self, theta: &ParamPoint) -> Result<Option<CategoricalProbs>> {
        let p = self.probabilities(theta)?;
        let jacobian = DMatrix::from_diagonal(&p) - &p * p.transpose();
        Ok(Some(CategoricalProbs { probs: p, jacobian }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fd_gradient;

    #[test]
    fn uniform_log_density() {
        let f = CategoricalSoftmax::new(3).unwrap();
        let theta = DVector::zeros(3);
        let v = f.log_density(&theta, &[2.0]).unwrap();
        assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn score_matches_finite_differences() {
        let f = CategoricalSoftmax::new(3).unwrap();
        let theta = DVector::zeros(3);
        for x in 0..3 {
            let x = [x as f64];
            let s = f.score(&theta, &x).unwrap();
            let fd = fd_gradient(|t| f.log_density(t, &x), &theta).unwrap();
            assert!((s - fd).abs().max() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_outcomes() {
        let f = CategoricalSoftmax::new(3).unwrap();
        let theta = DVector::zeros(3);
        for x in [3.0, -1.0, 0.5] {
            assert!(f.log_density(&theta, &[x]).is_err());
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let f = CategoricalSoftmax::new(4).unwrap();
        let n = 100_000;
        let s = f.sample(&DVector::zeros(4), 3, n).unwrap();
        let mut counts = [0usize; 4];
        for x in &s {
            counts[x[0] as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }
}
