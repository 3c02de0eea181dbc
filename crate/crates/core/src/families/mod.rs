//! Parametric families of densities: the statistical manifolds every other
//! module works on.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg;

mod categorical;
mod gaussian1d;
mod gp_prior;
mod moments;
mod mvn;
mod reparam;

pub use categorical::CategoricalSoftmax;
pub use gaussian1d::Gaussian1d;
pub use gp_prior::{eq_kernel, equispaced_inputs, GpPriorEq};
pub use moments::{CategoricalProbs, GaussianMoments};
pub use mvn::MvnLCholesky;
pub use reparam::LinearReparam;

/// A point θ in the parameter space.
pub type ParamPoint = DVector<f64>;

/// What a family can do beyond evaluating its log density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub has_cdf: bool,
    pub has_closed_form_fisher: bool,
    pub has_sampler: bool,
}

/// A statistical manifold θ ↦ ρ_θ.
///
/// Sample points are passed as slices; categorical families encode the
/// outcome index as the single coordinate.
pub trait Family: Send + Sync + Debug {
    fn id(&self) -> String;
    fn param_dim(&self) -> usize;
    fn sample_dim(&self) -> usize;
    fn capabilities(&self) -> Capabilities;

    /// Family-specific domain check; coordinates are already known to be finite.
    fn check_domain(&self, theta: &ParamPoint) -> Result<()>;

    fn validate(&self, theta: &ParamPoint) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coordinate {i} is not finite ({})",
                theta[i]
            )));
        }
        self.check_domain(theta)
    }

    fn log_density(&self, theta: &ParamPoint, x: &[f64]) -> Result<f64>;

    /// ∂ log ρ_θ(x) / ∂θ. Falls back to central differences of `log_density`.
    fn score(&self, theta: &ParamPoint, x: &[f64]) -> Result<DVector<f64>> {
        self.validate(theta)?;
        if self.log_density(theta, x)? == f64::NEG_INFINITY {
            return Err(Error::UndefinedScore);
        }
        linalg::fd_gradient(|t| self.log_density(t, x), theta)
    }

    fn cdf(&self, _theta: &ParamPoint, _x: f64) -> Result<f64> {
        Err(Error::capability(self.id(), "cdf"))
    }

    fn quantile(&self, _theta: &ParamPoint, _q: f64) -> Result<f64> {
        Err(Error::capability(self.id(), "quantile"))
    }

    /// ∂F_θ(x)/∂θ. Falls back to central differences of `cdf`.
    fn dcdf_dtheta(&self, theta: &ParamPoint, x: f64) -> Result<DVector<f64>> {
        if !self.capabilities().has_cdf {
            return Err(Error::capability(self.id(), "cdf"));
        }
        self.validate(theta)?;
        linalg::fd_gradient(|t| self.cdf(t, x), theta)
    }

    fn sample(&self, _theta: &ParamPoint, _seed: u64, _count: usize) -> Result<Vec<Vec<f64>>> {
        Err(Error::capability(self.id(), "sampling"))
    }

    /// Mean, covariance and their parameter derivatives, for Gaussian families.
    fn gaussian_moments(&self, _theta: &ParamPoint) -> Result<Option<GaussianMoments>> {
        Ok(None)
    }

    /// Outcome probabilities and their Jacobian, for categorical families.
    fn categorical_probs(&self, _theta: &ParamPoint) -> Result<Option<CategoricalProbs>> {
        Ok(None)
    }

    /// Integration window [F⁻¹(tail), F⁻¹(1 − tail)] for 1-D families.
    fn support_window(&self, theta: &ParamPoint, tail: f64) -> Result<(f64, f64)> {
        Ok((self.quantile(theta, tail)?, self.quantile(theta, 1.0 - tail)?))
    }
}

/// Carrier for the GP benchmark data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, seed: u64) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        Ok(Dataset {
            inputs,
            targets,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub const FAMILY_IDS: [&str; 4] = [
    "gaussian1d",
    "mvn_lcholesky",
    "categorical_softmax",
    "gp_prior_eq",
];

/// Resolves a family identifier.
///
/// `mvn_lcholesky`, `categorical_softmax` and `gp_prior_eq` accept a size
/// suffix (`:d`, `:k`, `:m`). Without one, the size is inferred from
/// `param_len` where possible; `gp_prior_eq` defaults to 30 equispaced inputs.
pub fn family_from_id(id: &str, param_len: Option<usize>) -> Result<Arc<dyn Family>> {
    let (base, arg) = match id.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (id, None),
    };
    let parse_size = |a: &str| {
        a.parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad size suffix `{a}` in `{id}`")))
    };
    let unknown = || Error::UnknownIdentifier {
        kind: "family",
        given: id.to_string(),
        valid: FAMILY_IDS.iter().map(|s| s.to_string()).collect(),
    };
    match base {
        "gaussian1d" if arg.is_none() => Ok(Arc::new(Gaussian1d)),
        "mvn_lcholesky" => {
            let d = match arg {
                Some(a) => parse_size(a)?,
                None => {
                    let n = param_len.ok_or_else(|| {
                        Error::InvalidArgument("mvn_lcholesky needs a dimension".into())
                    })?;
                    MvnLCholesky::dim_from_param_len(n).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "{n} parameters do not match any mvn_lcholesky dimension"
                        ))
                    })?
                }
            };
            Ok(Arc::new(MvnLCholesky::new(d)?))
        }
        "categorical_softmax" => {
            let k = match arg {
                Some(a) => parse_size(a)?,
                None => param_len.ok_or_else(|| {
                    Error::InvalidArgument("categorical_softmax needs a category count".into())
                })?,
            };
            Ok(Arc::new(CategoricalSoftmax::new(k)?))
        }
        "gp_prior_eq" => {
            let m = match arg {
                Some(a) => parse_size(a)?,
                None => 30,
            };
            Ok(Arc::new(GpPriorEq::new(equispaced_inputs(m))?))
        }
        _ => Err(unknown()),
    }
}
