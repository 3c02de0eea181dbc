//! Cross-checks of every analytic metric engine against an independent
//! finite-difference or closed-form reference.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::families::{equispaced_inputs, CategoricalSoftmax, Family, Gaussian1d, GpPriorEq, LinearReparam, ParamPoint};
use crate::gp_bench::{generate_data, gp_nll, gp_nll_grad};
use crate::linalg;
use crate::metric::{
    fd_local_hessian, w2_local_hessian_1d, Direction, MetricEngine, MetricSettings, MetricSpec,
};
use crate::optimizer::{natural_gradient_step, ManifoldCost};
use crate::similarity::{FDivergenceSpec, Similarity, SimilarityKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    /// Passes when the measured value is at most the tolerance.
    AtMost,
    /// Passes when the measured value is at least the tolerance.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Maximum deviation, or the worst ratio for [`Comparison::AtLeast`] checks.
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    /// Set when the check could not be evaluated.
    pub error: Option<String>,
}

impl Check {
    fn new(name: &'static str, tolerance: f64, comparison: Comparison, value: Result<f64>) -> Self {
        match value {
            Ok(v) => Check {
                name,
                value: v,
                tolerance,
                comparison,
                error: None,
            },
            Err(e) => Check {
                name,
                value: f64::NAN,
                tolerance,
                comparison,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn passed(&self) -> bool {
        self.error.is_none()
            && match self.comparison {
                Comparison::AtMost => self.value <= self.tolerance,
                Comparison::AtLeast => self.value >= self.tolerance,
            }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        };
        write!(
            f,
            "{verdict}  {:<28} {:>12.4e} {op} {:.1e}",
            self.name, self.value, self.tolerance
        )?;
        if let Some(e) = &self.error {
            write!(f, "  ({e})")?;
        }
        Ok(())
    }
}

/// max|a − b| / max(1, max|b|).
pub fn relative_deviation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn gaussian_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<ParamPoint> {
    (0..n)
        .map(|_| DVector::from_vec(vec![rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0)]))
        .collect()
}

fn logits(rng: &mut ChaCha8Rng, k: usize) -> ParamPoint {
    DVector::from_fn(k, |_, _| rng.random_range(-1.5..1.5))
}

fn worst<I: IntoIterator<Item = Result<f64>>>(it: I) -> Result<f64> {
    let mut m: f64 = 0.0;
    for v in it {
        m = m.max(v?);
    }
    Ok(m)
}

fn engine(spec: MetricSpec, family: Arc<dyn Family>, settings: &MetricSettings) -> MetricEngine {
    MetricEngine::new(spec, family).with_settings(settings.clone())
}

/// Runs every check. `settings` configures the engines under test; the
/// references never see it.
pub fn run_validation(settings: &MetricSettings) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let g1: Arc<dyn Family> = Arc::new(Gaussian1d);
    let cat: Arc<dyn Family> = Arc::new(CategoricalSoftmax::new(3).expect("k = 3"));
    let gauss = gaussian_points(&mut rng, 20);
    let mut checks = Vec::new();

    let fisher = engine(MetricSpec::Fisher, g1.clone(), settings);
    checks.push(Check::new(
        "kl_local_hessian_is_fisher",
        1e-4,
        Comparison::AtMost,
        worst(gauss.iter().map(|t| {
            let fd = fd_local_hessian(&Similarity::kl(), g1.as_ref(), t, None)?;
            let an = fisher.evaluate(t, None)?;
            Ok(relative_deviation(&an.matrix, &fd.matrix))
        })),
    ));

    for (name, spec) in [
        ("fdiv_scaling_chi2", FDivergenceSpec::CHI2),
        ("fdiv_scaling_hellinger2", FDivergenceSpec::HELLINGER2),
    ] {
        let e = engine(MetricSpec::FDiv(spec), g1.clone(), settings);
        let sim = Similarity::new(SimilarityKind::FDivergence(spec));
        checks.push(Check::new(
            name,
            1e-4,
            Comparison::AtMost,
            worst(gauss.iter().take(5).map(|t| {
                let fd = fd_local_hessian(&sim, g1.as_ref(), t, None)?;
                let kl = fd_local_hessian(&Similarity::kl(), g1.as_ref(), t, None)?;
                let an = e.evaluate(t, None)?;
                let scaled = relative_deviation(&fd.matrix, &(&kl.matrix * spec.f_second_at_one));
                Ok(relative_deviation(&an.matrix, &fd.matrix).max(scaled))
            })),
        ));
    }

    let cats: Vec<ParamPoint> = (0..10).map(|_| logits(&mut rng, 3)).collect();
    let pullback = engine(MetricSpec::Pullback, cat.clone(), settings);
    checks.push(Check::new(
        "categorical_pullback",
        1e-6,
        Comparison::AtMost,
        worst(cats.iter().map(|t| {
            let fd = fd_local_hessian(&Similarity::kl(), cat.as_ref(), t, None)?;
            Ok(relative_deviation(&pullback.evaluate(t, None)?.matrix, &fd.matrix))
        })),
    ));

    let cat_fisher = engine(MetricSpec::Fisher, cat.clone(), settings);
    let fr = Similarity::new(SimilarityKind::SquaredFisherRao);
    checks.push(Check::new(
        "fisher_rao_distance_hessian",
        1e-4,
        Comparison::AtMost,
        worst(cats.iter().map(|t| {
            let fd = fd_local_hessian(&fr, cat.as_ref(), t, None)?;
            Ok(relative_deviation(&cat_fisher.evaluate(t, None)?.matrix, &fd.matrix))
        })),
    ));

    let w2 = engine(MetricSpec::W2OneD, g1.clone(), settings);
    let w2_sim = Similarity::new(SimilarityKind::WassersteinP(2.0));
    checks.push(Check::new(
        "w2_metric_identity",
        1e-4,
        Comparison::AtMost,
        worst(gauss.iter().take(5).map(|t| {
            let an = w2.evaluate(t, None)?.matrix;
            let fd = fd_local_hessian(&w2_sim, g1.as_ref(), t, None)?.matrix;
            Ok(relative_deviation(&an, &DMatrix::identity(2, 2)).max(relative_deviation(&an, &fd)))
        })),
    ));

    let wp = |p: f64| engine(MetricSpec::WpOneD(p), g1.clone(), settings);
    let dirs: Vec<Direction> = (0..5)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Direction::new(DVector::from_vec(vec![a.cos(), a.sin()])).expect("unit")
        })
        .collect();
    // power-of-two scalings normalize to the same bits; other scalings may
    // differ by a rounding error in the unit vector
    checks.push(Check::new(
        "finsler_scale_invariance",
        1e-14,
        Comparison::AtMost,
        worst(gauss.iter().zip(&dirs).map(|(t, u)| {
            let e = wp(3.0);
            let base = e.evaluate(t, Some(u))?.matrix;
            let mut dev: f64 = 0.0;
            for s in [0.125, 2.0, 1024.0] {
                let scaled = Direction::new(u.raw() * s)?;
                if e.evaluate(t, Some(&scaled))?.matrix != base {
                    return Ok(f64::INFINITY);
                }
            }
            for s in [1e-3, 0.3, 7.0, 1e4] {
                let scaled = Direction::new(u.raw() * s)?;
                dev = dev.max(relative_deviation(&e.evaluate(t, Some(&scaled))?.matrix, &base));
            }
            Ok(dev)
        })),
    ));
    checks.push(Check::new(
        "finsler_p2_is_w2",
        1e-12,
        Comparison::AtMost,
        worst(gauss.iter().zip(&dirs).map(|(t, u)| {
            let a = wp(2.0).evaluate(t, Some(u))?.matrix;
            Ok(relative_deviation(&a, &w2_local_hessian_1d(g1.as_ref(), t)?.matrix))
        })),
    ));
    let w3 = Similarity::new(SimilarityKind::WassersteinP(3.0));
    checks.push(Check::new(
        "finsler_p3_directional_fd",
        5e-3,
        Comparison::AtMost,
        worst(gauss.iter().zip(&dirs).take(3).map(|(t, u)| {
            let an = wp(3.0).evaluate(t, Some(u))?.matrix;
            let fd = fd_local_hessian(&w3, g1.as_ref(), t, Some(u))?.matrix;
            Ok(relative_deviation(&an, &fd))
        })),
    ));

    checks.push(Check::new(
        "newton_limit_ratio",
        1.8,
        Comparison::AtLeast,
        newton_limit(&fisher).map(|n| n.min_ratio),
    ));
    checks.push(Check::new(
        "newton_limit_small_t",
        0.02,
        Comparison::AtMost,
        newton_limit(&fisher).map(|n| n.relative_at_001),
    ));

    checks.push(Check::new(
        "reparam_equivariance",
        1e-8,
        Comparison::AtMost,
        equivariance(&mut rng, settings),
    ));

    let inputs = equispaced_inputs(6);
    let gp: Arc<dyn Family> = Arc::new(GpPriorEq::new(inputs.clone()).expect("inputs"));
    let gp_fisher = engine(MetricSpec::Fisher, gp.clone(), settings);
    let gp_points: Vec<ParamPoint> = (0..5)
        .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    checks.push(Check::new(
        "gp_fisher_vs_kl",
        1e-4,
        Comparison::AtMost,
        worst(gp_points.iter().map(|t| {
            let fd = fd_local_hessian(&Similarity::kl(), gp.as_ref(), t, None)?;
            Ok(relative_deviation(&gp_fisher.evaluate(t, None)?.matrix, &fd.matrix))
        })),
    ));
    checks.push(Check::new(
        "gp_gradient_vs_fd",
        1e-6,
        Comparison::AtMost,
        (|| {
            let data = generate_data(5, 10, &DVector::from_vec(vec![0.3, -0.2, -1.0]))?;
            worst(gp_points.iter().map(|t| {
                let an = gp_nll_grad(t, &data)?;
                let fd = linalg::fd_gradient(|x| gp_nll(x, &data), t)?;
                Ok((an - &fd).amax() / fd.amax().max(1.0))
            }))
        })(),
    ));

    checks
}

/// Deviations of the local Hessian from the full Hessian of θ ↦ KL(θ‖θ*)
/// along θ* + tδ.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonLimit {
    /// E(t) at t = 0.2, 0.1, 0.05, 0.025.
    pub deviations: Vec<f64>,
    /// min over t ∈ {0.1, 0.05, 0.025} of E(2t)/E(t).
    pub min_ratio: f64,
    /// E(0.01) / ‖H‖ at t = 0.01.
    pub relative_at_001: f64,
}

pub fn newton_limit(fisher: &MetricEngine) -> Result<NewtonLimit> {
    let star = DVector::from_vec(vec![0.0, 1.0]);
    let delta = DVector::from_vec(vec![0.6, 0.8]);
    let sim = Similarity::kl();
    let family = fisher.family.clone();
    let dev = |t: f64| -> Result<(f64, f64)> {
        let theta = &star + &delta * t;
        let full = linalg::fd_hessian(|x| sim.cost(family.as_ref(), x, &star), &theta)?;
        let local = fisher.evaluate(&theta, None)?.matrix;
        Ok(((&local - full).norm(), local.norm()))
    };
    let deviations = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|&t| dev(t).map(|d| d.0))
        .collect::<Result<Vec<_>>>()?;
    let min_ratio = deviations.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min);
    let (e, h) = dev(0.01)?;
    Ok(NewtonLimit {
        deviations,
        min_ratio,
        relative_at_001: e / h,
    })
}

fn equivariance(rng: &mut ChaCha8Rng, settings: &MetricSettings) -> Result<f64> {
    let g1: Arc<dyn Family> = Arc::new(Gaussian1d);
    let target = DVector::from_vec(vec![0.0, 1.0]);
    let mut dev: f64 = 0.0;
    let mut done = 0;
    while done < 20 {
        let a = DMatrix::<f64>::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
        if a.determinant().abs() < 0.3 {
            continue;
        }
        let theta = gaussian_points(rng, 1).remove(0);
        let re = LinearReparam::new(g1.clone(), a.clone())?;
        let xi = re.from_inner(&theta);
        let xi_target = re.from_inner(&target);
        let re: Arc<dyn Family> = Arc::new(re);

        let cost_t = ManifoldCost::new(g1.clone(), Similarity::kl(), target.clone())?;
        let step_t = natural_gradient_step(&cost_t, &engine(MetricSpec::Fisher, g1.clone(), settings), &theta, 1.0)?;
        let cost_x = ManifoldCost::new(re.clone(), Similarity::kl(), xi_target)?;
        let step_x = natural_gradient_step(&cost_x, &engine(MetricSpec::Fisher, re, settings), &xi, 1.0)?;

        let mapped = &a * &step_x.direction;
        dev = dev.max((mapped - &step_t.direction).amax() / step_t.direction.amax().max(1.0));
        done += 1;
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_engines_pass_every_check() {
        let checks = run_validation(&MetricSettings::default());
        for c in &checks {
            assert!(c.passed(), "{c}");
        }
        assert!(checks.len() >= 12);
    }

    #[test]
    fn scaled_fisher_fails_the_fdiv_check() {
        let settings = MetricSettings {
            fisher_scale: 1.1,
            ..Default::default()
        };
        let checks = run_validation(&settings);
        let c = checks.iter().find(|c| c.name == "fdiv_scaling_chi2").unwrap();
        assert!(!c.passed());
        assert!(c.value > 0.05);
    }
}
