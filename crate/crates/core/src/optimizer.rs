//! Formal natural gradient descent with pluggable metrics, plus plain
//! gradient and Newton baselines.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{Family, ParamPoint};
use crate::linalg;
use crate::metric::{default_floor, project_local, LocalHessian, Metric, Provenance};
use crate::similarity::Similarity;

/// A differentiable objective over parameter space.
pub trait Cost: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &ParamPoint) -> Result<f64>;
    fn gradient(&self, theta: &ParamPoint) -> Result<DVector<f64>>;
}

/// c(θ, θ′) for a similarity measure and a same-manifold target.
#[derive(Debug, Clone)]
pub struct ManifoldCost {
    pub family: Arc<dyn Family>,
    pub similarity: Similarity,
    pub target: ParamPoint,
}

impl ManifoldCost {
    pub fn new(family: Arc<dyn Family>, similarity: Similarity, target: ParamPoint) -> Result<Self> {
        family.validate(&target)?;
        Ok(ManifoldCost {
            family,
            similarity,
            target,
        })
    }
}

impl Cost for ManifoldCost {
    fn dim(&self) -> usize {
        self.family.param_dim()
    }

    fn value(&self, theta: &ParamPoint) -> Result<f64> {
        self.similarity.cost(self.family.as_ref(), theta, &self.target)
    }

    fn gradient(&self, theta: &ParamPoint) -> Result<DVector<f64>> {
        let target = crate::similarity::Target::Point(self.target.clone());
        self.similarity.grad_theta(self.family.as_ref(), theta, &target)
    }
}

/// Full finite-difference Hessian of the cost itself.
pub struct NewtonMetric<'a> {
    pub cost: &'a dyn Cost,
}

impl Metric for NewtonMetric<'_> {
    fn id(&self) -> String {
        "newton".into()
    }

    fn local_hessian(&self, theta: &ParamPoint, _grad: &DVector<f64>) -> Result<LocalHessian> {
        let h = linalg::fd_hessian(|t| self.cost.value(t), theta)?;
        Ok(LocalHessian::new(h, Provenance::FiniteDifference))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    Off,
    Backtracking { c1: f64, shrink: f64 },
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::Backtracking {
            c1: 1e-4,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// λ: the step is −(1/λ)H⁻¹g.
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Relative cost change below which the run counts as converged.
    pub cost_tol: f64,
    pub line_search: LineSearch,
    /// Eigenvalue floor τ_min; `None` uses the scale-aware default.
    pub damping: Option<f64>,
    /// When false, `time_s` is recorded as zero so traces are reproducible.
    pub record_wall_time: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1.0,
            max_iters: 100,
            grad_tol: 1e-8,
            cost_tol: 1e-14,
            line_search: LineSearch::default(),
            damping: None,
            record_wall_time: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.grad_tol > 0.0) || !(self.cost_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if let LineSearch::Backtracking { c1, shrink } = self.line_search {
            if !(c1 > 0.0 && c1 < 1.0 && shrink > 0.0 && shrink < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "backtracking needs c1, shrink in (0, 1), got c1 = {c1}, shrink = {shrink}"
                )));
            }
        }
        if let Some(d) = self.damping {
            if !(d > 0.0) {
                return Err(Error::InvalidArgument(format!("damping must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// One row of a [`Trace`]: the state reached at iteration `iter`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// ‖θ_iter − θ_{iter−1}‖, zero for the initial point.
    pub step_norm: f64,
    /// Regularization added to the metric for the step into this point.
    pub damping: f64,
    pub time_s: f64,
    /// The plain gradient replaced the metric direction for the step into this
    /// point, because the latter was not a descent direction or its line
    /// search failed.
    pub gradient_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ConvergedGrad,
    ConvergedCost,
    MaxIters,
    NumericFailure,
}

impl Status {
    pub fn is_failure(&self) -> bool {
        matches!(self, Status::NumericFailure)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::ConvergedGrad => "converged_grad",
            Status::ConvergedCost => "converged_cost",
            Status::MaxIters => "max_iters",
            Status::NumericFailure => "numeric_failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub metric: String,
    pub records: Vec<StepRecord>,
    pub status: Status,
    pub message: Option<String>,
    pub final_theta: Vec<f64>,
}

pub const TRACE_HEADER: [&str; 6] = ["iter", "cost", "grad_norm", "step_norm", "damping", "time_s"];

/// Shortest round-trip text for `v`, in exponent form outside [1e-4, 1e15).
pub fn format_real(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.records.last().map(|r| r.cost)
    }

    /// First iteration whose cost is at or below `threshold`.
    pub fn iters_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.cost <= threshold).map(|r| r.iter)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                format_real(r.cost),
                format_real(r.grad_norm),
                format_real(r.step_norm),
                format_real(r.damping),
                format_real(r.time_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Solves H v = −(1/λ) g after lifting H above the floor τ_min.
/// Returns the step and the total regularization applied.
pub fn solve_natural_step(
    h: LocalHessian,
    grad: &DVector<f64>,
    learning_rate: f64,
    tau_min: Option<f64>,
) -> Result<(DVector<f64>, f64)> {
    let projected = project_local(h, tau_min);
    let rhs = -grad / learning_rate;
    let mut m = projected.matrix.clone();
    let mut reg = projected.regularization_added;
    let n = m.nrows();
    let mut shift = tau_min.unwrap_or_else(|| default_floor(&m)).max(1e-300);
    for _ in 0..8 {
        if let Some(chol) = m.clone().cholesky() {
            let v = chol.solve(&rhs);
            if v.iter().all(|x| x.is_finite()) {
                return Ok((v, reg));
            }
        }
        shift *= 10.0;
        m += DMatrix::identity(n, n) * shift;
        reg += shift;
    }
    Err(Error::numeric(
        "natural gradient solve",
        format!("factorization failed after damping {reg:.3e}"),
    ))
}

/// Result of one natural-gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalStep {
    pub theta_next: ParamPoint,
    pub direction: DVector<f64>,
    pub gradient: DVector<f64>,
    pub regularization_added: f64,
}

/// θ + v̂ with v̂ = −(1/λ)[H^c_θ]⁻¹∇c.
pub fn natural_gradient_step(
    cost: &dyn Cost,
    metric: &dyn Metric,
    theta: &ParamPoint,
    learning_rate: f64,
) -> Result<NaturalStep> {
    let g = cost.gradient(theta)?;
    let h = metric.local_hessian(theta, &g)?;
    let (v, reg) = solve_natural_step(h, &g, learning_rate, None)?;
    Ok(NaturalStep {
        theta_next: theta + &v,
        direction: v,
        gradient: g,
        regularization_added: reg,
    })
}

/// Newton step with the projected finite-difference Hessian of the cost.
pub fn newton_step(cost: &dyn Cost, theta: &ParamPoint, learning_rate: f64) -> Result<ParamPoint> {
    Ok(natural_gradient_step(cost, &NewtonMetric { cost }, theta, learning_rate)?.theta_next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub cost: f64,
    /// gᵀv̂ < 0.
    pub descent: bool,
    pub armijo_satisfied: bool,
}

pub const ALPHA_FLOOR: f64 = 1e-8;

/// Trial points outside the domain or where the cost cannot be factored are
/// rejected trials rather than fatal errors.
fn is_infeasible(e: &Error) -> bool {
    matches!(e, Error::InvalidParameter(_) | Error::Numeric { .. })
}

/// Backtracking until cost(θ+αv̂) ≤ cost(θ) + c₁αgᵀv̂ or α reaches 1e-8.
///
/// Trial steps whose cost cannot be evaluated count as failed trials.
pub fn backtracking_line_search(
    cost: &dyn Cost,
    theta: &ParamPoint,
    direction: &DVector<f64>,
    grad: &DVector<f64>,
    cost_at_theta: f64,
    c1: f64,
    shrink: f64,
) -> Result<LineSearchOutcome> {
    let slope = grad.dot(direction);
    let descent = slope < 0.0;
    if !descent {
        let c = match cost.value(&(theta + direction * ALPHA_FLOOR)) {
            Ok(c) => c,
            Err(e) if is_infeasible(&e) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        return Ok(LineSearchOutcome {
            alpha: ALPHA_FLOOR,
            cost: c,
            descent,
            armijo_satisfied: false,
        });
    }
    let mut alpha = 1.0;
    loop {
        let trial = match cost.value(&(theta + direction * alpha)) {
            Ok(c) if c.is_finite() => Some(c),
            Ok(_) => None,
            Err(e) if is_infeasible(&e) => None,
            Err(e) => return Err(e),
        };
        if let Some(c) = trial {
            if c <= cost_at_theta + c1 * alpha * slope {
                return Ok(LineSearchOutcome {
                    alpha,
                    cost: c,
                    descent,
                    armijo_satisfied: true,
                });
            }
        }
        let next = alpha * shrink;
        if next < ALPHA_FLOOR {
            return Ok(LineSearchOutcome {
                alpha,
                cost: trial.unwrap_or(f64::INFINITY),
                descent,
                armijo_satisfied: false,
            });
        }
        alpha = next;
    }
}

/// Iterates natural-gradient steps until a termination criterion holds.
///
/// Errors never escape: they end the run with [`Status::NumericFailure`] and
/// the message is kept on the trace.
pub fn optimize(
    cost: &dyn Cost,
    metric: &dyn Metric,
    theta0: &ParamPoint,
    config: &OptimizerConfig,
) -> Trace {
    let mut trace = Trace {
        metric: metric.id(),
        records: Vec::new(),
        status: Status::MaxIters,
        message: None,
        final_theta: theta0.iter().copied().collect(),
    };
    if let Err(e) = config.validate() {
        trace.status = Status::NumericFailure;
        trace.message = Some(e.to_string());
        return trace;
    }
    if let Err(e) = run(cost, metric, theta0, config, &mut trace) {
        trace.status = Status::NumericFailure;
        trace.message = Some(e.to_string());
    }
    trace
}

fn run(
    cost: &dyn Cost,
    metric: &dyn Metric,
    theta0: &ParamPoint,
    config: &OptimizerConfig,
    trace: &mut Trace,
) -> Result<()> {
    let start = Instant::now();
    let elapsed = || {
        if config.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let mut theta = theta0.clone();
    let mut c = cost.value(&theta)?;
    let mut step_norm = 0.0;
    let mut damping = 0.0;
    let mut fallback = false;
    let mut cost_change = f64::INFINITY;
    for iter in 0..=config.max_iters {
        let g = cost.gradient(&theta)?;
        let grad_norm = g.norm();
        if !c.is_finite() || !grad_norm.is_finite() {
            return Err(Error::numeric(
                "optimize",
                format!("non-finite cost {c} or gradient norm {grad_norm} at iteration {iter}"),
            ));
        }
        trace.records.push(StepRecord {
            iter,
            cost: c,
            grad_norm,
            step_norm,
            damping,
            time_s: elapsed(),
            gradient_fallback: fallback,
        });
        trace.final_theta = theta.iter().copied().collect();
        if grad_norm < config.grad_tol {
            trace.status = Status::ConvergedGrad;
            return Ok(());
        }
        if cost_change <= config.cost_tol * c.abs().max(1.0) {
            trace.status = Status::ConvergedCost;
            return Ok(());
        }
        if iter == config.max_iters {
            trace.status = Status::MaxIters;
            return Ok(());
        }

        let h = metric.local_hessian(&theta, &g)?;
        let (mut v, reg) = solve_natural_step(h, &g, config.learning_rate, config.damping)?;
        fallback = false;
        if g.dot(&v) >= 0.0 {
            v = -&g / config.learning_rate;
            fallback = true;
        }
        let (alpha, c_next) = match config.line_search {
            LineSearch::Off => (1.0, cost.value(&(&theta + &v))?),
            LineSearch::Backtracking { c1, shrink } => {
                let mut ls = backtracking_line_search(cost, &theta, &v, &g, c, c1, shrink)?;
                if !ls.armijo_satisfied && !(ls.cost <= c) && !fallback {
                    v = -&g / config.learning_rate;
                    fallback = true;
                    ls = backtracking_line_search(cost, &theta, &v, &g, c, c1, shrink)?;
                }
                if !ls.armijo_satisfied && !(ls.cost <= c) {
                    // no decrease is attainable at working precision
                    trace.status = Status::ConvergedCost;
                    return Ok(());
                }
                (ls.alpha, ls.cost)
            }
        };
        let step = &v * alpha;
        theta += &step;
        step_norm = step.norm();
        damping = reg;
        cost_change = (c - c_next).abs();
        c = c_next;
    }
    Ok(())
}
