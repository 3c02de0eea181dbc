//! Gaussian-process hyperparameter fitting under Euclidean, Fisher–Rao and
//! Wasserstein natural gradients.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{equispaced_inputs, Dataset, Family, GpPriorEq, ParamPoint};
use crate::metric::{fd_local_hessian, fisher_information, LocalHessian, Metric, MetricEngine, MetricSpec};
use crate::optimizer::{format_real, optimize, Cost, NewtonMetric, OptimizerConfig, Status, Trace};
use crate::similarity::{Similarity, SimilarityKind};

pub use crate::families::eq_kernel;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

fn model(inputs: &[f64]) -> Result<GpPriorEq> {
    GpPriorEq::new(inputs.to_vec())
}

fn check_theta(theta: &ParamPoint) -> Result<()> {
    if theta.len() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: theta.len(),
        });
    }
    Ok(())
}

fn factor(k: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    k.cholesky()
        .ok_or_else(|| Error::numeric("gp covariance", "factorization failed"))
}

/// −log N(y; 0, K_θ).
pub fn gp_nll(theta: &ParamPoint, data: &Dataset) -> Result<f64> {
    check_theta(theta)?;
    let k = model(&data.inputs)?.covariance(theta)?;
    let chol = factor(k)?;
    let y = DVector::from_column_slice(&data.targets);
    let alpha = chol.solve(&y);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let m = data.len() as f64;
    Ok(0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * m * LOG_2PI)
}

/// ∂NLL/∂θᵢ = ½tr((K⁻¹ − ααᵀ)∂ᵢK) with α = K⁻¹y.
pub fn gp_nll_grad(theta: &ParamPoint, data: &Dataset) -> Result<DVector<f64>> {
    check_theta(theta)?;
    let gp = model(&data.inputs)?;
    let chol = factor(gp.covariance(theta)?)?;
    let y = DVector::from_column_slice(&data.targets);
    let alpha = chol.solve(&y);
    let w = chol.inverse() - &alpha * alpha.transpose();
    let dk = gp.covariance_derivatives(theta)?;
    Ok(DVector::from_iterator(3, dk.iter().map(|d| 0.5 * w.component_mul(d).sum())))
}

/// Fisher–Rao metric ½tr(K⁻¹∂ᵢK K⁻¹∂ⱼK) of the centered GP prior.
pub fn gp_fisher_metric(theta: &ParamPoint, inputs: &[f64]) -> Result<LocalHessian> {
    check_theta(theta)?;
    fisher_information(&model(inputs)?, theta)
}

/// Finite-difference local Hessian of ½W₂² between GP priors.
pub fn gp_w2_metric(theta: &ParamPoint, inputs: &[f64]) -> Result<LocalHessian> {
    check_theta(theta)?;
    let sim = Similarity::new(SimilarityKind::SquaredW2Gaussian);
    fd_local_hessian(&sim, &model(inputs)?, theta, None)
}

/// Targets drawn from N(0, K_θ) on `m` equispaced inputs in [−3, 3].
pub fn generate_data(seed: u64, m: usize, true_theta: &ParamPoint) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 data points, got {m}")));
    }
    check_theta(true_theta)?;
    let inputs = equispaced_inputs(m);
    let gp = model(&inputs)?;
    let targets = gp.sample(true_theta, seed, 1)?.remove(0);
    Dataset::new(inputs, targets, seed)
}

/// The negative log marginal likelihood as an optimizer cost.
#[derive(Debug, Clone)]
pub struct GpNll {
    pub data: Dataset,
}

impl Cost for GpNll {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, theta: &ParamPoint) -> Result<f64> {
        gp_nll(theta, &self.data)
    }

    fn gradient(&self, theta: &ParamPoint) -> Result<DVector<f64>> {
        gp_nll_grad(theta, &self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub m: usize,
    pub seed: u64,
    pub true_theta: [f64; 3],
    pub theta0: [f64; 3],
    /// Metric ids; besides the engine ids this accepts `wasserstein` for
    /// `fd:w2_gaussian` and `newton` for the finite-difference Newton baseline.
    pub metrics: Vec<String>,
    pub optimizer: OptimizerConfig,
    /// Threshold is NLL(true θ) plus this many nats.
    pub threshold_offset: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            m: 30,
            seed: 42,
            true_theta: [0.4, -0.2, -1.6],
            theta0: [0.0, 0.0, 0.0],
            metrics: vec!["euclidean".into(), "fisher".into(), "wasserstein".into()],
            optimizer: OptimizerConfig {
                max_iters: 500,
                grad_tol: 1e-6,
                record_wall_time: false,
                ..OptimizerConfig::default()
            },
            threshold_offset: 0.5,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("m must be at least 2, got {}", self.m)));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidArgument("at least one metric is required".into()));
        }
        if !(self.threshold_offset >= 0.0) {
            return Err(Error::InvalidArgument("threshold_offset must be non-negative".into()));
        }
        for id in &self.metrics {
            resolve_metric(id)?;
        }
        self.optimizer.validate()
    }
}

/// Benchmark-only metric ids on top of the engine ids.
pub const GP_METRIC_ALIASES: [&str; 2] = ["wasserstein", "newton"];

enum GpMetric {
    Engine(MetricSpec),
    Newton,
}

fn resolve_metric(id: &str) -> Result<GpMetric> {
    match id {
        "newton" => Ok(GpMetric::Newton),
        "wasserstein" => Ok(GpMetric::Engine(MetricSpec::Fd(Similarity::new(
            SimilarityKind::SquaredW2Gaussian,
        )))),
        _ => MetricSpec::from_id(id).map(GpMetric::Engine).map_err(|e| match e {
            Error::UnknownIdentifier { kind, given, mut valid } => {
                valid.extend(GP_METRIC_ALIASES.iter().map(|s| s.to_string()));
                Error::UnknownIdentifier { kind, given, valid }
            }
            other => other,
        }),
    }
}

/// Labeled metric wrapper so traces keep the requested id.
struct Named<'a> {
    id: &'a str,
    inner: &'a dyn Metric,
}

impl Metric for Named<'_> {
    fn id(&self) -> String {
        self.id.to_string()
    }

    fn local_hessian(&self, theta: &ParamPoint, grad: &DVector<f64>) -> Result<LocalHessian> {
        self.inner.local_hessian(theta, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub iters_to_threshold: Option<usize>,
    pub final_cost: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub dataset: Dataset,
    pub threshold: f64,
    pub traces: BTreeMap<String, Trace>,
    /// In the order the metrics were requested.
    pub summary: Vec<SummaryRow>,
}

fn run_one(id: &str, cost: &GpNll, family: &Arc<dyn Family>, theta0: &ParamPoint, cfg: &OptimizerConfig) -> Trace {
    match resolve_metric(id) {
        Ok(GpMetric::Engine(spec)) => {
            let engine = MetricEngine::new(spec, family.clone());
            optimize(cost, &Named { id, inner: &engine }, theta0, cfg)
        }
        Ok(GpMetric::Newton) => {
            let newton = NewtonMetric { cost };
            optimize(cost, &Named { id, inner: &newton }, theta0, cfg)
        }
        Err(e) => Trace {
            metric: id.to_string(),
            records: Vec::new(),
            status: Status::NumericFailure,
            message: Some(e.to_string()),
            final_theta: theta0.iter().copied().collect(),
        },
    }
}

/// One optimization per metric from the same start on the same data; the
/// runs execute on separate threads.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let true_theta = DVector::from_column_slice(&config.true_theta);
    let dataset = generate_data(config.seed, config.m, &true_theta)?;
    let threshold = gp_nll(&true_theta, &dataset)? + config.threshold_offset;
    let family: Arc<dyn Family> = Arc::new(model(&dataset.inputs)?);
    let cost = GpNll { data: dataset.clone() };
    let theta0 = DVector::from_column_slice(&config.theta0);

    let traces: Vec<Trace> = std::thread::scope(|s| {
        let handles: Vec<_> = config
            .metrics
            .iter()
            .map(|id| {
                let (cost, family, theta0) = (&cost, &family, &theta0);
                s.spawn(move || run_one(id, cost, family, theta0, &config.optimizer))
            })
            .collect();
        handles
            .into_iter()
            .zip(&config.metrics)
            .map(|(h, id)| {
                h.join().unwrap_or_else(|_| Trace {
                    metric: id.clone(),
                    records: Vec::new(),
                    status: Status::NumericFailure,
                    message: Some("optimizer thread panicked".into()),
                    final_theta: config.theta0.to_vec(),
                })
            })
            .collect()
    });

    let summary = traces
        .iter()
        .map(|t| SummaryRow {
            metric: t.metric.clone(),
            iters_to_threshold: t.iters_to_threshold(threshold),
            final_cost: t.final_cost(),
            status: t.status.to_string(),
        })
        .collect();
    Ok(BenchmarkReport {
        dataset,
        threshold,
        traces: traces.into_iter().map(|t| (t.metric.clone(), t)).collect(),
        summary,
    })
}

/// Filesystem-safe form of a metric id for `trace_{metric}.csv`.
pub fn sanitize_metric_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["metric", "iters_to_threshold", "final_cost", "status"])?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            r.iters_to_threshold.map_or(String::new(), |n| n.to_string()),
            r.final_cost.map_or(String::new(), format_real),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl BenchmarkReport {
    /// Writes `summary.csv` and one `trace_{metric}.csv` per run into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for row in &self.summary {
            let trace = &self.traces[&row.metric];
            trace.save_csv(&dir.join(format!("trace_{}.csv", sanitize_metric_id(&row.metric))))?;
        }
        write_summary_csv(&self.summary, std::fs::File::create(dir.join("summary.csv"))?)
    }

    pub fn iters_to_threshold(&self, metric: &str) -> Option<usize> {
        self.summary
            .iter()
            .find(|r| r.metric == metric)
            .and_then(|r| r.iters_to_threshold)
    }
}
