//! `natgrad`: run natural-gradient experiments, print local Hessians, and
//! validate the metric engines.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use natgrad::families::{family_from_id, Family};
use natgrad::gp_bench::{self, BenchmarkConfig, BenchmarkReport, SummaryRow};
use natgrad::metric::{fd_local_hessian, Direction, MetricEngine, MetricSettings, MetricSpec, Provenance};
use natgrad::optimizer::{optimize, Cost, ManifoldCost, NewtonMetric, Trace};
use natgrad::similarity::{Similarity, SimilarityKind};
use natgrad::validation::run_validation;

use config::{ExperimentConfig, TargetSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl From<natgrad::Error> for CliError {
    fn from(e: natgrad::Error) -> Self {
        use natgrad::Error as E;
        match e {
            E::Numeric { .. } | E::UndefinedScore | E::DivergenceInfinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "natgrad", version, about = "Natural gradient descent for general similarity measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the local Hessian of a similarity measure at θ.
    Hessian {
        family: String,
        similarity: String,
        /// Comma-separated parameter values, e.g. `0,1`.
        #[arg(allow_hyphen_values = true)]
        theta: String,
        /// Metric engine id; defaults to the engine belonging to the similarity.
        #[arg(long)]
        metric: Option<String>,
        /// Also print the max-abs deviation from the finite-difference oracle.
        #[arg(long)]
        check: bool,
        /// Tangent direction for direction-dependent measures, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        direction: Option<String>,
    },
    /// Compare every analytic engine against its reference and print a table.
    Validate {
        #[arg(long, hide = true, default_value_t = 1.0)]
        inject_fisher_scale: f64,
    },
    /// Run the Gaussian-process hyperparameter benchmark.
    BenchGp {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run { config, output_dir } => cmd_run(&config, output_dir),
        Command::Hessian {
            family,
            similarity,
            theta,
            metric,
            check,
            direction,
        } => cmd_hessian(&family, &similarity, &theta, metric.as_deref(), check, direction.as_deref()),
        Command::Validate { inject_fisher_scale } => cmd_validate(inject_fisher_scale),
        Command::BenchGp { config, output_dir } => cmd_bench_gp(&config, output_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn parse_reals(s: &str, what: &str) -> Result<DVector<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(DVector::from_vec(v)),
        _ => Err(CliError::Config(format!(
            "{what} must be comma-separated reals, got `{s}`"
        ))),
    }
}

fn print_matrix(m: &DMatrix<f64>) {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    println!("{}", serde_json::to_string(&rows).expect("finite matrix"));
}

fn cmd_hessian(
    family_id: &str,
    sim_id: &str,
    theta: &str,
    metric: Option<&str>,
    check: bool,
    direction: Option<&str>,
) -> Result<u8, CliError> {
    let theta = parse_reals(theta, "theta")?;
    let family = family_from_id(family_id, Some(theta.len()))?;
    family.validate(&theta)?;
    let sim = Similarity::from_id(sim_id)?;
    let spec = match metric {
        Some(id) => MetricSpec::from_id(id)?,
        None => MetricSpec::natural_for(&sim),
    };
    let direction = direction
        .map(|d| parse_reals(d, "direction").and_then(|u| Direction::new(u).map_err(CliError::from)))
        .transpose()?;
    let needs_direction = matches!(spec, MetricSpec::WpOneD(p) if p != 2.0)
        || matches!(sim.kind, SimilarityKind::WassersteinP(p) if p != 2.0 && check);
    if needs_direction && direction.is_none() {
        return Err(CliError::Config(format!(
            "`{}` depends on the direction; pass --direction",
            sim.id()
        )));
    }
    let engine = MetricEngine::new(spec, family.clone());
    let h = engine.evaluate(&theta, direction.as_ref())?;
    let provenance = match h.provenance {
        Provenance::Analytic => "analytic",
        Provenance::FiniteDifference => "finite_difference",
        Provenance::Pullback => "pullback",
    };
    println!("metric: {} ({provenance})", engine.spec.id());
    print_matrix(&h.matrix);
    if h.pseudo_metric {
        println!("note: rank-deficient; regularization {:e} added", h.regularization_added);
    }
    if check {
        let directional = matches!(sim.kind, SimilarityKind::WassersteinP(p) if p != 2.0);
        let u = if directional { direction.as_ref() } else { None };
        let fd = fd_local_hessian(&sim, family.as_ref(), &theta, u)?;
        println!("fd_max_abs_deviation: {:e}", (&h.matrix - &fd.matrix).amax());
    }
    Ok(0)
}

fn cmd_validate(fisher_scale: f64) -> Result<u8, CliError> {
    let settings = MetricSettings {
        fisher_scale,
        ..Default::default()
    };
    let checks = run_validation(&settings);
    println!("{:<6}{:<29}{:>12}    tolerance", "", "check", "value");
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { 0 } else { 2 })
}

fn status_code(traces: &[&Trace]) -> u8 {
    if traces.iter().any(|t| t.status.is_failure()) {
        2
    } else {
        0
    }
}

fn report(trace: &Trace) {
    let cost = trace.final_cost().map_or("n/a".to_string(), |c| format!("{c:.12e}"));
    println!(
        "{}: {} after {} iterations, final cost {cost}",
        trace.metric,
        trace.status,
        trace.iterations()
    );
    if let Some(m) = &trace.message {
        eprintln!("{}: {m}", trace.metric);
    }
}

fn write_benchmark(report_: &BenchmarkReport, dir: &Path) -> Result<u8, CliError> {
    report_
        .write_outputs(dir)
        .map_err(|e| CliError::Config(format!("cannot write to {}: {e}", dir.display())))?;
    println!("threshold: {:.12e}", report_.threshold);
    for row in &report_.summary {
        report(&report_.traces[&row.metric]);
    }
    Ok(status_code(&report_.traces.values().collect::<Vec<_>>()))
}

fn cmd_bench_gp(path: &Path, output_dir: Option<PathBuf>) -> Result<u8, CliError> {
    let (cfg, dir) = config::load_benchmark(path)?;
    let dir = output_dir.or(dir).unwrap_or_else(|| PathBuf::from("."));
    let rep = gp_bench::run_benchmark(&cfg)?;
    write_benchmark(&rep, &dir)
}

fn cmd_run(path: &Path, output_dir: Option<PathBuf>) -> Result<u8, CliError> {
    let cfg = config::load_experiment(path)?;
    let dir = output_dir
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match &cfg.target {
        TargetSpec::Gp { gp } => run_gp(&cfg, gp, &dir),
        TargetSpec::Point(target) => run_point(&cfg, target, &dir),
    }
}

fn run_gp(cfg: &ExperimentConfig, gp: &config::GpTarget, dir: &Path) -> Result<u8, CliError> {
    if let Some(f) = &cfg.family {
        if !f.starts_with("gp_prior_eq") {
            return Err(CliError::Config(format!(
                "a gp target needs family gp_prior_eq, got `{f}`"
            )));
        }
    }
    if cfg.similarity.is_some() {
        return Err(CliError::Config(
            "a gp target is fitted by likelihood; remove `similarity`".into(),
        ));
    }
    let theta0: [f64; 3] = cfg.theta0.as_slice().try_into().map_err(|_| {
        CliError::Config(format!("gp theta0 needs 3 entries, got {}", cfg.theta0.len()))
    })?;
    let bench = BenchmarkConfig {
        m: gp.m,
        seed: gp.seed,
        true_theta: gp.true_theta,
        theta0,
        metrics: cfg
            .metric
            .clone()
            .map(|m| m.into_vec())
            .unwrap_or_else(|| BenchmarkConfig::default().metrics),
        optimizer: cfg.optimizer.clone(),
        threshold_offset: gp.threshold_offset,
    };
    let rep = gp_bench::run_benchmark(&bench)?;
    write_benchmark(&rep, dir)
}

fn run_point(cfg: &ExperimentConfig, target: &[f64], dir: &Path) -> Result<u8, CliError> {
    let family_id = cfg
        .family
        .as_deref()
        .ok_or_else(|| CliError::Config("`family` is required".into()))?;
    let theta0 = DVector::from_column_slice(&cfg.theta0);
    let family: Arc<dyn Family> = family_from_id(family_id, Some(theta0.len()))?;
    if target.len() != theta0.len() {
        return Err(CliError::Config(format!(
            "target has {} entries but theta0 has {}",
            target.len(),
            theta0.len()
        )));
    }
    family.validate(&theta0)?;
    let sim = Similarity::from_id(cfg.similarity.as_deref().unwrap_or("kl"))?;
    let cost = ManifoldCost::new(family.clone(), sim.clone(), DVector::from_column_slice(target))?;
    cfg.optimizer.validate()?;
    let ids = match &cfg.metric {
        Some(m) => m.clone().into_vec(),
        None => vec![MetricSpec::natural_for(&sim).id()],
    };
    if ids.is_empty() {
        return Err(CliError::Config("`metric` list is empty".into()));
    }
    // resolve everything before running anything
    let specs: Vec<Option<MetricSpec>> = ids
        .iter()
        .map(|id| match id.as_str() {
            "newton" => Ok(None),
            _ => MetricSpec::from_id(id).map(Some),
        })
        .collect::<Result<_, _>>()?;
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;

    let mut traces = Vec::new();
    for (id, spec) in ids.iter().zip(specs) {
        let mut trace = match spec {
            Some(s) => optimize(&cost, &MetricEngine::new(s, family.clone()), &theta0, &cfg.optimizer),
            None => optimize(&cost, &NewtonMetric { cost: &cost as &dyn Cost }, &theta0, &cfg.optimizer),
        };
        trace.metric = id.clone();
        let file = dir.join(format!("trace_{}.csv", gp_bench::sanitize_metric_id(id)));
        trace
            .save_csv(&file)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", file.display())))?;
        report(&trace);
        traces.push(trace);
    }
    let rows: Vec<SummaryRow> = traces
        .iter()
        .map(|t| SummaryRow {
            metric: t.metric.clone(),
            iters_to_threshold: cfg.threshold.and_then(|th| t.iters_to_threshold(th)),
            final_cost: t.final_cost(),
            status: t.status.to_string(),
        })
        .collect();
    let summary = dir.join("summary.csv");
    std::fs::File::create(&summary)
        .map_err(natgrad::Error::from)
        .and_then(|f| gp_bench::write_summary_csv(&rows, f))
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", summary.display())))?;
    Ok(status_code(&traces.iter().collect::<Vec<_>>()))
}
