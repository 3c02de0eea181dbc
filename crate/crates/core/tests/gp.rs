use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use natgrad::families::{Dataset, Family, GpPriorEq, ParamPoint};
use natgrad::gp_bench::{
    generate_data, gp_fisher_metric, gp_nll, gp_nll_grad, gp_w2_metric, run_benchmark, BenchmarkConfig, GpNll,
};
use natgrad::metric::{default_floor, fd_local_hessian, project_local, MetricEngine, MetricSpec, Provenance};
use natgrad::optimizer::{optimize, OptimizerConfig, Status};
use natgrad::similarity::Similarity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(xs: &[f64]) -> ParamPoint {
    DVector::from_column_slice(xs)
}

fn kernel(theta: &ParamPoint, xs: &[f64]) -> DMatrix<f64> {
    let (a2, l, n2) = ((2.0 * theta[0]).exp(), theta[1].exp(), (2.0 * theta[2]).exp());
    DMatrix::from_fn(xs.len(), xs.len(), |i, j| {
        let d = xs[i] - xs[j];
        a2 * (-d * d / (2.0 * l * l)).exp() + if i == j { n2 } else { 0.0 }
    })
}

fn minor(m: &DMatrix<f64>, row: usize, col: usize) -> DMatrix<f64> {
    m.clone().remove_row(row).remove_column(col)
}

/// Determinant by cofactor expansion along the first row.
fn cofactor_det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    (0..m.ncols())
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[(0, j)] * cofactor_det(&minor(m, 0, j))
        })
        .sum()
}

fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * cofactor_det(&minor(m, j, i))
    })
}

#[test]
fn nll_against_cofactor_oracle() {
    let xs = vec![-1.5, -0.2, 0.4, 2.0];
    let ys = vec![0.3, -0.8, 1.1, 0.05];
    let data = Dataset::new(xs.clone(), ys.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let t = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let k = kernel(&t, &xs);
        let det = cofactor_det(&k);
        let y = v(&ys);
        let quad = (y.transpose() * adjugate(&k) * &y)[(0, 0)] / det;
        let oracle = 0.5 * quad + 0.5 * det.ln() + 2.0 * (2.0 * std::f64::consts::PI).ln();
        let nll = gp_nll(&t, &data).unwrap();
        assert!((nll - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "{nll} vs {oracle}");
    }
}

#[test]
fn gradient_matches_differences() {
    let data = generate_data(4, 10, &v(&[0.4, -0.2, -1.6])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let t = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.0));
        let an = gp_nll_grad(&t, &data).unwrap();
        let fd = DVector::from_fn(3, |i, _| {
            let h = 1e-5;
            let (mut p, mut m) = (t.clone(), t.clone());
            p[i] += h;
            m[i] -= h;
            (gp_nll(&p, &data).unwrap() - gp_nll(&m, &data).unwrap()) / (2.0 * h)
        });
        assert!((&an - &fd).amax() < 1e-6 * an.amax().max(1.0), "{an} vs {fd}");
    }
}

#[test]
fn fisher_matches_kl_hessian() {
    let xs = natgrad::families::equispaced_inputs(6);
    let family = GpPriorEq::new(xs.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let t = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let h = gp_fisher_metric(&t, &xs).unwrap().matrix;
        let fd = fd_local_hessian(&Similarity::kl(), &family, &t, None).unwrap().matrix;
        assert!((&h - &fd).amax() / fd.amax().max(1.0) < 1e-4);
    }
}

#[test]
fn metrics_are_spd_and_labelled() {
    // On a grid much coarser than the length-scale K ≈ (a² + e^{2s})I and amplitude and
    // noise are not identifiable, so the Fisher metric is singular there. The benchmark
    // grid keeps neighbouring inputs correlated over the sampled range.
    let xs = natgrad::families::equispaced_inputs(30);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let t = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.0));
        let f = gp_fisher_metric(&t, &xs).unwrap();
        let w = gp_w2_metric(&t, &xs).unwrap();
        assert_eq!(f.provenance, Provenance::Analytic);
        assert_eq!(w.provenance, Provenance::FiniteDifference);
        assert!(SymmetricEigen::new(f.matrix).eigenvalues.min() > 0.0);
        // the finite-difference W2 metric is only guaranteed SPD once projected
        let floor = default_floor(&w.matrix);
        let w = project_local(w, None);
        assert!(SymmetricEigen::new(w.matrix.clone()).eigenvalues.min() >= 0.999 * floor);
        assert!(w.matrix.cholesky().is_some());
    }
}

#[test]
fn single_input_w2_metric_has_closed_form() {
    // m = 1: N(0, σ²) with σ² = a² + e^{2s}, and ½W₂² = ½(σ − σ′)²
    let family = GpPriorEq::new(vec![0.0]).unwrap();
    let sim = Similarity::from_id("w2_gaussian").unwrap();
    for t in [v(&[0.0, 0.0, 0.0]), v(&[0.5, -1.0, -1.2]), v(&[-0.3, 0.7, 0.4])] {
        let (a2, n2) = ((2.0 * t[0]).exp(), (2.0 * t[2]).exp());
        let s = (a2 + n2).sqrt();
        let ds = v(&[a2 / s, 0.0, n2 / s]);
        let oracle = &ds * ds.transpose();
        let h = fd_local_hessian(&sim, &family, &t, None).unwrap().matrix;
        assert!((h - &oracle).amax() < 1e-4, "{oracle}");
    }
}

#[test]
fn prior_samples_have_kernel_covariance() {
    let xs = vec![-1.0, 0.0, 1.5];
    let family = GpPriorEq::new(xs.clone()).unwrap();
    let t = v(&[0.2, 0.0, -1.0]);
    let k = kernel(&t, &xs);
    let n = 10_000;
    let draws = family.sample(&t, 77, n).unwrap();
    let mut cov = DMatrix::<f64>::zeros(3, 3);
    for d in &draws {
        let y = v(d);
        cov += &y * y.transpose();
    }
    cov /= n as f64;
    for i in 0..3 {
        for j in 0..3 {
            let se = ((k[(i, i)] * k[(j, j)] + k[(i, j)].powi(2)) / n as f64).sqrt();
            assert!((cov[(i, j)] - k[(i, j)]).abs() < 5.0 * se);
        }
    }
}

#[test]
fn fitted_hyperparameters_are_stationary() {
    let data = generate_data(42, 30, &v(&[0.4, -0.2, -1.6])).unwrap();
    let cost = GpNll { data: data.clone() };
    let metric = MetricEngine::new(MetricSpec::Fisher, Arc::new(GpPriorEq::new(data.inputs.clone()).unwrap()));
    let cfg = OptimizerConfig {
        grad_tol: 1e-7,
        max_iters: 200,
        record_wall_time: false,
        ..OptimizerConfig::default()
    };
    let t = optimize(&cost, &metric, &v(&[0.0, 0.0, 0.0]), &cfg);
    assert!(matches!(t.status, Status::ConvergedGrad | Status::ConvergedCost), "{:?}", t.status);
    assert!(gp_nll_grad(&v(&t.final_theta), &data).unwrap().norm() < 1e-6);
}

#[test]
fn two_point_benchmark_runs_end_to_end_and_is_deterministic() {
    let cfg = BenchmarkConfig {
        m: 2,
        seed: 5,
        ..BenchmarkConfig::default()
    };
    let a = run_benchmark(&cfg).unwrap();
    let b = run_benchmark(&cfg).unwrap();
    assert_eq!(a.summary.len(), 3);
    for (id, trace) in &a.traces {
        assert!(!trace.status.is_failure(), "{id}: {:?}", trace.message);
        let first = trace.records.first().unwrap().cost;
        assert!(trace.final_cost().unwrap() <= first);
        let mut x = Vec::new();
        let mut y = Vec::new();
        trace.write_csv(&mut x).unwrap();
        b.traces[id].write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }
    assert_eq!(a.dataset, b.dataset);
}

#[test]
fn data_generation_rejects_tiny_sets() {
    assert!(generate_data(0, 1, &v(&[0.0, 0.0, 0.0])).is_err());
    assert!(generate_data(0, 2, &v(&[0.0, 0.0])).is_err());
}
