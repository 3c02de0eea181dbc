use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use natgrad::families::{CategoricalSoftmax, Family, Gaussian1d, MvnLCholesky, ParamPoint};
use natgrad::metric::{
    f_div_local_hessian, fd_local_hessian, fisher_information, fisher_information_mc, spd_project,
    wp_local_hessian_1d, Direction, MetricEngine, MetricSpec, Provenance,
};
use natgrad::similarity::{FDivergenceSpec, Similarity, Target};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(xs: &[f64]) -> ParamPoint {
    DVector::from_column_slice(xs)
}

/// Probabilists' Gauss–Hermite nodes and weights (summing to one) by Golub–Welsch.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |i, k| {
        if i + 1 == k || k + 1 == i {
            (i.max(k) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let w = (0..n).map(|i| eig.eigenvectors[(0, i)].powi(2)).collect();
    (eig.eigenvalues.iter().copied().collect(), w)
}

#[test]
fn gaussian_fisher_against_gauss_hermite() {
    let (z, w) = gauss_hermite(40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut points = vec![(0.0, 1.0)];
    points.extend((0..20).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(0.1..5.0))));
    for (m, s) in points {
        let mut oracle = DMatrix::<f64>::zeros(2, 2);
        for (zi, wi) in z.iter().zip(&w) {
            // scores written out by hand in (μ, σ)
            let sc = DVector::from_vec(vec![zi / s, (zi * zi - 1.0) / s]);
            oracle += &sc * sc.transpose() * *wi;
        }
        let h = fisher_information(&Gaussian1d, &v(&[m, s])).unwrap();
        assert_eq!(h.provenance, Provenance::Analytic);
        assert!((h.matrix - &oracle).amax() < 1e-10 * oracle.amax(), "σ = {s}");
        assert!((oracle[(0, 0)] - 1.0 / (s * s)).abs() < 1e-10 / (s * s));
        assert!((oracle[(1, 1)] - 2.0 / (s * s)).abs() < 1e-10 / (s * s));
    }
}

#[test]
fn mvn_fisher_against_tensor_gauss_hermite() {
    let (z, w) = gauss_hermite(12);
    let mvn = MvnLCholesky::new(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let t = DVector::from_fn(5, |_, _| rng.random_range(-0.8..0.8));
        let l = mvn.cholesky_factor(&t);
        let mean = v(&[t[0], t[1]]);
        let mut oracle = DMatrix::<f64>::zeros(5, 5);
        for (za, wa) in z.iter().zip(&w) {
            for (zb, wb) in z.iter().zip(&w) {
                let x = &mean + &l * v(&[*za, *zb]);
                let sc = mvn.score(&t, x.as_slice()).unwrap();
                oracle += &sc * sc.transpose() * (wa * wb);
            }
        }
        let h = fisher_information(&mvn, &t).unwrap();
        assert!((h.matrix - &oracle).amax() < 1e-9 * oracle.amax().max(1.0));
    }
}

#[test]
fn categorical_uniform_fisher() {
    for k in [2usize, 3, 5] {
        let h = fisher_information(&CategoricalSoftmax::new(k).unwrap(), &DVector::zeros(k)).unwrap();
        let kf = k as f64;
        for i in 0..k {
            for j in 0..k {
                let e = if i == j { 1.0 / kf - 1.0 / (kf * kf) } else { -1.0 / (kf * kf) };
                assert!((h.matrix[(i, j)] - e).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn monte_carlo_fisher_within_standard_error() {
    let t = v(&[0.7, 1.6]);
    let (mean, se) = fisher_information_mc(&Gaussian1d, &t, 17, 200_000).unwrap();
    let exact = fisher_information(&Gaussian1d, &t).unwrap().matrix;
    for i in 0..2 {
        for j in 0..2 {
            assert!((mean[(i, j)] - exact[(i, j)]).abs() < 5.0 * se[(i, j)] + 1e-12);
        }
    }
}

#[test]
fn f_divergence_scaling_is_exact() {
    let fams: Vec<(Arc<dyn Family>, ParamPoint)> = vec![
        (Arc::new(Gaussian1d), v(&[0.3, 1.7])),
        (Arc::new(CategoricalSoftmax::new(4).unwrap()), v(&[0.1, -0.4, 1.0, 0.0])),
        (Arc::new(MvnLCholesky::new(2).unwrap()), v(&[0.2, -0.1, 0.3, 0.5, -0.2])),
    ];
    for (f, t) in fams {
        let fisher = fisher_information(f.as_ref(), &t).unwrap().matrix;
        for spec in [FDivergenceSpec::KL, FDivergenceSpec::REVERSE_KL, FDivergenceSpec::CHI2, FDivergenceSpec::HELLINGER2] {
            let h = f_div_local_hessian(&spec, f.as_ref(), &t).unwrap().matrix;
            assert_eq!(h, &fisher * spec.f_second_at_one, "{}", spec.name);
        }
    }
    assert_eq!(FDivergenceSpec::CHI2.f_second_at_one, 2.0);
    assert_eq!(FDivergenceSpec::KL.f_second_at_one, 1.0);
}

#[test]
fn w2_metric_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g: Arc<dyn Family> = Arc::new(Gaussian1d);
    let m1: Arc<dyn Family> = Arc::new(MvnLCholesky::new(1).unwrap());
    for _ in 0..20 {
        let (m, s): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(0.2..4.0));
        let h = MetricEngine::new(MetricSpec::W2OneD, g.clone()).evaluate(&v(&[m, s]), None).unwrap();
        assert!((h.matrix - DMatrix::identity(2, 2)).amax() < 1e-8);
        // (μ, log σ) chart: diag(1, σ²)
        let h = MetricEngine::new(MetricSpec::W2OneD, m1.clone()).evaluate(&v(&[m, s.ln()]), None).unwrap();
        let e = DMatrix::from_diagonal(&v(&[1.0, s * s]));
        assert!((h.matrix - e).amax() < 1e-8 * s * s.max(1.0));
    }
}

fn random_point(f: &dyn Family, rng: &mut ChaCha8Rng) -> ParamPoint {
    match f.id().as_str() {
        "gaussian1d" => v(&[rng.random_range(-3.0..3.0), rng.random_range(0.3..3.0)]),
        _ => DVector::from_fn(f.param_dim(), |_, _| rng.random_range(-0.8..0.8)),
    }
}

#[test]
fn analytic_engines_match_finite_differences() {
    let g: Arc<dyn Family> = Arc::new(Gaussian1d);
    let cat: Arc<dyn Family> = Arc::new(CategoricalSoftmax::new(3).unwrap());
    let mvn: Arc<dyn Family> = Arc::new(MvnLCholesky::new(2).unwrap());
    let mvn1: Arc<dyn Family> = Arc::new(MvnLCholesky::new(1).unwrap());
    let pairs: Vec<(Arc<dyn Family>, &str, &str)> = vec![
        (g.clone(), "fisher", "kl"),
        (g.clone(), "fdiv:reverse_kl", "reverse_kl"),
        (g.clone(), "fdiv:chi2", "chi2"),
        (g.clone(), "fdiv:hellinger2", "hellinger2"),
        (g.clone(), "pullback", "kl"),
        (g.clone(), "w2_1d", "wasserstein:2"),
        (cat.clone(), "fisher", "kl"),
        (cat.clone(), "fdiv:chi2", "chi2"),
        (cat.clone(), "pullback", "fisher_rao2"),
        (mvn.clone(), "fisher", "kl"),
        (mvn.clone(), "pullback", "kl"),
        (mvn1, "w2_1d", "w2_gaussian"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for (f, metric, sim) in pairs {
        let engine = MetricEngine::new(MetricSpec::from_id(metric).unwrap(), f.clone());
        let sim = Similarity::from_id(sim).unwrap();
        for _ in 0..50 {
            let t = random_point(f.as_ref(), &mut rng);
            let h = engine.evaluate(&t, None).unwrap();
            let fd = fd_local_hessian(&sim, f.as_ref(), &t, None).unwrap();
            let tol = (1e-4f64).max(1e-3 * fd.matrix.norm()) + h.regularization_added;
            assert!(
                (&h.matrix - &fd.matrix).amax() < tol,
                "{metric} on {} at {t:?}:\n{}\nvs\n{}",
                f.id(),
                h.matrix,
                fd.matrix
            );
        }
    }
}

#[test]
fn finsler_p3_matches_directional_limit() {
    let g = Gaussian1d;
    let theta = v(&[0.0, 1.0]);
    let w3 = Similarity::from_id("wasserstein:3").unwrap();
    let grad = w3.grad_theta(&g, &theta, &Target::Point(v(&[1.0, 1.0]))).unwrap();
    let u = Direction::new(-grad).unwrap();
    let h = wp_local_hessian_1d(&g, &theta, 3.0, &u).unwrap();
    let fd = fd_local_hessian(&w3, &g, &theta, Some(&u)).unwrap();
    let dev = (&h.matrix - &fd.matrix).amax() / fd.matrix.amax().max(1.0);
    assert!(dev < 5e-3, "{dev}\n{}\n{}", h.matrix, fd.matrix);
}

#[test]
fn finsler_p2_reduces_to_w2() {
    let g = Gaussian1d;
    let t = v(&[0.4, 1.3]);
    let u = Direction::new(v(&[0.3, -1.0])).unwrap();
    let h = wp_local_hessian_1d(&g, &t, 2.0, &u).unwrap();
    let w2 = MetricEngine::new(MetricSpec::W2OneD, Arc::new(g)).evaluate(&t, None).unwrap();
    assert!((h.matrix - w2.matrix).amax() < 1e-12);
}

#[test]
fn finsler_without_direction_falls_back_to_w2() {
    let e = MetricEngine::new(MetricSpec::WpOneD(3.0), Arc::new(Gaussian1d));
    let h = e.evaluate(&v(&[0.0, 1.0]), None).unwrap();
    assert!((h.matrix - DMatrix::identity(2, 2)).amax() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn finsler_is_zero_homogeneous_in_direction(
        m in -2.0..2.0f64, s in 0.3..3.0f64,
        u in prop::collection::vec(-1.0..1.0f64, 2),
        p in prop::sample::select(vec![1.5, 3.0, 4.0]),
    ) {
        prop_assume!(u[0].abs() + u[1].abs() > 1e-3);
        let t = v(&[m, s]);
        let u1 = Direction::new(v(&u)).unwrap();
        let u2 = Direction::new(v(&u) * 2.0).unwrap();
        match (wp_local_hessian_1d(&Gaussian1d, &t, p, &u1), wp_local_hessian_1d(&Gaussian1d, &t, p, &u2)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.matrix, b.matrix),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "directions disagree on success"),
        }
    }

    #[test]
    fn projection_makes_factorization_succeed(entries in prop::collection::vec(-5.0..5.0f64, 16)) {
        let a = DMatrix::from_column_slice(4, 4, &entries);
        let h = (&a + a.transpose()) * 0.5;
        let tau = 1e-10 * (1.0 + h.trace().abs() / 4.0);
        let p = spd_project(&h, tau);
        prop_assert!(p.matrix.clone().cholesky().is_some());
        prop_assert!(p.regularization_added >= 0.0);
        let lmin = SymmetricEigen::new(p.matrix.clone()).eigenvalues.min();
        prop_assert!(lmin >= tau * (1.0 - 1e-6) - 1e-12);
    }

    #[test]
    fn metrics_are_symmetric_positive_semidefinite(m in -2.0..2.0f64, s in 0.3..3.0f64, logits in prop::collection::vec(-2.0..2.0f64, 3)) {
        let g: Arc<dyn Family> = Arc::new(Gaussian1d);
        let cat: Arc<dyn Family> = Arc::new(CategoricalSoftmax::new(3).unwrap());
        for (f, t, id) in [
            (g.clone(), v(&[m, s]), "fisher"),
            (g.clone(), v(&[m, s]), "w2_1d"),
            (cat.clone(), v(&logits), "fisher"),
            (cat.clone(), v(&logits), "pullback"),
        ] {
            let h = MetricEngine::new(MetricSpec::from_id(id).unwrap(), f).evaluate(&t, None).unwrap();
            prop_assert_eq!(h.matrix.clone(), h.matrix.transpose());
            prop_assert!(SymmetricEigen::new(h.matrix).eigenvalues.min() >= -1e-12);
        }
    }
}
