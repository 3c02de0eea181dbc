//! Gauss–Legendre rules: a composite rule on a finite interval and a graded
//! rule on the open unit interval for quantile-space integrals.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
///
/// Roots are found by Newton iteration on the three-term Legendre recurrence,
/// seeded with the Chebyshev-like asymptotic guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A fixed set of nodes and weights approximating an integral over an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Composite Gauss–Legendre with `panels` equal panels of `per_panel` nodes on [a, b].
    pub fn composite(a: f64, b: f64, panels: usize, per_panel: usize) -> Rule {
        let (x, w) = gauss_legendre(per_panel);
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * per_panel);
        let mut weights = Vec::with_capacity(panels * per_panel);
        for p in 0..panels {
            let lo = a + width * p as f64;
            let half = 0.5 * width;
            let mid = lo + half;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + half * xi);
                weights.push(half * wi);
            }
        }
        Rule { nodes, weights }
    }

    /// Gauss–Legendre on (δ, 1−δ) with panels graded geometrically toward both
    /// endpoints, so the logarithmic growth of quantile functions near 0 and 1
    /// is resolved.
    pub fn unit_interval_graded(delta: f64, per_panel: usize) -> Rule {
        let mut breaks = vec![delta];
        let mut b = 1e-2_f64;
        let mut inner = Vec::new();
        while b > delta * 10.0 {
            inner.push(b);
            b /= 10.0;
        }
        inner.reverse();
        breaks.extend(inner);
        breaks.extend([0.1, 0.3]);
        let lower = breaks.clone();
        let mut all = lower.clone();
        all.push(0.5);
        all.extend(lower.iter().rev().map(|t| 1.0 - t));

        let (x, w) = gauss_legendre(per_panel);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for win in all.windows(2) {
            let (lo, hi) = (win[0], win[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + half * xi);
                weights.push(half * wi);
            }
        }
        Rule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Settings for 1-D sample-space integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    /// Tail probability cut from each side of the integration window.
    pub tail: f64,
    pub panels: usize,
    pub per_panel: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            tail: 1e-15,
            panels: 8,
            per_panel: 32,
        }
    }
}

/// Shared quantile-space rule: 20-node panels graded by decades down to 1e-14.
pub fn quantile_rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| Rule::unit_interval_graded(1e-14, 20))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_rules_match_tabulated_values() {
        let (x, w) = gauss_legendre(2);
        assert!((x[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let (x, w) = gauss_legendre(3);
        assert!((x[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((w[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        for n in [4, 16, 64, 256] {
            let (x, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} weight sum {s}");
            let deg = (2 * n - 1).min(30) as i32;
            let even = if deg % 2 == 0 { deg } else { deg - 1 };
            let val: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(even)).sum();
            assert!((val - 2.0 / (even as f64 + 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn composite_rule_integrates_gaussian_bump() {
        let r = Rule::composite(-10.0, 10.0, 8, 32);
        let v = r.integrate(|x| (-0.5 * x * x).exp());
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn graded_rule_covers_unit_interval() {
        let r = quantile_rule();
        let s: f64 = r.weights.iter().sum();
        assert!((s - (1.0 - 2e-14)).abs() < 1e-13);
        assert!(r.nodes.iter().all(|&q| q > 0.0 && q < 1.0));
        // ∫ log(q) dq over (0,1) = -1, endpoint singular
        let v = r.integrate(|q| q.ln());
        assert!((v + 1.0).abs() < 1e-11, "{v}");
    }
}
