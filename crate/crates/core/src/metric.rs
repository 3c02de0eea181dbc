//! Local Hessians H^c_θ: the metric tensors that precondition the formal
//! natural gradient.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::families::{Family, ParamPoint};
use crate::linalg;
use crate::quadrature::{QuadratureSettings, Rule};
use crate::similarity::{FDivergenceSpec, Similarity, SimilarityKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    FiniteDifference,
    Pullback,
}

/// A symmetric n×n metric tensor at a parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalHessian {
    pub matrix: DMatrix<f64>,
    /// Diagonal shift added by [`spd_project`]; zero if none.
    pub regularization_added: f64,
    pub provenance: Provenance,
    /// Set when the metric came from a rank-deficient pullback.
    pub pseudo_metric: bool,
}

impl LocalHessian {
    pub fn new(matrix: DMatrix<f64>, provenance: Provenance) -> Self {
        LocalHessian {
            matrix: linalg::symmetrize(&matrix),
            regularization_added: 0.0,
            provenance,
            pseudo_metric: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn scaled(mut self, factor: f64) -> Self {
        self.matrix *= factor;
        self
    }
}

/// A nonzero tangent direction and its unit-norm copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    raw: DVector<f64>,
    unit: DVector<f64>,
}

impl Direction {
    pub fn new(u: DVector<f64>) -> Result<Self> {
        let n = u.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidArgument(
                "direction must be nonzero and finite".into(),
            ));
        }
        let unit = &u / n;
        Ok(Direction { raw: u, unit })
    }

    pub fn raw(&self) -> &DVector<f64> {
        &self.raw
    }

    pub fn unit(&self) -> &DVector<f64> {
        &self.unit
    }
}

/// Default eigenvalue floor 1e-10·(1 + tr(H)/n).
pub fn default_floor(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows().max(1) as f64;
    1e-10 * (1.0 + h.trace() / n)
}

/// Shifts `h` by (τ − λ_min)·I when its smallest eigenvalue is below τ.
pub fn spd_project(h: &DMatrix<f64>, tau_min: f64) -> LocalHessian {
    let sym = linalg::symmetrize(h);
    let lmin = linalg::min_eigenvalue(&sym);
    let mut out = LocalHessian::new(sym, Provenance::Analytic);
    if lmin < tau_min {
        let shift = tau_min - lmin;
        let n = out.dim();
        out.matrix += DMatrix::identity(n, n) * shift;
        out.regularization_added = shift;
    }
    out
}

/// Applies [`spd_project`] keeping the provenance and flags of `h`.
pub fn project_local(h: LocalHessian, tau_min: Option<f64>) -> LocalHessian {
    let tau = tau_min.unwrap_or_else(|| default_floor(&h.matrix));
    let p = spd_project(&h.matrix, tau);
    LocalHessian {
        matrix: p.matrix,
        regularization_added: h.regularization_added + p.regularization_added,
        provenance: h.provenance,
        pseudo_metric: h.pseudo_metric,
    }
}

/// Fisher information ∫ (∂ᵢ log ρ)(∂ⱼ log ρ) ρ dx.
///
/// Closed form for Gaussian families, exact summation for categorical
/// families, sample-space quadrature for other 1-D families.
pub fn fisher_information(family: &dyn Family, theta: &ParamPoint) -> Result<LocalHessian> {
    fisher_with(family, theta, &QuadratureSettings::default())
}

fn fisher_with(
    family: &dyn Family,
    theta: &ParamPoint,
    settings: &QuadratureSettings,
) -> Result<LocalHessian> {
    family.validate(theta)?;
    if let Some(m) = family.gaussian_moments(theta)? {
        return Ok(LocalHessian::new(m.fisher()?, Provenance::Analytic));
    }
    let n = family.param_dim();
    if let Some(c) = family.categorical_probs(theta)? {
        let mut out = DMatrix::zeros(n, n);
        for (x, p) in c.probs.iter().enumerate() {
            let s = family.score(theta, &[x as f64])?;
            out += &s * s.transpose() * *p;
        }
        return Ok(LocalHessian::new(out, Provenance::Analytic));
    }
    if family.sample_dim() == 1 && family.capabilities().has_cdf {
        let (a, b) = family.support_window(theta, settings.tail)?;
        let rule = Rule::composite(a, b, settings.panels, settings.per_panel);
        let mut out = DMatrix::zeros(n, n);
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let rho = family.log_density(theta, &[x])?.exp();
            if rho == 0.0 {
                continue;
            }
            let s = family.score(theta, &[x])?;
            out += &s * s.transpose() * (w * rho);
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("fisher quadrature", "non-finite entries"));
        }
        return Ok(LocalHessian::new(out, Provenance::Analytic));
    }
    Err(Error::capability(family.id(), "Fisher information"))
}

/// Monte Carlo Fisher estimate and the entrywise standard error.
pub fn fisher_information_mc(
    family: &dyn Family,
    theta: &ParamPoint,
    seed: u64,
    count: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = family.param_dim();
    let xs = family.sample(theta, seed, count)?;
    let mut mean = DMatrix::zeros(n, n);
    let mut sq = DMatrix::zeros(n, n);
    for x in &xs {
        let s = family.score(theta, x)?;
        let o = &s * s.transpose();
        sq += o.component_mul(&o);
        mean += o;
    }
    let c = count as f64;
    mean /= c;
    let var = sq / c - mean.component_mul(&mean);
    let se = var.map(|v| (v.max(0.0) / c).sqrt());
    Ok((mean, se))
}

/// f″(1) times the Fisher information.
pub fn f_div_local_hessian(
    spec: &FDivergenceSpec,
    family: &dyn Family,
    theta: &ParamPoint,
) -> Result<LocalHessian> {
    Ok(fisher_information(family, theta)?.scaled(spec.f_second_at_one))
}

/// JᵀGJ. A rank-deficient J marks the result as a pseudo-metric and lifts
/// its spectrum with [`spd_project`].
pub fn riemannian_pullback(j: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<LocalHessian> {
    if g.nrows() != j.nrows() || g.ncols() != j.nrows() {
        return Err(Error::DimensionMismatch {
            expected: j.nrows(),
            got: g.nrows(),
        });
    }
    let h = j.transpose() * g * j;
    let mut out = LocalHessian::new(h, Provenance::Pullback);
    let sv = j.clone().singular_values();
    let smax = sv.max();
    let rank_deficient = j.ncols() > j.nrows() || sv.min() <= 1e-10 * smax.max(f64::MIN_POSITIVE);
    if rank_deficient {
        out = project_local(out, None);
        out.pseudo_metric = true;
    }
    Ok(out)
}

/// Jacobian and density-space metric for the pullback route.
///
/// Categorical: probabilities with the metric diag(1/p). Gaussian: (μ, vec Σ)
/// with the metric blockdiag(Σ⁻¹, ½Σ⁻¹⊗Σ⁻¹).
pub fn pullback_factors(
    family: &dyn Family,
    theta: &ParamPoint,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    family.validate(theta)?;
    if let Some(c) = family.categorical_probs(theta)? {
        let g = DMatrix::from_diagonal(&c.probs.map(|p| 1.0 / p));
        return Ok((c.jacobian, g));
    }
    if let Some(m) = family.gaussian_moments(theta)? {
        let d = m.dim();
        let n = m.dmean.len();
        let inv = linalg::spd_inverse(&m.cov)?;
        let mut j = DMatrix::zeros(d + d * d, n);
        for k in 0..n {
            j.view_mut((0, k), (d, 1)).copy_from(&m.dmean[k]);
            let vec = DVector::from_column_slice(m.dcov[k].as_slice());
            j.view_mut((d, k), (d * d, 1)).copy_from(&vec);
        }
        let mut g = DMatrix::zeros(d + d * d, d + d * d);
        g.view_mut((0, 0), (d, d)).copy_from(&inv);
        g.view_mut((d, d), (d * d, d * d))
            .copy_from(&(inv.kronecker(&inv) * 0.5));
        return Ok((j, g));
    }
    Err(Error::capability(family.id(), "pullback metric"))
}

// Per-node quadrature weight·ρ and ∇Φ_{e_i} = −(∂F/∂θᵢ)/ρ on the shared rule.
fn transport_potentials(
    family: &dyn Family,
    theta: &ParamPoint,
    settings: &QuadratureSettings,
) -> Result<Vec<(f64, DVector<f64>)>> {
    if family.sample_dim() != 1 || !family.capabilities().has_cdf {
        return Err(Error::capability(family.id(), "1-D transport metric"));
    }
    family.validate(theta)?;
    let (a, b) = family.support_window(theta, settings.tail)?;
    let rule = Rule::composite(a, b, settings.panels, settings.per_panel);
    let mut out = Vec::with_capacity(rule.len());
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let rho = family.log_density(theta, &[x])?.exp();
        if rho <= 0.0 {
            return Err(Error::numeric(
                "transport metric",
                format!("density vanishes at x = {x} inside the integration window"),
            ));
        }
        let grad_phi = -family.dcdf_dtheta(theta, x)? / rho;
        out.push((w * rho, grad_phi));
    }
    Ok(out)
}

/// W₂ local Hessian in 1-D: ∫ ∇Φ_{dθᵢ}·∇Φ_{dθⱼ} dρ_θ.
pub fn w2_local_hessian_1d(family: &dyn Family, theta: &ParamPoint) -> Result<LocalHessian> {
    w2_with(family, theta, &QuadratureSettings::default())
}

fn w2_with(
    family: &dyn Family,
    theta: &ParamPoint,
    settings: &QuadratureSettings,
) -> Result<LocalHessian> {
    let nodes = transport_potentials(family, theta, settings)?;
    let n = family.param_dim();
    let mut h = DMatrix::zeros(n, n);
    for (wr, g) in &nodes {
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] += wr * g[i] * g[j];
            }
        }
    }
    Ok(LocalHessian::new(h, Provenance::Analytic))
}

/// Finsler local Hessian of ½W_p² in 1-D along direction `u`:
///
/// (2−p)F^{2(1−p)} AᵢAⱼ + F^{2−p} Bᵢⱼ + (p−2)F^{2−p} Cᵢⱼ with
/// Aᵢ = ∫|∇Φ_u|^{p−2}⟨∇Φᵢ,∇Φ_u⟩dρ, Bᵢⱼ = ∫|∇Φ_u|^{p−2}⟨∇Φᵢ,∇Φⱼ⟩dρ,
/// Cᵢⱼ = ∫|∇Φ_u|^{p−4}⟨∇Φᵢ,∇Φ_u⟩⟨∇Φⱼ,∇Φ_u⟩dρ and F = (∫|∇Φ_u|^p dρ)^{1/p}.
pub fn wp_local_hessian_1d(
    family: &dyn Family,
    theta: &ParamPoint,
    p: f64,
    u: &Direction,
) -> Result<LocalHessian> {
    wp_with(family, theta, p, u, &QuadratureSettings::default())
}

fn wp_with(
    family: &dyn Family,
    theta: &ParamPoint,
    p: f64,
    u: &Direction,
    settings: &QuadratureSettings,
) -> Result<LocalHessian> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Finsler local Hessian needs p > 1, got {p}"
        )));
    }
    let n = family.param_dim();
    if u.unit().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u.unit().len(),
        });
    }
    let nodes = transport_potentials(family, theta, settings)?;
    let mut f_p = 0.0;
    let mut a = DVector::<f64>::zeros(n);
    let mut b = DMatrix::<f64>::zeros(n, n);
    let mut c = DMatrix::<f64>::zeros(n, n);
    let mut zero_nodes = 0usize;
    let mut zero_mass = 0.0;
    for (wr, g) in &nodes {
        let gu = g.dot(u.unit());
        let mag = gu.abs();
        if mag == 0.0 {
            zero_nodes += 1;
            zero_mass += wr;
            if p < 2.0 {
                continue;
            }
        }
        f_p += wr * mag.powf(p);
        let w2 = wr * mag.powf(p - 2.0);
        // |g_u|^{p-4}·(g_i g_u)(g_j g_u) with the g_u² folded into the weight
        let w4 = if mag == 0.0 { 0.0 } else { wr * mag.powf(p - 4.0) };
        for i in 0..n {
            a[i] += w2 * g[i] * gu;
            for j in 0..n {
                b[(i, j)] += w2 * g[i] * g[j];
                c[(i, j)] += w4 * (g[i] * gu) * (g[j] * gu);
            }
        }
    }
    if zero_nodes > 0 && p < 2.0 {
        return Err(Error::numeric(
            "Finsler local Hessian",
            format!(
                "∇Φ_u vanishes at {zero_nodes} of {} nodes (mass {zero_mass:.3e}); |∇Φ_u|^(p-2) diverges for p = {p}",
                nodes.len()
            ),
        ));
    }
    if f_p <= 0.0 {
        return Err(Error::numeric(
            "Finsler local Hessian",
            "direction has zero Finsler norm",
        ));
    }
    let f = f_p.powf(1.0 / p);
    let first = &a * a.transpose() * ((2.0 - p) * f.powf(2.0 * (1.0 - p)));
    let second = &b * f.powf(2.0 - p);
    let third = &c * ((p - 2.0) * f.powf(2.0 - p));
    let h: DMatrix<f64> = first + second + third;
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric(
            "Finsler local Hessian",
            format!("non-finite result (F = {f:.3e})"),
        ));
    }
    Ok(LocalHessian::new(h, Provenance::Analytic))
}

/// Step schedule for the finite-difference engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    /// Largest rung of the directional ε-ladder; the next two are ε/2 and ε/4.
    pub epsilon: f64,
    /// Relative step of the undirected (smooth) central-difference Hessian.
    pub smooth_step: f64,
    /// Extrapolated estimates may differ by at most 10× this (relative) before
    /// the limit is declared non-convergent.
    pub tolerance: f64,
}

impl Default for FdSettings {
    fn default() -> Self {
        FdSettings {
            epsilon: 1e-2,
            smooth_step: 1e-3,
            tolerance: 1e-3,
        }
    }
}

/// Local Hessian of η ↦ c(η, θ) by finite differences.
///
/// Without a direction this is the central-difference Hessian at η = θ.
/// With a direction û the Hessian is taken at θ + εû for ε on a halving ladder
/// and extrapolated to ε → 0, which recovers the one-sided limit when the
/// cost is only 2-homogeneous at the diagonal.
pub fn fd_local_hessian(
    sim: &Similarity,
    family: &dyn Family,
    theta: &ParamPoint,
    u: Option<&Direction>,
) -> Result<LocalHessian> {
    fd_local_hessian_with(sim, family, theta, u, &FdSettings::default())
}

pub fn fd_local_hessian_with(
    sim: &Similarity,
    family: &dyn Family,
    theta: &ParamPoint,
    u: Option<&Direction>,
    settings: &FdSettings,
) -> Result<LocalHessian> {
    family.validate(theta)?;
    let cost = |eta: &DVector<f64>| sim.cost(family, eta, theta);
    let m = directional_limit_hessian(&cost, theta, u.map(|d| d.unit()), settings)?;
    Ok(LocalHessian::new(m, Provenance::FiniteDifference))
}

/// The finite-difference limit engine on a bare function f(η) with base point θ.
pub fn directional_limit_hessian<F>(
    f: &F,
    theta: &DVector<f64>,
    unit: Option<&DVector<f64>>,
    settings: &FdSettings,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let scale = theta.amax().max(1.0);
    let Some(unit) = unit else {
        let h: Vec<f64> = theta
            .iter()
            .map(|v| settings.smooth_step * v.abs().max(1.0))
            .collect();
        return linalg::richardson_hessian(f, theta, &h);
    };
    let n = theta.len();
    let at = |eps: f64| -> Result<DMatrix<f64>> {
        let base = theta + unit * (eps * scale);
        let h = vec![0.25 * eps * scale; n];
        linalg::richardson_hessian(f, &base, &h)
    };
    let e = settings.epsilon;
    let h1 = at(e)?;
    let h2 = at(0.5 * e)?;
    let h3 = at(0.25 * e)?;
    let r1 = &h2 * 2.0 - &h1;
    let r2 = &h3 * 2.0 - &h2;
    let gap = (&r2 - &r1).amax();
    let size = r2.amax().max(1.0);
    if gap > 10.0 * settings.tolerance * size {
        return Err(Error::numeric(
            "directional finite-difference limit",
            format!("extrapolated estimates differ by {gap:.3e} (scale {size:.3e})"),
        ));
    }
    Ok(linalg::symmetrize(&((&r2 * 4.0 - &r1) / 3.0)))
}

/// Metric engine identifiers.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    Fisher,
    FDiv(FDivergenceSpec),
    Pullback,
    W2OneD,
    WpOneD(f64),
    Fd(Similarity),
    Euclidean,
}

pub const METRIC_IDS: [&str; 7] = [
    "fisher",
    "fdiv:{name}",
    "pullback",
    "w2_1d",
    "wp_1d:{p}",
    "fd:{sim}",
    "euclidean",
];

impl MetricSpec {
    pub fn from_id(id: &str) -> Result<Self> {
        let unknown = || Error::UnknownIdentifier {
            kind: "metric",
            given: id.to_string(),
            valid: METRIC_IDS.iter().map(|s| s.to_string()).collect(),
        };
        Ok(match id {
            "fisher" => MetricSpec::Fisher,
            "pullback" => MetricSpec::Pullback,
            "w2_1d" => MetricSpec::W2OneD,
            "euclidean" => MetricSpec::Euclidean,
            _ => {
                if let Some(name) = id.strip_prefix("fdiv:") {
                    MetricSpec::FDiv(FDivergenceSpec::from_name(name)?)
                } else if let Some(p) = id.strip_prefix("wp_1d:") {
                    let p: f64 = p.parse().map_err(|_| unknown())?;
                    if !(p > 1.0 && p.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "wp_1d needs p > 1, got {p}"
                        )));
                    }
                    MetricSpec::WpOneD(p)
                } else if let Some(sim) = id.strip_prefix("fd:") {
                    MetricSpec::Fd(Similarity::from_id(sim)?)
                } else {
                    return Err(unknown());
                }
            }
        })
    }

    pub fn id(&self) -> String {
        match self {
            MetricSpec::Fisher => "fisher".into(),
            MetricSpec::FDiv(s) => format!("fdiv:{}", s.name),
            MetricSpec::Pullback => "pullback".into(),
            MetricSpec::W2OneD => "w2_1d".into(),
            MetricSpec::WpOneD(p) => format!("wp_1d:{p}"),
            MetricSpec::Fd(s) => format!("fd:{}", s.id()),
            MetricSpec::Euclidean => "euclidean".into(),
        }
    }

    /// The engine whose local Hessian belongs to a given similarity.
    pub fn natural_for(sim: &Similarity) -> MetricSpec {
        match sim.kind {
            SimilarityKind::FDivergence(s) if s.name == "kl" => MetricSpec::Fisher,
            SimilarityKind::FDivergence(s) => MetricSpec::FDiv(s),
            SimilarityKind::SquaredFisherRao => MetricSpec::Pullback,
            SimilarityKind::WassersteinP(2.0) => MetricSpec::W2OneD,
            SimilarityKind::WassersteinP(p) => MetricSpec::WpOneD(p),
            SimilarityKind::SquaredW2Gaussian => MetricSpec::Fd(sim.clone()),
            SimilarityKind::HalfSquaredEuclidean => MetricSpec::Euclidean,
        }
    }
}

/// Whether the finite-difference engine takes the directional limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LimitMode {
    /// Directional only for W_p with p ≠ 2, whose half square is not C² at the diagonal.
    #[default]
    Auto,
    Smooth,
    Directional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSettings {
    pub fd: FdSettings,
    pub quadrature: QuadratureSettings,
    pub limit: LimitMode,
    /// Multiplies every Fisher-based metric. Test hook for fault injection; keep at 1.
    pub fisher_scale: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            fd: FdSettings::default(),
            quadrature: QuadratureSettings::default(),
            limit: LimitMode::Auto,
            fisher_scale: 1.0,
        }
    }
}

/// Produces the preconditioner for one optimizer iteration.
pub trait Metric: Send + Sync {
    fn id(&self) -> String;

    /// Local Hessian at θ; `grad` is the current cost gradient, used by
    /// direction-dependent engines.
    fn local_hessian(&self, theta: &ParamPoint, grad: &DVector<f64>) -> Result<LocalHessian>;
}

/// A configured metric engine bound to a family.
#[derive(Debug, Clone)]
pub struct MetricEngine {
    pub spec: MetricSpec,
    pub family: Arc<dyn Family>,
    pub settings: MetricSettings,
}

impl MetricEngine {
    pub fn new(spec: MetricSpec, family: Arc<dyn Family>) -> Self {
        MetricEngine {
            spec,
            family,
            settings: MetricSettings::default(),
        }
    }

    pub fn with_settings(mut self, settings: MetricSettings) -> Self {
        self.settings = settings;
        self
    }

    fn descent_direction(grad: &DVector<f64>) -> Option<Direction> {
        if grad.norm() < 1e-12 {
            None
        } else {
            Direction::new(-grad).ok()
        }
    }

    /// Local Hessian with an explicit direction for the Finsler engines.
    pub fn evaluate(&self, theta: &ParamPoint, direction: Option<&Direction>) -> Result<LocalHessian> {
        let family = self.family.as_ref();
        let q = &self.settings.quadrature;
        let fisher_scale = self.settings.fisher_scale;
        match &self.spec {
            MetricSpec::Fisher => Ok(fisher_with(family, theta, q)?.scaled(fisher_scale)),
            MetricSpec::FDiv(s) => {
                Ok(fisher_with(family, theta, q)?.scaled(fisher_scale * s.f_second_at_one))
            }
            MetricSpec::Pullback => {
                let (j, g) = pullback_factors(family, theta)?;
                riemannian_pullback(&j, &g)
            }
            MetricSpec::W2OneD => w2_with(family, theta, q),
            MetricSpec::WpOneD(p) => match direction {
                Some(u) => wp_with(family, theta, *p, u, q),
                None => w2_with(family, theta, q),
            },
            MetricSpec::Fd(sim) => {
                let directional = match self.settings.limit {
                    LimitMode::Smooth => false,
                    LimitMode::Directional => true,
                    LimitMode::Auto => matches!(sim.kind, SimilarityKind::WassersteinP(p) if p != 2.0),
                };
                let u = if directional { direction } else { None };
                fd_local_hessian_with(sim, family, theta, u, &self.settings.fd)
            }
            MetricSpec::Euclidean => {
                family.validate(theta)?;
                let n = family.param_dim();
                Ok(LocalHessian::new(DMatrix::identity(n, n), Provenance::Analytic))
            }
        }
    }
}

impl Metric for MetricEngine {
    fn id(&self) -> String {
        self.spec.id()
    }

    fn local_hessian(&self, theta: &ParamPoint, grad: &DVector<f64>) -> Result<LocalHessian> {
        let dir = Self::descent_direction(grad);
        self.evaluate(theta, dir.as_ref())
    }
}
