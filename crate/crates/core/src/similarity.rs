//! Similarity measures c*(ρ, ρ′) between family members and the parameter-space
//! cost c(θ, θ′) = c*(ρ_θ, ρ_θ′) with its gradient.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::families::{Dataset, Family, ParamPoint};
use crate::linalg;
use crate::quadrature::{quantile_rule, QuadratureSettings, Rule};

/// An f-divergence D_f(ρ‖ρ′) = ∫ ρ f(ρ′/ρ) dx.
#[derive(Clone, Copy)]
pub struct FDivergenceSpec {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
    pub f_second_at_one: f64,
    /// ρ·f(ρ′/ρ) evaluated from (log ρ, log ρ′) without forming the ratio.
    pub integrand: fn(f64, f64) -> f64,
}

impl fmt::Debug for FDivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FDivergenceSpec")
            .field("name", &self.name)
            .field("f_second_at_one", &self.f_second_at_one)
            .finish()
    }
}

impl PartialEq for FDivergenceSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl FDivergenceSpec {
    /// f = −log.
    pub const KL: FDivergenceSpec = FDivergenceSpec {
        name: "kl",
        f: |t| -t.ln(),
        f_second_at_one: 1.0,
        integrand: |lp, lq| {
            if lp == f64::NEG_INFINITY {
                0.0
            } else {
                lp.exp() * (lp - lq)
            }
        },
    };

    /// f(t) = t log t.
    pub const REVERSE_KL: FDivergenceSpec = FDivergenceSpec {
        name: "reverse_kl",
        f: |t| if t == 0.0 { 0.0 } else { t * t.ln() },
        f_second_at_one: 1.0,
        integrand: |lp, lq| {
            if lq == f64::NEG_INFINITY {
                0.0
            } else {
                lq.exp() * (lq - lp)
            }
        },
    };

    /// f(t) = (t − 1)².
    pub const CHI2: FDivergenceSpec = FDivergenceSpec {
        name: "chi2",
        f: |t| (t - 1.0) * (t - 1.0),
        f_second_at_one: 2.0,
        integrand: |lp, lq| lp.exp() * (lq - lp).exp_m1().powi(2),
    };

    /// f(t) = (√t − 1)².
    pub const HELLINGER2: FDivergenceSpec = FDivergenceSpec {
        name: "hellinger2",
        f: |t| (t.sqrt() - 1.0).powi(2),
        f_second_at_one: 0.5,
        integrand: |lp, lq| lp.exp() * (0.5 * (lq - lp)).exp_m1().powi(2),
    };

    pub const ALL: [FDivergenceSpec; 4] = [Self::KL, Self::REVERSE_KL, Self::CHI2, Self::HELLINGER2];

    pub fn from_name(name: &str) -> Result<FDivergenceSpec> {
        Self::ALL
            .iter()
            .find(|s| s.name == name)
            .copied()
            .ok_or_else(|| Error::UnknownIdentifier {
                kind: "f-divergence",
                given: name.to_string(),
                valid: Self::ALL.iter().map(|s| s.name.to_string()).collect(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimilarityKind {
    FDivergence(FDivergenceSpec),
    /// ½d² for the Fisher–Rao distance of categorical distributions.
    SquaredFisherRao,
    /// W_p between 1-D members via quantile functions.
    WassersteinP(f64),
    /// W₂² between Gaussian members via the Bures formula.
    SquaredW2Gaussian,
    /// ½‖θ − θ′‖², a parameter-space debugging cost.
    HalfSquaredEuclidean,
}

/// What the cost is measured against.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Point(ParamPoint),
    Data(Dataset),
}

pub const SIMILARITY_IDS: [&str; 8] = [
    "kl",
    "reverse_kl",
    "chi2",
    "hellinger2",
    "fisher_rao2",
    "wasserstein:{p}",
    "w2_gaussian",
    "euclid2",
];

/// A similarity measure together with its quadrature settings.
///
/// [`Similarity::evaluate`] reports the measure under its own name (W_p for
/// `wasserstein:p`, W₂² for `w2_gaussian`). [`Similarity::cost`] is what the
/// optimizer minimizes and the metric engines differentiate; it is the half
/// square for the distance-type measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub kind: SimilarityKind,
    pub quadrature: QuadratureSettings,
}

impl Similarity {
    pub fn new(kind: SimilarityKind) -> Self {
        Similarity {
            kind,
            quadrature: QuadratureSettings::default(),
        }
    }

    pub fn kl() -> Self {
        Self::new(SimilarityKind::FDivergence(FDivergenceSpec::KL))
    }

    pub fn from_id(id: &str) -> Result<Self> {
        let unknown = || Error::UnknownIdentifier {
            kind: "similarity",
            given: id.to_string(),
            valid: SIMILARITY_IDS.iter().map(|s| s.to_string()).collect(),
        };
        let kind = match id {
            "fisher_rao2" => SimilarityKind::SquaredFisherRao,
            "w2_gaussian" => SimilarityKind::SquaredW2Gaussian,
            "euclid2" => SimilarityKind::HalfSquaredEuclidean,
            _ => {
                if let Some(p) = id.strip_prefix("wasserstein:") {
                    let p: f64 = p.parse().map_err(|_| unknown())?;
                    if !(p >= 1.0 && p.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "Wasserstein order must be ≥ 1, got {p}"
                        )));
                    }
                    SimilarityKind::WassersteinP(p)
                } else {
                    SimilarityKind::FDivergence(FDivergenceSpec::from_name(id).map_err(|_| unknown())?)
                }
            }
        };
        Ok(Self::new(kind))
    }

    pub fn id(&self) -> String {
        match self.kind {
            SimilarityKind::FDivergence(s) => s.name.to_string(),
            SimilarityKind::SquaredFisherRao => "fisher_rao2".into(),
            SimilarityKind::WassersteinP(p) => format!("wasserstein:{p}"),
            SimilarityKind::SquaredW2Gaussian => "w2_gaussian".into(),
            SimilarityKind::HalfSquaredEuclidean => "euclid2".into(),
        }
    }

    fn point<'a>(&self, target: &'a Target) -> Result<&'a ParamPoint> {
        match target {
            Target::Point(p) => Ok(p),
            Target::Data(_) => Err(Error::IncompatibleTarget(format!(
                "`{}` needs a same-manifold target; datasets only support the GP likelihood cost",
                self.id()
            ))),
        }
    }

    /// The similarity value c*(ρ_θ, ρ).
    pub fn evaluate(&self, family: &dyn Family, theta: &ParamPoint, target: &Target) -> Result<f64> {
        let other = self.point(target)?;
        family.validate(theta)?;
        family.validate(other)?;
        match self.kind {
            SimilarityKind::FDivergence(spec) => {
                f_divergence_with(&spec, family, theta, other, &self.quadrature)
            }
            SimilarityKind::SquaredFisherRao => squared_fisher_rao_categorical(family, theta, other),
            SimilarityKind::WassersteinP(p) => wasserstein_any(family, theta, other, p),
            SimilarityKind::SquaredW2Gaussian => w2_squared_members(family, theta, other),
            SimilarityKind::HalfSquaredEuclidean => Ok(0.5 * (theta - other).norm_squared()),
        }
    }

    /// The optimization cost c(θ, θ′).
    pub fn cost(&self, family: &dyn Family, theta: &ParamPoint, other: &ParamPoint) -> Result<f64> {
        let target = Target::Point(other.clone());
        let v = self.evaluate(family, theta, &target)?;
        Ok(match self.kind {
            SimilarityKind::WassersteinP(_) => 0.5 * v * v,
            SimilarityKind::SquaredW2Gaussian => 0.5 * v,
            _ => v,
        })
    }

    /// ∇_θ c(θ, θ′); analytic for Gaussian KL, categorical KL and Fisher–Rao,
    /// central differences otherwise.
    pub fn grad_theta(
        &self,
        family: &dyn Family,
        theta: &ParamPoint,
        target: &Target,
    ) -> Result<DVector<f64>> {
        let other = self.point(target)?;
        family.validate(theta)?;
        family.validate(other)?;
        match self.kind {
            SimilarityKind::FDivergence(spec) if spec.name == "kl" => {
                if let (Some(m0), Some(m1)) =
                    (family.gaussian_moments(theta)?, family.gaussian_moments(other)?)
                {
                    return m0.kl_grad_first(&m1);
                }
                if let (Some(c0), Some(c1)) =
                    (family.categorical_probs(theta)?, family.categorical_probs(other)?)
                {
                    let logs = c0
                        .probs
                        .zip_map(&c1.probs, |p, q| if p > 0.0 { (p / q).ln() } else { 0.0 });
                    return Ok(c0.jacobian.tr_mul(&logs));
                }
            }
            SimilarityKind::SquaredFisherRao => {
                return fisher_rao_grad(family, theta, other);
            }
            SimilarityKind::HalfSquaredEuclidean => return Ok(theta - other),
            _ => {}
        }
        linalg::fd_gradient(|t| self.cost(family, t, other), theta)
    }
}

/// D_f(ρ_θ ‖ ρ_θ′). Closed form for KL and reverse KL between Gaussians, exact
/// summation for categorical families, sample-space quadrature for 1-D families.
pub fn f_divergence(
    spec: &FDivergenceSpec,
    family: &dyn Family,
    theta: &ParamPoint,
    other: &ParamPoint,
) -> Result<f64> {
    f_divergence_with(spec, family, theta, other, &QuadratureSettings::default())
}

fn f_divergence_with(
    spec: &FDivergenceSpec,
    family: &dyn Family,
    theta: &ParamPoint,
    other: &ParamPoint,
    settings: &QuadratureSettings,
) -> Result<f64> {
    if spec.name == "kl" || spec.name == "reverse_kl" {
        if let (Some(m0), Some(m1)) = (family.gaussian_moments(theta)?, family.gaussian_moments(other)?) {
            let v = if spec.name == "kl" { m0.kl_to(&m1)? } else { m1.kl_to(&m0)? };
            return Ok(v.max(0.0));
        }
    }
    if let (Some(c0), Some(c1)) = (family.categorical_probs(theta)?, family.categorical_probs(other)?) {
        let v: f64 = c0
            .probs
            .iter()
            .zip(c1.probs.iter())
            .map(|(p, q)| (spec.integrand)(p.ln(), q.ln()))
            .sum();
        return Ok(v.max(0.0));
    }
    f_divergence_quadrature(spec, family, theta, other, settings)
}

/// D_f by composite Gauss–Legendre over the union of both integration windows.
pub fn f_divergence_quadrature(
    spec: &FDivergenceSpec,
    family: &dyn Family,
    theta: &ParamPoint,
    other: &ParamPoint,
    settings: &QuadratureSettings,
) -> Result<f64> {
    if family.sample_dim() != 1 || !family.capabilities().has_cdf {
        return Err(Error::capability(family.id(), "f-divergence quadrature"));
    }
    let (a0, b0) = family.support_window(theta, settings.tail)?;
    let (a1, b1) = family.support_window(other, settings.tail)?;
    let (a, b) = (a0.min(a1), b0.max(b1));
    let integrand = |x: f64| -> Result<f64> {
        let lp = family.log_density(theta, &[x])?;
        let lq = family.log_density(other, &[x])?;
        Ok((spec.integrand)(lp, lq))
    };
    // Heavy but integrable tails (e.g. χ² with a wider second member) get a wider window;
    // a non-decaying integrand keeps failing the edge test.
    let (centre, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut last = String::new();
    for widen in 0..4u32 {
        let scale = (1u32 << widen) as f64;
        let (a, b) = (centre - scale * half, centre + scale * half);
        let rule = Rule::composite(a, b, settings.panels * (1usize << widen), settings.per_panel);
        let mut total = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * integrand(x)?;
        }
        if !total.is_finite() {
            return Err(Error::DivergenceInfinite(format!(
                "{} quadrature produced {total}",
                spec.name
            )));
        }
        let edge = (integrand(a)?.abs() + integrand(b)?.abs()) * (b - a);
        if edge <= 1e-6 * total.abs() + 1e-13 {
            return Ok(total.max(0.0));
        }
        last = format!("window [{a:.3}, {b:.3}], edge mass {edge:.3e}, total {total:.3e}");
    }
    Err(Error::DivergenceInfinite(format!(
        "{} integrand does not decay at the window edges ({last})",
        spec.name
    )))
}

/// W_p between two 1-D members: (∫₀¹ |F⁻¹_θ(q) − F⁻¹_θ′(q)|^p dq)^(1/p).
pub fn wasserstein_p_1d(family: &dyn Family, theta: &ParamPoint, other: &ParamPoint, p: f64) -> Result<f64> {
    if family.sample_dim() != 1 || !family.capabilities().has_cdf {
        return Err(Error::capability(family.id(), "1-D Wasserstein distance"));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Wasserstein order must be ≥ 1, got {p}"
        )));
    }
    let rule = quantile_rule();
    let mut total = 0.0;
    for (&q, &w) in rule.nodes.iter().zip(&rule.weights) {
        let d = (family.quantile(theta, q)? - family.quantile(other, q)?).abs();
        total += w * d.powf(p);
    }
    Ok(total.powf(1.0 / p))
}

fn wasserstein_any(family: &dyn Family, theta: &ParamPoint, other: &ParamPoint, p: f64) -> Result<f64> {
    if family.sample_dim() == 1 && family.capabilities().has_cdf {
        return wasserstein_p_1d(family, theta, other, p);
    }
    if p == 2.0 && family.gaussian_moments(theta)?.is_some() {
        return Ok(w2_squared_members(family, theta, other)?.sqrt());
    }
    Err(Error::capability(family.id(), "Wasserstein distance"))
}

fn w2_squared_members(family: &dyn Family, theta: &ParamPoint, other: &ParamPoint) -> Result<f64> {
    match (family.gaussian_moments(theta)?, family.gaussian_moments(other)?) {
        (Some(a), Some(b)) => squared_w2_gaussian(&a.mean, &a.cov, &b.mean, &b.cov),
        _ => Err(Error::capability(family.id(), "Gaussian W2 (Bures) distance")),
    }
}

/// ‖μ₁−μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₂^½ Σ₁ Σ₂^½)^½).
pub fn squared_w2_gaussian(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    for c in [cov1, cov2] {
        if c.nrows() != mean1.len() || c.ncols() != mean1.len() {
            return Err(Error::DimensionMismatch {
                expected: mean1.len(),
                got: c.nrows(),
            });
        }
        if linalg::symmetrize(c).cholesky().is_none() {
            return Err(Error::InvalidParameter("covariance is not SPD".into()));
        }
    }
    let floor = 1e-14;
    let s2 = linalg::sqrtm_psd(cov2, floor);
    let cross = linalg::sqrtm_psd(&(&s2 * cov1 * &s2), floor);
    let bures = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    Ok(((mean1 - mean2).norm_squared() + bures).max(0.0))
}

/// ½d² with d = 2·arccos(Σᵢ √(pᵢqᵢ)), the Fisher–Rao distance between categoricals.
pub fn squared_fisher_rao_categorical(
    family: &dyn Family,
    theta: &ParamPoint,
    other: &ParamPoint,
) -> Result<f64> {
    let angle = sphere_angle(family, theta, other)?;
    Ok(2.0 * angle * angle)
}

// Angle between √p and √q on the unit sphere, from the chord length so that
// nearby points keep full precision.
fn sphere_angle(family: &dyn Family, theta: &ParamPoint, other: &ParamPoint) -> Result<f64> {
    let (p, q) = match (family.categorical_probs(theta)?, family.categorical_probs(other)?) {
        (Some(p), Some(q)) => (p.probs, q.probs),
        _ => return Err(Error::capability(family.id(), "Fisher-Rao distance")),
    };
    let chord = p.zip_map(&q, |a, b| a.sqrt() - b.sqrt()).norm();
    Ok(2.0 * (0.5 * chord).min(1.0).asin())
}

fn fisher_rao_grad(family: &dyn Family, theta: &ParamPoint, other: &ParamPoint) -> Result<DVector<f64>> {
    let (c0, c1) = match (family.categorical_probs(theta)?, family.categorical_probs(other)?) {
        (Some(p), Some(q)) => (p, q),
        _ => return Err(Error::capability(family.id(), "Fisher-Rao distance")),
    };
    let angle = sphere_angle(family, theta, other)?;
    // c = 2α², α = arccos(BC): ∇c = −4·(α / sin α)·∇BC
    let ratio = if angle < 1e-8 { 1.0 } else { angle / angle.sin() };
    let dbc = c0
        .probs
        .zip_map(&c1.probs, |p, q| if p > 0.0 { 0.5 * (q / p).sqrt() } else { 0.0 });
    Ok(c0.jacobian.tr_mul(&dbc) * (-4.0 * ratio))
}
