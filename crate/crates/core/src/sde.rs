//! Marginal-preserving SDE coefficients.
//!
//! Every member of the family here shares the time-marginals `p_t` of the base
//! flow. Only scalar, time-dependent diffusion coefficients are supported, so the
//! divergence terms of the general transform vanish and are not computed.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;

/// Start time used for families whose diffusion has a pole at `t = 1`.
pub const POLE_OFFSET_T_START: f64 = 1.0 - 1e-3;

/// Shape of the sampling-time diffusion coefficient
/// `g~(t) = alpha * t^(n/2) * (1 - t)^(m/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Deterministic,
    Constant,
    Singular,
    NonSingular,
    ZeroEnds,
    CustomPower { n: u32, m: i32 },
}

impl Family {
    /// The stochastic rows of the catalog.
    pub const STOCHASTIC: [Family; 4] = [
        Family::Constant,
        Family::Singular,
        Family::NonSingular,
        Family::ZeroEnds,
    ];

    /// All named rows, `Deterministic` first.
    pub const ALL: [Family; 5] = [
        Family::Deterministic,
        Family::Constant,
        Family::Singular,
        Family::NonSingular,
        Family::ZeroEnds,
    ];

    /// Exponents `(n, m)`; `None` for `Deterministic`.
    pub fn powers(self) -> Option<(u32, i32)> {
        match self {
            Family::Deterministic => None,
            Family::Constant => Some((0, 0)),
            Family::Singular => Some((1, -1)),
            Family::NonSingular => Some((1, 0)),
            Family::ZeroEnds => Some((1, 1)),
            Family::CustomPower { n, m } => Some((n, m)),
        }
    }

    pub fn has_pole_at_one(self) -> bool {
        matches!(self.powers(), Some((_, m)) if m < 0)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Deterministic => "deterministic",
            Family::Constant => "constant",
            Family::Singular => "singular",
            Family::NonSingular => "non-singular",
            Family::ZeroEnds => "zero-ends",
            Family::CustomPower { .. } => "custom-power",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::CustomPower { n, m } => write!(f, "custom-power(n={n},m={m})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// Parses a named row; `custom-power:N:M` selects arbitrary exponents.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('_', "-");
        if let Some(rest) = lower.strip_prefix("custom-power:") {
            let mut parts = rest.split(':');
            let n = parts.next().and_then(|p| p.parse().ok());
            let m = parts.next().and_then(|p| p.parse().ok());
            return match (n, m, parts.next()) {
                (Some(n), Some(m), None) => Ok(Family::CustomPower { n, m }),
                _ => Err(Error::invalid("family", format!("expected custom-power:N:M, got `{s}`"))),
            };
        }
        Family::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| Error::invalid("family", format!("unknown family `{s}`")))
    }
}

/// A diffusion family together with its scale `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSchedule {
    family: Family,
    alpha: f64,
}

impl DiffusionSchedule {
    /// `Deterministic` forces `alpha` to zero.
    pub fn new(family: Family, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
        }
        let alpha = if family == Family::Deterministic { 0.0 } else { alpha };
        Ok(Self { family, alpha })
    }

    pub fn deterministic() -> Self {
        Self {
            family: Family::Deterministic,
            alpha: 0.0,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// True when the diffusion is identically zero.
    pub fn is_deterministic(&self) -> bool {
        self.alpha == 0.0
    }

    /// Default integration start: just below 1 when the diffusion has a pole there.
    pub fn default_t_start(&self) -> f64 {
        if self.family.has_pole_at_one() && !self.is_deterministic() {
            POLE_OFFSET_T_START
        } else {
            1.0
        }
    }

    pub fn g_tilde(&self, t: f64) -> Result<f64> {
        g_tilde(self, t)
    }

    /// Verifies every coefficient this schedule needs is finite at `t`.
    pub fn check_time(&self, t: f64) -> Result<()> {
        check_unit_interval("diffusion schedule", t)?;
        if self.is_deterministic() {
            return Ok(());
        }
        let (n, m) = self.family.powers().unwrap_or((0, 0));
        if m < 0 && t == 1.0 {
            return Err(Error::Pole {
                what: family_pole_name(self.family),
                t,
            });
        }
        if n == 0 && t == 0.0 {
            return Err(Error::Pole {
                what: "drift of a family with n = 0 (score term 1/t)",
                t,
            });
        }
        Ok(())
    }
}

fn family_pole_name(family: Family) -> &'static str {
    match family {
        Family::Singular => "singular diffusion coefficient",
        _ => "diffusion coefficient with negative power of (1 - t)",
    }
}

fn check_unit_interval(what: &'static str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            t,
            reason: "t must lie in [0, 1]",
        })
    }
}

/// Sampling-time diffusion coefficient `g~(t) >= 0`.
pub fn g_tilde(schedule: &DiffusionSchedule, t: f64) -> Result<f64> {
    check_unit_interval("g_tilde", t)?;
    let Some((n, m)) = schedule.family.powers() else {
        return Ok(0.0);
    };
    if m < 0 && t == 1.0 {
        return Err(Error::Pole {
            what: family_pole_name(schedule.family),
            t,
        });
    }
    Ok(schedule.alpha * g_tilde_shape(n, m, t))
}

#[inline]
fn g_tilde_shape(n: u32, m: i32, t: f64) -> f64 {
    match (n, m) {
        (0, 0) => 1.0,
        (1, 0) => t.sqrt(),
        (1, 1) => (t * (1.0 - t)).sqrt(),
        (1, -1) => (t / (1.0 - t)).sqrt(),
        _ => t.powf(n as f64 / 2.0) * (1.0 - t).powf(m as f64 / 2.0),
    }
}

/// A nonnegative weight `gamma_t` blending the base SDE and its probability-flow ODE.
#[derive(Clone)]
pub struct GammaSchedule {
    gamma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl GammaSchedule {
    pub fn constant(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid("gamma", format!("must be finite and >= 0, got {gamma}")));
        }
        Ok(Self::from_fn(move |_| gamma))
    }

    pub fn from_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(gamma: F) -> Self {
        Self { gamma: Arc::new(gamma) }
    }

    /// Fails if the function is negative or non-finite at `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let g = (self.gamma)(t);
        if g >= 0.0 && g.is_finite() {
            Ok(g)
        } else {
            Err(Error::invalid("gamma", format!("gamma({t}) = {g}; must be finite and >= 0")))
        }
    }
}

impl fmt::Debug for GammaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GammaSchedule(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeDirection {
    Forward,
    Reverse,
}

/// Drift and scalar diffusion at one `(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeCoefficients {
    pub drift: Vec<f64>,
    pub diffusion: f64,
    pub direction: TimeDirection,
}

impl SdeCoefficients {
    fn forward(drift: Vec<f64>, diffusion: f64) -> Self {
        Self {
            drift,
            diffusion,
            direction: TimeDirection::Forward,
        }
    }
}

fn require_linear<F: FlowField + ?Sized>(field: &F) -> Result<()> {
    if field.schedule().is_linear() {
        Ok(())
    } else {
        Err(Error::invalid(
            "schedule",
            "score imputation from velocity requires the linear schedule",
        ))
    }
}

/// `scale2 * t^(n-1) * (1-t)^m * (-(1-t) v + mu1 - x) / sigma1^2`, given `v` already
/// evaluated at `(x, t)`. This is `scale2 * t^n (1-t)^m * score` with the `1/t` of the
/// imputed score cancelled analytically.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn fused_from_velocity(
    p1_mean: &[f64],
    p1_var: f64,
    n: u32,
    m: i32,
    scale2: f64,
    x: &[f64],
    v: &[f64],
    t: f64,
    out: &mut [f64],
) {
    let one_minus = 1.0 - t;
    let factor = scale2 * t.powi(n as i32 - 1) * one_minus.powi(m) / p1_var;
    for (((o, &xi), &vi), m1) in out.iter_mut().zip(x).zip(v).zip(p1_mean) {
        *o = factor * (-one_minus * vi + m1 - xi);
    }
}

fn check_fused_domain(n: u32, m: i32, t: f64) -> Result<()> {
    check_unit_interval("fused_score_product", t)?;
    if n == 0 && t == 0.0 {
        return Err(Error::Domain {
            what: "fused_score_product",
            t,
            reason: "n = 0 leaves the 1/t pole of the imputed score uncancelled",
        });
    }
    if m < 0 && t == 1.0 {
        return Err(Error::Pole {
            what: "fused_score_product with negative power of (1 - t)",
            t,
        });
    }
    Ok(())
}

/// `scale2 * t^n * (1-t)^m * grad log p_t(x)`, finite at `t = 0` whenever `n >= 1`.
pub fn fused_score_product<F: FlowField + ?Sized>(
    field: &F,
    n: u32,
    m: i32,
    scale2: f64,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    require_linear(field)?;
    check_fused_domain(n, m, t)?;
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    let v = field.velocity(x, t);
    let p1 = field.endpoint_p1();
    let mut out = vec![0.0; x.len()];
    fused_from_velocity(p1.mean(), p1.variance(), n, m, scale2, x, &v, t, &mut out);
    Ok(out)
}

/// Forward-time member of the family built on the flow ODE:
/// drift `v + (g~^2 / 2) score`, diffusion `g~`.
pub fn corollary2_coefficients<F: FlowField + ?Sized>(
    field: &F,
    schedule: &DiffusionSchedule,
    x: &[f64],
    t: f64,
) -> Result<SdeCoefficients> {
    family_coefficients(field, schedule, x, t, 0.5, TimeDirection::Forward)
}

/// Reverse-time counterpart of [`corollary2_coefficients`]: drift `v - (g~^2 / 2) score`.
///
/// Agrees with [`reverse_time_coefficients`] applied to the forward coefficients, but
/// stays finite at `t = 0` for families with `n >= 1`.
pub fn reverse_family_coefficients<F: FlowField + ?Sized>(
    field: &F,
    schedule: &DiffusionSchedule,
    x: &[f64],
    t: f64,
) -> Result<SdeCoefficients> {
    family_coefficients(field, schedule, x, t, -0.5, TimeDirection::Reverse)
}

fn family_coefficients<F: FlowField + ?Sized>(
    field: &F,
    schedule: &DiffusionSchedule,
    x: &[f64],
    t: f64,
    score_weight: f64,
    direction: TimeDirection,
) -> Result<SdeCoefficients> {
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    schedule.check_time(t)?;
    let mut drift = field.velocity(x, t);
    if schedule.is_deterministic() {
        return Ok(SdeCoefficients {
            drift,
            diffusion: 0.0,
            direction,
        });
    }
    require_linear(field)?;
    let (n, m) = schedule.family.powers().expect("stochastic family has powers");
    let p1 = field.endpoint_p1();
    let mut fused = vec![0.0; x.len()];
    let alpha2 = schedule.alpha * schedule.alpha;
    fused_from_velocity(p1.mean(), p1.variance(), n, m, alpha2, x, &drift, t, &mut fused);
    for (d, f) in drift.iter_mut().zip(&fused) {
        *d += score_weight * f;
    }
    Ok(SdeCoefficients {
        drift,
        diffusion: g_tilde(schedule, t)?,
        direction,
    })
}

/// Scalar-diffusion transform of an SDE `dx = f dt + g dW`:
/// drift `f - ((1 - gamma) g^2 - g~^2) score / 2`, diffusion `sqrt(gamma g^2 + g~^2)`.
pub fn theorem1_scalar_transform(
    f: &[f64],
    g: f64,
    g_tilde_val: f64,
    gamma: f64,
    score: &[f64],
) -> Result<SdeCoefficients> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma", format!("must be >= 0, got {gamma}")));
    }
    if f.len() != score.len() {
        return Err(Error::DimensionMismatch {
            expected: f.len(),
            got: score.len(),
        });
    }
    let blend = (1.0 - gamma) * g * g - g_tilde_val * g_tilde_val;
    let drift = f.iter().zip(score).map(|(fi, si)| fi - 0.5 * blend * si).collect();
    let diffusion = (gamma * g * g + g_tilde_val * g_tilde_val).sqrt();
    Ok(SdeCoefficients::forward(drift, diffusion))
}

/// The `g~ = 0` slice of [`theorem1_scalar_transform`]: drift
/// `f - (1 - gamma) g^2 score / 2`, diffusion `sqrt(gamma) g`.
pub fn corollary1_coefficients(f: &[f64], g: f64, gamma: f64, score: &[f64]) -> Result<SdeCoefficients> {
    theorem1_scalar_transform(f, g, 0.0, gamma, score)
}

/// [`corollary1_coefficients`] with a time-varying `gamma_t`.
pub fn corollary1_at(
    f: &[f64],
    g: f64,
    gamma: &GammaSchedule,
    t: f64,
    score: &[f64],
) -> Result<SdeCoefficients> {
    corollary1_coefficients(f, g, gamma.eval(t)?, score)
}

/// Affine-drift SDE for a zero-mean Gaussian `p1 = N(0, sigma1^2 I)`:
/// drift `-x / (1 - t)`, diffusion `sigma1 sqrt(2t / (1 - t))`.
pub fn singular_sde_coefficients(sigma1: f64, x: &[f64], t: f64) -> Result<SdeCoefficients> {
    if !(sigma1 > 0.0) {
        return Err(Error::invalid("sigma1", format!("must be > 0, got {sigma1}")));
    }
    check_unit_interval("singular_sde_coefficients", t)?;
    if t == 1.0 {
        return Err(Error::Pole {
            what: "singular SDE drift and diffusion",
            t,
        });
    }
    let one_minus = 1.0 - t;
    let drift = x.iter().map(|xi| -xi / one_minus).collect();
    Ok(SdeCoefficients::forward(drift, sigma1 * (2.0 * t / one_minus).sqrt()))
}

/// Time reversal of a forward SDE: drift `f - g^2 score`, same diffusion.
pub fn reverse_time_coefficients(fwd: &SdeCoefficients, score: &[f64]) -> Result<SdeCoefficients> {
    if fwd.direction != TimeDirection::Forward {
        return Err(Error::invalid("fwd", "expected forward-time coefficients"));
    }
    if fwd.drift.len() != score.len() {
        return Err(Error::DimensionMismatch {
            expected: fwd.drift.len(),
            got: score.len(),
        });
    }
    let g2 = fwd.diffusion * fwd.diffusion;
    let drift = fwd.drift.iter().zip(score).map(|(f, s)| f - g2 * s).collect();
    Ok(SdeCoefficients {
        drift,
        diffusion: fwd.diffusion,
        direction: TimeDirection::Reverse,
    })
}
