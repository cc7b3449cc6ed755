//! Flow fields with closed-form velocities.
//!
//! A flow transports `p1` back to `p0` through the ODE `dx = v(x, t) dt`, where
//! `v(x, t) = E[x1 - x0 | x_t = x]` under the interpolation
//! `x_t = alpha_t x0 + beta_t x1`. When `p1` is an isotropic Gaussian the score of
//! every marginal can be recovered from the velocity alone, which is what the
//! stochastic samplers in [`crate::sde`] build on.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const SCHEDULE_TOL: f64 = 1e-12;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Interpolation coefficients `(alpha_t, beta_t)` with `x_t = alpha_t x0 + beta_t x1`.
#[derive(Clone, Default)]
pub enum Schedule {
    /// `alpha_t = 1 - t`, `beta_t = t`.
    #[default]
    Linear,
    Custom {
        name: String,
        alpha: ScalarFn,
        beta: ScalarFn,
    },
}

impl Schedule {
    /// Builds a schedule from arbitrary coefficient functions.
    ///
    /// The endpoint constraints `alpha_0 = 1, alpha_1 = 0, beta_0 = 0, beta_1 = 1` are
    /// checked to 1e-12, and positivity of `alpha` on `[0, 1)` and of `beta` on `(0, 1]`
    /// is checked on a uniform probe grid.
    pub fn custom<A, B>(name: impl Into<String>, alpha: A, beta: B) -> Result<Self>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let close = |a: f64, b: f64| (a - b).abs() <= SCHEDULE_TOL;
        if !close(alpha(0.0), 1.0) || !close(alpha(1.0), 0.0) {
            return Err(Error::invalid("schedule.alpha", "requires alpha(0) = 1 and alpha(1) = 0"));
        }
        if !close(beta(0.0), 0.0) || !close(beta(1.0), 1.0) {
            return Err(Error::invalid("schedule.beta", "requires beta(0) = 0 and beta(1) = 1"));
        }
        const PROBES: usize = 1024;
        for i in 1..PROBES {
            let t = i as f64 / PROBES as f64;
            if !(alpha(t) > 0.0) || !(beta(t) > 0.0) {
                return Err(Error::invalid(
                    "schedule",
                    format!("coefficients must be positive on (0, 1); failed at t = {t}"),
                ));
            }
        }
        Ok(Schedule::Custom {
            name: name.into(),
            alpha: Arc::new(alpha),
            beta: Arc::new(beta),
        })
    }

    /// Variance-preserving trigonometric interpolation, `alpha_t = cos(pi t / 2)`,
    /// `beta_t = sin(pi t / 2)`, with the endpoints pinned exactly.
    pub fn trigonometric() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let alpha = |t: f64| if t >= 1.0 { 0.0 } else { (FRAC_PI_2 * t).cos() };
        let beta = |t: f64| if t <= 0.0 { 0.0 } else { (FRAC_PI_2 * t).sin() };
        Schedule::custom("trigonometric", alpha, beta).expect("trigonometric schedule is valid")
    }

    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        match self {
            Schedule::Linear => 1.0 - t,
            Schedule::Custom { alpha, .. } => alpha(t),
        }
    }

    #[inline]
    pub fn beta(&self, t: f64) -> f64 {
        match self {
            Schedule::Linear => t,
            Schedule::Custom { beta, .. } => beta(t),
        }
    }

    /// `k_t = alpha_t + beta_t`.
    #[inline]
    pub fn k(&self, t: f64) -> f64 {
        self.alpha(t) + self.beta(t)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Schedule::Linear)
    }

    pub fn name(&self) -> &str {
        match self {
            Schedule::Linear => "linear",
            Schedule::Custom { name, .. } => name,
        }
    }
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Schedule({})", self.name())
    }
}

/// Isotropic Gaussian `N(mean, variance * I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEndpoint {
    mean: Vec<f64>,
    variance: f64,
}

impl GaussianEndpoint {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("mean", "must have at least one dimension"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mean", "entries must be finite"));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::invalid("variance", format!("must be finite and > 0, got {variance}")));
        }
        Ok(Self { mean, variance })
    }

    /// One-dimensional shorthand.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], variance)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Finite mixture of isotropic Gaussians sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureEndpoint {
    components: Vec<(f64, GaussianEndpoint)>,
}

impl GaussianMixtureEndpoint {
    pub fn new(components: Vec<(f64, GaussianEndpoint)>) -> Result<Self> {
        let Some((_, first)) = components.first() else {
            return Err(Error::invalid("components", "mixture needs at least one component"));
        };
        let dim = first.dim();
        let mut total = 0.0;
        for (w, c) in &components {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::invalid("weight", format!("must be finite and > 0, got {w}")));
            }
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid("weight", format!("weights must sum to 1, got {total}")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[(f64, GaussianEndpoint)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    /// `E[x0]`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, c) in &self.components {
            for (o, m) in out.iter_mut().zip(c.mean()) {
                *o += w * m;
            }
        }
        out
    }

    /// Per-dimension variance of the mixture.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![0.0; self.dim()];
        for (w, c) in &self.components {
            for ((o, m), mbar) in out.iter_mut().zip(c.mean()).zip(&mean) {
                *o += w * (c.variance() + (m - mbar) * (m - mbar));
            }
        }
        out
    }
}

impl From<GaussianEndpoint> for GaussianMixtureEndpoint {
    fn from(g: GaussianEndpoint) -> Self {
        Self {
            components: vec![(1.0, g)],
        }
    }
}

/// A velocity field `v(x, t)` whose `t = 1` endpoint is an isotropic Gaussian.
pub trait FlowField: Send + Sync {
    fn dim(&self) -> usize;

    fn endpoint_p1(&self) -> &GaussianEndpoint;

    fn schedule(&self) -> &Schedule;

    /// Writes `v(x, t)` into `out`. `x` and `out` both have length [`FlowField::dim`].
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.velocity_into(x, t, &mut out);
        out
    }
}

impl<F: FlowField + ?Sized> FlowField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn endpoint_p1(&self) -> &GaussianEndpoint {
        (**self).endpoint_p1()
    }
    fn schedule(&self) -> &Schedule {
        (**self).schedule()
    }
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).velocity_into(x, t, out)
    }
}

impl<F: FlowField + ?Sized> FlowField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn endpoint_p1(&self) -> &GaussianEndpoint {
        (**self).endpoint_p1()
    }
    fn schedule(&self) -> &Schedule {
        (**self).schedule()
    }
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).velocity_into(x, t, out)
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

#[inline]
fn gaussian_velocity_into(
    p0: &GaussianEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
    out: &mut [f64],
) {
    let (a, b) = (schedule.alpha(t), schedule.beta(t));
    let k = a + b;
    let (s0, s1) = (p0.variance, p1.variance);
    let denom = a * a * s0 + b * b * s1;
    for (((o, &xi), m0), m1) in out.iter_mut().zip(x).zip(&p0.mean).zip(&p1.mean) {
        *o = ((k * m1 - xi) * a * s0 + (xi - k * m0) * b * s1) / denom;
    }
}

/// Closed-form velocity between two isotropic Gaussians under an arbitrary schedule.
pub fn velocity_two_gaussian(
    p0: &GaussianEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_dims(p0.dim(), p1.dim())?;
    check_dims(p0.dim(), x.len())?;
    let mut out = vec![0.0; x.len()];
    gaussian_velocity_into(p0, p1, schedule, x, t, &mut out);
    Ok(out)
}

#[inline]
fn component_log_density(
    weight: f64,
    c: &GaussianEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> (f64, f64) {
    let (a, b) = (schedule.alpha(t), schedule.beta(t));
    let var = a * a * c.variance + b * b * p1.variance;
    let mut sq = 0.0;
    for ((xi, m0), m1) in x.iter().zip(&c.mean).zip(&p1.mean) {
        let d = xi - (a * m0 + b * m1);
        sq += d * d;
    }
    let logp = weight.ln() - 0.5 * x.len() as f64 * var.ln() - 0.5 * sq / var;
    (logp, var)
}

/// Posterior responsibilities `P(component i | x_t = x)` of each `p0` component.
pub fn mixture_posterior(
    p0: &GaussianMixtureEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_dims(p0.dim(), p1.dim())?;
    check_dims(p0.dim(), x.len())?;
    let logs: Vec<f64> = p0
        .components
        .iter()
        .map(|(w, c)| component_log_density(*w, c, p1, schedule, x, t).0)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = r.iter().sum();
    r.iter_mut().for_each(|v| *v /= total);
    Ok(r)
}

fn max_log_weight(
    p0: &GaussianMixtureEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> f64 {
    p0.components
        .iter()
        .map(|(w, c)| component_log_density(*w, c, p1, schedule, x, t).0)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn mixture_velocity_into(
    p0: &GaussianMixtureEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
    out: &mut [f64],
) {
    if let [(_, only)] = p0.components.as_slice() {
        gaussian_velocity_into(only, p1, schedule, x, t, out);
        return;
    }
    let max = max_log_weight(p0, p1, schedule, x, t);
    let (a, b) = (schedule.alpha(t), schedule.beta(t));
    let k = a + b;
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut total = 0.0;
    for (w, c) in &p0.components {
        let (logp, denom) = component_log_density(*w, c, p1, schedule, x, t);
        let r = (logp - max).exp();
        total += r;
        let (s0, s1) = (c.variance, p1.variance);
        for (((o, &xi), m0), m1) in out.iter_mut().zip(x).zip(&c.mean).zip(&p1.mean) {
            *o += r * ((k * m1 - xi) * a * s0 + (xi - k * m0) * b * s1) / denom;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Velocity for a Gaussian-mixture `p0` and Gaussian `p1` with independent coupling:
/// the posterior-weighted sum of per-component closed-form velocities.
pub fn velocity_mixture(
    p0: &GaussianMixtureEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_dims(p0.dim(), p1.dim())?;
    check_dims(p0.dim(), x.len())?;
    let mut out = vec![0.0; x.len()];
    mixture_velocity_into(p0, p1, schedule, x, t, &mut out);
    Ok(out)
}

/// Imputes `grad log p_t(x)` from the velocity of a flow with Gaussian `p1`:
/// `(-(1 - t) v + mu1 - x) / (t sigma1^2)`.
///
/// Only valid for the linear schedule. Rejects `t = 0`, where the expression is 0/0;
/// use [`crate::sde::fused_score_product`] for quantities that stay finite there.
pub fn score_from_velocity<F: FlowField + ?Sized>(field: &F, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if !field.schedule().is_linear() {
        return Err(Error::invalid(
            "schedule",
            "score imputation from velocity requires the linear schedule",
        ));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain {
            what: "score_from_velocity",
            t,
            reason: "requires 0 < t <= 1",
        });
    }
    check_dims(field.dim(), x.len())?;
    let p1 = field.endpoint_p1();
    let mut out = field.velocity(x, t);
    let scale = t * p1.variance();
    for ((o, &xi), m1) in out.iter_mut().zip(x).zip(p1.mean()) {
        *o = (-(1.0 - t) * *o + m1 - xi) / scale;
    }
    Ok(out)
}

/// Score of the Gaussian marginal `N(alpha_t mu0 + beta_t mu1, alpha_t^2 s0 + beta_t^2 s1)`.
pub fn analytic_score_gaussian(
    p0: &GaussianEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_dims(p0.dim(), p1.dim())?;
    check_dims(p0.dim(), x.len())?;
    let (a, b) = (schedule.alpha(t), schedule.beta(t));
    let var = a * a * p0.variance + b * b * p1.variance;
    Ok(x.iter()
        .zip(&p0.mean)
        .zip(&p1.mean)
        .map(|((xi, m0), m1)| -(xi - (a * m0 + b * m1)) / var)
        .collect())
}

/// Score of the mixture marginal: responsibility-weighted component scores.
pub fn analytic_score_mixture(
    p0: &GaussianMixtureEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let r = mixture_posterior(p0, p1, schedule, x, t)?;
    let (a, b) = (schedule.alpha(t), schedule.beta(t));
    let mut out = vec![0.0; x.len()];
    for (ri, (_, c)) in r.iter().zip(&p0.components) {
        let var = a * a * c.variance + b * b * p1.variance;
        for (((o, xi), m0), m1) in out.iter_mut().zip(x).zip(&c.mean).zip(&p1.mean) {
            *o -= ri * (xi - (a * m0 + b * m1)) / var;
        }
    }
    Ok(out)
}

/// Log-density of the mixture marginal at time `t`.
pub fn mixture_log_density(
    p0: &GaussianMixtureEndpoint,
    p1: &GaussianEndpoint,
    schedule: &Schedule,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    check_dims(p0.dim(), p1.dim())?;
    check_dims(p0.dim(), x.len())?;
    let max = max_log_weight(p0, p1, schedule, x, t);
    let sum: f64 = p0
        .components
        .iter()
        .map(|(w, c)| (component_log_density(*w, c, p1, schedule, x, t).0 - max).exp())
        .sum();
    let norm = -0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(max + sum.ln() + norm)
}

/// Classifier-free guided velocity `(1 + lambda) v_cond - lambda v_uncond`.
pub fn cfg_velocity(v_cond: &[f64], v_uncond: &[f64], lambda: f64) -> Vec<f64> {
    v_cond
        .iter()
        .zip(v_uncond)
        .map(|(c, u)| (1.0 + lambda) * c - lambda * u)
        .collect()
}

/// Flow between two isotropic Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianFlow {
    p0: GaussianEndpoint,
    p1: GaussianEndpoint,
    schedule: Schedule,
}

impl GaussianFlow {
    pub fn new(p0: GaussianEndpoint, p1: GaussianEndpoint) -> Result<Self> {
        Self::with_schedule(p0, p1, Schedule::Linear)
    }

    pub fn with_schedule(p0: GaussianEndpoint, p1: GaussianEndpoint, schedule: Schedule) -> Result<Self> {
        check_dims(p0.dim(), p1.dim())?;
        Ok(Self { p0, p1, schedule })
    }

    pub fn p0(&self) -> &GaussianEndpoint {
        &self.p0
    }
}

impl FlowField for GaussianFlow {
    fn dim(&self) -> usize {
        self.p0.dim()
    }
    fn endpoint_p1(&self) -> &GaussianEndpoint {
        &self.p1
    }
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        gaussian_velocity_into(&self.p0, &self.p1, &self.schedule, x, t, out);
    }
}

/// Flow from a Gaussian mixture to an isotropic Gaussian.
#[derive(Debug, Clone)]
pub struct MixtureFlow {
    p0: GaussianMixtureEndpoint,
    p1: GaussianEndpoint,
    schedule: Schedule,
}

impl MixtureFlow {
    pub fn new(p0: GaussianMixtureEndpoint, p1: GaussianEndpoint) -> Result<Self> {
        Self::with_schedule(p0, p1, Schedule::Linear)
    }

    pub fn with_schedule(
        p0: GaussianMixtureEndpoint,
        p1: GaussianEndpoint,
        schedule: Schedule,
    ) -> Result<Self> {
        check_dims(p0.dim(), p1.dim())?;
        Ok(Self { p0, p1, schedule })
    }

    pub fn p0(&self) -> &GaussianMixtureEndpoint {
        &self.p0
    }
}

impl FlowField for MixtureFlow {
    fn dim(&self) -> usize {
        self.p0.dim()
    }
    fn endpoint_p1(&self) -> &GaussianEndpoint {
        &self.p1
    }
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        mixture_velocity_into(&self.p0, &self.p1, &self.schedule, x, t, out);
    }
}

/// A flow whose velocity is an arbitrary closure.
pub struct FnFlow<V> {
    dim: usize,
    p1: GaussianEndpoint,
    schedule: Schedule,
    velocity: V,
}

impl<V> FnFlow<V>
where
    V: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(p1: GaussianEndpoint, velocity: V) -> Self {
        Self {
            dim: p1.dim(),
            p1,
            schedule: Schedule::Linear,
            velocity,
        }
    }
}

impl<V> FlowField for FnFlow<V>
where
    V: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn endpoint_p1(&self) -> &GaussianEndpoint {
        &self.p1
    }
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.velocity)(x, t, out)
    }
}

/// Classifier-free guidance applied to a pair of fields sharing `p1`.
pub struct GuidedFlow<C, U> {
    cond: C,
    uncond: U,
    lambda: f64,
}

impl<C: FlowField, U: FlowField> GuidedFlow<C, U> {
    pub fn new(cond: C, uncond: U, lambda: f64) -> Result<Self> {
        check_dims(cond.dim(), uncond.dim())?;
        if cond.endpoint_p1() != uncond.endpoint_p1() {
            return Err(Error::invalid("uncond", "guided fields must share the same p1"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { cond, uncond, lambda })
    }
}

impl<C: FlowField, U: FlowField> FlowField for GuidedFlow<C, U> {
    fn dim(&self) -> usize {
        self.cond.dim()
    }
    fn endpoint_p1(&self) -> &GaussianEndpoint {
        self.cond.endpoint_p1()
    }
    fn schedule(&self) -> &Schedule {
        self.cond.schedule()
    }
    fn velocity_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.cond.velocity_into(x, t, out);
        let vu = self.uncond.velocity(x, t);
        for (o, u) in out.iter_mut().zip(vu) {
            *o = (1.0 + self.lambda) * *o - self.lambda * u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy() -> (GaussianEndpoint, GaussianEndpoint) {
        (
            GaussianEndpoint::scalar(-1.0, 0.3).unwrap(),
            GaussianEndpoint::scalar(0.0, 1.0).unwrap(),
        )
    }

    fn toy_mixture() -> GaussianMixtureEndpoint {
        GaussianMixtureEndpoint::new(vec![
            (0.3, GaussianEndpoint::scalar(-1.0, 0.3).unwrap()),
            (0.7, GaussianEndpoint::scalar(2.0, 0.5).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn gaussian_velocity_endpoints_and_midpoint() {
        let (p0, p1) = toy();
        let s = Schedule::Linear;
        assert_abs_diff_eq!(velocity_two_gaussian(&p0, &p1, &s, &[0.7], 0.0).unwrap()[0], -0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(velocity_two_gaussian(&p0, &p1, &s, &[0.7], 1.0).unwrap()[0], 1.7, epsilon = 1e-15);
        assert_abs_diff_eq!(
            velocity_two_gaussian(&p0, &p1, &s, &[0.0], 0.5).unwrap()[0],
            0.5 / 0.325,
            epsilon = 1e-14
        );
    }

    #[test]
    fn endpoint_validation() {
        assert!(GaussianEndpoint::scalar(0.0, 0.0).is_err());
        assert!(GaussianEndpoint::scalar(f64::NAN, 1.0).is_err());
        assert!(GaussianEndpoint::new(vec![], 1.0).is_err());
        let g = GaussianEndpoint::scalar(0.0, 1.0).unwrap();
        assert!(GaussianMixtureEndpoint::new(vec![]).is_err());
        assert!(GaussianMixtureEndpoint::new(vec![(0.5, g.clone())]).is_err());
        assert!(GaussianMixtureEndpoint::new(vec![(1.0, g.clone()), (0.0, g.clone())]).is_err());
        let g2 = GaussianEndpoint::new(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            GaussianMixtureEndpoint::new(vec![(0.5, g), (0.5, g2)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn custom_schedule_rejects_bad_endpoints() {
        assert!(Schedule::custom("bad", |t| 1.0 - t * t, |t| t * 0.5).is_err());
        assert!(Schedule::custom("bad", |t| 0.5 * (1.0 - t), |t| t).is_err());
        let s = Schedule::trigonometric();
        assert_eq!(s.alpha(1.0), 0.0);
        assert_eq!(s.beta(0.0), 0.0);
    }

    #[test]
    fn mixture_single_component_matches_gaussian() {
        let (p0, p1) = toy();
        let mix = GaussianMixtureEndpoint::from(p0.clone());
        for &t in &[0.0, 0.1, 0.5, 0.9, 1.0] {
            for &x in &[-2.0, 0.0, 0.4, 3.0] {
                let a = velocity_mixture(&mix, &p1, &Schedule::Linear, &[x], t).unwrap()[0];
                let b = velocity_two_gaussian(&p0, &p1, &Schedule::Linear, &[x], t).unwrap()[0];
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
                let a = analytic_score_mixture(&mix, &p1, &Schedule::Linear, &[x], t).unwrap()[0];
                let b = analytic_score_gaussian(&p0, &p1, &Schedule::Linear, &[x], t).unwrap()[0];
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_mixture_is_zero_at_symmetry_point() {
        let m = 1.5;
        let mix = GaussianMixtureEndpoint::new(vec![
            (0.5, GaussianEndpoint::scalar(-m, 0.4).unwrap()),
            (0.5, GaussianEndpoint::scalar(m, 0.4).unwrap()),
        ])
        .unwrap();
        let p1 = GaussianEndpoint::scalar(0.0, 1.0).unwrap();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let v = velocity_mixture(&mix, &p1, &Schedule::Linear, &[0.0], t).unwrap()[0];
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
            let s = analytic_score_mixture(&mix, &p1, &Schedule::Linear, &[0.0], t).unwrap()[0];
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn score_from_velocity_examples() {
        let (p0, p1) = toy();
        let field = GaussianFlow::new(p0, p1).unwrap();
        let s = score_from_velocity(&field, &[0.0], 0.5).unwrap()[0];
        assert_abs_diff_eq!(s, -0.5 / 0.325, epsilon = 1e-12);
        assert!(matches!(
            score_from_velocity(&field, &[0.0], 0.0),
            Err(Error::Domain { .. })
        ));

        // numerator vanishes when x = mu1 and (1 - t) v = 0
        let zero = FnFlow::new(GaussianEndpoint::scalar(0.25, 2.0).unwrap(), |_x: &[f64], _t, out: &mut [f64]| {
            out[0] = 0.0
        });
        assert_eq!(score_from_velocity(&zero, &[0.25], 0.3).unwrap()[0], 0.0);
    }

    #[test]
    fn score_from_velocity_requires_linear_schedule() {
        let (p0, p1) = toy();
        let field = GaussianFlow::with_schedule(p0, p1, Schedule::trigonometric()).unwrap();
        assert!(matches!(
            score_from_velocity(&field, &[0.0], 0.5),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn analytic_gaussian_score_examples() {
        let (p0, p1) = toy();
        let s = Schedule::Linear;
        for &t in &[0.0, 0.3, 1.0] {
            let mu = (1.0 - t) * -1.0;
            assert_eq!(analytic_score_gaussian(&p0, &p1, &s, &[mu], t).unwrap()[0], 0.0);
        }
        assert_abs_diff_eq!(
            analytic_score_gaussian(&p0, &p1, &s, &[0.0], 0.5).unwrap()[0],
            -1.538_461_538_461_538_5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            analytic_score_gaussian(&p0, &p1, &s, &[-1.0 + 0.3], 0.0).unwrap()[0],
            -1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mixture_score_matches_finite_difference() {
        let mix = toy_mixture();
        let p1 = GaussianEndpoint::scalar(0.0, 1.0).unwrap();
        let s = Schedule::Linear;
        let h = 1e-6;
        let lp = |x: f64| mixture_log_density(&mix, &p1, &s, &[x], 0.6).unwrap();
        let fd = (lp(0.4 + h) - lp(0.4 - h)) / (2.0 * h);
        let score = analytic_score_mixture(&mix, &p1, &s, &[0.4], 0.6).unwrap()[0];
        assert_abs_diff_eq!(score, fd, epsilon = 1e-6);
    }

    #[test]
    fn cfg_examples() {
        assert_eq!(cfg_velocity(&[2.0], &[1.0], 0.0), vec![2.0]);
        assert_eq!(cfg_velocity(&[3.0], &[3.0], 7.25), vec![3.0]);
        assert_abs_diff_eq!(cfg_velocity(&[2.0], &[1.0], 1.5)[0], 3.5, epsilon = 1e-15);
    }

    #[test]
    fn guided_flow_combines_fields() {
        let p1 = GaussianEndpoint::scalar(0.0, 1.0).unwrap();
        let cond = GaussianFlow::new(GaussianEndpoint::scalar(2.0, 0.2).unwrap(), p1.clone()).unwrap();
        let uncond = GaussianFlow::new(GaussianEndpoint::scalar(0.0, 1.0).unwrap(), p1).unwrap();
        let vc = cond.velocity(&[0.3], 0.4);
        let vu = uncond.velocity(&[0.3], 0.4);
        let guided = GuidedFlow::new(&cond, &uncond, 2.0).unwrap();
        assert_eq!(guided.velocity(&[0.3], 0.4), cfg_velocity(&vc, &vu, 2.0));
        assert!(GuidedFlow::new(&cond, &uncond, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn cfg_is_linear_in_lambda(vc in -1e3..1e3f64, vu in -1e3..1e3f64, lambda in 0.0..10.0f64) {
            let got = cfg_velocity(&[vc], &[vu], lambda)[0];
            let expected = vc + lambda * (vc - vu);
            prop_assert!((got - expected).abs() <= 1e-14 * (1.0 + vc.abs().max(vu.abs()) * (1.0 + lambda)));
        }

        #[test]
        fn posterior_weights_are_a_distribution(x in -6.0..6.0f64, t in 0.0..=1.0f64) {
            let p1 = GaussianEndpoint::scalar(0.0, 1.0).unwrap();
            let r = mixture_posterior(&toy_mixture(), &p1, &Schedule::Linear, &[x], t).unwrap();
            prop_assert!(r.iter().all(|&w| w >= 0.0));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn velocity_endpoint_limits(x in -5.0..5.0f64) {
            let (p0, p1) = toy();
            let s = Schedule::Linear;
            let v0 = velocity_two_gaussian(&p0, &p1, &s, &[x], 0.0).unwrap()[0];
            let v1 = velocity_two_gaussian(&p0, &p1, &s, &[x], 1.0).unwrap()[0];
            prop_assert!((v0 - (0.0 - x)).abs() <= 1e-12);
            prop_assert!((v1 - (x + 1.0)).abs() <= 1e-12);

            let mix = toy_mixture();
            let mean0 = mix.mean()[0];
            let v0 = velocity_mixture(&mix, &p1, &s, &[x], 0.0).unwrap()[0];
            let v1 = velocity_mixture(&mix, &p1, &s, &[x], 1.0).unwrap()[0];
            prop_assert!((v0 - (0.0 - x)).abs() <= 1e-12);
            prop_assert!((v1 - (x - mean0)).abs() <= 1e-12);
        }
    }
}
