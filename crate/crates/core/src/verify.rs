//! Exact-identity and consistency checks between the closed-form coefficient routes.
//!
//! Each check samples points from a fixed-seed stream and reports the largest
//! deviation `|a - b| / max(1, |b|)` between two independent routes to the same
//! quantity. Magnitudes below one are compared absolutely; larger ones relatively,
//! since drifts near poles grow like `1 / (1 - t)`.

use std::f64::consts::SQRT_2;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::flow::{
    analytic_score_gaussian, analytic_score_mixture, cfg_velocity, score_from_velocity, FlowField,
    GaussianEndpoint, GaussianFlow, GaussianMixtureEndpoint, MixtureFlow, Schedule,
};
use crate::sde::{
    corollary1_coefficients, corollary2_coefficients, fused_score_product, reverse_family_coefficients,
    reverse_time_coefficients, singular_sde_coefficients, theorem1_scalar_transform, DiffusionSchedule, Family,
};

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    /// Mismatch the singular-SDE check's `alpha` by 1e-3; that check must then fail.
    pub perturb: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 20_240_101,
            perturb: false,
        }
    }
}

pub struct Check {
    pub name: &'static str,
    pub description: &'static str,
    pub tolerance: f64,
    run: fn(&VerifyOptions, &mut ChaCha8Rng) -> Result<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub outcomes: Vec<CheckOutcome>,
    pub elapsed_seconds: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn max_deviation(&self) -> f64 {
        self.outcomes.iter().map(|o| o.max_deviation).fold(0.0, f64::max)
    }
}

fn dev(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() / b.abs().max(1.0);
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}

fn dev_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dev(*x, *y)).fold(0.0, f64::max)
}

fn toy_field() -> GaussianFlow {
    GaussianFlow::new(
        GaussianEndpoint::scalar(-1.0, 0.3).unwrap(),
        GaussianEndpoint::scalar(0.0, 1.0).unwrap(),
    )
    .unwrap()
}

fn toy_mixture_field() -> MixtureFlow {
    let p0 = GaussianMixtureEndpoint::new(vec![
        (0.3, GaussianEndpoint::scalar(-1.0, 0.3).unwrap()),
        (0.7, GaussianEndpoint::scalar(2.0, 0.5).unwrap()),
    ])
    .unwrap();
    MixtureFlow::new(p0, GaussianEndpoint::scalar(0.0, 1.0).unwrap()).unwrap()
}

/// A point drawn from within four marginal standard deviations at time `t`.
fn toy_point(rng: &mut ChaCha8Rng, t: f64) -> f64 {
    let mean = -(1.0 - t);
    let sd = ((1.0 - t) * (1.0 - t) * 0.3 + t * t).sqrt();
    mean + sd * rng.random_range(-4.0..4.0)
}

fn singular_matches_family(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let field = toy_field();
    let alpha = if opts.perturb { SQRT_2 + 1e-3 } else { SQRT_2 };
    let schedule = DiffusionSchedule::new(Family::Singular, alpha)?;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let t = rng.random_range(1e-4..1.0 - 1e-4);
        let x = toy_point(rng, t);
        let exact = singular_sde_coefficients(1.0, &[x], t)?;
        let member = corollary2_coefficients(&field, &schedule, &[x], t)?;
        worst = worst
            .max(dev_vec(&member.drift, &exact.drift))
            .max(dev(member.diffusion, exact.diffusion));
    }
    Ok(worst)
}

fn corollary1_gamma_one(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let f = rng.random_range(-10.0..10.0);
        let g = rng.random_range(0.0..5.0);
        let s = rng.random_range(-10.0..10.0);
        let c = corollary1_coefficients(&[f], g, 1.0, &[s])?;
        worst = worst.max(dev(c.drift[0], f)).max(dev(c.diffusion, g));
    }
    Ok(worst)
}

fn corollary1_gamma_zero(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let f = rng.random_range(-10.0..10.0);
        let g: f64 = rng.random_range(0.0..5.0);
        let s = rng.random_range(-10.0..10.0);
        let c = corollary1_coefficients(&[f], g, 0.0, &[s])?;
        let probability_flow = f - 0.5 * g.powi(2) * s;
        worst = worst.max(dev(c.drift[0], probability_flow)).max(c.diffusion.abs());
    }
    Ok(worst)
}

fn theorem1_reduces_to_corollary1(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let f = rng.random_range(-10.0..10.0);
        let g: f64 = rng.random_range(0.0..5.0);
        let gamma: f64 = rng.random_range(0.0..3.0);
        let s = rng.random_range(-10.0..10.0);
        let a = theorem1_scalar_transform(&[f], g, 0.0, gamma, &[s])?;
        // independent arithmetic for f - (1 - gamma) g^2 s / 2, sqrt(gamma) g
        let drift = f - (1.0 - gamma) * g * g / 2.0 * s;
        worst = worst.max(dev(a.drift[0], drift)).max(dev(a.diffusion, gamma.sqrt() * g));
        let b = corollary1_coefficients(&[f], g, gamma, &[s])?;
        worst = worst.max(dev(a.drift[0], b.drift[0])).max(dev(a.diffusion, b.diffusion));
    }
    Ok(worst)
}

fn theorem1_reduces_to_corollary2(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let field = toy_field();
    let mut worst: f64 = 0.0;
    for i in 0..opts.samples {
        let family = Family::STOCHASTIC[i % Family::STOCHASTIC.len()];
        let schedule = DiffusionSchedule::new(family, rng.random_range(0.0..2.5))?;
        let t = rng.random_range(1e-3..1.0 - 1e-3);
        let x = toy_point(rng, t);
        let v = field.velocity(&[x], t);
        let score = score_from_velocity(&field, &[x], t)?;
        let gamma = rng.random_range(0.0..3.0);
        let a = theorem1_scalar_transform(&v, 0.0, schedule.g_tilde(t)?, gamma, &score)?;
        let b = corollary2_coefficients(&field, &schedule, &[x], t)?;
        worst = worst.max(dev_vec(&a.drift, &b.drift)).max(dev(a.diffusion, b.diffusion));
    }
    Ok(worst)
}

fn score_gaussian(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let field = toy_field();
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let t = rng.random_range(1e-6..=1.0);
        let x = toy_point(rng, t);
        let a = score_from_velocity(&field, &[x], t)?;
        let b = analytic_score_gaussian(field.p0(), field.endpoint_p1(), &Schedule::Linear, &[x], t)?;
        worst = worst.max(dev_vec(&a, &b));
    }
    Ok(worst)
}

fn score_mixture(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let field = toy_mixture_field();
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let t = rng.random_range(1e-6..=1.0);
        let x = rng.random_range(-4.0..5.0);
        let a = score_from_velocity(&field, &[x], t)?;
        let b = analytic_score_mixture(field.p0(), field.endpoint_p1(), &Schedule::Linear, &[x], t)?;
        worst = worst.max(dev_vec(&a, &b));
    }
    Ok(worst)
}

fn fused_product(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let field = toy_field();
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let t = rng.random_range(1e-6..=1.0);
        let x = toy_point(rng, t);
        let fused = fused_score_product(&field, 1, 0, 1.0, &[x], t)?;
        let score = score_from_velocity(&field, &[x], t)?;
        worst = worst.max(dev(fused[0], t * score[0]));
    }
    let at_zero = fused_score_product(&field, 1, 0, 1.0, &[0.3], 0.0)?;
    if !at_zero[0].is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(worst)
}

fn reverse_routes(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let field = toy_field();
    let mut worst: f64 = 0.0;
    for i in 0..opts.samples {
        let family = Family::ALL[i % Family::ALL.len()];
        let schedule = DiffusionSchedule::new(family, rng.random_range(0.0..2.5))?;
        let t = rng.random_range(1e-4..1.0 - 1e-4);
        let x = toy_point(rng, t);
        let fwd = corollary2_coefficients(&field, &schedule, &[x], t)?;
        let score = analytic_score_gaussian(field.p0(), field.endpoint_p1(), &Schedule::Linear, &[x], t)?;
        let generic = reverse_time_coefficients(&fwd, &score)?;
        let fused = reverse_family_coefficients(&field, &schedule, &[x], t)?;
        worst = worst
            .max(dev_vec(&generic.drift, &fused.drift))
            .max(dev(generic.diffusion, fused.diffusion));
    }
    Ok(worst)
}

fn cfg_linearity(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..opts.samples {
        let vc = rng.random_range(-10.0..10.0);
        let vu = rng.random_range(-10.0..10.0);
        let lambda = rng.random_range(0.0..10.0);
        let got = cfg_velocity(&[vc], &[vu], lambda)[0];
        worst = worst.max(dev(got, vc + lambda * (vc - vu)));
    }
    Ok(worst)
}

/// All checks, in the order `verify` runs them.
pub fn checks() -> Vec<Check> {
    vec![
        Check {
            name: "singular-sde-is-family-member",
            description: "affine singular SDE equals the singular family member with alpha = sqrt(2)",
            tolerance: 1e-11,
            run: singular_matches_family,
        },
        Check {
            name: "corollary1-gamma-one-identity",
            description: "gamma = 1 leaves (f, g) unchanged",
            tolerance: 1e-14,
            run: corollary1_gamma_one,
        },
        Check {
            name: "corollary1-gamma-zero-probability-flow",
            description: "gamma = 0 gives the probability-flow drift f - g^2 score / 2 and no diffusion",
            tolerance: 1e-14,
            run: corollary1_gamma_zero,
        },
        Check {
            name: "theorem1-reduces-to-corollary1",
            description: "g~ = 0 slice of the scalar transform equals the gamma-indexed family",
            tolerance: 1e-12,
            run: theorem1_reduces_to_corollary1,
        },
        Check {
            name: "theorem1-reduces-to-corollary2",
            description: "f = v, g = 0 slice of the scalar transform equals the flow-based family",
            tolerance: 1e-10,
            run: theorem1_reduces_to_corollary2,
        },
        Check {
            name: "score-from-velocity-gaussian",
            description: "score imputed from the closed-form velocity equals the Gaussian marginal score",
            tolerance: 1e-10,
            run: score_gaussian,
        },
        Check {
            name: "score-from-velocity-mixture",
            description: "score imputed from the mixture velocity equals the mixture marginal score",
            tolerance: 1e-10,
            run: score_mixture,
        },
        Check {
            name: "fused-score-product",
            description: "fused t * score equals t times the imputed score and is finite at t = 0",
            tolerance: 1e-12,
            run: fused_product,
        },
        Check {
            name: "reverse-time-routes-agree",
            description: "fused reverse drift v - g~^2 score / 2 equals generic reversal f - g^2 score",
            tolerance: 1e-10,
            run: reverse_routes,
        },
        Check {
            name: "cfg-linear-in-lambda",
            description: "guided velocity equals v_c + lambda (v_c - v_u)",
            tolerance: 1e-14,
            run: cfg_linearity,
        },
    ]
}

pub fn run_checks(opts: &VerifyOptions) -> VerifyReport {
    let start = Instant::now();
    let outcomes = checks()
        .into_iter()
        .enumerate()
        .map(|(i, check)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            match (check.run)(opts, &mut rng) {
                Ok(d) => CheckOutcome {
                    name: check.name,
                    tolerance: check.tolerance,
                    max_deviation: d,
                    passed: d <= check.tolerance,
                    error: None,
                },
                Err(e) => CheckOutcome {
                    name: check.name,
                    tolerance: check.tolerance,
                    max_deviation: f64::INFINITY,
                    passed: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    VerifyReport {
        outcomes,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }
}
