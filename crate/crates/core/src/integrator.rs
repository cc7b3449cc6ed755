//! Reverse-time Euler–Maruyama simulation over a uniform descending grid.
//!
//! Each trajectory owns a ChaCha8 stream selected by `(seed, trial, trajectory index)`
//! and consumes it in a fixed order (prior draw, then one normal per dimension per
//! step), so results do not depend on how trajectories are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowField, GaussianEndpoint};
use crate::sde::{fused_from_velocity, DiffusionSchedule};

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// `t_i = t_start * (1 - i / N)` for `i = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    num_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, num_steps: usize) -> Result<Self> {
        if !(t_start > 0.0 && t_start <= 1.0) {
            return Err(Error::invalid("t_start", format!("must lie in (0, 1], got {t_start}")));
        }
        if num_steps == 0 {
            return Err(Error::invalid("num_steps", "must be at least 1"));
        }
        Ok(Self { t_start, num_steps })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Grid point `i`; exactly `t_start` at `i = 0` and exactly `0` at `i = N`.
    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        let n = self.num_steps;
        self.t_start * ((n - i) as f64 / n as f64)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.num_steps).map(|i| self.point(i)).collect()
    }
}

/// Seed for a family of per-trajectory random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Independent stream for trajectory `index` of trial `trial`.
    pub fn trajectory_rng(&self, trial: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(trial)));
        rng.set_stream(index);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Which trial of the seed family to draw streams from.
    pub trial: u64,
    /// A run is flagged diverged once any state exceeds this magnitude.
    pub divergence_bound: f64,
    /// Whether the final step into `t = 0` carries noise.
    pub final_step_noise: bool,
    /// Record every `record_stride`-th grid point (the last point is always recorded).
    pub record_stride: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            trial: 0,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            final_step_noise: true,
            record_stride: 1,
        }
    }
}

/// Simulated states, stored trajectory-major: `states[(j * times + k) * dim + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    dim: usize,
    count: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    rng: RngSpec,
    trial: u64,
    diverged: bool,
}

impl TrajectoryEnsemble {
    /// Builds an ensemble from externally produced states (trajectory-major).
    pub fn from_states(dim: usize, times: Vec<f64>, states: Vec<f64>, rng: RngSpec, trial: u64) -> Result<Self> {
        if dim == 0 || times.is_empty() {
            return Err(Error::invalid("ensemble", "needs at least one dimension and one time"));
        }
        let per_traj = dim * times.len();
        if states.is_empty() || !states.len().is_multiple_of(per_traj) {
            return Err(Error::invalid(
                "states",
                format!("length {} is not a positive multiple of dim * times = {per_traj}", states.len()),
            ));
        }
        let diverged = states.iter().any(|s| !s.is_finite());
        Ok(Self {
            dim,
            count: states.len() / per_traj,
            times,
            states,
            rng,
            trial,
            diverged,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rng(&self) -> RngSpec {
        self.rng
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// State of trajectory `j` at recorded time index `k`.
    pub fn state(&self, j: usize, k: usize) -> &[f64] {
        let start = (j * self.times.len() + k) * self.dim;
        &self.states[start..start + self.dim]
    }

    /// All states at recorded time index `k`, row-major `[count x dim]`.
    pub fn states_at(&self, k: usize) -> Vec<f64> {
        (0..self.count).flat_map(|j| self.state(j, k).iter().copied()).collect()
    }

    pub fn final_states(&self) -> Vec<f64> {
        self.states_at(self.times.len() - 1)
    }

    pub fn raw_states(&self) -> &[f64] {
        &self.states
    }
}

fn draw_prior(p1: &GaussianEndpoint, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let sd = p1.std_dev();
    for (o, m) in out.iter_mut().zip(p1.mean()) {
        let xi: f64 = StandardNormal.sample(rng);
        *o = m + sd * xi;
    }
}

/// `count` i.i.d. draws from `p1`, row-major `[count x dim]`. These are the same draws
/// that start trajectories `0..count` of trial `trial`.
pub fn sample_prior(p1: &GaussianEndpoint, count: usize, rng: &RngSpec, trial: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let d = p1.dim();
    let mut out = vec![0.0; count * d];
    out.par_chunks_mut(d).enumerate().for_each(|(j, row)| {
        let mut r = rng.trajectory_rng(trial, j as u64);
        draw_prior(p1, &mut r, row);
    });
    Ok(out)
}

fn recorded_indices(num_steps: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..=num_steps).step_by(stride.max(1)).collect();
    if idx.last() != Some(&num_steps) {
        idx.push(num_steps);
    }
    idx
}

/// Simulates the reverse-time member of the family selected by `schedule`, from `p1`
/// at `grid.t_start()` down to `t = 0`.
///
/// Per step, with `dt = t_{i+1} - t_i < 0` and coefficients at the current time `t_i`:
/// `z <- z + (v - (g~^2 / 2) score) dt + g~ sqrt(|dt|) xi`.
pub fn simulate_reverse<F: FlowField + ?Sized>(
    field: &F,
    schedule: &DiffusionSchedule,
    grid: &TimeGrid,
    count: usize,
    rng: &RngSpec,
    options: &SimulationOptions,
) -> Result<TrajectoryEnsemble> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    if options.record_stride == 0 {
        return Err(Error::invalid("record_stride", "must be at least 1"));
    }
    let stochastic = !schedule.is_deterministic();
    if stochastic && !field.schedule().is_linear() {
        return Err(Error::invalid(
            "schedule",
            "stochastic samplers impute the score and need the linear schedule",
        ));
    }
    for i in 0..grid.num_steps() {
        schedule.check_time(grid.point(i))?;
    }

    let d = field.dim();
    let n = grid.num_steps();
    let recorded = recorded_indices(n, options.record_stride);
    let times: Vec<f64> = recorded.iter().map(|&i| grid.point(i)).collect();
    let per_traj = recorded.len() * d;
    let mut states = vec![0.0; count * per_traj];

    let p1 = field.endpoint_p1();
    let alpha2 = schedule.alpha() * schedule.alpha();
    let powers = schedule.family().powers().unwrap_or((0, 0));
    let bound = options.divergence_bound;

    let diverged = states
        .par_chunks_mut(per_traj)
        .enumerate()
        .map(|(j, out)| {
            let mut r = rng.trajectory_rng(options.trial, j as u64);
            let mut z = vec![0.0; d];
            let mut v = vec![0.0; d];
            let mut fused = vec![0.0; d];
            draw_prior(p1, &mut r, &mut z);
            let mut diverged = false;
            let mut slot = 0;
            if recorded[0] == 0 {
                out[..d].copy_from_slice(&z);
                slot = 1;
            }
            for i in 0..n {
                let t = grid.point(i);
                let dt = grid.point(i + 1) - t;
                field.velocity_into(&z, t, &mut v);
                if stochastic {
                    let (pn, pm) = powers;
                    fused_from_velocity(p1.mean(), p1.variance(), pn, pm, alpha2, &z, &v, t, &mut fused);
                    let g = schedule.g_tilde(t).unwrap_or(f64::NAN);
                    let noisy = options.final_step_noise || i + 1 < n;
                    let noise_scale = g * dt.abs().sqrt();
                    for c in 0..d {
                        let xi: f64 = StandardNormal.sample(&mut r);
                        let step = (v[c] - 0.5 * fused[c]) * dt;
                        z[c] += if noisy { step + noise_scale * xi } else { step };
                    }
                } else {
                    for c in 0..d {
                        z[c] += v[c] * dt;
                    }
                }
                if !diverged && z.iter().any(|s| !(s.abs() <= bound)) {
                    diverged = true;
                }
                if slot < recorded.len() && recorded[slot] == i + 1 {
                    out[slot * d..(slot + 1) * d].copy_from_slice(&z);
                    slot += 1;
                }
            }
            diverged
        })
        .reduce(|| false, |a, b| a || b);

    Ok(TrajectoryEnsemble {
        dim: d,
        count,
        times,
        states,
        rng: *rng,
        trial: options.trial,
        diverged,
    })
}

/// Explicit Euler on the flow ODE, backward from `p1`. Randomness is used only for the
/// prior draws, which match those of [`simulate_reverse`] for the same seed and trial.
pub fn simulate_ode<F: FlowField + ?Sized>(
    field: &F,
    grid: &TimeGrid,
    count: usize,
    rng: &RngSpec,
    options: &SimulationOptions,
) -> Result<TrajectoryEnsemble> {
    simulate_reverse(field, &DiffusionSchedule::deterministic(), grid, count, rng, options)
}

/// Forward-time Euler–Maruyama on the family member, from given states at `t = t_from`
/// up to `t_to` in `num_steps` uniform steps. Returns the final states.
#[cfg(test)]
pub(crate) fn simulate_forward<F: FlowField + ?Sized>(
    field: &F,
    schedule: &DiffusionSchedule,
    initial: &[f64],
    t_from: f64,
    t_to: f64,
    num_steps: usize,
    rng: &RngSpec,
) -> Result<Vec<f64>> {
    use crate::sde::corollary2_coefficients;
    let d = field.dim();
    let dt = (t_to - t_from) / num_steps as f64;
    let mut out = initial.to_vec();
    out.par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(j, z)| -> Result<()> {
            let mut r = rng.trajectory_rng(u64::MAX, j as u64);
            for i in 0..num_steps {
                let t = t_from + i as f64 * dt;
                let c = corollary2_coefficients(field, schedule, z, t)?;
                for k in 0..d {
                    let xi: f64 = StandardNormal.sample(&mut r);
                    z[k] += c.drift[k] * dt + c.diffusion * dt.sqrt() * xi;
                }
            }
            Ok(())
        })?;
    Ok(out)
}
