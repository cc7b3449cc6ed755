//! Analytic marginals, per-time Monte Carlo estimates and Gaussian KL.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{GaussianEndpoint, GaussianMixtureEndpoint};
use crate::integrator::TrajectoryEnsemble;

/// Exact first and second moments of `x_t = (1 - t) x0 + t x1` with independent endpoints.
///
/// For Gaussian `p0` these fully determine the (Gaussian) marginal. For a mixture they
/// are the moments the estimators are compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMarginal {
    mean0: Vec<f64>,
    var0: Vec<f64>,
    mean1: Vec<f64>,
    var1: f64,
}

impl AnalyticMarginal {
    pub fn gaussian(p0: &GaussianEndpoint, p1: &GaussianEndpoint) -> Result<Self> {
        if p0.dim() != p1.dim() {
            return Err(Error::DimensionMismatch {
                expected: p0.dim(),
                got: p1.dim(),
            });
        }
        Ok(Self {
            mean0: p0.mean().to_vec(),
            var0: vec![p0.variance(); p0.dim()],
            mean1: p1.mean().to_vec(),
            var1: p1.variance(),
        })
    }

    pub fn mixture(p0: &GaussianMixtureEndpoint, p1: &GaussianEndpoint) -> Result<Self> {
        if p0.dim() != p1.dim() {
            return Err(Error::DimensionMismatch {
                expected: p0.dim(),
                got: p1.dim(),
            });
        }
        Ok(Self {
            mean0: p0.mean(),
            var0: p0.variance(),
            mean1: p1.mean().to_vec(),
            var1: p1.variance(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn mean_at(&self, t: f64) -> Vec<f64> {
        self.mean0
            .iter()
            .zip(&self.mean1)
            .map(|(m0, m1)| (1.0 - t) * m0 + t * m1)
            .collect()
    }

    /// Per-dimension variance `(1 - t)^2 var0 + t^2 var1`.
    pub fn variance_at(&self, t: f64) -> Vec<f64> {
        let s = 1.0 - t;
        self.var0.iter().map(|v0| s * s * v0 + t * t * self.var1).collect()
    }
}

/// `(mu_t, sigma_t^2)` for Gaussian endpoints.
pub fn analytic_marginal(p0: &GaussianEndpoint, p1: &GaussianEndpoint, t: f64) -> Result<(Vec<f64>, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            what: "analytic_marginal",
            t,
            reason: "t must lie in [0, 1]",
        });
    }
    let m = AnalyticMarginal::gaussian(p0, p1)?;
    Ok((m.mean_at(t), m.variance_at(t)[0]))
}

/// `KL(N(m1, v1) || N(m2, v2))`.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    if !(v1 > 0.0) || !(v2 > 0.0) {
        return Err(Error::invalid(
            "variance",
            format!("KL needs positive variances, got {v1} and {v2}"),
        ));
    }
    let r = v1 / v2;
    // r - 1 - ln r, accurate near r = 1
    let ratio_term = ((r - 1.0) - (r - 1.0).ln_1p()).max(0.0);
    let dm = m2 - m1;
    Ok(0.5 * (ratio_term + dm * dm / v2))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(estimate || truth)`.
    #[default]
    EstimateToTruth,
    /// `KL(truth || estimate)`.
    TruthToEstimate,
}

impl KlDirection {
    pub fn name(self) -> &'static str {
        match self {
            KlDirection::EstimateToTruth => "estimate-to-truth",
            KlDirection::TruthToEstimate => "truth-to-estimate",
        }
    }

    fn kl(self, est_mean: f64, est_var: f64, true_mean: f64, true_var: f64) -> f64 {
        if !(est_var > 0.0) {
            return f64::INFINITY;
        }
        let kl = match self {
            KlDirection::EstimateToTruth => gaussian_kl(est_mean, est_var, true_mean, true_var),
            KlDirection::TruthToEstimate => gaussian_kl(true_mean, true_var, est_mean, est_var),
        };
        kl.unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for KlDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KlDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimate-to-truth" => Ok(KlDirection::EstimateToTruth),
            "truth-to-estimate" => Ok(KlDirection::TruthToEstimate),
            _ => Err(Error::invalid("kl_direction", format!("unknown direction `{s}`"))),
        }
    }
}

/// Per-time sample mean and unbiased sample variance of one trial, per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMoments {
    pub times: Vec<f64>,
    pub dim: usize,
    pub count: usize,
    /// `[times x dim]`
    pub mean: Vec<f64>,
    /// `[times x dim]`
    pub variance: Vec<f64>,
}

impl TrialMoments {
    pub fn from_ensemble(ens: &TrajectoryEnsemble) -> Result<Self> {
        let n = ens.count();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 trajectories per trial, got {n}"
            )));
        }
        let d = ens.dim();
        let nt = ens.times().len();
        let mut mean = vec![0.0; nt * d];
        let mut variance = vec![0.0; nt * d];
        for k in 0..nt {
            let m = &mut mean[k * d..(k + 1) * d];
            for j in 0..n {
                for (mi, s) in m.iter_mut().zip(ens.state(j, k)) {
                    *mi += s;
                }
            }
            m.iter_mut().for_each(|mi| *mi /= n as f64);
            let v = &mut variance[k * d..(k + 1) * d];
            for j in 0..n {
                for ((vi, s), mi) in v.iter_mut().zip(ens.state(j, k)).zip(m.iter()) {
                    let dev = s - mi;
                    *vi += dev * dev;
                }
            }
            v.iter_mut().for_each(|vi| *vi /= (n - 1) as f64);
        }
        Ok(Self {
            times: ens.times().to_vec(),
            dim: d,
            count: n,
            mean,
            variance,
        })
    }
}

/// One row of a report: estimates at a single recorded time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub t: f64,
    pub mean_est: f64,
    pub mean_err: f64,
    pub mean_std: f64,
    pub var_est: f64,
    pub var_err: f64,
    pub var_std: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub trials: usize,
    pub trajectories: usize,
    pub dim: usize,
    pub steps: Option<usize>,
    pub t_start: Option<f64>,
    pub family: Option<String>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub kl_direction: KlDirection,
    pub diverged: bool,
}

/// Per-time estimates with cross-trial spread. Errors are `estimate - truth`.
///
/// `rows` is the isotropic pooled report: means and variances are averaged over
/// dimensions and the KL is that of the diagonal Gaussians (a sum over dimensions).
/// `per_dimension` is filled only when `dim > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub rows: Vec<MarginalRow>,
    pub per_dimension: Vec<Vec<MarginalRow>>,
    pub metadata: ReportMetadata,
}

impl MarginalReport {
    /// Row at `t = 0` (the last recorded time).
    pub fn final_row(&self) -> &MarginalRow {
        self.rows.last().expect("report has at least one row")
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    let v = xs.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Reduces per-trial moments into a report.
pub fn estimate_from_moments(
    trials: &[TrialMoments],
    truth: &AnalyticMarginal,
    direction: KlDirection,
) -> Result<MarginalReport> {
    if trials.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 trials for cross-trial spread, got {}",
            trials.len()
        )));
    }
    let first = &trials[0];
    let d = first.dim;
    if d != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: d,
        });
    }
    for tr in &trials[1..] {
        if tr.times != first.times || tr.dim != d {
            return Err(Error::invalid("ensembles", "all trials must share one time grid and dimension"));
        }
    }
    let nt = first.times.len();
    let mut rows = Vec::with_capacity(nt);
    let mut per_dim = vec![Vec::with_capacity(nt); if d > 1 { d } else { 0 }];
    for k in 0..nt {
        let t = first.times[k];
        let mu = truth.mean_at(t);
        let var = truth.variance_at(t);
        let row_for = |pick: &dyn Fn(&[f64]) -> f64, true_mean: f64, true_var: f64, kl: Option<f64>| {
            let (mean_est, mean_sd) = mean_std(trials.iter().map(|tr| pick(&tr.mean[k * d..(k + 1) * d])));
            let (var_est, var_sd) = mean_std(trials.iter().map(|tr| pick(&tr.variance[k * d..(k + 1) * d])));
            let kl = kl.unwrap_or_else(|| direction.kl(mean_est, var_est, true_mean, true_var));
            MarginalRow {
                t,
                mean_est,
                mean_err: mean_est - true_mean,
                mean_std: mean_sd,
                var_est,
                var_err: var_est - true_var,
                var_std: var_sd,
                kl,
            }
        };
        if d == 1 {
            rows.push(row_for(&|s| s[0], mu[0], var[0], None));
            continue;
        }
        let mut kl_total = 0.0;
        for c in 0..d {
            let row = row_for(&|s| s[c], mu[c], var[c], None);
            kl_total += row.kl;
            per_dim[c].push(row);
        }
        let avg = |s: &[f64]| s.iter().sum::<f64>() / d as f64;
        rows.push(row_for(&avg, avg(&mu), avg(&var), Some(kl_total)));
    }
    Ok(MarginalReport {
        rows,
        per_dimension: per_dim,
        metadata: ReportMetadata {
            trials: trials.len(),
            trajectories: first.count,
            dim: d,
            kl_direction: direction,
            ..Default::default()
        },
    })
}

/// Per-time mean/variance estimates pooled across trials (one ensemble per trial).
pub fn estimate_marginals(
    ensembles: &[TrajectoryEnsemble],
    truth: &AnalyticMarginal,
    direction: KlDirection,
) -> Result<MarginalReport> {
    if let Some(first) = ensembles.first() {
        if ensembles.iter().any(|e| e.times() != first.times()) {
            return Err(Error::invalid("ensembles", "all trials must share one time grid"));
        }
    }
    let moments = ensembles
        .par_iter()
        .map(TrialMoments::from_ensemble)
        .collect::<Result<Vec<_>>>()?;
    let mut report = estimate_from_moments(&moments, truth, direction)?;
    report.metadata.diverged = ensembles.iter().any(|e| e.diverged());
    Ok(report)
}
