use flowsde::stats::{estimate_marginals, gaussian_kl};
use flowsde::{AnalyticMarginal, GaussianEndpoint, KlDirection, RngSpec, TrajectoryEnsemble};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn truth() -> AnalyticMarginal {
    AnalyticMarginal::gaussian(
        &GaussianEndpoint::scalar(-1.0, 0.3).unwrap(),
        &GaussianEndpoint::scalar(0.0, 1.0).unwrap(),
    )
    .unwrap()
}

fn exact_ensembles(truth: &AnalyticMarginal, trials: usize, count: usize, seed: u64) -> Vec<TrajectoryEnsemble> {
    let times = vec![1.0, 0.5, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|k| {
            let mut states = Vec::with_capacity(count * times.len());
            for _ in 0..count {
                for &t in &times {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    states.push(truth.mean_at(t)[0] + truth.variance_at(t)[0].sqrt() * z);
                }
            }
            TrajectoryEnsemble::from_states(1, times.clone(), states, RngSpec::new(seed), k as u64).unwrap()
        })
        .collect()
}

#[test]
fn exact_draws_are_unbiased() {
    let truth = truth();
    let r = estimate_marginals(&exact_ensembles(&truth, 10, 10_000, 1), &truth, KlDirection::default()).unwrap();
    for row in &r.rows {
        assert!(row.mean_err.abs() < 4.0 * row.mean_std, "{row:?}");
        assert!(row.var_err.abs() < 4.0 * row.var_std, "{row:?}");
        assert!(row.kl >= 0.0);
    }
}

#[test]
fn cross_trial_spread_shrinks_like_inverse_sqrt_n() {
    let truth = truth();
    let reps = 20;
    let (mut mean_small, mut mean_large, mut var_small, mut var_large) = (0.0, 0.0, 0.0, 0.0);
    for rep in 0..reps {
        let small = estimate_marginals(&exact_ensembles(&truth, 10, 500, 100 + rep), &truth, KlDirection::default())
            .unwrap();
        let large = estimate_marginals(&exact_ensembles(&truth, 10, 2000, 200 + rep), &truth, KlDirection::default())
            .unwrap();
        mean_small += small.final_row().mean_std.powi(2);
        mean_large += large.final_row().mean_std.powi(2);
        var_small += small.final_row().var_std.powi(2);
        var_large += large.final_row().var_std.powi(2);
    }
    let ratio_mean = (mean_small / mean_large).sqrt();
    let ratio_var = (var_small / var_large).sqrt();
    assert!((ratio_mean - 2.0).abs() < 0.3, "mean std ratio {ratio_mean}");
    assert!((ratio_var - 2.0).abs() < 0.3, "variance std ratio {ratio_var}");
}

proptest! {
    #[test]
    fn kl_nonnegative_and_shift_invariant(
        m1 in -5.0f64..5.0, v1 in 0.01f64..10.0,
        m2 in -5.0f64..5.0, v2 in 0.01f64..10.0,
        shift in -10.0f64..10.0,
    ) {
        let a = gaussian_kl(m1, v1, m2, v2).unwrap();
        let b = gaussian_kl(m2, v2, m1, v1).unwrap();
        prop_assert!(a >= 0.0 && b >= 0.0);
        let shifted = gaussian_kl(m1 + shift, v1, m2 + shift, v2).unwrap();
        prop_assert!((a - shifted).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn kl_vanishes_only_at_equality(m in -5.0f64..5.0, v in 0.01f64..10.0) {
        prop_assert_eq!(gaussian_kl(m, v, m, v).unwrap(), 0.0);
        prop_assert!(gaussian_kl(m, v, m + 0.1, v).unwrap() > 0.0);
    }
}
