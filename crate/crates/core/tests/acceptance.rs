//! End-to-end acceptance run on the two-Gaussian toy problem.
//!
//! Prints one `PASS`/`FAIL` line per criterion (details indented beneath) and exits
//! non-zero if any criterion fails.

use std::f64::consts::SQRT_2;
use std::process::ExitCode;
use std::time::Instant;

use flowsde::config::ExperimentConfig;
use flowsde::experiment::run_experiment;
use flowsde::output::report_csv;
use flowsde::sde::POLE_OFFSET_T_START;
use flowsde::stats::{estimate_marginals, gaussian_kl, AnalyticMarginal};
use flowsde::verify::{run_checks, VerifyOptions};
use flowsde::{Family, GaussianEndpoint, KlDirection, MarginalReport, RngSpec, TimeGrid, TrajectoryEnsemble};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SIGMA0_SQ: f64 = 0.3;

fn toy(family: Family, alpha: f64, steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.sampler.family = family;
    cfg.sampler.alpha = alpha;
    cfg.num_steps = steps;
    cfg
}

fn run(cfg: &ExperimentConfig) -> MarginalReport {
    run_experiment(cfg).unwrap_or_else(|e| panic!("{cfg:?}: {e}"))
}

fn label(cfg: &ExperimentConfig) -> String {
    format!("{} alpha={:.4} N={}", cfg.sampler.family, cfg.sampler.alpha, cfg.num_steps)
}

struct Outcome {
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            passed: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.passed &= ok;
        self.details.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let report = run_checks(&VerifyOptions::default());
    let elapsed = start.elapsed().as_secs_f64();
    for c in &report.outcomes {
        o.check(
            c.passed && c.max_deviation <= 1e-10,
            format!("{:<40} max deviation {:.3e}", c.name, c.max_deviation),
        );
    }
    o.check(elapsed < 1.0, format!("runtime {elapsed:.3} s < 1 s"));
    o
}

fn criterion_2() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let reports = single_threaded(|| {
        Family::ALL
            .iter()
            .map(|&f| {
                let alpha = match f {
                    Family::Deterministic => 0.0,
                    Family::Singular => SQRT_2,
                    _ => 1.0,
                };
                let cfg = toy(f, alpha, 50);
                (label(&cfg), run(&cfg))
            })
            .collect::<Vec<_>>()
    });
    let elapsed = start.elapsed().as_secs_f64();
    let det = *reports[0].1.final_row();
    o.check(
        det.var_err < 0.0 && det.var_err.abs() > 3.0 * det.var_std,
        format!(
            "{}: var_err {:+.5} = {:.2} std",
            reports[0].0,
            det.var_err,
            det.var_err / det.var_std
        ),
    );
    for (name, r) in &reports[1..] {
        let row = r.final_row();
        o.check(
            row.var_err.abs() < det.var_err.abs(),
            format!("{name}: |var_err| {:.5} < {:.5}", row.var_err.abs(), det.var_err.abs()),
        );
    }
    o.check(elapsed < 30.0, format!("runtime {elapsed:.1} s < 30 s single-threaded"));
    o
}

fn criterion_3() -> Outcome {
    let mut o = Outcome::new();
    let steps = [50, 100, 500];
    let det: Vec<_> = steps
        .iter()
        .map(|&n| *run(&toy(Family::Deterministic, 0.0, n)).final_row())
        .collect();
    for (i, r) in det.iter().enumerate() {
        o.details.push(format!(
            "     deterministic N={}: var_err {:+.5} (std {:.5})",
            steps[i], r.var_err, r.var_std
        ));
    }
    for i in 1..det.len() {
        let (prev, next) = (det[i - 1], det[i]);
        o.check(
            next.var_err.abs() <= prev.var_err.abs() + next.var_std,
            format!(
                "deterministic |var_err| N={} -> N={}: {:.5} -> {:.5}",
                steps[i - 1],
                steps[i],
                prev.var_err.abs(),
                next.var_err.abs()
            ),
        );
    }
    for &n in &steps {
        let row = *run(&toy(Family::NonSingular, 1.0, n)).final_row();
        o.check(
            row.var_err.abs() <= 4.0 * row.var_std,
            format!(
                "non-singular alpha=1 N={n}: var_err {:+.5} = {:.2} std",
                row.var_err,
                row.var_err / row.var_std
            ),
        );
    }
    o
}

fn criterion_4() -> Outcome {
    let mut o = Outcome::new();
    let alphas = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
    let mut kl = Vec::new();
    for &alpha in &alphas {
        let r = run(&toy(Family::NonSingular, alpha, 100));
        let worst = r
            .rows
            .iter()
            .map(|row| row.mean_err.abs() / row.mean_std)
            .fold(0.0, f64::max);
        o.check(
            worst <= 4.0,
            format!(
                "alpha={alpha}: worst |mean_err| = {worst:.2} std, kl(t=0) {:.3e}",
                r.final_row().kl
            ),
        );
        kl.push(r.final_row().kl);
    }
    o.check(kl[2] < kl[0], format!("kl(alpha=1) {:.3e} < kl(alpha=0) {:.3e}", kl[2], kl[0]));
    o
}

fn check_preservation(o: &mut Outcome, name: &str, r: &MarginalReport) {
    let worst_mean = r
        .rows
        .iter()
        .map(|row| (row.mean_err.abs() / row.mean_std, row.t))
        .fold((0.0, f64::NAN), |a, b| if b.0 > a.0 { b } else { a });
    let last = r.final_row();
    let var_dev = (last.var_est - SIGMA0_SQ).abs() / last.var_std;
    o.check(
        worst_mean.0 <= 4.0 && var_dev <= 4.0,
        format!(
            "{name}: worst |mean_err| {:.2} std (t={:.3}); var(t=0) {:.5} = {:.2} std from 0.3",
            worst_mean.0, worst_mean.1, last.var_est, var_dev
        ),
    );
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    let cfg = toy(Family::Deterministic, 0.0, 100);
    check_preservation(&mut o, &label(&cfg), &run(&cfg));
    for &family in &Family::STOCHASTIC {
        for alpha in [0.5, 1.0] {
            let cfg = toy(family, alpha, 100);
            check_preservation(&mut o, &label(&cfg), &run(&cfg));
        }
    }
    o
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let mut cfg = toy(Family::Singular, SQRT_2, 100);
    cfg.t_start = Some(1.0);
    let start = Instant::now();
    match run_experiment(&cfg) {
        Err(e) => o.check(
            e.is_pole() && start.elapsed().as_secs_f64() < 0.1,
            format!("t_start=1 fails fast with pole error: {e}"),
        ),
        Ok(_) => o.check(false, "t_start=1 completed without a pole error".into()),
    }
    cfg.t_start = Some(POLE_OFFSET_T_START);
    match run_experiment(&cfg) {
        Ok(r) => {
            let last = r.final_row();
            let mean_dev = last.mean_err.abs() / last.mean_std;
            let var_dev = (last.var_est - SIGMA0_SQ).abs() / last.var_std;
            o.check(
                mean_dev <= 4.0 && var_dev <= 4.0,
                format!(
                    "{}, t_start={POLE_OFFSET_T_START}: mean_err {:.2} std, var(t=0) {:.5} = {:.2} std from 0.3",
                    label(&cfg),
                    mean_dev,
                    last.var_est,
                    var_dev
                ),
            );
        }
        Err(e) => o.check(false, format!("t_start={POLE_OFFSET_T_START} failed: {e}")),
    }
    o
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let cfg = ExperimentConfig {
        seed: 7,
        ..toy(Family::NonSingular, 1.0, 100)
    };
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| report_csv(&run(&cfg)))
    };
    let a = in_pool(1);
    let b = in_pool(1);
    let c = in_pool(8);
    o.check(a == b, "repeat run, 1 thread: byte-identical CSV".into());
    o.check(a == c, "1 vs 8 threads: byte-identical CSV".into());
    let other = report_csv(&run(&ExperimentConfig { seed: 8, ..cfg.clone() }));
    o.check(a != other, "different seed changes the CSV".into());
    o
}

fn exact_draws(truth: &AnalyticMarginal, times: &[f64], trial: u64, count: usize) -> TrajectoryEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_5500 + trial);
    let mut states = Vec::with_capacity(count * times.len());
    for _ in 0..count {
        for &t in times {
            let z: f64 = StandardNormal.sample(&mut rng);
            states.push(truth.mean_at(t)[0] + truth.variance_at(t)[0].sqrt() * z);
        }
    }
    TrajectoryEnsemble::from_states(1, times.to_vec(), states, RngSpec::new(0), trial).unwrap()
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let p0 = GaussianEndpoint::scalar(-1.0, SIGMA0_SQ).unwrap();
    let p1 = GaussianEndpoint::scalar(0.0, 1.0).unwrap();
    let truth = AnalyticMarginal::gaussian(&p0, &p1).unwrap();
    let times = TimeGrid::new(1.0, 20).unwrap().points();
    let ensembles: Vec<_> = (0..10).map(|k| exact_draws(&truth, &times, k, 10_000)).collect();
    let r = estimate_marginals(&ensembles, &truth, KlDirection::default()).unwrap();
    let worst_mean = r.rows.iter().map(|x| x.mean_err.abs() / x.mean_std).fold(0.0, f64::max);
    let worst_var = r.rows.iter().map(|x| x.var_err.abs() / x.var_std).fold(0.0, f64::max);
    o.check(
        worst_mean < 4.0 && worst_var < 4.0,
        format!("exact draws: worst |mean_err| {worst_mean:.2} std, worst |var_err| {worst_var:.2} std"),
    );
    let cases = [
        ((0.0, 1.0, 0.0, 1.0), 0.0),
        ((0.0, 1.0, 1.0, 1.0), 0.5),
        ((0.0, 2.0, 0.0, 1.0), 0.5 * (2.0 - 1.0 + 0.5f64.ln())),
    ];
    for ((m1, v1, m2, v2), want) in cases {
        let got = gaussian_kl(m1, v1, m2, v2).unwrap();
        o.check(
            (got - want).abs() <= 1e-9,
            format!("gaussian_kl({m1}, {v1}, {m2}, {v2}) = {got:.9} (expected {want:.9})"),
        );
    }
    o
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("exact identity suite", criterion_1),
        ("deterministic bias at N=50, stochastic families smaller", criterion_2),
        ("bias shrinks with steps; non-singular unbiased", criterion_3),
        ("kl improves with alpha; means unbiased", criterion_4),
        ("marginal preservation for every family", criterion_5),
        ("singular sampler boundary behavior", criterion_6),
        ("determinism across runs and thread counts", criterion_7),
        ("estimator sanity and gaussian_kl values", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {}: {status}  {name}  ({:.1} s)",
            i + 1,
            start.elapsed().as_secs_f64()
        );
        for d in &outcome.details {
            println!("    {d}");
        }
        failed += usize::from(!outcome.passed);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
