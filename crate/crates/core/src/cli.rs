//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 numerical divergence,
//! 3 verification failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::Error;
use crate::experiment::{decorrelated_seed, run_experiment};
use crate::output::{fmt_float, write_report, Table};
use crate::sde::Family;
use crate::stats::MarginalReport;
use crate::verify::{checks, run_checks, VerifyOptions};

pub const THREADS_ENV: &str = "FLOWSDE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "flowsde", version, about = "Marginal-preserving stochastic samplers for Gaussian flows")]
pub struct Cli {
    /// Worker threads for trajectory simulation (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its marginal report.
    Simulate(SimulateArgs),
    /// Run one experiment per diffusion scale and summarize KL at t = 0.
    SweepAlpha(SweepAlphaArgs),
    /// Run one experiment per step count and family and summarize variance error at t = 0.
    SweepSteps(SweepStepsArgs),
    /// Run the exact-identity checks.
    Verify(VerifyArgs),
    /// Print the default configuration with every field spelled out.
    PrintConfig,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Also write a gnuplot script next to each report.
    #[arg(long)]
    pub gnuplot_script: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    /// Override the config's output path.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepAlphaArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    /// Comma-separated diffusion scales.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub alphas: Vec<f64>,

    #[arg(long)]
    pub out_dir: PathBuf,

    /// Give each sweep point its own seed instead of reusing the config's.
    #[arg(long)]
    pub decorrelate: bool,
}

#[derive(Debug, Args)]
pub struct SweepStepsArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    /// Comma-separated step counts.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub steps: Vec<usize>,

    /// Comma-separated families (default: the config's family).
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<String>,

    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long)]
    pub decorrelate: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// List check names without running them.
    #[arg(long)]
    pub list: bool,

    /// Mismatch alpha in the singular-SDE check by 1e-3 (the suite must then fail).
    #[arg(long)]
    pub perturb: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Diverged(String),
    VerifyFailed,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::VerifyFailed => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("i/o error: {e}"))
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.gnuplot_script {
        cfg.output.gnuplot_script = true;
    }
    Ok(cfg)
}

fn run_and_write(cfg: &ExperimentConfig, path: &Path) -> Result<MarginalReport, CliError> {
    let report = run_experiment(cfg)?;
    write_report(path, cfg, &report, cfg.output.gnuplot_script)?;
    Ok(report)
}

fn report_extension(cfg: &ExperimentConfig) -> &'static str {
    match cfg.output.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    }
}

fn diverged_error(what: &str) -> CliError {
    CliError::Diverged(format!("{what}: a trajectory exceeded the divergence bound"))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(out) = &args.output {
        cfg.output.path = out.clone();
    }
    let path = cfg.output.path.clone();
    let report = run_and_write(&cfg, &path)?;
    eprintln!("wrote {}", path.display());
    if report.metadata.diverged {
        return Err(diverged_error("simulate"));
    }
    Ok(())
}

pub fn cmd_sweep_alpha(args: &SweepAlphaArgs) -> Result<(), CliError> {
    if args.alphas.is_empty() {
        return Err(CliError::Usage("sweep-alpha needs at least one value in --alphas".into()));
    }
    let base = load_config(&args.common)?;
    fs::create_dir_all(&args.out_dir)?;
    let mut summary = Table::new(&["alpha", "kl_t0"]);
    let mut diverged = false;
    for (i, &alpha) in args.alphas.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.sampler.alpha = alpha;
        if args.decorrelate {
            cfg.seed = decorrelated_seed(base.seed, i);
        }
        cfg.validate()?;
        let path = args
            .out_dir
            .join(format!("alpha_{}.{}", alpha, report_extension(&cfg)));
        cfg.output.path = path.clone();
        let report = run_and_write(&cfg, &path)?;
        diverged |= report.metadata.diverged;
        summary.push(vec![fmt_float(alpha), fmt_float(report.final_row().kl)]);
    }
    let summary_path = args.out_dir.join("summary.csv");
    fs::write(&summary_path, summary.to_csv())?;
    eprintln!("wrote {}", summary_path.display());
    if diverged {
        return Err(diverged_error("sweep-alpha"));
    }
    Ok(())
}

pub fn cmd_sweep_steps(args: &SweepStepsArgs) -> Result<(), CliError> {
    if args.steps.is_empty() {
        return Err(CliError::Usage("sweep-steps needs at least one value in --steps".into()));
    }
    let base = load_config(&args.common)?;
    let families: Vec<Family> = if args.families.is_empty() {
        vec![base.sampler.family]
    } else {
        args.families
            .iter()
            .map(|f| f.parse::<Family>())
            .collect::<Result<_, _>>()?
    };
    fs::create_dir_all(&args.out_dir)?;
    let mut summary = Table::new(&["steps", "family", "alpha", "var_err_t0", "var_std_t0"]);
    let mut diverged = false;
    for (i, &steps) in args.steps.iter().enumerate() {
        for &family in &families {
            let mut cfg = base.clone();
            cfg.num_steps = steps;
            cfg.sampler.family = family;
            if args.decorrelate {
                cfg.seed = decorrelated_seed(base.seed, i);
            }
            cfg.validate()?;
            let path = args.out_dir.join(format!(
                "steps_{steps}_{}.{}",
                family.to_string().replace(['(', ')', '=', ','], "_"),
                report_extension(&cfg)
            ));
            cfg.output.path = path.clone();
            let report = run_and_write(&cfg, &path)?;
            diverged |= report.metadata.diverged;
            let last = report.final_row();
            summary.push(vec![
                steps.to_string(),
                family.to_string(),
                fmt_float(cfg.diffusion_schedule()?.alpha()),
                fmt_float(last.var_err),
                fmt_float(last.var_std),
            ]);
        }
    }
    let summary_path = args.out_dir.join("summary.csv");
    fs::write(&summary_path, summary.to_csv())?;
    eprintln!("wrote {}", summary_path.display());
    if diverged {
        return Err(diverged_error("sweep-steps"));
    }
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    if args.list {
        for c in checks() {
            println!("{:<42} tol {:>7.0e}  {}", c.name, c.tolerance, c.description);
        }
        return Ok(());
    }
    let report = run_checks(&VerifyOptions {
        perturb: args.perturb,
        ..Default::default()
    });
    for o in &report.outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        print!(
            "{status}  {:<42} max deviation {:.3e}  (tol {:.0e})",
            o.name, o.max_deviation, o.tolerance
        );
        match &o.error {
            Some(e) => println!("  error: {e}"),
            None => println!(),
        }
    }
    println!(
        "{} of {} checks passed in {:.3} s; overall max deviation {:.3e}",
        report.outcomes.iter().filter(|o| o.passed).count(),
        report.outcomes.len(),
        report.elapsed_seconds,
        report.max_deviation()
    );
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}

pub fn cmd_print_config() {
    print!("{}", ExperimentConfig::default().to_toml());
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::SweepAlpha(a) => cmd_sweep_alpha(a),
        Command::SweepSteps(a) => cmd_sweep_steps(a),
        Command::Verify(a) => cmd_verify(a),
        Command::PrintConfig => {
            cmd_print_config();
            Ok(())
        }
    }
}

/// Parses `std::env::args`, runs the command and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) | CliError::Validation(m) | CliError::Diverged(m) => eprintln!("error: {m}"),
                CliError::VerifyFailed => eprintln!("error: verification failed"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
