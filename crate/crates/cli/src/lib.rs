//! `stackelberg` command line: solve, simulate and verify a game described
//! by one configuration file.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 solver error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use stackelberg_core::config::{load_path, LoadedConfig};
use stackelberg_core::equilibrium::{synthesize, FeedbackPair};
use stackelberg_core::export::{self, EstimateRow};
use stackelberg_core::follower::{solve_follower_isrde, FollowerSolution};
use stackelberg_core::leader::{leader_optimal_cost, resolve_case, solve_leader, CaseChoice, LeaderSolution};
use stackelberg_core::simulate::{estimate, run_ensemble, sample_closed_loop_path, ClosedLoopSampler};
use stackelberg_core::verify::{equilibrium_cost_lyapunov, run_suite, Player, Status, SuiteOptions, Tolerances};
use stackelberg_core::SolveError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "STACKELBERG_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "stackelberg", version, about = "Leader-follower LQ games with jump diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve both Riccati equations and write follower.csv, leader.csv, gains.csv.
    Solve(CommonArgs),
    /// Simulate the closed loop and write ensemble.csv and estimates.csv.
    Simulate(SimulateArgs),
    /// Run the verification suite and write verify_report.csv.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file (.json or .toml).
    pub config: PathBuf,
    /// Leader solver: auto, case1 or case2.
    #[arg(long)]
    pub case: Option<String>,
    /// Output directory [default: run.out, then $STACKELBERG_OUT_DIR, then ./out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Number of Monte Carlo paths [default: monte_carlo.paths, then 10000]
    #[arg(long)]
    pub paths: Option<usize>,
    /// Base seed; path i uses stream i of this seed [default: monte_carlo.seed, then 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Also dump the first N full trajectories to trajectories.csv.
    #[arg(long, default_value_t = 0)]
    pub trajectories: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Width of Monte Carlo bands in standard errors [default: 3]
    #[arg(long, allow_negative_numbers = true)]
    pub se_multiplier: Option<f64>,
    /// Riccati residual bound as a multiple of dt^2 [default: 10]
    #[arg(long, allow_negative_numbers = true)]
    pub residual_factor: Option<f64>,
    /// Bound for quantities that must agree up to round-off [default: 1e-8]
    #[arg(long, allow_negative_numbers = true)]
    pub agreement: Option<f64>,
    /// Perturbation size for the follower identity test.
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Solver(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

/// Settings of one run: the file's contents with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub loaded: LoadedConfig,
    pub case: CaseChoice,
    pub out_dir: PathBuf,
    pub paths: usize,
    pub seed: u64,
    pub workers: usize,
    pub tolerances: Tolerances,
    pub epsilon: f64,
}

fn parse_case(s: &str, field: &str) -> CliResult<CaseChoice> {
    match s.to_ascii_lowercase().as_str() {
        "auto" => Ok(CaseChoice::Auto),
        "case1" => Ok(CaseChoice::Case1),
        "case2" => Ok(CaseChoice::Case2),
        other => Err(CliError::Config(format!("{field}: expected auto, case1 or case2, got {other:?}"))),
    }
}

/// Tolerances and step sizes must be positive and finite.
fn positive(value: Option<f64>, field: &str) -> CliResult<Option<f64>> {
    match value {
        Some(v) if !(v.is_finite() && v > 0.0) => {
            Err(CliError::Config(format!("{field}: must be a positive number, got {v}")))
        }
        v => Ok(v),
    }
}

impl RunConfig {
    fn load(common: &CommonArgs, ensemble: Option<&EnsembleArgs>) -> CliResult<RunConfig> {
        let loaded = load_path(&common.config).map_err(|e| CliError::Config(e.to_string()))?;
        let run = &loaded.run;
        let case = match (&common.case, &run.case) {
            (Some(c), _) => parse_case(c, "--case")?,
            (None, Some(c)) => parse_case(c, "run.case")?,
            (None, None) => CaseChoice::Auto,
        };
        let out_dir = common
            .out
            .clone()
            .or_else(|| run.out.as_ref().map(PathBuf::from))
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let paths = ensemble.and_then(|e| e.paths).unwrap_or(loaded.monte_carlo.paths);
        if paths == 0 {
            return Err(CliError::Config("monte_carlo.paths: must be at least 1".into()));
        }
        let seed = ensemble.and_then(|e| e.seed).unwrap_or(loaded.monte_carlo.seed);
        let workers = ensemble.and_then(|e| e.workers).or(run.workers).unwrap_or(0);
        let defaults = Tolerances::default();
        let tolerances = Tolerances {
            se_multiplier: positive(run.se_multiplier, "run.se_multiplier")?.unwrap_or(defaults.se_multiplier),
            residual_factor: positive(run.residual_factor, "run.residual_factor")?.unwrap_or(defaults.residual_factor),
            agreement: positive(run.agreement, "run.agreement")?.unwrap_or(defaults.agreement),
        };
        let epsilon = positive(run.epsilon, "run.epsilon")?.unwrap_or(SuiteOptions::default().eps);
        Ok(RunConfig {
            loaded,
            case,
            out_dir,
            paths,
            seed,
            workers,
            tolerances,
            epsilon,
        })
    }

    fn prepare_out_dir(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| io_err(&self.out_dir, e))
    }

    fn write_csv(&self, name: &str, f: impl FnOnce(BufWriter<File>) -> export::CsvResult) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        f(BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

struct Solved {
    follower: FollowerSolution,
    leader: LeaderSolution,
    pair: FeedbackPair,
}

fn solve(cfg: &RunConfig) -> CliResult<Solved> {
    let case = resolve_case(&cfg.loaded.model, cfg.case)?;
    let follower = solve_follower_isrde(&cfg.loaded.model, &cfg.loaded.costs)?;
    let leader = solve_leader(&follower, case)?;
    let pair = synthesize(&follower, &leader);
    Ok(Solved { follower, leader, pair })
}

fn report_notes(cfg: &RunConfig, out: &mut dyn Write) {
    let v = &cfg.loaded.validation;
    if !v.leader_convexity {
        let _ = writeln!(out, "note: Q1, R1, M1 >= 0 and R2 > 0 do not all hold; the leader's convexity is not guaranteed");
    }
    for n in &v.notes {
        let _ = writeln!(out, "note: {n}");
    }
}

pub fn cmd_solve(args: &CommonArgs, out: &mut dyn Write) -> CliResult<i32> {
    let cfg = RunConfig::load(args, None)?;
    report_notes(&cfg, out);
    let s = solve(&cfg)?;
    cfg.prepare_out_dir()?;
    let files = [
        cfg.write_csv("follower.csv", |w| export::write_follower(&s.follower, w))?,
        cfg.write_csv("leader.csv", |w| export::write_leader(&s.leader, w))?,
        cfg.write_csv("gains.csv", |w| export::write_gains(&s.pair, w))?,
    ];
    let a = &cfg.loaded.model.initial_state;
    let j1 = leader_optimal_cost(&s.leader, a);
    let j2 = equilibrium_cost_lyapunov(&s.follower, &s.leader, &s.pair, Player::Follower)?;
    let _ = writeln!(out, "case: {}", s.leader.case.label());
    let _ = writeln!(out, "leader cost a'P11(t0)a = {j1}");
    let _ = writeln!(out, "follower cost at equilibrium = {j2}");
    for f in files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let cfg = RunConfig::load(&args.common, Some(&args.ensemble))?;
    report_notes(&cfg, out);
    let s = solve(&cfg)?;
    cfg.prepare_out_dir()?;
    let model = &cfg.loaded.model;
    let sampler = ClosedLoopSampler::new(&s.follower, &s.leader, &s.pair);
    let summaries = run_ensemble(cfg.paths, cfg.seed, cfg.workers, |rng, _| {
        sampler.summarize(&sampler.sample_increments(rng))
    });
    let aborted = summaries.iter().filter(|p| p.aborted).count();
    let j1: Vec<f64> = summaries.iter().map(|p| p.j1).collect();
    let j2: Vec<f64> = summaries.iter().map(|p| p.j2).collect();
    let rows = vec![
        EstimateRow {
            quantity: "J1".into(),
            estimate: estimate(&j1, cfg.seed),
            formula: leader_optimal_cost(&s.leader, &model.initial_state),
        },
        EstimateRow {
            quantity: "J2".into(),
            estimate: estimate(&j2, cfg.seed),
            formula: equilibrium_cost_lyapunov(&s.follower, &s.leader, &s.pair, Player::Follower)?,
        },
    ];
    let mut files = vec![
        cfg.write_csv("ensemble.csv", |w| export::write_ensemble(&summaries, model.jumps.mark_count(), w))?,
        cfg.write_csv("estimates.csv", |w| export::write_estimates(&rows, w))?,
    ];
    if args.trajectories > 0 {
        let k = args.trajectories.min(cfg.paths);
        let paths: Vec<_> = (0..k as u64).map(|i| sample_closed_loop_path(&sampler, cfg.seed, i)).collect();
        files.push(cfg.write_csv("trajectories.csv", |w| export::write_trajectories(&paths, model.n, w))?);
    }
    let _ = writeln!(out, "case: {}  paths: {}  seed: {}", s.leader.case.label(), cfg.paths, cfg.seed);
    for r in &rows {
        let e = &r.estimate;
        let _ = writeln!(
            out,
            "{}: mc = {} (se {})  formula = {}  diff/se = {:.2}",
            r.quantity,
            e.mean,
            e.se,
            r.formula,
            (e.mean - r.formula) / e.se
        );
    }
    if aborted > 0 {
        let _ = writeln!(out, "warning: {aborted} paths stopped on a non-finite state");
    }
    for f in files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> CliResult<i32> {
    let mut cfg = RunConfig::load(&args.common, Some(&args.ensemble))?;
    let t = &mut cfg.tolerances;
    t.se_multiplier = positive(args.se_multiplier, "--se-multiplier")?.unwrap_or(t.se_multiplier);
    t.residual_factor = positive(args.residual_factor, "--residual-factor")?.unwrap_or(t.residual_factor);
    t.agreement = positive(args.agreement, "--agreement")?.unwrap_or(t.agreement);
    cfg.epsilon = positive(args.epsilon, "--epsilon")?.unwrap_or(cfg.epsilon);
    report_notes(&cfg, out);
    let case = resolve_case(&cfg.loaded.model, cfg.case)?;
    let opts = SuiteOptions {
        paths: cfg.paths,
        seed: cfg.seed,
        workers: cfg.workers,
        eps: cfg.epsilon,
        tol: cfg.tolerances,
        ..SuiteOptions::default()
    };
    let (model, costs) = (&cfg.loaded.model, &cfg.loaded.costs);
    let reports = run_suite(model, costs, Some(case), cfg.loaded.validation.follower_definite, &opts)?;
    cfg.prepare_out_dir()?;
    let file = cfg.write_csv("verify_report.csv", |w| export::write_verify_report(&reports, w))?;
    let _ = writeln!(out, "case: {}  paths: {}  seed: {}", case.label(), cfg.paths, cfg.seed);
    for r in &reports {
        let _ = match r.status {
            Status::Skipped => writeln!(out, "{:<8} {:<26} {}", r.status.label(), r.name, r.detail),
            _ => writeln!(
                out,
                "{:<8} {:<26} {:.3e} vs {:.3e}  {}",
                r.status.label(),
                r.name,
                r.statistic,
                r.band,
                r.detail
            ),
        };
    }
    let _ = writeln!(out, "wrote {}", file.display());
    Ok(if reports.iter().all(|r| r.passed()) {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

/// Dispatch a parsed command line; errors are printed to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Verify(a) => cmd_verify(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}
