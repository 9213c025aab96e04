//! `ring-march`: single runs, experiments, figure sweeps, the exact oracle and
//! the property suites from the command line.
//!
//! Exit status is 0 on success, 1 on invalid input and 2 when `verify`
//! finds a failing property.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ring_march::engine::{run_observed, run_until_stable, DEFAULT_MAX_STEPS};
use ring_march::experiments::{
    check_single_track_bound, monte_carlo_with_workers, random_single_track_starts, sweep_column, worker_count, Density,
    ExperimentSpec, SweepColumn, InitSpec, SweepRow,
};
use ring_march::io::{render_trace, write_csv_to};
use ring_march::oracle::exact_expected_stabilization;
use ring_march::verify::{check_mn_bound, oracle_consistency, structural_suite, Property};
use ring_march::{parse_grid, Configuration, Mode, ModelParams, RngStream, RunConfigFile, SwitchPolicy};

#[derive(Parser)]
#[command(name = "ring-march", version, about = "Locust marching on a multi-track ring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trial and print its stabilisation time.
    Run(RunArgs),
    /// Run the Monte Carlo experiment described by a JSON config file.
    Experiment {
        config: PathBuf,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate one panel of the stabilisation-time figure as CSV.
    Sweep(SweepArgs),
    /// Exact expected stabilisation time of a small single-track start.
    Oracle {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        /// One track of `.`, `>` and `<`.
        #[arg(long)]
        grid: String,
    },
    /// Run the property suites; exits 2 if any fails.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Dense,
    Sparse,
    TwoSegment,
    Random,
    Explicit,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Never,
    Eager,
    Probabilistic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeKind {
    Local,
    Global,
}

impl From<ModeKind> for Mode {
    fn from(m: ModeKind) -> Mode {
        match m {
            ModeKind::Local => Mode::Local,
            ModeKind::Global => Mode::Global,
        }
    }
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "eager")]
    policy: PolicyKind,
    /// Switch probability for the probabilistic policy.
    #[arg(long)]
    q: Option<f64>,
}

impl PolicyArgs {
    fn resolve(&self) -> Result<SwitchPolicy, String> {
        match (self.policy, self.q) {
            (PolicyKind::Never, None) => Ok(SwitchPolicy::Never),
            (PolicyKind::Eager, None) => Ok(SwitchPolicy::Eager),
            (PolicyKind::Probabilistic, Some(q)) => Ok(SwitchPolicy::Probabilistic(q)),
            (PolicyKind::Probabilistic, None) => Err("--policy probabilistic needs --q".into()),
            (_, Some(_)) => Err("--q only applies to --policy probabilistic".into()),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "sparse")]
    init: InitKind,
    /// Explicit start: tracks from top to bottom separated by `/` or
    /// newlines, or `@path` to read a grid file.
    #[arg(long)]
    grid: Option<String>,
    /// Locust count for `two-segment` and `random` starts.
    #[arg(long)]
    m: Option<usize>,
    /// Occupied fraction for `random` starts.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "local")]
    mode: ModeKind,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Erratic rest probability.
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    /// Erratic vertical move probability.
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    /// Allow tracks to drop below two locusts.
    #[arg(long)]
    no_guard: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: u64,
    /// Write every configuration of the run to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Column {
    A,
    B,
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityKind {
    Dense,
    Sparse,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(value_enum)]
    column: Column,
    #[arg(long, value_enum, default_value = "sparse")]
    density: DensityKind,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Audited random runs in the structural suite.
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_n: usize,
    #[arg(long, default_value_t = 6)]
    max_k: usize,
    /// Trials per state for the oracle consistency check.
    #[arg(long, default_value_t = 20_000)]
    oracle_trials: usize,
    /// Trials per start for the stabilisation-bound checks.
    #[arg(long, default_value_t = 1000)]
    bound_trials: usize,
    /// Report but do not fail on these properties.
    #[arg(long, value_name = "PROPERTY")]
    allow: Vec<String>,
}

enum Failure {
    Invalid(String),
    Suite,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Experiment { config, out } => experiment(&config, out.as_deref()),
        Command::Sweep(args) => sweep(args),
        Command::Oracle { n, m, grid } => oracle(n, m, &grid),
        Command::Verify(args) => verify(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Suite) => ExitCode::from(2),
    }
}

fn read_grid(arg: &str) -> Result<Configuration, Failure> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?,
        None => arg.replace('/', "\n"),
    };
    Ok(parse_grid(&text)?)
}

fn start_for(args: &RunArgs, rng: &mut RngStream) -> Result<Configuration, Failure> {
    let needs = |flag: &str| Failure::Invalid(format!("--{flag} is required for this --init"));
    if let InitKind::Explicit = args.init {
        let config = read_grid(args.grid.as_deref().ok_or_else(|| needs("grid"))?)?;
        for (flag, given, actual) in [("n", args.n, config.n()), ("k", args.k, config.k())] {
            if given.is_some_and(|g| g != actual) {
                return Err(Failure::Invalid(format!("--{flag} {} does not match the grid ({actual})", given.unwrap())));
            }
        }
        return Ok(config);
    }
    if args.grid.is_some() {
        return Err(Failure::Invalid("--grid needs --init explicit".into()));
    }
    let n = args.n.ok_or_else(|| needs("n"))?;
    let k = args.k.ok_or_else(|| needs("k"))?;
    let init = match args.init {
        InitKind::Dense => InitSpec::Dense,
        InitKind::Sparse => InitSpec::Sparse,
        InitKind::TwoSegment => InitSpec::TwoSegment {
            m: args.m.ok_or_else(|| needs("m"))?,
        },
        InitKind::Random => match (args.m, args.density) {
            (Some(m), None) => InitSpec::Random { m },
            (None, Some(d)) => InitSpec::Fraction(d),
            _ => return Err(Failure::Invalid("--init random needs exactly one of --m, --density".into())),
        },
        InitKind::Explicit => unreachable!(),
    };
    Ok(init.generate(n, k, rng)?)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let params = ModelParams {
        r: args.r,
        p: args.p,
        switch_policy: args.policy.resolve()?,
        guard_min_two_per_track: !args.no_guard,
    };
    params.check()?;
    let mut rng = RngStream::new(args.seed);
    let start = start_for(&args, &mut rng)?;
    ring_march::model::validate(&start, &params)?;
    let mode = args.mode.into();
    let result = match &args.trace {
        None => run_until_stable(start, &mut rng, &params, mode, args.max_steps, false)?,
        Some(path) => {
            let mut frames = vec![start.clone()];
            let result = run_observed(start, &mut rng, &params, mode, args.max_steps, |_, _, after| {
                frames.push(after.clone())
            })?;
            fs::write(path, render_trace(&frames)).map_err(|e| format!("{}: {e}", path.display()))?;
            result
        }
    };
    match result.t_stable {
        Some(t) => println!("t_stable={t}"),
        None => println!("t_stable=timeout"),
    }
    println!("conflicts={}", result.total_conflicts);
    Ok(())
}

fn emit_csv(rows: &[SweepRow], out: Option<&Path>) -> Result<(), Failure> {
    let mut buf = Vec::new();
    write_csv_to(rows, &mut buf)?;
    match out {
        Some(path) => fs::write(path, buf).map_err(|e| format!("{}: {e}", path.display()))?,
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn experiment(path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let spec: ExperimentSpec = RunConfigFile::load(path)?.to_spec()?;
    let result = monte_carlo_with_workers(&spec, worker_count())?;
    emit_csv(&[SweepRow::from_result("experiment", 0, &spec, &result)], out)
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(Failure::Invalid("--trials must be at least 1".into()));
    }
    let policy = args.policy.resolve()?;
    ModelParams::with_policy(policy).check()?;
    let column = match args.column {
        Column::A => SweepColumn::A,
        Column::B => SweepColumn::B,
        Column::C => SweepColumn::C,
    };
    let density = match args.density {
        DensityKind::Dense => Density::Dense,
        DensityKind::Sparse => Density::Sparse,
    };
    let rows = sweep_column(column, density, policy, args.trials, args.seed, worker_count())?;
    emit_csv(&rows, args.out.as_deref())
}

fn oracle(n: usize, m: usize, grid: &str) -> Result<(), Failure> {
    let start = read_grid(grid)?;
    let result = exact_expected_stabilization(n, m, &start)?;
    println!("expected_t_stable={:?}", result.expected_t_stable);
    println!("states={}", result.state_count);
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let mut allowed = Vec::new();
    for name in &args.allow {
        let p = Property::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| format!("unknown property {name:?}"))?;
        allowed.push(p);
    }
    if args.max_n < 4 || args.max_k < 1 {
        return Err(Failure::Invalid("--max-n must be at least 4 and --max-k at least 1".into()));
    }
    let workers = worker_count();
    let mut all_ok = true;

    let suite = structural_suite(args.runs, args.seed, args.max_n, args.max_k, DEFAULT_MAX_STEPS, workers);
    println!("structural suite: {} runs, {} steps, {} timeouts", suite.runs, suite.steps, suite.timeouts);
    all_ok &= suite.timeouts == 0;
    for p in Property::ALL {
        let bad = suite.count(p);
        let checks = suite.exercised.get(&p).copied().unwrap_or(0);
        let note = if allowed.contains(&p) { " (allowed)" } else { "" };
        println!("  {} {}: {bad} violations in {checks} checks{note}", verdict(bad == 0), p.name());
        all_ok &= bad == 0 || allowed.contains(&p);
    }
    if let Some((case, v)) = suite.violations.iter().find(|(_, v)| !allowed.contains(&v.property)) {
        println!("  first violation: {case:?} {v}");
    }

    for (n, m) in [(4, 2), (5, 3)] {
        let report = oracle_consistency(n, m, args.oracle_trials, args.seed, 0.001, workers)?;
        let ok = report.passed();
        println!("{} oracle consistency ({n}, {m}): {} transient states", verdict(ok), report.states.len());
        all_ok &= ok;
    }

    let mut rng = RngStream::new(args.seed);
    let starts = random_single_track_starts(50, 20, &mut rng);
    let single = check_single_track_bound(&starts, args.bound_trials, args.seed, workers)?;
    let ok = single.iter().all(|c| c.holds());
    println!("{} single-track bound: {} starts", verdict(ok), single.len());
    all_ok &= ok;

    let multi = check_mn_bound(20, args.bound_trials, args.seed, args.max_n, args.max_k, workers)?;
    let ok = multi.iter().all(|c| c.holds());
    println!("{} multi-track bound: {} starts", verdict(ok), multi.len());
    all_ok &= ok;

    if all_ok {
        Ok(())
    } else {
        Err(Failure::Suite)
    }
}
