//! Initial-configuration generators, the Monte Carlo trial runner and the
//! parameter sweeps.
//!
//! Trial `i` of an experiment is seeded with `base_seed + i` and owns its
//! stream, so results do not depend on how trials are spread over threads.

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{run_until_stable, Mode, DEFAULT_MAX_STEPS};
use crate::error::ModelError;
use crate::model::{Configuration, Coord, Heading, Lattice, ModelParams, SwitchPolicy};
use crate::rng::RngStream;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RING_MARCH_THREADS";

const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("cannot seat 2 locusts on each of {k} tracks with {m} locusts on an n={n} ring")]
    InfeasibleGuard { n: usize, k: usize, m: usize },
    #[error("two-segment start needs an even locust count, got {0}")]
    OddM(usize),
    #[error("two-segment start needs 2 <= m < n, got m={m}, n={n}")]
    TooFull { n: usize, m: usize },
    #[error("an experiment needs at least one trial")]
    NoTrials,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How each trial's starting configuration is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    /// Half of all cells, uniformly.
    Dense,
    /// A tenth of all cells, with two per track seeded first.
    Sparse,
    /// Two facing single-track blocks of `m / 2`.
    TwoSegment { m: usize },
    /// Exactly `m` locusts, uniformly.
    Random { m: usize },
    /// A fraction of all cells, uniformly.
    Fraction(f64),
    Explicit(Configuration),
}

impl InitSpec {
    pub fn label(&self) -> &'static str {
        match self {
            InitSpec::Dense => "dense",
            InitSpec::Sparse => "sparse",
            InitSpec::TwoSegment { .. } => "two_segment",
            InitSpec::Random { .. } => "random",
            InitSpec::Fraction(_) => "fraction",
            InitSpec::Explicit(_) => "explicit",
        }
    }

    /// Locust count this produces on an `n` x `k` cylinder.
    pub fn locust_count(&self, n: usize, k: usize) -> usize {
        match self {
            InitSpec::Dense => dense_count(n, k),
            InitSpec::Sparse => sparse_count(n, k),
            InitSpec::TwoSegment { m } | InitSpec::Random { m } => *m,
            InitSpec::Fraction(f) => (f * (n * k) as f64).floor() as usize,
            InitSpec::Explicit(c) => c.m(),
        }
    }

    pub fn generate(&self, n: usize, k: usize, rng: &mut RngStream) -> Result<Configuration, ExperimentError> {
        match self {
            InitSpec::Dense => gen_dense(n, k, rng),
            InitSpec::Sparse => gen_sparse(n, k, rng),
            InitSpec::TwoSegment { m } => gen_two_segment(n, *m),
            InitSpec::Random { m } => gen_random(n, k, *m, rng),
            InitSpec::Fraction(f) => {
                if !(0.0..=1.0).contains(f) {
                    return Err(ModelError::BadProbability { name: "density", value: *f }.into());
                }
                gen_random(n, k, self.locust_count(n, k), rng)
            }
            InitSpec::Explicit(c) => Ok(c.clone()),
        }
    }
}

pub fn dense_count(n: usize, k: usize) -> usize {
    n * k / 2
}

pub fn sparse_count(n: usize, k: usize) -> usize {
    (n * k / 10).max(2 * k)
}

fn with_random_headings(
    n: usize,
    k: usize,
    mut cells: Vec<usize>,
    rng: &mut RngStream,
) -> Result<Configuration, ExperimentError> {
    let lattice = Lattice::new(n, k)?;
    cells.sort_unstable();
    let locusts: Vec<(Coord, Heading)> = cells
        .into_iter()
        .map(|i| {
            let h = if rng.coin() { Heading::Clockwise } else { Heading::Counterclockwise };
            (lattice.coord(i), h)
        })
        .collect();
    Ok(Configuration::from_locusts(n, k, locusts)?)
}

/// `m` locusts on uniformly random distinct cells with fair-coin headings,
/// redrawn until every track holds at least two.
pub fn gen_random(n: usize, k: usize, m: usize, rng: &mut RngStream) -> Result<Configuration, ExperimentError> {
    let lattice = Lattice::new(n, k)?;
    if m < 2 * k || m > n * k {
        return Err(ExperimentError::InfeasibleGuard { n, k, m });
    }
    let mut pool: Vec<usize> = (0..lattice.cell_count()).collect();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let cells = rng.sample_distinct(&mut pool, m);
        let mut per_track = vec![0usize; k];
        for &c in &cells {
            per_track[c / n] += 1;
        }
        if per_track.iter().all(|&p| p >= 2) {
            return with_random_headings(n, k, cells, rng);
        }
    }
    Err(ExperimentError::InfeasibleGuard { n, k, m })
}

/// Half of the cells (rounded down) filled uniformly at random.
pub fn gen_dense(n: usize, k: usize, rng: &mut RngStream) -> Result<Configuration, ExperimentError> {
    gen_random(n, k, dense_count(n, k), rng)
}

/// A tenth of the cells, at least two per track: each track gets two random
/// cells first, the rest go uniformly over the free cells.
pub fn gen_sparse(n: usize, k: usize, rng: &mut RngStream) -> Result<Configuration, ExperimentError> {
    let lattice = Lattice::new(n, k)?;
    let m = sparse_count(n, k);
    if m > lattice.cell_count() {
        return Err(ExperimentError::InfeasibleGuard { n, k, m });
    }
    let mut cells = Vec::with_capacity(m);
    let mut row: Vec<usize> = (0..n).collect();
    for y in 0..k {
        cells.extend(rng.sample_distinct(&mut row, 2).into_iter().map(|x| y * n + x));
    }
    let mut taken = vec![false; lattice.cell_count()];
    for &c in &cells {
        taken[c] = true;
    }
    let mut free: Vec<usize> = (0..lattice.cell_count()).filter(|&c| !taken[c]).collect();
    cells.extend(rng.sample_distinct(&mut free, m - 2 * k));
    with_random_headings(n, k, cells, rng)
}

/// Single track with a clockwise block on `x = 0..m/2` and a
/// counterclockwise block on the last `m/2` cells, heads facing across the
/// `n - m` empty cells.
pub fn gen_two_segment(n: usize, m: usize) -> Result<Configuration, ExperimentError> {
    if m % 2 == 1 {
        return Err(ExperimentError::OddM(m));
    }
    if m < 2 || m >= n {
        return Err(ExperimentError::TooFull { n, m });
    }
    let half = m / 2;
    let cw = (0..half).map(|x| (Coord::new(x, 1), Heading::Clockwise));
    let ccw = (n - half..n).map(|x| (Coord::new(x, 1), Heading::Counterclockwise));
    Ok(Configuration::from_locusts(n, 1, cw.chain(ccw))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub n: usize,
    pub k: usize,
    pub init: InitSpec,
    pub params: ModelParams,
    pub mode: Mode,
    pub trials: usize,
    pub base_seed: u64,
    pub max_steps: u64,
}

impl ExperimentSpec {
    pub fn new(n: usize, k: usize, init: InitSpec, params: ModelParams, mode: Mode, trials: usize, base_seed: u64) -> Self {
        ExperimentSpec {
            n,
            k,
            init,
            params,
            mode,
            trials,
            base_seed,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialOutcome {
    pub seed: u64,
    pub t_stable: Option<u64>,
    pub conflicts: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub trials: usize,
    /// `None` when no trial finished.
    pub mean_t_stable: Option<f64>,
    pub stderr: Option<f64>,
    pub mean_conflicts: Option<f64>,
    pub stderr_conflicts: Option<f64>,
    pub timeouts: usize,
    /// Locust count per trial, when the generator could seat them.
    pub m: Option<usize>,
    /// Why no trial could start, if so.
    pub infeasible: Option<String>,
    /// Ordered by seed.
    pub per_trial: Vec<TrialOutcome>,
}

impl ExperimentResult {
    /// Half-width of the normal 95% interval around the mean.
    pub fn ci95(&self) -> Option<(f64, f64)> {
        let (mean, se) = (self.mean_t_stable?, self.stderr?);
        Some((mean - 1.96 * se, mean + 1.96 * se))
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let len = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / len;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (len - 1.0);
    Some((mean, (var / len).sqrt()))
}

/// Worker count from `RING_MARCH_THREADS`, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()))
}

fn run_trial(spec: &ExperimentSpec, seed: u64) -> Result<TrialOutcome, ExperimentError> {
    let mut rng = RngStream::new(seed);
    let start = spec.init.generate(spec.n, spec.k, &mut rng)?;
    let run = run_until_stable(start, &mut rng, &spec.params, spec.mode, spec.max_steps, false)?;
    Ok(TrialOutcome {
        seed,
        t_stable: run.t_stable,
        conflicts: run.total_conflicts,
    })
}

pub fn monte_carlo(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    monte_carlo_with_workers(spec, worker_count())
}

pub fn monte_carlo_with_workers(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentResult, ExperimentError> {
    if spec.trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    spec.params.check()?;
    if let InitSpec::Explicit(c) = &spec.init {
        crate::model::validate(c, &spec.params)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<Result<TrialOutcome, ExperimentError>> = pool.install(|| {
        (0..spec.trials as u64)
            .into_par_iter()
            .map(|i| run_trial(spec, spec.base_seed.wrapping_add(i)))
            .collect()
    });

    let mut per_trial = Vec::with_capacity(spec.trials);
    for outcome in outcomes {
        match outcome {
            Ok(t) => per_trial.push(t),
            Err(e @ (ExperimentError::InfeasibleGuard { .. }
            | ExperimentError::OddM(_)
            | ExperimentError::TooFull { .. }
            | ExperimentError::Model(ModelError::BadDimensions { .. }))) => {
                return Ok(ExperimentResult {
                    trials: spec.trials,
                    mean_t_stable: None,
                    stderr: None,
                    mean_conflicts: None,
                    stderr_conflicts: None,
                    timeouts: spec.trials,
                    m: None,
                    infeasible: Some(e.to_string()),
                    per_trial: Vec::new(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let times: Vec<f64> = per_trial.iter().filter_map(|t| t.t_stable).map(|t| t as f64).collect();
    let conflicts: Vec<f64> = per_trial
        .iter()
        .filter(|t| t.t_stable.is_some())
        .map(|t| t.conflicts as f64)
        .collect();
    let time_stats = mean_stderr(&times);
    let conflict_stats = mean_stderr(&conflicts);
    Ok(ExperimentResult {
        trials: spec.trials,
        mean_t_stable: time_stats.map(|s| s.0),
        stderr: time_stats.map(|s| s.1),
        mean_conflicts: conflict_stats.map(|s| s.0),
        stderr_conflicts: conflict_stats.map(|s| s.1),
        timeouts: spec.trials - times.len(),
        m: Some(spec.init.locust_count(spec.n, spec.k)),
        infeasible: None,
        per_trial,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepColumn {
    /// `n = 30`, `k = 1..=30`, local consensus.
    A,
    /// `k = 5`, `n = 1..=60`, local consensus.
    B,
    /// `n = 30`, `k = 5`, erratic probability `p` swept, global consensus.
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Density {
    Dense,
    Sparse,
}

impl Density {
    pub fn init(self) -> InitSpec {
        match self {
            Density::Dense => InitSpec::Dense,
            Density::Sparse => InitSpec::Sparse,
        }
    }
}

pub const COLUMN_C_P_GRID: [f64; 7] = [0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0];

/// One line of sweep output.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep: String,
    pub point: usize,
    pub n: usize,
    pub k: usize,
    pub m: Option<usize>,
    pub density: String,
    pub policy: String,
    pub q: Option<f64>,
    pub p: f64,
    pub r: f64,
    pub mode: Mode,
    pub trials: usize,
    pub seed: u64,
    pub mean_t_stable: Option<f64>,
    pub stderr: Option<f64>,
    pub timeouts: usize,
}

impl SweepRow {
    pub fn from_result(sweep: &str, point: usize, spec: &ExperimentSpec, result: &ExperimentResult) -> Self {
        let (policy, q) = policy_label(spec.params.switch_policy);
        SweepRow {
            sweep: sweep.to_string(),
            point,
            n: spec.n,
            k: spec.k,
            m: result.m,
            density: spec.init.label().to_string(),
            policy: policy.to_string(),
            q,
            p: spec.params.p,
            r: spec.params.r,
            mode: spec.mode,
            trials: spec.trials,
            seed: spec.base_seed,
            mean_t_stable: result.mean_t_stable,
            stderr: result.stderr,
            timeouts: result.timeouts,
        }
    }
}

pub fn policy_label(policy: SwitchPolicy) -> (&'static str, Option<f64>) {
    match policy {
        SwitchPolicy::Never => ("never", None),
        SwitchPolicy::Eager => ("eager", None),
        SwitchPolicy::Probabilistic(q) => ("probabilistic", Some(q)),
    }
}

/// Experiment specs for every point of one panel of the simulation figure.
pub fn column_specs(
    column: SweepColumn,
    density: Density,
    policy: SwitchPolicy,
    trials: usize,
    seed: u64,
    p_grid: &[f64],
) -> Vec<ExperimentSpec> {
    let params = ModelParams::with_policy(policy);
    let spec = |n, k, params, mode| ExperimentSpec::new(n, k, density.init(), params, mode, trials, seed);
    match column {
        SweepColumn::A => (1..=30).map(|k| spec(30, k, params, Mode::Local)).collect(),
        SweepColumn::B => (1..=60).map(|n| spec(n, 5, params, Mode::Local)).collect(),
        SweepColumn::C => p_grid
            .iter()
            .map(|&p| spec(30, 5, ModelParams { p, ..params }, Mode::Global))
            .collect(),
    }
}

pub fn sweep_column(
    column: SweepColumn,
    density: Density,
    policy: SwitchPolicy,
    trials: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<SweepRow>, ExperimentError> {
    let label = match column {
        SweepColumn::A => "a",
        SweepColumn::B => "b",
        SweepColumn::C => "c",
    };
    column_specs(column, density, policy, trials, seed, &COLUMN_C_P_GRID)
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let result = monte_carlo_with_workers(spec, workers)?;
            Ok(SweepRow::from_result(label, i, spec, &result))
        })
        .collect()
}

/// Single-track upper bound on expected stabilisation time.
pub fn single_track_bound(n: usize, m: usize) -> f64 {
    (m * m) as f64 + 2.0 * (n as f64 - m as f64)
}

/// Multi-track bound `3/2 mn + pi^2/24 m^2`.
pub fn mn_bound(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.5 * m * n + std::f64::consts::PI.powi(2) / 24.0 * m * m
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub n: usize,
    pub m: usize,
    pub bound: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `bound - (mean + 3 stderr)`; negative means violated.
    pub margin: f64,
    pub timeouts: usize,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.margin >= 0.0 && self.timeouts == 0
    }
}

/// Checks `mean + 3 stderr <= m^2 + 2(n - m)` for each single-track start.
pub fn check_single_track_bound(
    starts: &[Configuration],
    trials: usize,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<BoundCheck>, ExperimentError> {
    starts
        .iter()
        .map(|start| {
            if start.k() != 1 {
                return Err(ModelError::BadDimensions { n: start.n(), k: start.k() }.into());
            }
            let spec = ExperimentSpec::new(
                start.n(),
                1,
                InitSpec::Explicit(start.clone()),
                ModelParams::default(),
                Mode::Local,
                trials,
                base_seed,
            );
            let result = monte_carlo_with_workers(&spec, workers)?;
            let bound = single_track_bound(start.n(), start.m());
            let mean = result.mean_t_stable.unwrap_or(f64::INFINITY);
            let stderr = result.stderr.unwrap_or(0.0);
            Ok(BoundCheck {
                n: start.n(),
                m: start.m(),
                bound,
                mean,
                stderr,
                margin: bound - (mean + 3.0 * stderr),
                timeouts: result.timeouts,
            })
        })
        .collect()
}

/// Random single-track starts with `3 <= n <= max_n` and `2 <= m < n`.
pub fn random_single_track_starts(count: usize, max_n: usize, rng: &mut RngStream) -> Vec<Configuration> {
    (0..count)
        .map(|_| {
            let n = 3 + rng.index(max_n - 2);
            let m = 2 + rng.index(n - 2);
            gen_random(n, 1, m, rng).expect("2 <= m < n always seats")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::render_grid;
    use crate::model::validate;

    #[test]
    fn dense_counts() {
        let mut rng = RngStream::new(0);
        assert_eq!(gen_dense(30, 5, &mut rng).unwrap().m(), 75);
        assert_eq!(gen_dense(4, 1, &mut rng).unwrap().m(), 2);
        assert!(matches!(gen_dense(3, 5, &mut rng), Err(ExperimentError::InfeasibleGuard { .. })));
    }

    #[test]
    fn sparse_counts() {
        let mut rng = RngStream::new(0);
        assert_eq!(gen_sparse(30, 30, &mut rng).unwrap().m(), 90);
        assert_eq!(gen_sparse(30, 5, &mut rng).unwrap().m(), 15);
        assert_eq!(gen_sparse(30, 1, &mut rng).unwrap().m(), 3);
        assert_eq!(gen_sparse(4, 5, &mut rng).unwrap().m(), 10);
    }

    #[test]
    fn generated_starts_pass_the_guard() {
        let mut rng = RngStream::new(17);
        for _ in 0..200 {
            let n = 3 + rng.index(20);
            let k = 1 + rng.index(6);
            for c in [gen_sparse(n, k, &mut rng), gen_dense(n, k, &mut rng)].into_iter().flatten() {
                validate(&c, &ModelParams::default()).unwrap();
            }
        }
    }

    #[test]
    fn heading_coin_is_fair() {
        let mut rng = RngStream::new(4);
        let (mut cw, mut total) = (0usize, 0usize);
        for _ in 0..10_000 {
            let c = gen_dense(4, 1, &mut rng).unwrap();
            cw += c.headings().iter().filter(|&&h| h == Heading::Clockwise).count();
            total += c.m();
        }
        let frac = cw as f64 / total as f64;
        let se = (0.25 / total as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "fraction {frac}");
    }

    #[test]
    fn two_segment_layout() {
        let c = gen_two_segment(20, 10).unwrap();
        assert_eq!(render_grid(&c), "t=0\n>>>>>..........<<<<<\n");
        let c = gen_two_segment(4, 2).unwrap();
        assert_eq!(render_grid(&c), "t=0\n>..<\n");
        assert_eq!(gen_two_segment(20, 7), Err(ExperimentError::OddM(7)));
        assert_eq!(gen_two_segment(10, 10), Err(ExperimentError::TooFull { n: 10, m: 10 }));
    }

    #[test]
    fn two_segment_heads_face_an_empty_arc() {
        let (n, m) = (20, 10);
        let c = gen_two_segment(n, m).unwrap();
        let cw_head = Coord::new(m / 2 - 1, 1);
        let ccw_head = Coord::new(n - m / 2, 1);
        assert_eq!(c.dist_c(cw_head, ccw_head).unwrap() - 1, n - m);
    }

    #[test]
    fn deterministic_start_gives_zero_spread() {
        let spec = ExperimentSpec::new(
            4,
            1,
            InitSpec::Explicit(crate::io::parse_grid("><..").unwrap()),
            ModelParams::default(),
            Mode::Local,
            50,
            3,
        );
        let r = monte_carlo_with_workers(&spec, 2).unwrap();
        assert_eq!(r.mean_t_stable, Some(1.0));
        assert_eq!(r.stderr, Some(0.0));
        assert_eq!(r.timeouts, 0);
    }

    #[test]
    fn infeasible_points_are_flagged() {
        let spec = ExperimentSpec::new(2, 5, InitSpec::Dense, ModelParams::default(), Mode::Local, 10, 0);
        let r = monte_carlo_with_workers(&spec, 1).unwrap();
        assert_eq!(r.timeouts, 10);
        assert!(r.mean_t_stable.is_none());
        assert!(r.infeasible.is_some());
    }

    #[test]
    fn results_do_not_depend_on_workers() {
        let spec = ExperimentSpec::new(12, 3, InitSpec::Sparse, ModelParams::default(), Mode::Local, 40, 9);
        assert_eq!(
            monte_carlo_with_workers(&spec, 1).unwrap(),
            monte_carlo_with_workers(&spec, 4).unwrap()
        );
    }

    #[test]
    fn sweep_shapes() {
        let a = column_specs(SweepColumn::A, Density::Sparse, SwitchPolicy::Eager, 10, 1, &COLUMN_C_P_GRID);
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|s| s.n == 30 && s.mode == Mode::Local));
        let b = column_specs(SweepColumn::B, Density::Dense, SwitchPolicy::Never, 10, 1, &COLUMN_C_P_GRID);
        assert_eq!(b.len(), 60);
        let c = column_specs(SweepColumn::C, Density::Dense, SwitchPolicy::Eager, 10, 1, &COLUMN_C_P_GRID);
        assert!(c.iter().all(|s| s.mode == Mode::Global && s.params.r == 0.0 && s.n == 30 && s.k == 5));
    }

    #[test]
    fn bounds() {
        assert_eq!(single_track_bound(20, 10), 120.0);
        assert_eq!(single_track_bound(4, 2), 8.0);
        assert!((mn_bound(10, 4) - (60.0 + std::f64::consts::PI.powi(2) * 16.0 / 24.0)).abs() < 1e-12);
    }

    #[test]
    fn adjacent_pair_sits_under_the_bound() {
        let start = crate::io::parse_grid("><..").unwrap();
        let checks = check_single_track_bound(&[start], 20, 0, 1).unwrap();
        assert_eq!(checks[0].mean, 1.0);
        assert_eq!(checks[0].bound, 8.0);
        assert!(checks[0].holds());
    }
}
