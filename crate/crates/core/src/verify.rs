//! Runtime-checkable properties of the dynamics and the suites that exercise
//! them.
//!
//! [`Auditor`] inspects every step of a run. Structural checks (occupancy,
//! heading changes, conflict multiplicity, move legality) apply to every
//! parameter setting; the segment, deadlock and potential checks are only
//! claimed for runs without erratic behaviour (`r = p = 0`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::analysis::{
    compute_potentials, detect_deadlocks, extract_segments, is_globally_stable, is_track_stable,
    maximal_compact_partition, segment_count, Potentials,
};
use crate::engine::{replay_horizontal, run_observed, step, Mode, RunResult, StepReport};
use crate::error::ModelError;
use crate::experiments::{
    gen_dense, gen_random, gen_sparse, mn_bound, monte_carlo_with_workers, ExperimentError,
    ExperimentSpec, InitSpec,
};
use crate::io::parse_grid;
use crate::model::{validate, Configuration, Coord, Heading, LocustId, ModelParams, SwitchPolicy};
use crate::oracle::{self, OracleError, StateSpace};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Property {
    Occupancy,
    HeadingChanges,
    ConflictMultiplicity,
    MoveLegality,
    StableTracks,
    SegmentCount,
    DeadlockPersistence,
    TimeToDeadlock,
    FMonotone,
    LBounded,
    LStrictDecrease,
}

impl Property {
    pub const ALL: [Property; 11] = [
        Property::Occupancy,
        Property::HeadingChanges,
        Property::ConflictMultiplicity,
        Property::MoveLegality,
        Property::StableTracks,
        Property::SegmentCount,
        Property::DeadlockPersistence,
        Property::TimeToDeadlock,
        Property::FMonotone,
        Property::LBounded,
        Property::LStrictDecrease,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Occupancy => "occupancy",
            Property::HeadingChanges => "heading-changes",
            Property::ConflictMultiplicity => "conflict-multiplicity",
            Property::MoveLegality => "move-legality",
            Property::StableTracks => "stable-tracks",
            Property::SegmentCount => "segment-count",
            Property::DeadlockPersistence => "deadlock-persistence",
            Property::TimeToDeadlock => "time-to-deadlock",
            Property::FMonotone => "f-monotone",
            Property::LBounded => "l-bounded",
            Property::LStrictDecrease => "l-strict-decrease",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub time: u64,
    pub property: Property,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} {}: {}", self.time, self.property.name(), self.detail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Watch {
    Idle,
    Waiting { deadline: u64, d: usize },
    Done,
}

/// Per-step property checker. Feed it every `(before, report, after)`
/// triple of a run in order.
#[derive(Clone, Debug)]
pub struct Auditor {
    params: ModelParams,
    watches: Vec<Watch>,
    /// Steps during which each property was actually exercised.
    pub exercised: BTreeMap<Property, u64>,
}

fn two_segment_tails(config: &Configuration, track: usize) -> Option<(LocustId, LocustId)> {
    let segs = extract_segments(config, track).ok()?;
    if segs.len() != 2 {
        return None;
    }
    let p = segs.iter().find(|s| s.heading == Heading::Clockwise)?;
    let q = segs.iter().find(|s| s.heading == Heading::Counterclockwise)?;
    Some((p.tail(), q.tail()))
}

impl Auditor {
    pub fn new(initial: &Configuration, params: &ModelParams) -> Self {
        let mut auditor = Auditor {
            params: *params,
            watches: vec![Watch::Idle; initial.k() + 1],
            exercised: BTreeMap::new(),
        };
        if auditor.two_segment_laws_apply() {
            let mut sink = Vec::new();
            auditor.update_watches(initial, &mut sink);
        }
        auditor
    }

    fn two_segment_laws_apply(&self) -> bool {
        self.params.p == 0.0 && self.params.r == 0.0
    }

    fn note(&mut self, p: Property) {
        *self.exercised.entry(p).or_default() += 1;
    }

    pub fn check_step(&mut self, before: &Configuration, report: &StepReport, after: &Configuration) -> Vec<Violation> {
        let mut out = Vec::new();
        let t = report.time;
        let mut flag = |property: Property, detail: String| out.push(Violation { time: t, property, detail });

        if let Err(e) = validate(after, &self.params) {
            flag(Property::Occupancy, e.to_string());
        }
        self.note(Property::Occupancy);

        let mut seen = BTreeSet::new();
        for c in &report.conflicts {
            for id in [c.left, c.right] {
                if !seen.insert(id) {
                    flag(Property::ConflictMultiplicity, format!("{id} in two conflicts"));
                }
            }
        }
        self.note(Property::ConflictMultiplicity);

        let changed: BTreeSet<LocustId> = before.ids().filter(|&id| before.heading(id) != after.heading(id)).collect();
        let losers: BTreeSet<LocustId> = report.conflicts.iter().filter_map(|c| c.loser()).collect();
        if changed != losers {
            flag(
                Property::HeadingChanges,
                format!("changed {changed:?} but conflict losers {losers:?}"),
            );
        }
        self.note(Property::HeadingChanges);

        for detail in self.check_moves(before, report, after) {
            flag(Property::MoveLegality, detail);
        }
        self.note(Property::MoveLegality);

        if self.two_segment_laws_apply() {
            self.check_two_segment_laws(before, report, after, &mut out);
        }
        out
    }

    /// Horizontal moves go one cell forward into a cell empty at step start;
    /// vertical moves satisfy the switching conditions on the grid they were
    /// applied to.
    fn check_moves(&self, before: &Configuration, report: &StepReport, after: &Configuration) -> Vec<String> {
        let mut bad = Vec::new();
        let lattice = before.lattice();
        for mv in &report.horizontal_moves {
            let h = before.heading(mv.id);
            if before.position(mv.id) != mv.from
                || lattice.shift(mv.from, h.sign()) != mv.to
                || before.at(mv.to).is_some()
            {
                bad.push(format!("horizontal move {mv:?}"));
            }
            if report.conflicts.iter().any(|c| c.left == mv.id || c.right == mv.id) {
                bad.push(format!("{} moved while in a conflict", mv.id));
            }
        }
        let mut grid = before.clone();
        if let Err(e) = replay_horizontal(&mut grid, report) {
            bad.push(e.to_string());
            return bad;
        }
        let mut moved = BTreeSet::new();
        for mv in &report.vertical_moves {
            if !moved.insert(mv.id) {
                bad.push(format!("{} switched twice", mv.id));
            }
            let from = grid.position(mv.id);
            let adjacent = mv.to.x == from.x && mv.to.y.abs_diff(from.y) == 1;
            if from != mv.from || !adjacent || grid.at(mv.to).is_some() {
                bad.push(format!("vertical move {mv:?} from {from}"));
                continue;
            }
            if self.params.guard_min_two_per_track && grid.track_population(from.y) <= 2 {
                bad.push(format!("{} left track {} holding two", mv.id, from.y));
            }
            if !mv.erratic {
                if let Some(reason) = switch_refusal(before, &grid, mv.id, mv.to, self.params.switch_policy) {
                    bad.push(format!("{} switched to {}: {reason}", mv.id, mv.to));
                }
            }
            grid.relocate(mv.id, mv.to);
        }
        if self.params.p == 0.0 && report.vertical_moves.iter().any(|m| m.erratic) {
            bad.push("erratic move with p = 0".into());
        }
        grid.set_time(after.time());
        if grid.positions() != after.positions() || grid.headings() != after.headings() {
            bad.push("report does not reproduce the next configuration".into());
        }
        bad
    }

    fn check_two_segment_laws(&mut self, before: &Configuration, report: &StepReport, after: &Configuration, out: &mut Vec<Violation>) {
        let t = report.time;
        for y in 1..=before.k() {
            if is_track_stable(before, y) {
                self.note(Property::StableTracks);
                if !is_track_stable(after, y) {
                    out.push(Violation {
                        time: t,
                        property: Property::StableTracks,
                        detail: format!("track {y} lost stability"),
                    });
                }
            }
            let (s0, s1) = (segment_count(before, y), segment_count(after, y));
            if s0 > 0 {
                self.note(Property::SegmentCount);
                if s1 > s0 {
                    out.push(Violation {
                        time: t,
                        property: Property::SegmentCount,
                        detail: format!("track {y} went from {s0} to {s1} segments"),
                    });
                }
            }
            self.check_deadlocks(before, after, y, t, out);
            self.check_potentials(before, after, y, t, out);
        }
        self.update_watches(after, out);
    }

    fn check_deadlocks(&mut self, before: &Configuration, after: &Configuration, y: usize, t: u64, out: &mut Vec<Violation>) {
        for (x, w) in detect_deadlocks(before, y) {
            self.note(Property::DeadlockPersistence);
            let union: Vec<LocustId> = x.members.iter().chain(&w.members).copied().collect();
            if union.iter().any(|&id| after.position(id).y != y) {
                out.push(Violation {
                    time: t,
                    property: Property::DeadlockPersistence,
                    detail: format!("a deadlocked locust left track {y}"),
                });
                continue;
            }
            let cw: Vec<LocustId> = union.iter().copied().filter(|&id| after.heading(id) == Heading::Clockwise).collect();
            let ccw: Vec<LocustId> = union.iter().copied().filter(|&id| after.heading(id) == Heading::Counterclockwise).collect();
            if cw.is_empty() || ccw.is_empty() {
                continue;
            }
            let sets = maximal_compact_partition(after, y).unwrap_or_default();
            let holder = |ids: &[LocustId]| {
                sets.iter()
                    .find(|s| s.contains(ids[0]))
                    .filter(|s| ids.iter().all(|&id| s.contains(id)))
            };
            let ok = match (holder(&cw), holder(&ccw)) {
                (Some(a), Some(b)) => crate::analysis::in_deadlock(after, a, b),
                _ => false,
            };
            if !ok {
                out.push(Violation {
                    time: t,
                    property: Property::DeadlockPersistence,
                    detail: format!("deadlock on track {y} between {:?} and {:?} did not persist", x.members, w.members),
                });
            }
        }
    }

    fn check_potentials(&mut self, before: &Configuration, after: &Configuration, y: usize, t: u64, out: &mut Vec<Violation>) {
        let Some((p, q)) = two_segment_tails(before, y) else { return };
        if two_segment_tails(after, y) != Some((p, q)) {
            return;
        }
        let (Ok(a), Ok(b)) = (compute_potentials(before, y, p, q), compute_potentials(after, y, p, q)) else {
            return;
        };
        let departures = before.track(y).into_iter().filter(|&id| after.position(id).y != y).count();
        self.note(Property::FMonotone);
        let fail_f = b.f > a.f || (departures > 0 && b.f >= a.f);
        if fail_f {
            out.push(Violation {
                time: t,
                property: Property::FMonotone,
                detail: format!("track {y}: F {} -> {} with {departures} departures", a.f, b.f),
            });
        }
        let mut flag = |property: Property| {
            out.push(Violation {
                time: t,
                property,
                detail: format!("track {y}: L {} -> {} with {departures} departures", describe(&a), describe(&b)),
            })
        };
        match departures {
            0 => {
                self.note(Property::LBounded);
                if b.l > a.l {
                    flag(Property::LBounded);
                }
                if a.l > 1 {
                    self.note(Property::LStrictDecrease);
                    if b.l >= a.l {
                        flag(Property::LStrictDecrease);
                    }
                }
            }
            1 => {
                self.note(Property::LBounded);
                if b.l > a.l + 2 {
                    flag(Property::LBounded);
                }
            }
            _ => {}
        }
    }

    /// Time-to-deadlock: once a track holds exactly two segments with tails
    /// `d` apart, within `3d` steps it must be stable or deadlocked.
    fn update_watches(&mut self, config: &Configuration, out: &mut Vec<Violation>) {
        let t = config.time();
        for y in 1..=config.k() {
            let settled = || is_track_stable(config, y) || segments_deadlocked(config, y);
            match self.watches[y] {
                Watch::Idle => {
                    if let Some((p, q)) = two_segment_tails(config, y) {
                        self.watches[y] = if settled() {
                            Watch::Done
                        } else {
                            let d = config.dist_c(config.position(p), config.position(q)).unwrap_or(0);
                            Watch::Waiting { deadline: t + 3 * d as u64, d }
                        };
                    }
                }
                Watch::Waiting { deadline, d } => {
                    if settled() {
                        self.note(Property::TimeToDeadlock);
                        self.watches[y] = Watch::Done;
                    } else if t >= deadline {
                        self.note(Property::TimeToDeadlock);
                        out.push(Violation {
                            time: t,
                            property: Property::TimeToDeadlock,
                            detail: format!("track {y} not deadlocked {} steps after two segments {d} apart", 3 * d),
                        });
                        self.watches[y] = Watch::Done;
                    }
                }
                Watch::Done => {}
            }
        }
    }
}

/// The track is exactly two compact sets whose heads touch.
pub fn segments_deadlocked(config: &Configuration, track: usize) -> bool {
    match maximal_compact_partition(config, track).as_deref() {
        Ok([a, b]) => {
            crate::analysis::in_deadlock(config, a, b) || crate::analysis::in_deadlock(config, b, a)
        }
        _ => false,
    }
}

fn describe(p: &Potentials) -> String {
    format!("{} ({}+{}+{})", p.l, p.l1, p.l2, p.l3)
}

/// Why a non-erratic switch of `id` to `to` was not allowed, checked
/// directly against the switching conditions.
fn switch_refusal(begin: &Configuration, grid: &Configuration, id: LocustId, to: Coord, policy: SwitchPolicy) -> Option<&'static str> {
    if policy == SwitchPolicy::Never {
        return Some("policy never switches");
    }
    let heading = begin.heading(id);
    let pos = begin.position(id);
    let front = begin.front_of(id).ok()?;
    let gap = begin.lattice().dist_along(pos, begin.position(front), heading).ok()?;
    if front == id || begin.heading(front) == heading || gap <= 1 {
        return Some("no oncoming front at the start of the step");
    }
    for dir in [Heading::Clockwise, Heading::Counterclockwise] {
        if grid.first_along(to, dir).is_some_and(|b| grid.heading(b) != heading) {
            return Some("would not sit between locusts of its own heading");
        }
    }
    let lattice = grid.lattice();
    if grid.heading_at(lattice.shift(to, -1)) == Some(Heading::Clockwise)
        || grid.heading_at(lattice.shift(to, 1)) == Some(Heading::Counterclockwise)
    {
        return Some("target cell is about to be entered");
    }
    None
}

#[derive(Clone, Debug)]
pub struct AuditedRun {
    pub result: RunResult,
    pub violations: Vec<Violation>,
    pub exercised: BTreeMap<Property, u64>,
}

/// Runs to stability, checking every step.
pub fn audit_run(
    config: Configuration,
    rng: &mut RngStream,
    params: &ModelParams,
    mode: Mode,
    max_steps: u64,
) -> Result<AuditedRun, ModelError> {
    let mut auditor = Auditor::new(&config, params);
    let mut violations = Vec::new();
    let result = run_observed(config, rng, params, mode, max_steps, |before, report, after| {
        violations.extend(auditor.check_step(before, report, after));
    })?;
    Ok(AuditedRun {
        result,
        violations,
        exercised: auditor.exercised,
    })
}

/// One randomly drawn structural-suite run.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCase {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub dense: bool,
    pub policy: SwitchPolicy,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub runs: usize,
    pub steps: u64,
    pub timeouts: usize,
    pub violations: Vec<(SuiteCase, Violation)>,
    pub exercised: BTreeMap<Property, u64>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.timeouts == 0
    }

    pub fn count(&self, property: Property) -> usize {
        self.violations.iter().filter(|(_, v)| v.property == property).count()
    }
}

pub fn suite_case(seed: u64, max_n: usize, max_k: usize) -> SuiteCase {
    let mut rng = RngStream::new(seed);
    let policies = [
        SwitchPolicy::Never,
        SwitchPolicy::Eager,
        SwitchPolicy::Probabilistic(0.25),
        SwitchPolicy::Probabilistic(0.5),
        SwitchPolicy::Probabilistic(0.75),
    ];
    SuiteCase {
        seed,
        n: 4 + rng.index(max_n - 3),
        k: 1 + rng.index(max_k),
        dense: rng.coin(),
        policy: policies[rng.index(policies.len())],
    }
}

/// Audited runs over random multi-track starts with `r = p = 0`: mixed
/// densities, `4 <= n <= max_n`, `1 <= k <= max_k`, every policy.
pub fn structural_suite(runs: usize, base_seed: u64, max_n: usize, max_k: usize, max_steps: u64, workers: usize) -> SuiteReport {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<(SuiteCase, Result<AuditedRun, String>)> = pool.install(|| {
        (0..runs as u64)
            .into_par_iter()
            .map(|i| {
                let case = suite_case(base_seed.wrapping_add(i), max_n, max_k);
                let mut rng = RngStream::new(case.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 1);
                let start = if case.dense {
                    gen_dense(case.n, case.k, &mut rng)
                } else {
                    gen_sparse(case.n, case.k, &mut rng)
                };
                let params = ModelParams::with_policy(case.policy);
                let run = start
                    .map_err(|e| e.to_string())
                    .and_then(|c| audit_run(c, &mut rng, &params, Mode::Local, max_steps).map_err(|e| e.to_string()));
                (case, run)
            })
            .collect()
    });
    let mut report = SuiteReport::default();
    for (case, run) in results {
        report.runs += 1;
        match run {
            Ok(run) => {
                report.steps += run.result.steps;
                report.timeouts += usize::from(run.result.timed_out);
                for (p, c) in run.exercised {
                    *report.exercised.entry(p).or_default() += c;
                }
                for v in run.violations {
                    report.violations.push((case.clone(), v));
                }
            }
            Err(e) => report.violations.push((
                case,
                Violation {
                    time: 0,
                    property: Property::Occupancy,
                    detail: e,
                },
            )),
        }
    }
    report
}

/// Chi-square comparison of one state's oracle successor distribution with
/// the engine's empirical one.
#[derive(Clone, Debug, PartialEq)]
pub struct StateConsistency {
    pub state: String,
    pub outcomes: usize,
    pub statistic: f64,
    pub critical: f64,
    /// Successors the engine produced that the oracle gives probability 0.
    pub unexpected: Vec<String>,
}

impl StateConsistency {
    pub fn passed(&self) -> bool {
        self.unexpected.is_empty() && self.statistic <= self.critical
    }
}

#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub n: usize,
    pub m: usize,
    pub family_alpha: f64,
    pub states: Vec<StateConsistency>,
    /// States whose absorbing flag disagrees with global stability.
    pub misclassified: Vec<String>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.misclassified.is_empty() && self.states.iter().all(StateConsistency::passed)
    }
}

/// For every transient state of the `(n, m)` single-track space, steps the
/// engine `trials` times and compares the successor frequencies with the
/// oracle at family-wise level `family_alpha` (Bonferroni).
pub fn oracle_consistency(
    n: usize,
    m: usize,
    trials: usize,
    base_seed: u64,
    family_alpha: f64,
    workers: usize,
) -> Result<ConsistencyReport, OracleError> {
    let space = StateSpace::enumerate(n, m)?;
    let mut misclassified = Vec::new();
    for (i, s) in space.states.iter().enumerate() {
        let config = parse_grid(s).map_err(|_| OracleError::BadState(s.clone()))?;
        if space.absorbing[i] != is_globally_stable(&config) {
            misclassified.push(s.clone());
        }
    }
    let transient: Vec<&String> = space.states.iter().zip(&space.absorbing).filter(|(_, &a)| !a).map(|(s, _)| s).collect();
    let alpha = family_alpha / transient.len().max(1) as f64;
    let params = ModelParams::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let states = pool.install(|| {
        transient
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let expected = oracle::transition_distribution(s)?;
                let start = parse_grid(s).map_err(|_| OracleError::BadState((*s).clone()))?;
                let mut rng = RngStream::new(base_seed.wrapping_add((i as u64) << 32));
                let mut counts: BTreeMap<String, u64> = BTreeMap::new();
                for _ in 0..trials {
                    let mut c = start.clone();
                    step(&mut c, &mut rng, &params).map_err(|_| OracleError::BadState((*s).clone()))?;
                    *counts.entry(oracle::encode(&c)?).or_default() += 1;
                }
                let support: BTreeMap<&str, f64> = expected.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                let unexpected: Vec<String> = counts.keys().filter(|k| !support.contains_key(k.as_str())).cloned().collect();
                let statistic: f64 = expected
                    .iter()
                    .map(|(k, p)| {
                        let e = p * trials as f64;
                        let o = *counts.get(k).unwrap_or(&0) as f64;
                        (o - e).powi(2) / e
                    })
                    .sum();
                let df = expected.len().saturating_sub(1);
                let critical = if df == 0 {
                    0.0
                } else {
                    ChiSquared::new(df as f64).expect("positive df").inverse_cdf(1.0 - alpha)
                };
                Ok(StateConsistency {
                    state: (*s).clone(),
                    outcomes: expected.len(),
                    statistic,
                    critical,
                    unexpected,
                })
            })
            .collect::<Result<Vec<_>, OracleError>>()
    })?;
    Ok(ConsistencyReport {
        n,
        m,
        family_alpha,
        states,
        misclassified,
    })
}

/// Multi-track local stabilisation against `3/2 mn + pi^2/24 m^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MnBoundCheck {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub bound: f64,
    pub mean: f64,
    pub stderr: f64,
    pub timeouts: usize,
}

impl MnBoundCheck {
    pub fn holds(&self) -> bool {
        self.timeouts == 0 && self.mean + 3.0 * self.stderr <= self.bound
    }
}

/// Random multi-track starts with `m` locusts, each run `trials` times under
/// the eager policy.
pub fn check_mn_bound(
    instances: usize,
    trials: usize,
    base_seed: u64,
    max_n: usize,
    max_k: usize,
    workers: usize,
) -> Result<Vec<MnBoundCheck>, ExperimentError> {
    let mut rng = RngStream::new(base_seed);
    (0..instances)
        .map(|i| {
            let n = 4 + rng.index(max_n - 3);
            let k = 1 + rng.index(max_k);
            let lo = 2 * k;
            let m = lo + rng.index(n * k - lo);
            let start = gen_random(n, k, m, &mut rng)?;
            let spec = ExperimentSpec::new(
                n,
                k,
                InitSpec::Explicit(start),
                ModelParams::default(),
                Mode::Local,
                trials,
                base_seed.wrapping_add(1 + i as u64 * trials as u64),
            );
            let r = monte_carlo_with_workers(&spec, workers)?;
            Ok(MnBoundCheck {
                n,
                k,
                m,
                bound: mn_bound(n, m),
                mean: r.mean_t_stable.unwrap_or(f64::INFINITY),
                stderr: r.stderr.unwrap_or(0.0),
                timeouts: r.timeouts,
            })
        })
        .collect()
}
