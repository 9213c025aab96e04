//! One synchronous time step of the marching model, and runs to stability.
//!
//! A step goes through four phases, in this order:
//!
//! 1. conflicts are read off the beginning-of-step snapshot;
//! 2. horizontal phase: erratic rests are drawn, then every other locust
//!    tries to advance one cell. Occupancy is judged against the snapshot and
//!    a cell wanted from both sides goes to a fair coin;
//! 3. each conflict is settled by a fair coin and the loser adopts the
//!    winner's heading;
//! 4. vertical phase: locusts are visited in scan order of their
//!    post-horizontal cells and moves are applied one at a time.
//!
//! Every random draw is taken in canonical scan order (ascending track, then
//! ascending `x`), so a seed fully determines a run.

use crate::analysis::{is_globally_stable, is_locally_stable};
use crate::error::ModelError;
use crate::model::{validate, Configuration, Coord, Heading, LocustId, ModelParams, SwitchPolicy};
use crate::rng::RngStream;

/// A clockwise locust at `(x, y)` facing a counterclockwise one at `(x+1, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conflict {
    pub left: LocustId,
    pub right: LocustId,
    pub winner: Option<LocustId>,
}

impl Conflict {
    pub fn loser(&self) -> Option<LocustId> {
        self.winner
            .map(|w| if w == self.left { self.right } else { self.left })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HorizontalMove {
    pub id: LocustId,
    pub from: Coord,
    pub to: Coord,
}

/// An empty cell targeted from both sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContestedCell {
    pub cell: Coord,
    pub winner: LocustId,
    pub loser: LocustId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerticalMove {
    pub id: LocustId,
    pub from: Coord,
    pub to: Coord,
    pub erratic: bool,
}

/// Audit record of one step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub time: u64,
    pub conflicts: Vec<Conflict>,
    pub horizontal_moves: Vec<HorizontalMove>,
    pub contested_cells: Vec<ContestedCell>,
    /// In the order they were applied.
    pub vertical_moves: Vec<VerticalMove>,
    pub erratic_rests: Vec<LocustId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HorizontalOutcome {
    pub moves: Vec<HorizontalMove>,
    pub contested_cells: Vec<ContestedCell>,
    pub erratic_rests: Vec<LocustId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Every track heading-uniform.
    Local,
    /// All locusts share one heading.
    Global,
}

impl Mode {
    pub fn is_stable(self, config: &Configuration) -> bool {
        match self {
            Mode::Local => is_locally_stable(config),
            Mode::Global => is_globally_stable(config),
        }
    }
}

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Clone, Debug)]
pub struct RunResult {
    /// First step index at whose beginning the stability predicate held.
    pub t_stable: Option<u64>,
    pub timed_out: bool,
    pub total_conflicts: u64,
    pub steps: u64,
    pub final_config: Configuration,
    pub reports: Option<Vec<StepReport>>,
}

pub fn detect_conflicts(config: &Configuration) -> Vec<Conflict> {
    let lattice = config.lattice();
    let mut out = Vec::new();
    for id in config.scan_order() {
        if config.heading(id) != Heading::Clockwise {
            continue;
        }
        let right_cell = lattice.shift(config.position(id), 1);
        if let Some(right) = config.at(right_cell) {
            if config.heading(right) == Heading::Counterclockwise {
                out.push(Conflict {
                    left: id,
                    right,
                    winner: None,
                });
            }
        }
    }
    out
}

/// Horizontal movement. Mutates `config` in place.
pub fn horizontal_phase(
    config: &mut Configuration,
    rng: &mut RngStream,
    params: &ModelParams,
) -> HorizontalOutcome {
    let lattice = *config.lattice();
    let mut resting = vec![false; config.m()];
    let mut outcome = HorizontalOutcome::default();
    if params.r > 0.0 {
        for id in config.scan_order() {
            if rng.bernoulli(params.r) {
                resting[id.index()] = true;
                outcome.erratic_rests.push(id);
            }
        }
    }

    // Who wants an empty cell: the clockwise locust to its left and the
    // counterclockwise locust to its right. Scan cells so coin flips for
    // contested cells come out in canonical order.
    let wants = |c: Coord, from_delta: i64, heading: Heading| -> Option<LocustId> {
        let id = config.at(lattice.shift(c, from_delta))?;
        (config.heading(id) == heading && !resting[id.index()]).then_some(id)
    };
    for index in 0..lattice.cell_count() {
        if config.at_index(index).is_some() {
            continue;
        }
        let cell = lattice.coord(index);
        let from_left = wants(cell, -1, Heading::Clockwise);
        let from_right = wants(cell, 1, Heading::Counterclockwise);
        let mover = match (from_left, from_right) {
            (Some(l), Some(r)) => {
                let (winner, loser) = if rng.coin() { (l, r) } else { (r, l) };
                outcome.contested_cells.push(ContestedCell { cell, winner, loser });
                Some(winner)
            }
            (Some(id), None) | (None, Some(id)) => Some(id),
            (None, None) => None,
        };
        if let Some(id) = mover {
            outcome.moves.push(HorizontalMove {
                id,
                from: config.position(id),
                to: cell,
            });
        }
    }
    let batch: Vec<(LocustId, Coord)> = outcome.moves.iter().map(|m| (m.id, m.to)).collect();
    config.relocate_simultaneously(&batch);
    outcome
}

/// Settles each conflict with a fair coin; the loser takes the winner's heading.
pub fn apply_conflict_flips(config: &mut Configuration, conflicts: &mut [Conflict], rng: &mut RngStream) {
    for conflict in conflicts.iter_mut() {
        let (winner, loser) = if rng.coin() {
            (conflict.left, conflict.right)
        } else {
            (conflict.right, conflict.left)
        };
        conflict.winner = Some(winner);
        config.set_heading(loser, config.heading(winner));
    }
}

/// `a` is heading towards an opposite-heading front that it is not yet
/// touching. Evaluated on the beginning-of-step snapshot.
pub fn imminent_conflict(begin: &Configuration, a: LocustId) -> Result<bool, ModelError> {
    let front = begin.front_of(a)?;
    if front == a {
        return Ok(false);
    }
    let heading = begin.heading(a);
    if begin.heading(front) == heading {
        return Ok(false);
    }
    let gap = begin
        .lattice()
        .dist_along(begin.position(a), begin.position(front), heading)?;
    Ok(gap > 1)
}

/// Whether `a` at its current cell may enter `target` on an adjacent track:
/// the cell is empty, `a` would sit between two locusts of its own heading,
/// and no locust already on that track is about to step into it.
fn welcome_on(config: &Configuration, a: LocustId, target: Coord) -> bool {
    if config.at(target).is_some() {
        return false;
    }
    let heading = config.heading(a);
    let lattice = config.lattice();
    let neighbours_agree = [heading, -heading].into_iter().all(|dir| {
        config
            .first_along(target, dir)
            .is_none_or(|b| config.heading(b) == heading)
    });
    if !neighbours_agree {
        return false;
    }
    let incoming_from_left = config.heading_at(lattice.shift(target, -1)) == Some(Heading::Clockwise);
    let incoming_from_right = config.heading_at(lattice.shift(target, 1)) == Some(Heading::Counterclockwise);
    !incoming_from_left && !incoming_from_right
}

fn vertical_neighbours(config: &Configuration, c: Coord) -> impl Iterator<Item = Coord> {
    let k = config.k();
    [c.y + 1, c.y - 1]
        .into_iter()
        .filter(move |&y| y >= 1 && y <= k)
        .map(move |y| Coord::new(c.x, y))
}

fn may_leave(config: &Configuration, a: LocustId, params: &ModelParams) -> bool {
    !params.guard_min_two_per_track || config.track_population(config.position(a).y) > 2
}

/// Cells `a` may switch to under the track-switching rules. The imminent
/// conflict test uses `begin`; everything else uses `post`, the grid after
/// horizontal moves and conflict flips.
pub fn vertical_eligibility(
    begin: &Configuration,
    post: &Configuration,
    a: LocustId,
    params: &ModelParams,
) -> Result<Vec<Coord>, ModelError> {
    if !begin.contains_id(a) || !post.contains_id(a) {
        return Err(ModelError::UnknownLocust(a));
    }
    if !imminent_conflict(begin, a)? || !may_leave(post, a, params) {
        return Ok(Vec::new());
    }
    Ok(vertical_neighbours(post, post.position(a))
        .filter(|&e| welcome_on(post, a, e))
        .collect())
}

/// Vertical movement. `config` is the post-horizontal, post-flip grid and is
/// updated move by move, so a cell vacated earlier in the scan is open to
/// later locusts and a cell taken earlier is closed to them.
pub fn vertical_phase(
    begin: &Configuration,
    config: &mut Configuration,
    rng: &mut RngStream,
    params: &ModelParams,
) -> Result<Vec<VerticalMove>, ModelError> {
    let mut moves = Vec::new();
    for id in config.scan_order() {
        let erratic = rng.bernoulli(params.p);
        let from = config.position(id);
        let target = if erratic {
            if may_leave(config, id, params) {
                let open: Vec<Coord> = vertical_neighbours(config, from)
                    .filter(|&c| config.at(c).is_none())
                    .collect();
                rng.pick(&open)
            } else {
                None
            }
        } else {
            match params.switch_policy {
                SwitchPolicy::Never => None,
                SwitchPolicy::Eager => rng.pick(&vertical_eligibility(begin, config, id, params)?),
                SwitchPolicy::Probabilistic(q) => {
                    let eligible = vertical_eligibility(begin, config, id, params)?;
                    if !eligible.is_empty() && rng.bernoulli(q) {
                        rng.pick(&eligible)
                    } else {
                        None
                    }
                }
            }
        };
        if let Some(to) = target {
            config.relocate(id, to);
            moves.push(VerticalMove { id, from, to, erratic });
        }
    }
    Ok(moves)
}

/// Advances `config` by one time step and returns what happened.
pub fn step(
    config: &mut Configuration,
    rng: &mut RngStream,
    params: &ModelParams,
) -> Result<StepReport, ModelError> {
    let begin = config.clone();
    let mut conflicts = detect_conflicts(config);
    let horizontal = horizontal_phase(config, rng, params);
    apply_conflict_flips(config, &mut conflicts, rng);
    let vertical_moves = vertical_phase(&begin, config, rng, params)?;
    let report = StepReport {
        time: config.time(),
        conflicts,
        horizontal_moves: horizontal.moves,
        contested_cells: horizontal.contested_cells,
        vertical_moves,
        erratic_rests: horizontal.erratic_rests,
    };
    config.set_time(config.time() + 1);
    if cfg!(debug_assertions) {
        validate(config, params)?;
    }
    Ok(report)
}

/// Runs until `mode`'s stability predicate holds at the beginning of a step,
/// or `max_steps` steps have been taken. `observe` sees every step as
/// `(before, report, after)`.
pub fn run_observed<F>(
    mut config: Configuration,
    rng: &mut RngStream,
    params: &ModelParams,
    mode: Mode,
    max_steps: u64,
    mut observe: F,
) -> Result<RunResult, ModelError>
where
    F: FnMut(&Configuration, &StepReport, &Configuration),
{
    params.check()?;
    validate(&config, params)?;
    let mut total_conflicts = 0;
    let mut steps = 0;
    loop {
        if mode.is_stable(&config) {
            return Ok(RunResult {
                t_stable: Some(steps),
                timed_out: false,
                total_conflicts,
                steps,
                final_config: config,
                reports: None,
            });
        }
        if steps >= max_steps {
            return Ok(RunResult {
                t_stable: None,
                timed_out: true,
                total_conflicts,
                steps,
                final_config: config,
                reports: None,
            });
        }
        let before = config.clone();
        let report = step(&mut config, rng, params)?;
        total_conflicts += report.conflicts.len() as u64;
        steps += 1;
        observe(&before, &report, &config);
    }
}

pub fn run_until_stable(
    config: Configuration,
    rng: &mut RngStream,
    params: &ModelParams,
    mode: Mode,
    max_steps: u64,
    retain_reports: bool,
) -> Result<RunResult, ModelError> {
    if !retain_reports {
        return run_fast(config, rng, params, mode, max_steps);
    }
    let mut reports = Vec::new();
    let mut result = run_observed(config, rng, params, mode, max_steps, |_, r, _| reports.push(r.clone()))?;
    result.reports = Some(reports);
    Ok(result)
}

// Same loop without the per-step snapshot clone that observers need.
fn run_fast(
    mut config: Configuration,
    rng: &mut RngStream,
    params: &ModelParams,
    mode: Mode,
    max_steps: u64,
) -> Result<RunResult, ModelError> {
    params.check()?;
    validate(&config, params)?;
    let mut total_conflicts = 0;
    let mut steps = 0;
    while !mode.is_stable(&config) {
        if steps >= max_steps {
            return Ok(RunResult {
                t_stable: None,
                timed_out: true,
                total_conflicts,
                steps,
                final_config: config,
                reports: None,
            });
        }
        total_conflicts += step(&mut config, rng, params)?.conflicts.len() as u64;
        steps += 1;
    }
    Ok(RunResult {
        t_stable: Some(steps),
        timed_out: false,
        total_conflicts,
        steps,
        final_config: config,
        reports: None,
    })
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("step {time}: {what}")]
    Mismatch { time: u64, what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Applies the recorded horizontal moves and conflict flips of `report`,
/// yielding the grid the vertical phase started from.
pub fn replay_horizontal(config: &mut Configuration, report: &StepReport) -> Result<(), ReplayError> {
    let mismatch = |what: String| ReplayError::Mismatch {
        time: report.time,
        what,
    };
    for mv in &report.horizontal_moves {
        if config.position(mv.id) != mv.from {
            return Err(mismatch(format!("{} is not at {}", mv.id, mv.from)));
        }
        if config.at(mv.to).is_some() {
            return Err(mismatch(format!("{} moves into occupied {}", mv.id, mv.to)));
        }
    }
    let batch: Vec<(LocustId, Coord)> = report.horizontal_moves.iter().map(|m| (m.id, m.to)).collect();
    config.relocate_simultaneously(&batch);
    for c in &report.conflicts {
        let (Some(winner), Some(loser)) = (c.winner, c.loser()) else {
            return Err(mismatch(format!("conflict {}/{} has no winner", c.left, c.right)));
        };
        config.set_heading(loser, config.heading(winner));
    }
    Ok(())
}

/// Applies the recorded vertical moves of `report`, in order.
pub fn replay_vertical(config: &mut Configuration, report: &StepReport) -> Result<(), ReplayError> {
    for mv in &report.vertical_moves {
        if config.position(mv.id) != mv.from || config.at(mv.to).is_some() {
            return Err(ReplayError::Mismatch {
                time: report.time,
                what: format!("vertical move of {} from {} to {}", mv.id, mv.from, mv.to),
            });
        }
        config.relocate(mv.id, mv.to);
    }
    Ok(())
}

/// Rebuilds the configuration reached by applying `reports` to `initial`.
pub fn replay(initial: &Configuration, reports: &[StepReport]) -> Result<Configuration, ReplayError> {
    let mut config = initial.clone();
    for report in reports {
        if report.time != config.time() {
            return Err(ReplayError::Mismatch {
                time: report.time,
                what: format!("expected report for t={}", config.time()),
            });
        }
        replay_horizontal(&mut config, report)?;
        replay_vertical(&mut config, report)?;
        config.set_time(config.time() + 1);
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_grid;

    fn grid(text: &str) -> Configuration {
        parse_grid(text).unwrap()
    }

    fn unguarded() -> ModelParams {
        ModelParams {
            guard_min_two_per_track: false,
            ..Default::default()
        }
    }

    #[test]
    fn conflict_patterns() {
        assert_eq!(detect_conflicts(&grid("><..")).len(), 1);
        assert!(detect_conflicts(&grid("<>..")).is_empty());
        let c = grid(">><<");
        let found = detect_conflicts(&c);
        assert_eq!(found.len(), 1);
        assert_eq!(c.position(found[0].left).x, 1);
        assert_eq!(c.position(found[0].right).x, 2);
    }

    #[test]
    fn conflict_across_the_seam() {
        // '<' at x=0 faces '>' at x=3 through the wrap.
        let c = grid("<..>");
        let found = detect_conflicts(&c);
        assert_eq!(found.len(), 1);
        assert_eq!(c.position(found[0].left).x, 3);
    }

    #[test]
    fn lone_walker_advances_one_cell_per_step() {
        let mut c = grid(">....");
        let mut rng = RngStream::new(0);
        for t in 1..=7 {
            step(&mut c, &mut rng, &unguarded()).unwrap();
            assert_eq!(c.position(LocustId(0)).x, t % 5);
        }
    }

    #[test]
    fn platoon_does_not_chain() {
        let mut c = grid(">>.....");
        let report = horizontal_phase(&mut c, &mut RngStream::new(1), &ModelParams::default());
        assert_eq!(report.moves.len(), 1);
        assert_eq!(c.position(LocustId(0)).x, 0);
        assert_eq!(c.position(LocustId(1)).x, 2);
    }

    #[test]
    fn contested_gap_goes_to_exactly_one() {
        let mut cw_wins = 0;
        let trials = 4000;
        for seed in 0..trials {
            let mut c = grid(">.<");
            let out = horizontal_phase(&mut c, &mut RngStream::new(seed), &ModelParams::default());
            assert_eq!(out.moves.len(), 1);
            assert_eq!(out.contested_cells.len(), 1);
            assert_eq!(out.moves[0].to.x, 1);
            if out.contested_cells[0].winner == LocustId(0) {
                cw_wins += 1;
            }
        }
        // Two equally likely outcomes: binomial(4000, 1/2), sd ~ 31.6.
        assert!((cw_wins as i64 - 2000).abs() < 130, "cw won {cw_wins}");
    }

    #[test]
    fn flips_leave_one_heading() {
        let mut seen = [0; 2];
        for seed in 0..200 {
            let mut c = grid("><..");
            let mut conflicts = detect_conflicts(&c);
            apply_conflict_flips(&mut c, &mut conflicts, &mut RngStream::new(seed));
            assert_eq!(c.heading(LocustId(0)), c.heading(LocustId(1)));
            seen[(c.heading(LocustId(0)) == Heading::Clockwise) as usize] += 1;
        }
        assert!(seen[0] > 60 && seen[1] > 60);
    }

    #[test]
    fn flips_without_conflicts_change_nothing() {
        let mut c = grid(">.>.<<.");
        let before = c.clone();
        apply_conflict_flips(&mut c, &mut [], &mut RngStream::new(5));
        assert_eq!(c, before);
    }

    #[test]
    fn adjacent_pair_stabilises_in_one_step() {
        for seed in 0..50 {
            let run = run_until_stable(
                grid("><.."),
                &mut RngStream::new(seed),
                &ModelParams::default(),
                Mode::Local,
                100,
                false,
            )
            .unwrap();
            assert_eq!(run.t_stable, Some(1));
            assert_eq!(run.total_conflicts, 1);
        }
    }

    #[test]
    fn one_gap_pair_stabilises_in_two_steps() {
        for seed in 0..50 {
            let run = run_until_stable(
                grid(">.<."),
                &mut RngStream::new(seed),
                &ModelParams::default(),
                Mode::Local,
                100,
                false,
            )
            .unwrap();
            assert_eq!(run.t_stable, Some(2));
        }
    }

    #[test]
    fn uniform_start_is_already_stable() {
        let run = run_until_stable(
            grid(">.>>.\n.>.>."),
            &mut RngStream::new(0),
            &ModelParams::default(),
            Mode::Global,
            10,
            false,
        )
        .unwrap();
        assert_eq!(run.t_stable, Some(0));
        assert_eq!(run.steps, 0);
    }

    #[test]
    fn uniform_swarm_never_conflicts() {
        let mut c = grid(">>.>..>.\n.>>>....\n>...>.>>");
        let mut rng = RngStream::new(11);
        for _ in 0..40 {
            let report = step(&mut c, &mut rng, &ModelParams::default()).unwrap();
            assert!(report.conflicts.is_empty());
            assert!(report.vertical_moves.is_empty());
        }
    }

    #[test]
    fn never_policy_without_erratics_stays_on_track() {
        let params = ModelParams::with_policy(SwitchPolicy::Never);
        let mut c = grid(">.<..>..\n..>..<.<\n<..>...>");
        let mut rng = RngStream::new(2);
        for _ in 0..20 {
            let r = step(&mut c, &mut rng, &params).unwrap();
            assert!(r.vertical_moves.is_empty());
        }
    }

    #[test]
    fn erratic_move_needs_an_empty_cell() {
        // The middle track is boxed in above and below.
        let params = ModelParams {
            p: 1.0,
            switch_policy: SwitchPolicy::Never,
            guard_min_two_per_track: false,
            ..Default::default()
        };
        let begin = grid(">>>\n>>.\n>>>");
        let mut post = begin.clone();
        let sandwiched = post.at(Coord::new(0, 2)).unwrap();
        let moves = vertical_phase(&begin, &mut post, &mut RngStream::new(0), &params).unwrap();
        assert!(moves.iter().all(|m| m.id != sandwiched));
    }

    #[test]
    fn locust_touching_its_front_cannot_switch() {
        let c = grid(">>...>>.\n.><.....");
        let a = c.at(Coord::new(1, 1)).unwrap();
        assert!(vertical_eligibility(&c, &c, a, &ModelParams::default()).unwrap().is_empty());
    }

    #[test]
    fn eligible_into_uniform_track() {
        // Bottom track: '>' at x=2 is heading for the '<' at x=5.
        // Top track is all clockwise, and cell (2, 2) has no one stepping in.
        let c = grid(">.....>.\n..>..<.<");
        let a = c.at(Coord::new(2, 1)).unwrap();
        let cells = vertical_eligibility(&c, &c, a, &ModelParams::default()).unwrap();
        assert_eq!(cells, vec![Coord::new(2, 2)]);
    }

    #[test]
    fn eligibility_respects_incoming_walkers() {
        // A clockwise locust at (1, 2) would step into (2, 2).
        let c = grid(".>....>.\n..>..<.<");
        let a = c.at(Coord::new(2, 1)).unwrap();
        assert!(vertical_eligibility(&c, &c, a, &ModelParams::default()).unwrap().is_empty());
    }

    #[test]
    fn eligibility_requires_agreeing_neighbours() {
        let c = grid("<.....>.\n..>..<.<");
        let a = c.at(Coord::new(2, 1)).unwrap();
        assert!(vertical_eligibility(&c, &c, a, &ModelParams::default()).unwrap().is_empty());
    }

    #[test]
    fn guard_blocks_departure_from_two_locust_track() {
        let c = grid(">.....>.\n..>..<..");
        let a = c.at(Coord::new(2, 1)).unwrap();
        assert!(vertical_eligibility(&c, &c, a, &ModelParams::default()).unwrap().is_empty());
        assert_eq!(
            vertical_eligibility(&c, &c, a, &unguarded()).unwrap(),
            vec![Coord::new(2, 2)]
        );
    }

    #[test]
    fn replay_reproduces_run() {
        let params = ModelParams {
            r: 0.2,
            p: 0.1,
            ..Default::default()
        };
        let start = grid(">.<..>..<.\n..>..<.<..\n<..>...>.<");
        let run = run_until_stable(start.clone(), &mut RngStream::new(77), &params, Mode::Global, 5000, true).unwrap();
        let rebuilt = replay(&start, run.reports.as_ref().unwrap()).unwrap();
        assert_eq!(rebuilt, run.final_config);
    }

    #[test]
    fn timeout_is_reported() {
        let run = run_until_stable(
            grid(">>>>....\n<<<<...."),
            &mut RngStream::new(0),
            &ModelParams::with_policy(SwitchPolicy::Never),
            Mode::Global,
            25,
            false,
        )
        .unwrap();
        assert!(run.timed_out);
        assert_eq!(run.t_stable, None);
        assert_eq!(run.steps, 25);
    }
}
