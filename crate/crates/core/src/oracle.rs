//! Exact and closed-form ground truth for small instances.
//!
//! The single-track dynamics with `r = p = 0` are re-derived here on a plain
//! glyph string (`.`, `>`, `<`) without touching the engine, so comparing the
//! two is a real cross-check. Each state with `c` conflicts and `d` contested
//! cells has `2^(c+d)` equally likely successors; expected absorption times
//! come from the first-step equations `E = 1 + Q E`, solved densely.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::experiments::mean_stderr;
use crate::model::{Configuration, Coord, Heading};
use crate::rng::RngStream;

/// Cap on the unreduced state space `C(n, m) * 2^m`.
pub const DEFAULT_STATE_CAP: u64 = 100_000;
/// Cap on reachable transient states handed to the dense solver.
pub const DENSE_LIMIT: usize = 3_000;

const EMPTY: u8 = b'.';
const CW: u8 = b'>';
const CCW: u8 = b'<';

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("state space of {states} exceeds the cap of {cap}")]
    StateSpaceTooLarge { states: u64, cap: u64 },
    #[error("exact oracle needs a single track, got k={k}")]
    NotSingleTrack { k: usize },
    #[error("start has n={found_n}, m={found_m}; expected n={n}, m={m}")]
    SizeMismatch { n: usize, m: usize, found_n: usize, found_m: usize },
    #[error("segment sizes must be positive, got {a} and {b}")]
    NonpositiveSize { a: i64, b: i64 },
    #[error("start {start} lies outside the barriers 0 and {}", 2 * .n)]
    BadBarriers { n: usize, start: usize },
    #[error("no trials requested")]
    NoTrials,
    #[error("first-step system is singular")]
    Singular,
    #[error("bad state {0:?}")]
    BadState(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub expected_t_stable: f64,
    /// Number of states reachable from the start, absorbing ones included.
    pub state_count: usize,
}

/// States of a single track as glyph strings.
#[derive(Clone, Debug, Default)]
pub struct StateSpace {
    pub states: Vec<String>,
    pub index: HashMap<String, usize>,
    pub absorbing: Vec<bool>,
}

impl StateSpace {
    fn insert(&mut self, state: String) -> usize {
        if let Some(&i) = self.index.get(&state) {
            return i;
        }
        let i = self.states.len();
        self.absorbing.push(is_absorbing(&state));
        self.index.insert(state.clone(), i);
        self.states.push(state);
        i
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Every placement of `m` locusts on `n` cells with every heading
    /// assignment, in lexicographic glyph order.
    pub fn enumerate(n: usize, m: usize) -> Result<Self, OracleError> {
        check_cap(n, m)?;
        let mut space = StateSpace::default();
        let mut cells = vec![EMPTY; n];
        fill(&mut cells, 0, m, &mut space);
        Ok(space)
    }

    /// States reachable from `start`, breadth first.
    pub fn reachable_from(start: &str) -> Result<Self, OracleError> {
        let mut space = StateSpace::default();
        space.insert(start.to_string());
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            if space.absorbing[i] {
                continue;
            }
            for (next, _) in transition_distribution(&space.states[i])? {
                let before = space.len();
                let j = space.insert(next);
                if j == before {
                    queue.push_back(j);
                }
            }
        }
        Ok(space)
    }
}

fn fill(cells: &mut [u8], at: usize, left: usize, space: &mut StateSpace) {
    if left == 0 {
        space.insert(String::from_utf8(cells.to_vec()).expect("ascii glyphs"));
        return;
    }
    if cells.len() - at < left {
        return;
    }
    for glyph in [EMPTY, CCW, CW] {
        cells[at] = glyph;
        let used = usize::from(glyph != EMPTY);
        fill(cells, at + 1, left - used, space);
    }
    cells[at] = EMPTY;
}

fn binomial(n: u64, r: u64) -> u128 {
    let r = r.min(n - r);
    (0..r).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

fn check_cap(n: usize, m: usize) -> Result<(), OracleError> {
    if m > n {
        return Err(OracleError::SizeMismatch { n, m, found_n: n, found_m: m });
    }
    let states = binomial(n as u64, m as u64).saturating_mul(1u128 << m.min(100));
    if states > u128::from(DEFAULT_STATE_CAP) {
        return Err(OracleError::StateSpaceTooLarge {
            states: u64::try_from(states).unwrap_or(u64::MAX),
            cap: DEFAULT_STATE_CAP,
        });
    }
    Ok(())
}

/// All locusts share one heading (vacuous for an empty track).
pub fn is_absorbing(state: &str) -> bool {
    let b = state.as_bytes();
    !(b.contains(&CW) && b.contains(&CCW))
}

/// The track of a single-track configuration as glyphs, `x = 0` first.
pub fn encode(config: &Configuration) -> Result<String, OracleError> {
    if config.k() != 1 {
        return Err(OracleError::NotSingleTrack { k: config.k() });
    }
    Ok((0..config.n())
        .map(|x| match config.heading_at(Coord::new(x, 1)) {
            None => '.',
            Some(Heading::Clockwise) => '>',
            Some(Heading::Counterclockwise) => '<',
        })
        .collect())
}

/// Successor distribution of one step, merged by successor state.
pub fn transition_distribution(state: &str) -> Result<Vec<(String, f64)>, OracleError> {
    let s = state.as_bytes();
    let n = s.len();
    if n < 3 || s.iter().any(|&g| ![EMPTY, CW, CCW].contains(&g)) {
        return Err(OracleError::BadState(state.to_string()));
    }
    let left = |i: usize| (i + n - 1) % n;
    let right = |i: usize| (i + 1) % n;

    // Conflicts: (cw cell, ccw cell) facing each other.
    let conflicts: Vec<(usize, usize)> = (0..n)
        .filter(|&i| s[i] == CW && s[right(i)] == CCW)
        .map(|i| (i, right(i)))
        .collect();

    // Empty cells and who wants them, judged on the starting occupancy.
    let mut forced: Vec<(usize, usize)> = Vec::new();
    let mut contested: Vec<(usize, usize, usize)> = Vec::new();
    for e in (0..n).filter(|&i| s[i] == EMPTY) {
        let from_left = s[left(e)] == CW;
        let from_right = s[right(e)] == CCW;
        match (from_left, from_right) {
            (true, true) => contested.push((e, left(e), right(e))),
            (true, false) => forced.push((left(e), e)),
            (false, true) => forced.push((right(e), e)),
            (false, false) => {}
        }
    }

    let bits = conflicts.len() + contested.len();
    let weight = 0.5f64.powi(bits as i32);
    let mut merged: HashMap<Vec<u8>, f64> = HashMap::new();
    for mask in 0u64..(1u64 << bits) {
        let mut next = s.to_vec();
        let mut moves = forced.clone();
        for (j, &(e, l, r)) in contested.iter().enumerate() {
            let from = if mask >> (conflicts.len() + j) & 1 == 1 { l } else { r };
            moves.push((from, e));
        }
        for &(from, _) in &moves {
            next[from] = EMPTY;
        }
        for &(from, to) in &moves {
            next[to] = s[from];
        }
        for (j, &(a, b)) in conflicts.iter().enumerate() {
            // Conflict partners are blocked, so they sit where they started.
            let winner = if mask >> j & 1 == 1 { CW } else { CCW };
            next[a] = winner;
            next[b] = winner;
        }
        *merged.entry(next).or_default() += weight;
    }
    let mut out: Vec<(String, f64)> = merged
        .into_iter()
        .map(|(k, v)| (String::from_utf8(k).expect("ascii glyphs"), v))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Expected steps to absorption for every state of `space`. The space must be
/// closed under transitions.
pub fn expected_times(space: &StateSpace) -> Result<Vec<f64>, OracleError> {
    let transient: Vec<usize> = (0..space.len()).filter(|&i| !space.absorbing[i]).collect();
    if transient.len() > DENSE_LIMIT {
        return Err(OracleError::StateSpaceTooLarge {
            states: transient.len() as u64,
            cap: DENSE_LIMIT as u64,
        });
    }
    let mut slot = vec![usize::MAX; space.len()];
    for (row, &i) in transient.iter().enumerate() {
        slot[i] = row;
    }
    let t = transient.len();
    // Augmented rows of (I - Q | 1).
    let mut a = vec![vec![0.0f64; t + 1]; t];
    for (row, &i) in transient.iter().enumerate() {
        a[row][row] += 1.0;
        a[row][t] = 1.0;
        for (next, prob) in transition_distribution(&space.states[i])? {
            let j = *space.index.get(&next).ok_or(OracleError::BadState(next.clone()))?;
            if !space.absorbing[j] {
                a[row][slot[j]] -= prob;
            }
        }
    }
    let solution = gaussian_solve(a)?;
    Ok((0..space.len())
        .map(|i| if space.absorbing[i] { 0.0 } else { solution[slot[i]] })
        .collect())
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gaussian_solve(mut a: Vec<Vec<f64>>) -> Result<Vec<f64>, OracleError> {
    let t = a.len();
    for col in 0..t {
        let pivot = (col..t)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(OracleError::Singular);
        }
        a.swap(col, pivot);
        let (top, rest) = a.split_at_mut(col + 1);
        let prow = &top[col];
        for row in rest.iter_mut() {
            let factor = row[col] / prow[col];
            if factor != 0.0 {
                for c in col..=t {
                    row[c] -= factor * prow[c];
                }
            }
        }
    }
    let mut x = vec![0.0; t];
    for row in (0..t).rev() {
        let tail: f64 = (row + 1..t).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][t] - tail) / a[row][row];
    }
    Ok(x)
}

/// Exact expected `T_stable` from a single-track start with `r = p = 0`.
pub fn exact_expected_stabilization(
    n: usize,
    m: usize,
    start: &Configuration,
) -> Result<OracleResult, OracleError> {
    let state = encode(start)?;
    if start.n() != n || start.m() != m {
        return Err(OracleError::SizeMismatch {
            n,
            m,
            found_n: start.n(),
            found_m: start.m(),
        });
    }
    check_cap(n, m)?;
    let space = StateSpace::reachable_from(&state)?;
    let times = expected_times(&space)?;
    Ok(OracleResult {
        expected_t_stable: times[0],
        state_count: space.len(),
    })
}

/// Expected number of conflicts for two deadlocked segments of sizes `a`
/// and `b` to merge: a fair walk from 0 until it hits `a` or `-b`.
pub fn gamblers_ruin_expected(a: i64, b: i64) -> Result<i64, OracleError> {
    if a < 1 || b < 1 {
        return Err(OracleError::NonpositiveSize { a, b });
    }
    Ok(a * b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkStats {
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error of the time until all of `k_walks` independent
/// fair walks from `start` have hit 0 or `2n`.
pub fn multi_walk_max_absorption(
    k_walks: usize,
    n: usize,
    start: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<WalkStats, OracleError> {
    if n == 0 || start > 2 * n {
        return Err(OracleError::BadBarriers { n, start });
    }
    if trials == 0 {
        return Err(OracleError::NoTrials);
    }
    let top = 2 * n as i64;
    let maxima: Vec<f64> = (0..trials)
        .map(|_| {
            (0..k_walks)
                .map(|_| {
                    let mut pos = start as i64;
                    let mut steps = 0u64;
                    while pos > 0 && pos < top {
                        pos += if rng.coin() { 1 } else { -1 };
                        steps += 1;
                    }
                    steps
                })
                .max()
                .unwrap_or(0) as f64
        })
        .collect();
    let (mean, stderr) = mean_stderr(&maxima).expect("trials >= 1");
    Ok(WalkStats { mean, stderr })
}
