//! Lattice geometry, locust state and configuration validation.
//!
//! The arena is a cylinder of `k` tracks, each a ring of `n` cells. A cell is
//! addressed by [`Coord`] with `x` in `[0, n)` (wrapping) and `y` in `[1, k]`
//! (not wrapping). Cells are stored track-major, so ascending cell index is
//! the canonical scan order: ascending `y`, then ascending `x`.

use std::fmt;

use crate::error::ModelError;

/// Direction of motion along a track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heading {
    Clockwise,
    Counterclockwise,
}

impl Heading {
    /// `+1` for clockwise, `-1` for counterclockwise.
    pub fn sign(self) -> i64 {
        match self {
            Heading::Clockwise => 1,
            Heading::Counterclockwise => -1,
        }
    }

    pub fn flipped(self) -> Heading {
        match self {
            Heading::Clockwise => Heading::Counterclockwise,
            Heading::Counterclockwise => Heading::Clockwise,
        }
    }

    pub fn glyph(self) -> char {
        match self {
            Heading::Clockwise => '>',
            Heading::Counterclockwise => '<',
        }
    }
}

impl std::ops::Neg for Heading {
    type Output = Heading;

    fn neg(self) -> Heading {
        self.flipped()
    }
}

/// A cell on the cylinder. `y` is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub y: usize,
    pub x: usize,
}

impl Coord {
    pub fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Stable locust identifier. Ids are dense in `[0, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocustId(pub u32);

impl LocustId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LocustId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Cylinder dimensions plus the ring arithmetic that goes with them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Lattice {
    n: usize,
    k: usize,
}

impl Lattice {
    pub fn new(n: usize, k: usize) -> Result<Self, ModelError> {
        if n < 3 || k < 1 {
            return Err(ModelError::BadDimensions { n, k });
        }
        Ok(Lattice { n, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.k
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.n && c.y >= 1 && c.y <= self.k
    }

    #[inline]
    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(self.contains(c));
        (c.y - 1) * self.n + c.x
    }

    #[inline]
    pub fn coord(&self, index: usize) -> Coord {
        Coord {
            x: index % self.n,
            y: index / self.n + 1,
        }
    }

    /// `c` moved `delta` cells clockwise (negative is counterclockwise).
    #[inline]
    pub fn shift(&self, c: Coord, delta: i64) -> Coord {
        let n = self.n as i64;
        Coord {
            x: (c.x as i64 + delta).rem_euclid(n) as usize,
            y: c.y,
        }
    }

    /// Number of clockwise steps from `from` to `to`; zero when they coincide.
    pub fn dist_c(&self, from: Coord, to: Coord) -> Result<usize, ModelError> {
        if from.y != to.y {
            return Err(ModelError::DifferentTracks {
                from: from.y,
                to: to.y,
            });
        }
        Ok((to.x + self.n - from.x) % self.n)
    }

    pub fn dist_cc(&self, from: Coord, to: Coord) -> Result<usize, ModelError> {
        self.dist_c(to, from)
    }

    /// Distance from `from` to `to` travelling in direction `heading`.
    pub fn dist_along(&self, from: Coord, to: Coord, heading: Heading) -> Result<usize, ModelError> {
        match heading {
            Heading::Clockwise => self.dist_c(from, to),
            Heading::Counterclockwise => self.dist_cc(from, to),
        }
    }
}

/// How locusts decide to take a track switch that the rules allow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SwitchPolicy {
    Never,
    Eager,
    Probabilistic(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Probability of an erratic rest in the horizontal phase.
    pub r: f64,
    /// Probability of an erratic vertical attempt.
    pub p: f64,
    pub switch_policy: SwitchPolicy,
    /// Keep at least two locusts on every track.
    pub guard_min_two_per_track: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            r: 0.0,
            p: 0.0,
            switch_policy: SwitchPolicy::Eager,
            guard_min_two_per_track: true,
        }
    }
}

impl ModelParams {
    pub fn with_policy(switch_policy: SwitchPolicy) -> Self {
        ModelParams {
            switch_policy,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let prob = |name: &'static str, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(ModelError::BadProbability { name, value })
            }
        };
        prob("r", self.r)?;
        prob("p", self.p)?;
        if let SwitchPolicy::Probabilistic(q) = self.switch_policy {
            prob("q", q)?;
        }
        Ok(())
    }
}

/// Full lattice state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    lattice: Lattice,
    cells: Vec<Option<LocustId>>,
    positions: Vec<Coord>,
    headings: Vec<Heading>,
    time: u64,
}

impl Configuration {
    /// Builds a configuration from locusts listed in any order. Ids are
    /// assigned in scan order of their cells.
    pub fn from_locusts(
        n: usize,
        k: usize,
        locusts: impl IntoIterator<Item = (Coord, Heading)>,
    ) -> Result<Self, ModelError> {
        let lattice = Lattice::new(n, k)?;
        let mut slots: Vec<Option<Heading>> = vec![None; lattice.cell_count()];
        for (c, h) in locusts {
            if !lattice.contains(c) {
                return Err(ModelError::OutOfBounds { coord: c, n, k });
            }
            let slot = &mut slots[lattice.index(c)];
            if slot.is_some() {
                return Err(ModelError::DuplicateOccupancy { coord: c });
            }
            *slot = Some(h);
        }
        let mut config = Configuration {
            lattice,
            cells: vec![None; lattice.cell_count()],
            positions: Vec::new(),
            headings: Vec::new(),
            time: 0,
        };
        for (index, slot) in slots.into_iter().enumerate() {
            if let Some(h) = slot {
                let id = LocustId(config.positions.len() as u32);
                config.cells[index] = Some(id);
                config.positions.push(lattice.coord(index));
                config.headings.push(h);
            }
        }
        Ok(config)
    }

    /// Builds a configuration with explicit ids. `positions[i]` and
    /// `headings[i]` describe `LocustId(i)`.
    pub fn from_parts(
        n: usize,
        k: usize,
        positions: Vec<Coord>,
        headings: Vec<Heading>,
        time: u64,
    ) -> Result<Self, ModelError> {
        let lattice = Lattice::new(n, k)?;
        if positions.len() != headings.len() {
            return Err(ModelError::LengthMismatch {
                positions: positions.len(),
                headings: headings.len(),
            });
        }
        let mut cells = vec![None; lattice.cell_count()];
        for (i, &c) in positions.iter().enumerate() {
            if !lattice.contains(c) {
                return Err(ModelError::OutOfBounds { coord: c, n, k });
            }
            let slot = &mut cells[lattice.index(c)];
            if slot.is_some() {
                return Err(ModelError::DuplicateOccupancy { coord: c });
            }
            *slot = Some(LocustId(i as u32));
        }
        Ok(Configuration {
            lattice,
            cells,
            positions,
            headings,
            time,
        })
    }

    pub fn empty(n: usize, k: usize) -> Result<Self, ModelError> {
        Self::from_locusts(n, k, std::iter::empty())
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn n(&self) -> usize {
        self.lattice.n
    }

    pub fn k(&self) -> usize {
        self.lattice.k
    }

    pub fn m(&self) -> usize {
        self.positions.len()
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn set_time(&mut self, time: u64) {
        self.time = time;
    }

    pub fn ids(&self) -> impl Iterator<Item = LocustId> + '_ {
        (0..self.positions.len() as u32).map(LocustId)
    }

    pub fn contains_id(&self, id: LocustId) -> bool {
        id.index() < self.positions.len()
    }

    pub fn at(&self, c: Coord) -> Option<LocustId> {
        self.cells[self.lattice.index(c)]
    }

    pub fn at_index(&self, index: usize) -> Option<LocustId> {
        self.cells[index]
    }

    pub fn heading_at(&self, c: Coord) -> Option<Heading> {
        self.at(c).map(|id| self.headings[id.index()])
    }

    pub fn position(&self, id: LocustId) -> Coord {
        self.positions[id.index()]
    }

    pub fn heading(&self, id: LocustId) -> Heading {
        self.headings[id.index()]
    }

    pub fn headings(&self) -> &[Heading] {
        &self.headings
    }

    pub fn positions(&self) -> &[Coord] {
        &self.positions
    }

    pub(crate) fn set_heading(&mut self, id: LocustId, heading: Heading) {
        self.headings[id.index()] = heading;
    }

    /// Moves `id` to an empty cell.
    pub(crate) fn relocate(&mut self, id: LocustId, to: Coord) {
        let from = self.positions[id.index()];
        let to_index = self.lattice.index(to);
        debug_assert!(self.cells[to_index].is_none(), "{to} is occupied");
        self.cells[self.lattice.index(from)] = None;
        self.cells[to_index] = Some(id);
        self.positions[id.index()] = to;
    }

    /// Applies a batch of moves whose targets were all empty before the batch.
    pub(crate) fn relocate_simultaneously(&mut self, moves: &[(LocustId, Coord)]) {
        for &(id, _) in moves {
            let from = self.positions[id.index()];
            self.cells[self.lattice.index(from)] = None;
        }
        for &(id, to) in moves {
            let idx = self.lattice.index(to);
            debug_assert!(self.cells[idx].is_none(), "{to} claimed twice");
            self.cells[idx] = Some(id);
            self.positions[id.index()] = to;
        }
    }

    /// Locusts on track `y`, by ascending `x`.
    pub fn track(&self, y: usize) -> Vec<LocustId> {
        let start = (y - 1) * self.lattice.n;
        self.cells[start..start + self.lattice.n]
            .iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn track_population(&self, y: usize) -> usize {
        let start = (y - 1) * self.lattice.n;
        self.cells[start..start + self.lattice.n]
            .iter()
            .filter(|c| c.is_some())
            .count()
    }

    /// All locusts in canonical scan order.
    pub fn scan_order(&self) -> Vec<LocustId> {
        self.cells.iter().flatten().copied().collect()
    }

    /// First locust met walking from `from` in direction `dir` on the same
    /// track, not counting `from` itself unless it is the only one there.
    pub fn first_along(&self, from: Coord, dir: Heading) -> Option<LocustId> {
        let n = self.lattice.n as i64;
        (1..=n)
            .map(|i| self.lattice.shift(from, dir.sign() * i))
            .find_map(|c| self.at(c))
    }

    /// The locust directly ahead of `a` in its direction of motion; `a` itself
    /// when alone on its track.
    pub fn front_of(&self, a: LocustId) -> Result<LocustId, ModelError> {
        if !self.contains_id(a) {
            return Err(ModelError::UnknownLocust(a));
        }
        let c = self.position(a);
        self.first_along(c, self.heading(a))
            .ok_or(ModelError::EmptyTrack(c.y))
    }

    /// The locust directly behind `a`; `a` itself when alone on its track.
    pub fn back_of(&self, a: LocustId) -> Result<LocustId, ModelError> {
        if !self.contains_id(a) {
            return Err(ModelError::UnknownLocust(a));
        }
        let c = self.position(a);
        self.first_along(c, -self.heading(a))
            .ok_or(ModelError::EmptyTrack(c.y))
    }

    pub fn dist_c(&self, from: Coord, to: Coord) -> Result<usize, ModelError> {
        self.lattice.dist_c(from, to)
    }

    pub fn dist_cc(&self, from: Coord, to: Coord) -> Result<usize, ModelError> {
        self.lattice.dist_cc(from, to)
    }

    /// The same arrangement with ids reassigned in scan order.
    pub fn canonical(&self) -> Configuration {
        let mut out = Configuration::from_locusts(
            self.n(),
            self.k(),
            self.ids().map(|id| (self.position(id), self.heading(id))),
        )
        .expect("a valid configuration relabels cleanly");
        out.time = self.time;
        out
    }
}

/// Checks occupancy consistency, dimensions, and the two-per-track guard.
pub fn validate(config: &Configuration, params: &ModelParams) -> Result<(), ModelError> {
    let lattice = config.lattice;
    Lattice::new(lattice.n, lattice.k)?;
    if config.cells.len() != lattice.cell_count() || config.positions.len() != config.headings.len() {
        return Err(ModelError::LengthMismatch {
            positions: config.positions.len(),
            headings: config.headings.len(),
        });
    }
    let mut seen = vec![false; config.positions.len()];
    for (index, slot) in config.cells.iter().enumerate() {
        let Some(id) = slot else { continue };
        let coord = lattice.coord(index);
        if !config.contains_id(*id) || config.positions[id.index()] != coord {
            return Err(ModelError::Inconsistent { coord });
        }
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(ModelError::DuplicateOccupancy { coord });
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let coord = config.positions[missing];
        // Two ids claiming one cell leave one of them unseen.
        return Err(if config.positions.iter().filter(|&&p| p == coord).count() > 1 {
            ModelError::DuplicateOccupancy { coord }
        } else {
            ModelError::Inconsistent { coord }
        });
    }
    if params.guard_min_two_per_track {
        for y in 1..=lattice.k {
            let population = config.track_population(y);
            if population < 2 {
                return Err(ModelError::UnderpopulatedTrack { track: y, population });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Heading::*;

    fn track(n: usize, pattern: &[(usize, Heading)]) -> Configuration {
        Configuration::from_locusts(n, 1, pattern.iter().map(|&(x, h)| (Coord::new(x, 1), h))).unwrap()
    }

    #[test]
    fn heading_negation_is_an_involution() {
        for h in [Clockwise, Counterclockwise] {
            assert_eq!(-(-h), h);
            assert_ne!(-h, h);
            assert_eq!(h.sign(), -(-h).sign());
        }
    }

    #[test]
    fn ring_distances() {
        let l = Lattice::new(8, 1).unwrap();
        let a = Coord::new(0, 1);
        let b = Coord::new(3, 1);
        assert_eq!(l.dist_c(a, b).unwrap(), 3);
        assert_eq!(l.dist_cc(a, b).unwrap(), 5);
        assert_eq!(l.dist_c(a, a).unwrap(), 0);
        assert_eq!(l.shift(a, -1), Coord::new(7, 1));
        assert_eq!(l.shift(b, 13), Coord::new(0, 1));
    }

    #[test]
    fn distances_across_tracks_fail() {
        let l = Lattice::new(8, 2).unwrap();
        assert!(matches!(
            l.dist_c(Coord::new(0, 1), Coord::new(0, 2)),
            Err(ModelError::DifferentTracks { from: 1, to: 2 })
        ));
    }

    #[test]
    fn duplicate_cell_rejected() {
        let err = Configuration::from_locusts(
            5,
            1,
            [(Coord::new(2, 1), Clockwise), (Coord::new(2, 1), Counterclockwise)],
        )
        .unwrap_err();
        assert_eq!(err, ModelError::DuplicateOccupancy { coord: Coord::new(2, 1) });

        let err = Configuration::from_parts(
            5,
            1,
            vec![Coord::new(1, 1), Coord::new(1, 1)],
            vec![Clockwise, Clockwise],
            0,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::DuplicateOccupancy { .. }));
    }

    #[test]
    fn guard_rejects_lonely_track() {
        let c = Configuration::from_locusts(
            6,
            2,
            [
                (Coord::new(0, 1), Clockwise),
                (Coord::new(3, 1), Clockwise),
                (Coord::new(2, 2), Counterclockwise),
            ],
        )
        .unwrap();
        assert_eq!(
            validate(&c, &ModelParams::default()),
            Err(ModelError::UnderpopulatedTrack { track: 2, population: 1 })
        );
        let unguarded = ModelParams {
            guard_min_two_per_track: false,
            ..Default::default()
        };
        assert_eq!(validate(&c, &unguarded), Ok(()));
    }

    #[test]
    fn small_rings_rejected() {
        assert_eq!(Lattice::new(2, 1), Err(ModelError::BadDimensions { n: 2, k: 1 }));
        assert!(Lattice::new(3, 0).is_err());
    }

    #[test]
    fn front_and_back_on_two_locust_track() {
        // ">.<"
        let c = track(3, &[(0, Clockwise), (2, Counterclockwise)]);
        let (cw, ccw) = (c.at(Coord::new(0, 1)).unwrap(), c.at(Coord::new(2, 1)).unwrap());
        assert_eq!(c.front_of(cw).unwrap(), ccw);
        assert_eq!(c.back_of(cw).unwrap(), ccw);
        assert_eq!(c.front_of(ccw).unwrap(), cw);
        assert_eq!(c.back_of(ccw).unwrap(), cw);
    }

    #[test]
    fn lone_locust_is_its_own_neighbour() {
        let c = track(5, &[(3, Counterclockwise)]);
        let a = LocustId(0);
        assert_eq!(c.front_of(a).unwrap(), a);
        assert_eq!(c.back_of(a).unwrap(), a);
    }

    #[test]
    fn front_wraps_around() {
        let c = track(8, &[(0, Clockwise), (4, Clockwise)]);
        let (a, b) = (LocustId(0), LocustId(1));
        assert_eq!(c.front_of(a).unwrap(), b);
        assert_eq!(c.front_of(b).unwrap(), a);
    }

    #[test]
    fn unknown_locust() {
        let c = track(5, &[(0, Clockwise)]);
        assert_eq!(c.front_of(LocustId(9)), Err(ModelError::UnknownLocust(LocustId(9))));
    }

    #[test]
    fn probabilities_checked() {
        let bad = ModelParams {
            switch_policy: SwitchPolicy::Probabilistic(1.5),
            ..Default::default()
        };
        assert!(matches!(bad.check(), Err(ModelError::BadProbability { name: "q", .. })));
        let bad = ModelParams {
            r: -0.1,
            ..Default::default()
        };
        assert!(bad.check().is_err());
        assert!(ModelParams::default().check().is_ok());
    }

    #[test]
    fn ids_follow_scan_order() {
        let c = Configuration::from_locusts(
            4,
            2,
            [
                (Coord::new(1, 2), Clockwise),
                (Coord::new(3, 1), Clockwise),
                (Coord::new(0, 1), Counterclockwise),
            ],
        )
        .unwrap();
        assert_eq!(c.position(LocustId(0)), Coord::new(0, 1));
        assert_eq!(c.position(LocustId(1)), Coord::new(3, 1));
        assert_eq!(c.position(LocustId(2)), Coord::new(1, 2));
        assert_eq!(c.scan_order(), vec![LocustId(0), LocustId(1), LocustId(2)]);
    }
}
