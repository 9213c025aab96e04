//! Derived, read-only structure over a configuration: segments, maximal
//! compact sets, deadlocks and the two-segment potentials.

use thiserror::Error;

use crate::model::{Configuration, Heading, LocustId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("track {0} is empty")]
    EmptyTrack(usize),
    #[error("track {0} does not exist")]
    NoSuchTrack(usize),
    #[error("track {track} holds {found} segments, not 2")]
    NotTwoSegments { track: usize, found: usize },
    #[error("{p_tail} and {q_tail} are not the clockwise and counterclockwise tails of track {track}")]
    WrongTails {
        track: usize,
        p_tail: LocustId,
        q_tail: LocustId,
    },
}

/// A maximal run of same-heading locusts, listed from tail to head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub track: usize,
    pub heading: Heading,
    pub members: Vec<LocustId>,
}

impl Segment {
    pub fn tail(&self) -> LocustId {
        self.members[0]
    }

    pub fn head(&self) -> LocustId {
        *self.members.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Same-heading locusts on one track, each at most two cells behind the
/// next, listed from the rearmost to the foremost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompactSet {
    pub track: usize,
    pub heading: Heading,
    pub members: Vec<LocustId>,
}

impl CompactSet {
    pub fn head(&self) -> LocustId {
        *self.members.last().unwrap()
    }

    pub fn contains(&self, id: LocustId) -> bool {
        self.members.contains(&id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Potentials {
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    pub l: usize,
    pub f: usize,
}

fn occupied_track(config: &Configuration, track: usize) -> Result<Vec<LocustId>, AnalysisError> {
    if track < 1 || track > config.k() {
        return Err(AnalysisError::NoSuchTrack(track));
    }
    let ids = config.track(track);
    if ids.is_empty() {
        return Err(AnalysisError::EmptyTrack(track));
    }
    Ok(ids)
}

/// Walks a ring-ordered list from `start` in the direction of `heading`
/// while `keep(next)` holds, never revisiting `start`.
fn walk(ring: &[LocustId], start: usize, heading: Heading, mut keep: impl FnMut(usize, usize) -> bool) -> Vec<LocustId> {
    let len = ring.len();
    let mut out = vec![ring[start]];
    let mut i = start;
    loop {
        let next = match heading {
            Heading::Clockwise => (i + 1) % len,
            Heading::Counterclockwise => (i + len - 1) % len,
        };
        if next == start || !keep(i, next) {
            break;
        }
        out.push(ring[next]);
        i = next;
    }
    out
}

/// Splits the track into segments, ordered by the scan position of their tails.
/// A heading-uniform track is one segment whose tail is its lowest id.
pub fn extract_segments(config: &Configuration, track: usize) -> Result<Vec<Segment>, AnalysisError> {
    let ring = occupied_track(config, track)?;
    let len = ring.len();
    let heading_of = |i: usize| config.heading(ring[i]);

    if (0..len).all(|i| heading_of(i) == heading_of(0)) {
        let heading = heading_of(0);
        let start = (0..len).min_by_key(|&i| ring[i]).unwrap();
        return Ok(vec![Segment {
            track,
            heading,
            members: walk(&ring, start, heading, |_, _| true),
        }]);
    }

    let mut segments = Vec::new();
    for i in 0..len {
        let heading = heading_of(i);
        let back = match heading {
            Heading::Clockwise => (i + len - 1) % len,
            Heading::Counterclockwise => (i + 1) % len,
        };
        if heading_of(back) != heading {
            segments.push(Segment {
                track,
                heading,
                members: walk(&ring, i, heading, |_, next| heading_of(next) == heading),
            });
        }
    }
    Ok(segments)
}

/// Number of segments on a track; zero when empty.
pub fn segment_count(config: &Configuration, track: usize) -> usize {
    extract_segments(config, track).map_or(0, |s| s.len())
}

/// The segment whose tail is `tail`, if `tail` is currently a tail.
pub fn segment_with_tail(config: &Configuration, tail: LocustId) -> Option<Segment> {
    let track = config.position(tail).y;
    extract_segments(config, track)
        .ok()?
        .into_iter()
        .find(|s| s.tail() == tail)
}

pub fn is_track_stable(config: &Configuration, track: usize) -> bool {
    let mut headings = config.track(track).into_iter().map(|id| config.heading(id));
    match headings.next() {
        None => true,
        Some(first) => headings.all(|h| h == first),
    }
}

pub fn is_locally_stable(config: &Configuration) -> bool {
    (1..=config.k()).all(|y| is_track_stable(config, y))
}

pub fn is_globally_stable(config: &Configuration) -> bool {
    let h = config.headings();
    h.iter().all(|&x| x == h[0])
}

/// Whether the ring-consecutive locusts at `ring[i]` and `ring[i+1]` belong
/// to the same compact set.
fn linked(config: &Configuration, a: LocustId, b: LocustId) -> bool {
    config.heading(a) == config.heading(b)
        && config
            .dist_c(config.position(a), config.position(b))
            .is_ok_and(|d| d <= 2)
}

/// The unique partition of a track into maximal compact sets, ordered by the
/// scan position of each set's lowest-`x` member.
pub fn maximal_compact_partition(config: &Configuration, track: usize) -> Result<Vec<CompactSet>, AnalysisError> {
    let ring = occupied_track(config, track)?;
    let len = ring.len();
    let link = |i: usize| linked(config, ring[i], ring[(i + 1) % len]);

    let Some(break_at) = (0..len).find(|&i| !link(i)) else {
        // Compact all the way round.
        let heading = config.heading(ring[0]);
        let start = (0..len).min_by_key(|&i| ring[i]).unwrap();
        return Ok(vec![CompactSet {
            track,
            heading,
            members: walk(&ring, start, heading, |_, _| true),
        }]);
    };

    // Runs start right after a missing link. Rotate so the first run starts
    // at the lowest x that begins one.
    let starts: Vec<usize> = (0..len).filter(|&i| !link((i + len - 1) % len)).collect();
    debug_assert!(!starts.is_empty() && starts.contains(&((break_at + 1) % len)));
    let mut sets = Vec::with_capacity(starts.len());
    for &s in &starts {
        let mut run = vec![ring[s]];
        let mut i = s;
        while link(i) {
            i = (i + 1) % len;
            run.push(ring[i]);
        }
        let heading = config.heading(ring[s]);
        if heading == Heading::Counterclockwise {
            run.reverse();
        }
        sets.push(CompactSet {
            track,
            heading,
            members: run,
        });
    }
    Ok(sets)
}

/// Orders `ids` as a compact sequence if one exists.
pub fn as_compact(config: &Configuration, ids: &[LocustId]) -> Option<CompactSet> {
    let &first = ids.first()?;
    let track = config.position(first).y;
    let heading = config.heading(first);
    if ids
        .iter()
        .any(|&id| config.position(id).y != track || config.heading(id) != heading)
    {
        return None;
    }
    if ids.len() == 1 {
        return Some(CompactSet {
            track,
            heading,
            members: vec![first],
        });
    }
    // The rearmost member is the one whose back is not in the set. A full
    // circle has none; start anywhere then.
    let start = ids
        .iter()
        .copied()
        .find(|&id| !ids.contains(&config.back_of(id).ok().unwrap()))
        .unwrap_or(first);
    let mut members = vec![start];
    while members.len() < ids.len() {
        let last = *members.last().unwrap();
        let next = config.front_of(last).ok()?;
        if !ids.contains(&next) || members.contains(&next) {
            return None;
        }
        let gap = config
            .lattice()
            .dist_along(config.position(last), config.position(next), heading)
            .ok()?;
        if gap > 2 {
            return None;
        }
        members.push(next);
    }
    Some(CompactSet {
        track,
        heading,
        members,
    })
}

/// A clockwise compact set and a counterclockwise one whose heads touch.
pub fn in_deadlock(config: &Configuration, cw: &CompactSet, ccw: &CompactSet) -> bool {
    cw.heading == Heading::Clockwise
        && ccw.heading == Heading::Counterclockwise
        && cw.track == ccw.track
        && config
            .dist_c(config.position(cw.head()), config.position(ccw.head()))
            .is_ok_and(|d| d == 1)
}

/// All deadlocked (clockwise, counterclockwise) pairs of maximal compact sets.
pub fn detect_deadlocks(config: &Configuration, track: usize) -> Vec<(CompactSet, CompactSet)> {
    let Ok(sets) = maximal_compact_partition(config, track) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for cw in sets.iter().filter(|s| s.heading == Heading::Clockwise) {
        for ccw in sets.iter().filter(|s| s.heading == Heading::Counterclockwise) {
            if in_deadlock(config, cw, ccw) {
                out.push((cw.clone(), ccw.clone()));
            }
        }
    }
    out
}

/// Gap potentials for a track holding exactly two segments: `p_tail` is the
/// tail of the clockwise segment and `q_tail` the tail of the
/// counterclockwise one.
///
/// Positions are measured clockwise from `p_tail`, so every locust on the
/// track falls in `[0, d]` with `d` the position of `q_tail`. Clockwise
/// compact sets are ordered outward from `p_tail`, counterclockwise ones
/// outward from `q_tail`:
///
/// * `l1`: sum of gaps between consecutive clockwise sets;
/// * `l2`: the same for counterclockwise sets;
/// * `l3`: gap between the innermost clockwise and counterclockwise sets;
/// * `f`: empty cells between same-heading neighbouring sets plus the
///   track population.
pub fn compute_potentials(
    config: &Configuration,
    track: usize,
    p_tail: LocustId,
    q_tail: LocustId,
) -> Result<Potentials, AnalysisError> {
    let segments = extract_segments(config, track)?;
    if segments.len() != 2 {
        return Err(AnalysisError::NotTwoSegments {
            track,
            found: segments.len(),
        });
    }
    let tails_ok = segments
        .iter()
        .any(|s| s.tail() == p_tail && s.heading == Heading::Clockwise)
        && segments
            .iter()
            .any(|s| s.tail() == q_tail && s.heading == Heading::Counterclockwise);
    if !tails_ok {
        return Err(AnalysisError::WrongTails { track, p_tail, q_tail });
    }

    let origin = config.position(p_tail);
    let rel = |id: LocustId| config.dist_c(origin, config.position(id)).unwrap();
    let span = |set: &CompactSet| {
        let xs = set.members.iter().map(|&id| rel(id));
        let (lo, hi) = xs.fold((usize::MAX, 0), |(lo, hi), x| (lo.min(x), hi.max(x)));
        (lo, hi)
    };
    let sets = maximal_compact_partition(config, track)?;
    let mut cw: Vec<(usize, usize)> = sets
        .iter()
        .filter(|s| s.heading == Heading::Clockwise)
        .map(span)
        .collect();
    let mut ccw: Vec<(usize, usize)> = sets
        .iter()
        .filter(|s| s.heading == Heading::Counterclockwise)
        .map(span)
        .collect();
    cw.sort_unstable();
    ccw.sort_unstable_by(|a, b| b.cmp(a));

    let l1: usize = cw.windows(2).map(|w| w[1].0 - w[0].1).sum();
    let l2: usize = ccw.windows(2).map(|w| w[0].0 - w[1].1).sum();
    let l3 = ccw.last().unwrap().0 - cw.last().unwrap().1;
    let population = config.track_population(track);
    let f = l1 + l2 + population + 2 - cw.len() - ccw.len();
    Ok(Potentials {
        l1,
        l2,
        l3,
        l: l1 + l2 + l3,
        f,
    })
}
