use thiserror::Error;

use crate::model::{Coord, LocustId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("bad dimensions n={n}, k={k}: need n >= 3 and k >= 1")]
    BadDimensions { n: usize, k: usize },
    #[error("two locusts occupy cell {coord}")]
    DuplicateOccupancy { coord: Coord },
    #[error("track {track} holds {population} locust(s), fewer than 2")]
    UnderpopulatedTrack { track: usize, population: usize },
    #[error("cell {coord} lies outside the {n}x{k} cylinder")]
    OutOfBounds { coord: Coord, n: usize, k: usize },
    #[error("occupancy grid and locust positions disagree at {coord}")]
    Inconsistent { coord: Coord },
    #[error("{positions} positions but {headings} headings")]
    LengthMismatch { positions: usize, headings: usize },
    #[error("unknown locust {0}")]
    UnknownLocust(LocustId),
    #[error("cells on tracks {from} and {to} have no ring distance")]
    DifferentTracks { from: usize, to: usize },
    #[error("track {0} is empty")]
    EmptyTrack(usize),
    #[error("probability {name}={value} is outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
}
