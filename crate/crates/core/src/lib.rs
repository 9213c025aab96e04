//! Collective marching of locusts on a ring cylinder of `k` parallel tracks.
//!
//! Each track is a ring of `n` cells. A locust faces clockwise or
//! counterclockwise, walks forward when the cell ahead is free, adopts the
//! heading of a neighbour it collides with, and may hop to an adjacent track
//! to escape an oncoming front. [`engine::step`] advances one time step,
//! [`analysis`] inspects segments, compact sets and potentials, [`oracle`]
//! solves small single-track instances exactly, and [`experiments`] runs
//! Monte Carlo sweeps.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod verify;

pub use engine::{run_until_stable, step, Mode, RunResult, StepReport};
pub use error::ModelError;
pub use io::{parse_grid, render_grid, AsciiGrid, RunConfigFile};
pub use model::{Configuration, Coord, Heading, Lattice, LocustId, ModelParams, SwitchPolicy};
pub use rng::RngStream;
