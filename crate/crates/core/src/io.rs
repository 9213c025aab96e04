//! Text formats: the ASCII grid and trace files, sweep CSV, and JSON run
//! configuration files.
//!
//! A grid is a `t=<step>` header followed by `k` lines of `n` glyphs. The
//! first line is the top track (`y = k`), the last is track 1; `x` grows left
//! to right. `.` is empty, `>` a clockwise locust, `<` a counterclockwise one.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Mode, DEFAULT_MAX_STEPS};
use crate::error::ModelError;
use crate::experiments::{ExperimentSpec, InitSpec, SweepRow};
use crate::model::{Configuration, Coord, Heading, ModelParams, SwitchPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {line}, column {column}: unexpected glyph {glyph:?}")]
    BadGlyph { line: usize, column: usize, glyph: char },
    #[error("line {line} has {found} cells, expected {expected}")]
    RaggedLines { line: usize, expected: usize, found: usize },
    #[error("grid has no tracks")]
    Empty,
    #[error("bad header {0:?}, expected t=<step>")]
    BadHeader(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Textual form of a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AsciiGrid {
    pub time: u64,
    /// Top track first.
    pub lines: Vec<String>,
}

impl AsciiGrid {
    pub fn render(config: &Configuration) -> Self {
        let lines = (1..=config.k())
            .rev()
            .map(|y| {
                (0..config.n())
                    .map(|x| config.heading_at(Coord::new(x, y)).map_or('.', Heading::glyph))
                    .collect()
            })
            .collect();
        AsciiGrid {
            time: config.time(),
            lines,
        }
    }

    /// Ids are assigned in scan order.
    pub fn to_configuration(&self) -> Result<Configuration, GridError> {
        let k = self.lines.len();
        if k == 0 {
            return Err(GridError::Empty);
        }
        let n = self.lines[0].chars().count();
        let mut locusts = Vec::new();
        for (row, line) in self.lines.iter().enumerate() {
            let found = line.chars().count();
            if found != n {
                return Err(GridError::RaggedLines {
                    line: row + 1,
                    expected: n,
                    found,
                });
            }
            let y = k - row;
            for (x, glyph) in line.chars().enumerate() {
                let heading = match glyph {
                    '.' => continue,
                    '>' => Heading::Clockwise,
                    '<' => Heading::Counterclockwise,
                    other => {
                        return Err(GridError::BadGlyph {
                            line: row + 1,
                            column: x + 1,
                            glyph: other,
                        })
                    }
                };
                locusts.push((Coord::new(x, y), heading));
            }
        }
        let mut config = Configuration::from_locusts(n, k, locusts)?;
        config.set_time(self.time);
        Ok(config)
    }
}

impl fmt::Display for AsciiGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "t={}", self.time)?;
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl FromStr for AsciiGrid {
    type Err = GridError;

    /// The header is optional; blank lines around the grid are ignored.
    fn from_str(text: &str) -> Result<Self, GridError> {
        let mut lines = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .skip_while(|l| l.trim().is_empty())
            .peekable();
        let mut time = 0;
        if let Some(first) = lines.peek() {
            if let Some(rest) = first.strip_prefix("t=") {
                time = rest.trim().parse().map_err(|_| GridError::BadHeader(first.to_string()))?;
                lines.next();
            }
        }
        let mut body: Vec<String> = lines.map(str::to_string).collect();
        while body.last().is_some_and(|l| l.trim().is_empty()) {
            body.pop();
        }
        Ok(AsciiGrid { time, lines: body })
    }
}

pub fn render_grid(config: &Configuration) -> String {
    AsciiGrid::render(config).to_string()
}

pub fn parse_grid(text: &str) -> Result<Configuration, GridError> {
    text.parse::<AsciiGrid>()?.to_configuration()
}

/// Grid blocks separated by blank lines.
pub fn render_trace<'a>(configs: impl IntoIterator<Item = &'a Configuration>) -> String {
    configs.into_iter().map(render_grid).collect::<Vec<_>>().join("\n")
}

pub fn parse_trace(text: &str) -> Result<Vec<Configuration>, GridError> {
    let mut blocks = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(parse_grid(&current)?);
                current.clear();
            }
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.is_empty() {
        blocks.push(parse_grid(&current)?);
    }
    Ok(blocks)
}

pub const CSV_HEADER: [&str; 16] = [
    "sweep",
    "point",
    "n",
    "k",
    "m",
    "density",
    "policy",
    "q",
    "p",
    "r",
    "mode",
    "trials",
    "seed",
    "mean_t_stable",
    "stderr",
    "timeouts",
];

pub fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Local => "local",
        Mode::Global => "global",
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv_to<W: Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record([
            row.sweep.clone(),
            row.point.to_string(),
            row.n.to_string(),
            row.k.to_string(),
            opt(row.m),
            row.density.clone(),
            row.policy.clone(),
            opt(row.q),
            row.p.to_string(),
            row.r.to_string(),
            mode_label(row.mode).to_string(),
            row.trials.to_string(),
            row.seed.to_string(),
            opt(row.mean_t_stable),
            opt(row.stderr),
            row.timeouts.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<(), csv::Error> {
    let file = std::fs::File::create(path)?;
    write_csv_to(rows, std::io::BufWriter::new(file))
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("run config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("run config: {0}")]
    Invalid(String),
    #[error("run config grid: {0}")]
    Grid(#[from] GridError),
    #[error("run config: {0}")]
    Model(#[from] ModelError),
    #[error("run config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitFile {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub p: f64,
    pub policy: PolicyFile,
    #[serde(default = "yes")]
    pub guard: bool,
}

fn yes() -> bool {
    true
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

/// JSON experiment description.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub n: usize,
    pub k: usize,
    pub init: InitFile,
    pub params: ParamsFile,
    pub mode: String,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

pub fn parse_policy(kind: &str, q: Option<f64>) -> Result<SwitchPolicy, String> {
    let policy = match (kind, q) {
        ("never", None) => SwitchPolicy::Never,
        ("eager", None) => SwitchPolicy::Eager,
        ("probabilistic", Some(q)) => SwitchPolicy::Probabilistic(q),
        ("probabilistic", None) => return Err("probabilistic policy needs q".into()),
        ("never" | "eager", Some(_)) => return Err(format!("policy {kind} takes no q")),
        (other, _) => return Err(format!("unknown policy {other:?}")),
    };
    Ok(policy)
}

pub fn parse_mode(text: &str) -> Result<Mode, String> {
    match text {
        "local" => Ok(Mode::Local),
        "global" => Ok(Mode::Global),
        other => Err(format!("unknown mode {other:?}")),
    }
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_spec(&self) -> Result<ExperimentSpec, ConfigError> {
        let invalid = ConfigError::Invalid;
        let params = ModelParams {
            r: self.params.r,
            p: self.params.p,
            switch_policy: parse_policy(&self.params.policy.kind, self.params.policy.q).map_err(invalid)?,
            guard_min_two_per_track: self.params.guard,
        };
        params.check()?;
        let mode = parse_mode(&self.mode).map_err(invalid)?;
        let i = &self.init;
        let extra = |what: &str| ConfigError::Invalid(format!("init type {} takes no {what}", i.kind));
        let init = match i.kind.as_str() {
            "dense" | "sparse" | "two_segment" | "explicit" if i.density.is_some() => return Err(extra("density")),
            "dense" | "sparse" | "explicit" if i.m.is_some() => return Err(extra("m")),
            "dense" | "sparse" | "two_segment" | "random" if i.grid.is_some() => return Err(extra("grid")),
            "dense" => InitSpec::Dense,
            "sparse" => InitSpec::Sparse,
            "two_segment" => InitSpec::TwoSegment {
                m: i.m.ok_or_else(|| invalid("two_segment init needs m".into()))?,
            },
            "random" => match (i.m, i.density) {
                (Some(m), None) => InitSpec::Random { m },
                (None, Some(d)) if (0.0..=1.0).contains(&d) => InitSpec::Fraction(d),
                (None, Some(d)) => return Err(ModelError::BadProbability { name: "density", value: d }.into()),
                _ => return Err(invalid("random init needs exactly one of m, density".into())),
            },
            "explicit" => {
                let grid = i.grid.as_deref().ok_or_else(|| invalid("explicit init needs grid".into()))?;
                let config = parse_grid(grid)?;
                if (config.n(), config.k()) != (self.n, self.k) {
                    return Err(invalid(format!(
                        "grid is {}x{}, config says {}x{}",
                        config.n(),
                        config.k(),
                        self.n,
                        self.k
                    )));
                }
                InitSpec::Explicit(config)
            }
            other => return Err(invalid(format!("unknown init type {other:?}"))),
        };
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1".into()));
        }
        Ok(ExperimentSpec {
            n: self.n,
            k: self.k,
            init,
            params,
            mode,
            trials: self.trials,
            base_seed: self.seed,
            max_steps: self.max_steps,
        })
    }
}
