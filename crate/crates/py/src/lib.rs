//! Python module `ring_march`: configurations, stepping, Monte Carlo runs,
//! figure sweeps and the exact single-track oracle.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ring_march::analysis::{extract_segments, is_globally_stable, is_locally_stable};
use ring_march::experiments::{monte_carlo_with_workers, sweep_column, worker_count, Density, ExperimentSpec, SweepColumn, InitSpec, SweepRow};
use ring_march::io::{parse_mode, parse_policy, write_csv_to};
use ring_march::oracle::exact_expected_stabilization;
use ring_march::{engine, Heading, ModelParams, RngStream, RunConfigFile};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model_params(r: f64, p: f64, policy: &str, q: Option<f64>, guard: bool) -> PyResult<ModelParams> {
    let params = ModelParams {
        r,
        p,
        switch_policy: parse_policy(policy, q).map_err(value_error)?,
        guard_min_two_per_track: guard,
    };
    params.check().map_err(value_error)?;
    Ok(params)
}

type CellPair = ((usize, usize), (usize, usize));

fn csv_text(rows: &[SweepRow]) -> PyResult<String> {
    let mut buf = Vec::new();
    write_csv_to(rows, &mut buf).map_err(value_error)?;
    String::from_utf8(buf).map_err(value_error)
}

/// Locusts on a `k x n` ring cylinder.
#[pyclass(name = "Configuration", eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyConfiguration {
    inner: ring_march::Configuration,
}

#[pymethods]
impl PyConfiguration {
    /// Parses a grid: optional `t=<step>` header, then one line per track
    /// from track k down to track 1.
    #[new]
    fn new(grid: &str) -> PyResult<Self> {
        let inner = ring_march::parse_grid(grid).map_err(value_error)?;
        Ok(PyConfiguration { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn time(&self) -> u64 {
        self.inner.time()
    }

    fn render(&self) -> String {
        ring_march::render_grid(&self.inner)
    }

    /// `(x, track, glyph)` per locust in id order.
    fn locusts(&self) -> Vec<(usize, usize, char)> {
        self.inner
            .ids()
            .map(|id| {
                let c = self.inner.position(id);
                (c.x, c.y, self.inner.heading(id).glyph())
            })
            .collect()
    }

    fn is_locally_stable(&self) -> bool {
        is_locally_stable(&self.inner)
    }

    fn is_globally_stable(&self) -> bool {
        is_globally_stable(&self.inner)
    }

    /// Cell positions of each segment on `track`, tail first.
    fn segments(&self, track: usize) -> PyResult<Vec<Vec<usize>>> {
        let segments = extract_segments(&self.inner, track).map_err(value_error)?;
        Ok(segments
            .iter()
            .map(|s| s.members.iter().map(|&id| self.inner.position(id).x).collect())
            .collect())
    }

    fn clockwise_count(&self) -> usize {
        self.inner.headings().iter().filter(|&&h| h == Heading::Clockwise).count()
    }

    fn __str__(&self) -> String {
        self.render()
    }

    fn __repr__(&self) -> String {
        format!("Configuration({:?})", self.render())
    }
}

/// A configuration advancing under fixed parameters and a seeded stream.
#[pyclass(name = "Simulation")]
struct PySimulation {
    config: ring_march::Configuration,
    params: ModelParams,
    rng: RngStream,
}

#[pymethods]
impl PySimulation {
    #[new]
    #[pyo3(signature = (config, seed=0, r=0.0, p=0.0, policy="eager", q=None, guard=true))]
    fn new(config: &PyConfiguration, seed: u64, r: f64, p: f64, policy: &str, q: Option<f64>, guard: bool) -> PyResult<Self> {
        let params = model_params(r, p, policy, q, guard)?;
        ring_march::model::validate(&config.inner, &params).map_err(value_error)?;
        Ok(PySimulation {
            config: config.inner.clone(),
            params,
            rng: RngStream::new(seed),
        })
    }

    #[getter]
    fn config(&self) -> PyConfiguration {
        PyConfiguration {
            inner: self.config.clone(),
        }
    }

    /// Advances one step and summarises what happened.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = ring_march::step(&mut self.config, &mut self.rng, &self.params).map_err(value_error)?;
        let out = PyDict::new(py);
        out.set_item("time", report.time)?;
        out.set_item("conflicts", report.conflicts.len())?;
        out.set_item("horizontal_moves", report.horizontal_moves.len())?;
        out.set_item("contested_cells", report.contested_cells.len())?;
        let vertical: Vec<(CellPair, bool)> = report
            .vertical_moves
            .iter()
            .map(|v| (((v.from.x, v.from.y), (v.to.x, v.to.y)), v.erratic))
            .collect();
        out.set_item("vertical_moves", vertical)?;
        out.set_item("erratic_rests", report.erratic_rests.len())?;
        Ok(out)
    }

    /// Steps until stable under `mode` ("local" or "global") or until
    /// `max_steps`; returns `(t_stable or None, total conflicts)`.
    #[pyo3(signature = (mode="local", max_steps=engine::DEFAULT_MAX_STEPS))]
    fn run(&mut self, mode: &str, max_steps: u64) -> PyResult<(Option<u64>, u64)> {
        let mode = parse_mode(mode).map_err(value_error)?;
        let start = self.config.clone();
        let result = engine::run_until_stable(start, &mut self.rng, &self.params, mode, max_steps, false).map_err(value_error)?;
        self.config = result.final_config;
        Ok((result.t_stable, result.total_conflicts))
    }
}

fn init_spec(init: &str, m: Option<usize>, density: Option<f64>, grid: Option<&str>) -> PyResult<InitSpec> {
    Ok(match (init, m, density, grid) {
        ("dense", None, None, None) => InitSpec::Dense,
        ("sparse", None, None, None) => InitSpec::Sparse,
        ("two_segment", Some(m), None, None) => InitSpec::TwoSegment { m },
        ("random", Some(m), None, None) => InitSpec::Random { m },
        ("random", None, Some(d), None) => InitSpec::Fraction(d),
        ("explicit", None, None, Some(g)) => InitSpec::Explicit(ring_march::parse_grid(g).map_err(value_error)?),
        _ => return Err(PyValueError::new_err(format!("bad arguments for init {init:?}"))),
    })
}

/// Monte Carlo estimate of the stabilisation time.
#[pyfunction]
#[pyo3(signature = (n, k, init="sparse", trials=100, seed=0, mode="local", r=0.0, p=0.0, policy="eager", q=None, guard=true, m=None, density=None, grid=None, max_steps=engine::DEFAULT_MAX_STEPS))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo<'py>(
    py: Python<'py>,
    n: usize,
    k: usize,
    init: &str,
    trials: usize,
    seed: u64,
    mode: &str,
    r: f64,
    p: f64,
    policy: &str,
    q: Option<f64>,
    guard: bool,
    m: Option<usize>,
    density: Option<f64>,
    grid: Option<&str>,
    max_steps: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut spec = ExperimentSpec::new(
        n,
        k,
        init_spec(init, m, density, grid)?,
        model_params(r, p, policy, q, guard)?,
        parse_mode(mode).map_err(value_error)?,
        trials,
        seed,
    );
    spec.max_steps = max_steps;
    let result = py
        .detach(|| monte_carlo_with_workers(&spec, worker_count()))
        .map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("trials", result.trials)?;
    out.set_item("mean_t_stable", result.mean_t_stable)?;
    out.set_item("stderr", result.stderr)?;
    out.set_item("mean_conflicts", result.mean_conflicts)?;
    out.set_item("timeouts", result.timeouts)?;
    out.set_item("m", result.m)?;
    Ok(out)
}

/// Exact expected stabilisation time of a one-track grid with `r = p = 0`.
#[pyfunction]
fn exact_expected(grid: &str) -> PyResult<f64> {
    let start = ring_march::parse_grid(grid).map_err(value_error)?;
    let result = exact_expected_stabilization(start.n(), start.m(), &start).map_err(value_error)?;
    Ok(result.expected_t_stable)
}

/// One panel ("a", "b" or "c") of the stabilisation-time figure as CSV text.
#[pyfunction]
#[pyo3(signature = (column, density="sparse", policy="eager", q=None, trials=1000, seed=1))]
fn sweep(py: Python<'_>, column: &str, density: &str, policy: &str, q: Option<f64>, trials: usize, seed: u64) -> PyResult<String> {
    let column = match column {
        "a" => SweepColumn::A,
        "b" => SweepColumn::B,
        "c" => SweepColumn::C,
        other => return Err(PyValueError::new_err(format!("unknown column {other:?}"))),
    };
    let density = match density {
        "dense" => Density::Dense,
        "sparse" => Density::Sparse,
        other => return Err(PyValueError::new_err(format!("unknown density {other:?}"))),
    };
    let policy = parse_policy(policy, q).map_err(value_error)?;
    let rows = py
        .detach(|| sweep_column(column, density, policy, trials, seed, worker_count()))
        .map_err(value_error)?;
    csv_text(&rows)
}

/// Runs a JSON experiment description and returns its CSV row.
#[pyfunction]
fn run_config(py: Python<'_>, json: &str) -> PyResult<String> {
    let spec = RunConfigFile::from_json(json)
        .and_then(|c| c.to_spec())
        .map_err(value_error)?;
    let result = py
        .detach(|| monte_carlo_with_workers(&spec, worker_count()))
        .map_err(value_error)?;
    csv_text(&[SweepRow::from_result("experiment", 0, &spec, &result)])
}

#[pymodule]
#[pyo3(name = "ring_march")]
fn ring_march_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfiguration>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(exact_expected, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
