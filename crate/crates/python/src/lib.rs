//! Python bindings for `psbt_core`.

use std::collections::{BTreeMap, HashMap};

use psbt_core::gridmodel::{self, CellIndex, DetectionDisc, GridSpec};
use psbt_core::navgrid;
use psbt_core::planner::{self, PlanOutcome, PlanReport, PlanningProblem, Strategy};
use psbt_core::sim::{self, SimConfig};
use psbt_core::Point;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn point(p: (f64, f64)) -> Point {
    Point::new(p.0, p.1)
}

fn grid_spec(width: usize, height: usize, cell_size: f64, origin: (f64, f64)) -> PyResult<GridSpec> {
    GridSpec::new(width, height, cell_size, point(origin)).map_err(value_err)
}

/// Gamma-Poisson rate grid.
#[pyclass(module = "psbt", skip_from_py_object)]
#[derive(Clone)]
struct RateGrid {
    inner: gridmodel::RateGrid,
}

#[pymethods]
impl RateGrid {
    /// Grid with the default `(1, 1)` prior in every cell.
    #[new]
    #[pyo3(signature = (width, height, cell_size = 1.0, origin = (0.0, 0.0)))]
    fn new(width: usize, height: usize, cell_size: f64, origin: (f64, f64)) -> PyResult<Self> {
        let inner = gridmodel::RateGrid::new(grid_spec(width, height, cell_size, origin)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Grid with known rates in row-major order.
    #[staticmethod]
    #[pyo3(signature = (width, height, rates, cell_size = 1.0, origin = (0.0, 0.0)))]
    fn from_rates(width: usize, height: usize, rates: Vec<f64>, cell_size: f64, origin: (f64, f64)) -> PyResult<Self> {
        let inner = gridmodel::RateGrid::from_rates(grid_spec(width, height, cell_size, origin)?, &rates).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = gridmodel::RateGrid::from_json(text).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.spec.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.spec.height
    }

    #[getter]
    fn cell_size(&self) -> f64 {
        self.inner.spec.cell_size
    }

    fn rate(&self, x: usize, y: usize) -> PyResult<f64> {
        let c = CellIndex::new(x, y);
        self.inner.spec.check(c).map_err(value_err)?;
        Ok(self.inner.rate(c))
    }

    /// `(alpha, beta)` of one cell.
    fn cell(&self, x: usize, y: usize) -> PyResult<(f64, f64)> {
        let c = CellIndex::new(x, y);
        self.inner.spec.check(c).map_err(value_err)?;
        let rc = self.inner.cell(c);
        Ok((rc.alpha, rc.beta))
    }

    /// Posterior means, row-major.
    fn means(&self) -> Vec<f64> {
        self.inner.means()
    }

    /// One observation step from `pose`; `counts` maps `(x, y)` cells to
    /// detections.
    #[pyo3(signature = (pose, counts, radius = 2.0))]
    fn update(&mut self, pose: (f64, f64), counts: HashMap<(usize, usize), u32>, radius: f64) -> PyResult<()> {
        let counts: BTreeMap<CellIndex, u32> = counts.into_iter().map(|((x, y), n)| (CellIndex::new(x, y), n)).collect();
        self.inner.update(point(pose), &counts, radius).map_err(value_err)
    }

    /// Summed rate over the cells whose centers lie in the disc.
    #[pyo3(signature = (center, radius = 2.0))]
    fn rate_in_disc(&self, center: (f64, f64), radius: f64) -> PyResult<f64> {
        let disc = DetectionDisc::new(point(center), radius).map_err(value_err)?;
        Ok(self.inner.rate_in_disc(&disc).rate)
    }

    /// Poisson arrivals as `(time_s, x, y, count)` tuples.
    #[pyo3(signature = (horizon, dt = 1.0, seed = 0))]
    fn simulate_arrivals(&self, horizon: f64, dt: f64, seed: u64) -> PyResult<Vec<(f64, usize, usize, u32)>> {
        let events = self.inner.simulate_arrivals(horizon, dt, seed).map_err(value_err)?;
        Ok(events.into_iter().map(|e| (e.time_s, e.cell_x, e.cell_y, e.count)).collect())
    }

    fn __repr__(&self) -> String {
        let max = self.inner.means().into_iter().fold(0.0, f64::max);
        format!("RateGrid({}x{}, max rate {max:.4}/s)", self.inner.spec.width, self.inner.spec.height)
    }
}

/// Binary occupancy map used for navigation.
#[pyclass(module = "psbt", skip_from_py_object)]
#[derive(Clone)]
struct OccupancyMap {
    inner: navgrid::OccupancyMap,
}

#[pymethods]
impl OccupancyMap {
    /// Map with every cell free.
    #[new]
    #[pyo3(signature = (width, height, cell_size = 1.0, origin = (0.0, 0.0)))]
    fn new(width: usize, height: usize, cell_size: f64, origin: (f64, f64)) -> PyResult<Self> {
        Ok(Self {
            inner: navgrid::OccupancyMap::empty(grid_spec(width, height, cell_size, origin)?),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = navgrid::OccupancyMap::from_json(text).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Binary PGM (P5); pixels darker than `threshold` are blocked.
    #[staticmethod]
    #[pyo3(signature = (data, cell_size = 1.0, origin = (0.0, 0.0), threshold = 128))]
    fn from_pgm(data: &[u8], cell_size: f64, origin: (f64, f64), threshold: u8) -> PyResult<Self> {
        let inner = navgrid::OccupancyMap::from_pgm(data, cell_size, point(origin), threshold).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.spec().width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.spec().height
    }

    #[pyo3(signature = (x, y, blocked = true))]
    fn set_blocked(&mut self, x: usize, y: usize, blocked: bool) -> PyResult<()> {
        let c = CellIndex::new(x, y);
        self.inner.spec().check(c).map_err(value_err)?;
        self.inner.set_blocked(c, blocked);
        Ok(())
    }

    fn is_free(&self, x: usize, y: usize) -> PyResult<bool> {
        let c = CellIndex::new(x, y);
        self.inner.spec().check(c).map_err(value_err)?;
        Ok(self.inner.is_free(c))
    }

    /// Shortest 8-connected path between two world points, as cell
    /// centers.
    fn shortest_path(&self, start: (f64, f64), goal: (f64, f64)) -> PyResult<Vec<(f64, f64)>> {
        let spec = self.inner.spec();
        let cell = |p: (f64, f64)| {
            spec.world_to_cell(point(p))
                .ok_or_else(|| PyValueError::new_err(format!("({}, {}) lies outside the map", p.0, p.1)))
        };
        let cells = self.inner.shortest_cells(cell(start)?, cell(goal)?).map_err(value_err)?;
        Ok(cells
            .into_iter()
            .map(|c| {
                let p = spec.cell_center(c);
                (p.x, p.y)
            })
            .collect())
    }
}

/// Planning parameters. Unset keywords keep their defaults.
#[pyclass(module = "psbt", skip_from_py_object)]
#[derive(Clone)]
struct PlanningConfig {
    inner: planner::PlanningConfig,
}

#[pymethods]
impl PlanningConfig {
    #[new]
    #[pyo3(signature = (*, n = None, t_max = None, dt = None, seed = None, detection_radius = None, p_s_prime = None, l_fail = None, avg_speed = None, max_wait = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n: Option<usize>,
        t_max: Option<f64>,
        dt: Option<f64>,
        seed: Option<u64>,
        detection_radius: Option<f64>,
        p_s_prime: Option<f64>,
        l_fail: Option<f64>,
        avg_speed: Option<f64>,
        max_wait: Option<f64>,
    ) -> PyResult<Self> {
        let mut c = planner::PlanningConfig::default();
        if let Some(v) = n {
            c.n = v;
        }
        if let Some(v) = t_max {
            c.t_max = v;
        }
        if let Some(v) = dt {
            c.dt = v;
        }
        if let Some(v) = seed {
            c.seed = v;
        }
        if let Some(v) = detection_radius {
            c.detection_radius = v;
        }
        if let Some(v) = p_s_prime {
            c.p_s_prime = v.try_into().map_err(value_err)?;
        }
        if let Some(v) = l_fail {
            c.l_fail = v;
        }
        if let Some(v) = avg_speed {
            c.avg_speed = v;
        }
        if let Some(v) = max_wait {
            c.max_wait = v;
        }
        c.validate().map_err(value_err)?;
        Ok(Self { inner: c })
    }

    /// Reads the `[planning]` table format of the experiment config.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: planner::PlanningConfig = toml::from_str(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(run_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn t_max(&self) -> f64 {
        self.inner.t_max
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "PlanningConfig(n={}, t_max={}, dt={}, seed={}, detection_radius={}, p_s_prime={}, l_fail={}, avg_speed={})",
            c.n,
            c.t_max,
            c.dt,
            c.seed,
            c.detection_radius,
            c.p_s_prime.get(),
            c.l_fail,
            c.avg_speed
        )
    }
}

/// A synthesized and scored search tree.
#[pyclass(module = "psbt")]
struct Plan {
    outcome: PlanOutcome,
}

#[pymethods]
impl Plan {
    #[getter]
    fn strategy(&self) -> &'static str {
        self.outcome.chosen.strategy.name()
    }

    /// Children of the fallback, e.g. `"S0→1, W1, Home"`.
    #[getter]
    fn label(&self) -> String {
        self.outcome.chosen.tree.label.clone()
    }

    /// Model success probability at `t_max`.
    #[getter]
    fn p_success(&self) -> f64 {
        self.outcome.chosen.p_success()
    }

    /// Model expected time to success, `None` if success is impossible.
    #[getter]
    fn expected_time(&self) -> Option<f64> {
        self.outcome.chosen.score.expected_time_to_success
    }

    /// Help location first, then the sampled places.
    #[getter]
    fn places(&self) -> Vec<(f64, f64)> {
        self.outcome.chosen.places.iter().map(|p| (p.position.x, p.position.y)).collect()
    }

    #[getter]
    fn tour(&self) -> Vec<usize> {
        self.outcome.chosen.tour.clone()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.outcome.warnings.clone()
    }

    /// Number of candidate trees scored and excluded.
    #[getter]
    fn candidates(&self) -> (usize, usize) {
        (self.outcome.candidates.len(), self.outcome.excluded)
    }

    #[getter]
    fn planning_time(&self) -> f64 {
        self.outcome.planning_time.as_secs_f64()
    }

    /// `(times, p_success, p_fail)` of the chosen tree.
    fn curve(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s = &self.outcome.chosen.score;
        (s.times.clone(), s.p_success.clone(), s.p_fail.clone())
    }

    fn p_success_at(&self, t: f64) -> f64 {
        self.outcome.chosen.score.p_success_at(t)
    }

    /// Same document the `plan` command writes.
    fn to_json(&self) -> String {
        PlanReport::new(&self.outcome, None).to_json()
    }

    fn __repr__(&self) -> String {
        format!("Plan({}: {}, p_success={:.4})", self.strategy(), self.label(), self.p_success())
    }
}

fn problem(grid: &RateGrid, map: &OccupancyMap, help: (f64, f64), config: Option<&PlanningConfig>) -> PyResult<PlanningProblem> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    PlanningProblem::new(map.inner.clone(), grid.inner.clone(), point(help), cfg).map_err(value_err)
}

fn strategy(name: &str) -> PyResult<Strategy> {
    name.parse().map_err(value_err)
}

/// Plans `strategy` (`PSBT`, `W`, `NW`, `GC`, `GM` or `RND`) from the help
/// location.
#[pyfunction]
#[pyo3(signature = (grid, map, help, config = None, strategy = "PSBT"))]
fn plan(
    py: Python<'_>,
    grid: &RateGrid,
    map: &OccupancyMap,
    help: (f64, f64),
    config: Option<&PlanningConfig>,
    strategy: &str,
) -> PyResult<Plan> {
    let problem = problem(grid, map, help, config)?;
    let s = self::strategy(strategy)?;
    let outcome = py.detach(|| planner::plan_baseline(&problem, s)).map_err(run_err)?;
    Ok(Plan { outcome })
}

fn sim_config(cfg: &planner::PlanningConfig, runs: usize, seed: u64, person_dwell: f64) -> SimConfig {
    SimConfig {
        dt: cfg.dt,
        runs,
        detection_radius: cfg.detection_radius,
        seed,
        person_dwell,
        avg_speed: cfg.avg_speed,
        semantics: cfg.semantics,
        plan_variants: 1,
    }
}

/// Monte Carlo replay of a plan against `truth`. Returns one dict per run.
#[pyfunction]
#[pyo3(signature = (plan, truth, map, runs = 1000, seed = 0, config = None, person_dwell = 0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    plan: &Plan,
    truth: &RateGrid,
    map: &OccupancyMap,
    runs: usize,
    seed: u64,
    config: Option<&PlanningConfig>,
    person_dwell: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = sim_config(&config.map(|c| c.inner).unwrap_or_default(), runs, seed, person_dwell);
    let outcomes = py
        .detach(|| sim::run_many(&plan.outcome.chosen, &truth.inner, &map.inner, &cfg))
        .map_err(run_err)?;
    outcomes
        .into_iter()
        .map(|o| {
            let d = PyDict::new(py);
            d.set_item("run_id", o.run_id)?;
            d.set_item("success", o.success)?;
            d.set_item("t_find", o.t_find)?;
            d.set_item("t_r", o.t_r)?;
            d.set_item("found_by", o.found_by)?;
            d.set_item("failure_cause", o.failure_cause.map(|c| c.as_str()))?;
            d.set_item("end_time", o.end_time)?;
            Ok(d)
        })
        .collect()
}

/// Plans and evaluates several strategies under common random numbers.
/// Returns one summary dict per strategy.
#[pyfunction]
#[pyo3(signature = (grid, map, help, strategies = vec!["PSBT".to_string(), "W".to_string()], runs = 1000, seed = 0, truth = None, config = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    grid: &RateGrid,
    map: &OccupancyMap,
    help: (f64, f64),
    strategies: Vec<String>,
    runs: usize,
    seed: u64,
    truth: Option<&RateGrid>,
    config: Option<&PlanningConfig>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let problem = problem(grid, map, help, config)?;
    let strategies = strategies.iter().map(|s| strategy(s)).collect::<PyResult<Vec<_>>>()?;
    let truth = truth.map_or(&grid.inner, |t| &t.inner);
    let cfg = sim_config(&problem.config, runs, seed, 0.0);
    let report = py
        .detach(|| sim::evaluate(&strategies, &problem, truth, &cfg))
        .map_err(run_err)?;
    report
        .summary
        .iter()
        .zip(&report.strategies)
        .map(|(s, r)| {
            let d = PyDict::new(py);
            d.set_item("strategy", &s.strategy)?;
            d.set_item("label", &r.plans[0].tree.label)?;
            d.set_item("runs", s.runs)?;
            d.set_item("successes", s.successes)?;
            d.set_item("p_success", s.p_success)?;
            d.set_item("p_std_err", s.p_std_err)?;
            d.set_item("t_r_mean", s.t_r_mean_s)?;
            d.set_item("t_r_std", s.t_r_std_s)?;
            d.set_item("model_expected_time", s.model_expected_time_s)?;
            d.set_item("model_p_success_t_max", s.model_p_success_t_max)?;
            Ok(d)
        })
        .collect()
}

/// Independent stream seed derived from a master seed.
#[pyfunction]
fn derive_seed(master: u64, stream: u64) -> u64 {
    psbt_core::derive_seed(master, stream)
}

#[pymodule]
fn psbt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RateGrid>()?;
    m.add_class::<OccupancyMap>()?;
    m.add_class::<PlanningConfig>()?;
    m.add_class::<Plan>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
