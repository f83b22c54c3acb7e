//! Batch front end: training from detection logs, planning and
//! evaluation. Every command is a plain function so it can be driven from
//! tests as well as from the `psbt` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::geom::Point;
use crate::gridmodel::{
    write_events_csv, GridSpec, RateGrid, DEFAULT_CELL_SIZE, DEFAULT_HEIGHT, DEFAULT_WIDTH,
};
use crate::navgrid::{OccupancyMap, DEFAULT_PGM_THRESHOLD};
use crate::planner::{plan_baseline, PlanOutcome, PlanReport, PlanningConfig, PlanningError, PlanningProblem, Strategy};
use crate::sim::{evaluate, SimConfig, SimError, SimReport};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Run(_) => 1,
        }
    }
}

impl From<PlanningError> for CliError {
    fn from(e: PlanningError) -> Self {
        match e {
            PlanningError::Config { .. } => CliError::Config(e.to_string()),
            PlanningError::Nav(_) => CliError::Input(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonPositive { .. } | SimError::Empty => CliError::Config(e.to_string()),
            SimError::Planning(p) => p.into(),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Run(format!("{}: {e}", path.display()))
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub strategies: Vec<Strategy>,
    pub runs: usize,
    pub person_dwell: f64,
    pub plan_variants: usize,
    /// Spacing of the exported `pₛ,T(t_k)` samples, seconds.
    pub curve_interval: f64,
    /// Last exported sample; defaults to `t_max`.
    pub curve_t_max: Option<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            runs: 1000,
            person_dwell: 0.0,
            plan_variants: 1,
            curve_interval: 20.0,
            curve_t_max: None,
        }
    }
}

/// One experiment: input files, model parameters and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON map or binary PGM; an open map over the grid when absent.
    pub map: Option<PathBuf>,
    /// Learned rate grid used for planning.
    pub grid: Option<PathBuf>,
    /// Ground-truth grid for evaluation; the planning grid when absent.
    pub truth: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub help_location: [f64; 2],
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub pgm_threshold: u8,
    pub planning: PlanningConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            map: None,
            grid: None,
            truth: None,
            output_dir: PathBuf::from("out"),
            help_location: [0.5, 0.5],
            seed: 0,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            cell_size: DEFAULT_CELL_SIZE,
            origin: [0.0, 0.0],
            pgm_threshold: DEFAULT_PGM_THRESHOLD,
            planning: PlanningConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for p in [&mut cfg.map, &mut cfg.grid, &mut cfg.truth].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(self.width, self.height, self.cell_size, Point::from(self.origin))
            .map_err(|e| CliError::Config(format!("grid dimensions: {e}")))
    }

    /// Planning parameters with the master seed applied.
    pub fn planning_config(&self) -> PlanningConfig {
        PlanningConfig {
            seed: self.seed,
            ..self.planning
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.planning.dt,
            runs: self.evaluation.runs,
            detection_radius: self.planning.detection_radius,
            seed: derive_seed(self.seed, 0x5151),
            person_dwell: self.evaluation.person_dwell,
            avg_speed: self.planning.avg_speed,
            semantics: self.planning.semantics,
            plan_variants: self.evaluation.plan_variants,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.planning_config().validate()?;
        self.sim_config().validate()?;
        if self.evaluation.strategies.is_empty() {
            return Err(CliError::Config("field `evaluation.strategies` is empty".into()));
        }
        if !(self.evaluation.curve_interval > 0.0) {
            return Err(CliError::Config("field `evaluation.curve_interval` must be positive".into()));
        }
        self.grid_spec().map(|_| ())
    }

    fn load_grid(&self, path: &Option<PathBuf>, field: &str) -> Result<RateGrid, CliError> {
        let path = path
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("field `{field}` is required")))?;
        let text = String::from_utf8(read_input(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        RateGrid::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn load_map(&self, fallback: GridSpec) -> Result<OccupancyMap, CliError> {
        let Some(path) = &self.map else {
            return Ok(OccupancyMap::empty(fallback));
        };
        let bytes = read_input(path)?;
        let bad = |e: String| CliError::Input(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            OccupancyMap::from_pgm(&bytes, self.cell_size, Point::from(self.origin), self.pgm_threshold).map_err(|e| bad(e.to_string()))
        } else {
            let text = String::from_utf8(bytes).map_err(|e| bad(e.to_string()))?;
            OccupancyMap::from_json(&text).map_err(|e| bad(e.to_string()))
        }
    }

    pub fn problem(&self) -> Result<PlanningProblem, CliError> {
        self.validate()?;
        let grid = self.load_grid(&self.grid, "grid")?;
        let map = self.load_map(grid.spec)?;
        Ok(PlanningProblem::new(map, grid, Point::from(self.help_location), self.planning_config())?)
    }

    pub fn truth(&self, problem: &PlanningProblem) -> Result<RateGrid, CliError> {
        match &self.truth {
            Some(_) => self.load_grid(&self.truth, "truth"),
            None => Ok(problem.grid.clone()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct DetectionRow {
    time_s: f64,
    robot_x: f64,
    robot_y: f64,
    person_x: Option<f64>,
    person_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub windows: usize,
    pub detections: usize,
    pub total_alpha: f64,
    pub total_beta: f64,
    pub max_rate: f64,
}

/// Replays detection rows through the Gamma update, one update per `dt`
/// window at the robot pose of the window's first row. Rows without a
/// person are empty observations.
pub fn train_grid(csv_text: &str, mut grid: RateGrid, radius: f64, dt: f64) -> Result<(RateGrid, TrainSummary), CliError> {
    if !(dt > 0.0) || !(radius > 0.0) {
        return Err(CliError::Config("training needs positive dt and detection radius".into()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<DetectionRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = rec.map_err(|e| CliError::Input(format!("line {line}: {e}")))?;
        if !row.time_s.is_finite() || !row.robot_x.is_finite() || !row.robot_y.is_finite() {
            return Err(CliError::Input(format!("line {line}: non-finite value")));
        }
        if row.person_x.is_some() != row.person_y.is_some() {
            return Err(CliError::Input(format!("line {line}: person_x and person_y must both be set or both be empty")));
        }
        rows.push((line, row));
    }
    rows.sort_by(|a, b| a.1.time_s.total_cmp(&b.1.time_s));

    let mut windows: BTreeMap<i64, (Point, BTreeMap<_, u32>)> = BTreeMap::new();
    let mut detections = 0;
    for (line, row) in &rows {
        let w = (row.time_s / dt).floor() as i64;
        let entry = windows
            .entry(w)
            .or_insert_with(|| (Point::new(row.robot_x, row.robot_y), BTreeMap::new()));
        if let (Some(x), Some(y)) = (row.person_x, row.person_y) {
            let cell = grid
                .spec
                .world_to_cell(Point::new(x, y))
                .ok_or_else(|| CliError::Input(format!("line {line}: person at ({x}, {y}) lies outside the grid")))?;
            *entry.1.entry(cell).or_insert(0) += 1;
            detections += 1;
        }
    }
    for (pose, counts) in windows.values() {
        grid.update(*pose, counts, radius)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let summary = TrainSummary {
        windows: windows.len(),
        detections,
        total_alpha: grid.cells().iter().map(|c| c.alpha).sum(),
        total_beta: grid.cells().iter().map(|c| c.beta).sum(),
        max_rate: grid.means().into_iter().fold(0.0, f64::max),
    };
    Ok((grid, summary))
}

pub fn cmd_train(cfg: &ExperimentConfig, detections: &Path, out_grid: &Path) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let text = String::from_utf8(read_input(detections)?).map_err(|e| CliError::Input(format!("{}: {e}", detections.display())))?;
    let spec = match &cfg.map {
        Some(_) => *cfg.load_map(cfg.grid_spec()?)?.spec(),
        None => cfg.grid_spec()?,
    };
    let prior = RateGrid::new(spec).map_err(|e| CliError::Config(e.to_string()))?;
    let (grid, summary) = train_grid(&text, prior, cfg.planning.detection_radius, cfg.planning.dt)?;
    write_file(out_grid, grid.to_json().as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone, Default)]
pub struct PlanFlags {
    pub strategy: Option<Strategy>,
    pub all_candidates: bool,
    pub record_timing: bool,
}

pub const PLAN_FILE: &str = "plan.json";
pub const CURVE_FILE: &str = "p_curve.csv";

/// Plans and writes `plan.json` and `p_curve.csv` into the output
/// directory.
pub fn cmd_plan(cfg: &ExperimentConfig, flags: &PlanFlags) -> Result<PlanOutcome, CliError> {
    let problem = cfg.problem()?;
    let outcome = plan_baseline(&problem, flags.strategy.unwrap_or(Strategy::Psbt))?;
    let mut report = PlanReport::new(&outcome, Some(CURVE_FILE.to_string()));
    if flags.record_timing {
        report.planning_time_s = Some(outcome.planning_time.as_secs_f64());
    }
    if flags.all_candidates {
        report.candidate_scores = Some(outcome.candidates.clone());
    }
    let mut json = report.to_json();
    json.push('\n');
    write_file(&cfg.output_dir.join(PLAN_FILE), json.as_bytes())?;
    let mut curve = Vec::new();
    outcome
        .chosen
        .score
        .write_csv(&mut curve)
        .map_err(|e| CliError::Run(e.to_string()))?;
    write_file(&cfg.output_dir.join(CURVE_FILE), &curve)?;
    Ok(outcome)
}

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";

/// Evaluates the configured strategies and writes `runs.csv`,
/// `summary.csv` and `curves.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<SimReport, CliError> {
    let problem = cfg.problem()?;
    let truth = cfg.truth(&problem)?;
    if truth.spec != problem.grid.spec {
        return Err(CliError::Input("truth grid dimensions differ from the planning grid".into()));
    }
    let report = evaluate(&cfg.evaluation.strategies, &problem, &truth, &cfg.sim_config())?;
    let t_max = cfg.evaluation.curve_t_max.unwrap_or(cfg.planning.t_max);
    let mut runs = Vec::new();
    report.write_runs_csv(&mut runs)?;
    write_file(&cfg.output_dir.join(RUNS_FILE), &runs)?;
    let mut summary = Vec::new();
    report.write_summary_csv(&mut summary)?;
    write_file(&cfg.output_dir.join(SUMMARY_FILE), &summary)?;
    let mut curves = Vec::new();
    report.write_curve_csv(&mut curves, cfg.evaluation.curve_interval, t_max)?;
    write_file(&cfg.output_dir.join(CURVES_FILE), &curves)?;
    Ok(report)
}

/// Samples ground-truth arrivals from a grid file into
/// `time_s,cell_x,cell_y,count`.
pub fn cmd_arrivals(grid: &Path, horizon: f64, dt: f64, seed: u64, out: &Path) -> Result<usize, CliError> {
    let text = String::from_utf8(read_input(grid)?).map_err(|e| CliError::Input(e.to_string()))?;
    let grid = RateGrid::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", grid.display())))?;
    let events = grid
        .simulate_arrivals(horizon, dt, seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut buf = Vec::new();
    write_events_csv(&events, &mut buf).map_err(|e| CliError::Run(e.to_string()))?;
    write_file(out, &buf)?;
    Ok(events.len())
}

#[derive(Debug, Parser)]
#[command(name = "psbt", version, about = "Plan where a robot should wait for or search for a human helper")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Help location as `x,y` in meters.
    #[arg(long, value_parser = parse_point)]
    pub help_location: Option<[f64; 2]>,
    /// Number of sampled places.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a rate grid from a detection log.
    Train {
        #[command(flatten)]
        common: Common,
        /// CSV with `time_s,robot_x,robot_y,person_x,person_y`.
        #[arg(long)]
        detections: PathBuf,
        /// Output grid JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize and score the search tree.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Plan a comparison strategy instead of PSBT.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Include every candidate's score in the plan file.
        #[arg(long)]
        all_candidates: bool,
        /// Include the wall-clock planning time in the plan file.
        #[arg(long)]
        record_timing: bool,
    },
    /// Monte Carlo comparison of strategies.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated, e.g. `PSBT,W,GM`.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
    },
    /// Sample ground-truth arrivals from a grid.
    Arrivals {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default experiment config.
    DefaultConfig,
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected `x,y`")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok([p(x)?, p(y)?])
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(g) = &self.grid {
            cfg.grid = Some(g.clone());
        }
        if let Some(m) = &self.map {
            cfg.map = Some(m.clone());
        }
        if let Some(o) = &self.out_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(h) = self.help_location {
            cfg.help_location = h;
        }
        if let Some(n) = self.n {
            cfg.planning.n = n;
        }
        if let Some(t) = self.t_max {
            cfg.planning.t_max = t;
        }
        if let Some(dt) = self.dt {
            cfg.planning.dt = dt;
        }
        Ok(cfg)
    }
}

fn print_summary(out: &mut impl Write, report: &SimReport) -> std::io::Result<()> {
    writeln!(out, "{:<6} {:>7} {:>8} {:>14} {:>10} {:>10}", "", "P", "±se", "t_r [s]", "μ⁻¹ [s]", "pₛ(t_max)")?;
    for s in &report.summary {
        let t_r = match (s.t_r_mean_s, s.t_r_std_s) {
            (Some(m), Some(sd)) => format!("{m:.1} ± {sd:.1}"),
            (Some(m), None) => format!("{m:.1}"),
            _ => "-".into(),
        };
        writeln!(
            out,
            "{:<6} {:>7.3} {:>8.3} {:>14} {:>10} {:>10.3}",
            s.strategy,
            s.p_success,
            s.p_std_err,
            t_r,
            s.model_expected_time_s.map_or("-".into(), |m| format!("{m:.1}")),
            s.model_p_success_t_max
        )?;
    }
    Ok(())
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let stdout = &mut std::io::stdout().lock();
    let out_err = |e: std::io::Error| CliError::Run(e.to_string());
    match cli.command {
        Command::Train { common, detections, out } => {
            let cfg = common.resolve()?;
            let s = cmd_train(&cfg, &detections, &out)?;
            writeln!(
                stdout,
                "{} windows, {} detections; total α = {}, total β = {}, max λ = {:.6}/s",
                s.windows, s.detections, s.total_alpha, s.total_beta, s.max_rate
            )
            .map_err(out_err)?;
        }
        Command::Plan {
            common,
            strategy,
            all_candidates,
            record_timing,
        } => {
            let cfg = common.resolve()?;
            let flags = PlanFlags {
                strategy,
                all_candidates,
                record_timing,
            };
            let o = cmd_plan(&cfg, &flags)?;
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            writeln!(
                stdout,
                "{}: {}  pₛ(t_max) = {:.4}  ({} candidates scored, {} excluded)",
                o.chosen.strategy,
                o.chosen.tree.label,
                o.chosen.p_success(),
                o.candidates.len(),
                o.excluded
            )
            .map_err(out_err)?;
            eprintln!("planning time: {:.3} s", o.planning_time.as_secs_f64());
        }
        Command::Evaluate {
            common,
            truth,
            runs,
            strategies,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = truth {
                cfg.truth = Some(t);
            }
            if let Some(r) = runs {
                cfg.evaluation.runs = r;
            }
            if let Some(s) = strategies {
                cfg.evaluation.strategies = s;
            }
            let report = cmd_evaluate(&cfg)?;
            print_summary(stdout, &report).map_err(out_err)?;
        }
        Command::Arrivals {
            grid,
            horizon,
            dt,
            seed,
            out,
        } => {
            let n = cmd_arrivals(&grid, horizon, dt, seed, &out)?;
            writeln!(stdout, "{n} arrival records").map_err(out_err)?;
        }
        Command::DefaultConfig => {
            write!(stdout, "{}", ExperimentConfig::default().to_toml()).map_err(out_err)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new(10, 10, 1.0, Point::default()).unwrap()
    }

    #[test]
    fn command_line_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn empty_log_keeps_priors() {
        let (g, s) = train_grid("time_s,robot_x,robot_y,person_x,person_y\n", RateGrid::new(spec()).unwrap(), 2.0, 1.0).unwrap();
        assert_eq!(g, RateGrid::new(spec()).unwrap());
        assert_eq!(s.windows, 0);
    }

    #[test]
    fn single_detection_single_window() {
        let csv = "time_s,robot_x,robot_y,person_x,person_y\n0.2,5.5,5.5,5.5,6.5\n0.7,5.5,5.5,,\n";
        let (g, s) = train_grid(csv, RateGrid::new(spec()).unwrap(), 2.0, 1.0).unwrap();
        let c = g.cell(crate::gridmodel::CellIndex::new(5, 6));
        assert_eq!((c.alpha, c.beta), (2.0, 2.0));
        assert_eq!(s.windows, 1);
        assert_eq!(s.detections, 1);
        // a covered cell without detections
        let c = g.cell(crate::gridmodel::CellIndex::new(5, 5));
        assert_eq!((c.alpha, c.beta), (1.0, 2.0));
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let csv = "time_s,robot_x,robot_y,person_x,person_y\n0,1,1,,\n1,abc,1,,\n";
        match train_grid(csv, RateGrid::new(spec()).unwrap(), 2.0, 1.0) {
            Err(CliError::Input(m)) => assert!(m.starts_with("line 3"), "{m}"),
            other => panic!("{other:?}"),
        }
        let csv = "time_s,robot_x,robot_y,person_x,person_y\n0,1,1,3,\n";
        assert_eq!(train_grid(csv, RateGrid::new(spec()).unwrap(), 2.0, 1.0).unwrap_err().exit_code(), EXIT_INPUT);
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), Path::new("")).unwrap();
        assert_eq!(back, cfg);
        let err = ExperimentConfig::from_toml("bogus = 1\n", Path::new("")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        let err = ExperimentConfig::from_toml("[planning]\np_s_prime = 1.5\n", Path::new("")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn invalid_parameter_is_a_config_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.planning.avg_speed = 0.0;
        let e = cfg.validate().unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        assert!(e.to_string().contains("avg_speed"));
    }

    #[test]
    fn defaults_follow_the_experiment_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.width, cfg.height), (50, 25));
        assert_eq!(cfg.planning.detection_radius, crate::gridmodel::DEFAULT_DETECTION_RADIUS);
        assert_eq!(cfg.planning.p_s_prime.get(), 0.9);
        assert_eq!(cfg.planning.n, 6);
        assert_eq!(cfg.planning.t_max, 200.0);
        assert_eq!(cfg.planning.l_fail, 100.0);
        assert_eq!(cfg.planning.avg_speed, 0.5);
        assert_eq!(cfg.planning.dt, 1.0);
    }

    #[test]
    fn point_flag_parses() {
        assert_eq!(parse_point("1.5, -2").unwrap(), [1.5, -2.0]);
        assert!(parse_point("1.5").is_err());
    }
}
