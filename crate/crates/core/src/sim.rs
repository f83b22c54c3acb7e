//! Monte Carlo execution of plans against Poisson arrivals.
//!
//! With the default zero dwell, a person is detectable only during the
//! step in which they arrive, so the simulated process is the one the
//! Markov chain describes: per step a find happens with probability
//! `1 − e^{−μa}` where `μ` is the true rate summed over the current
//! detection disc, otherwise a navigation failure with `1 − e^{−νa}`.
//! A positive dwell keeps people around for that long after arriving.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionGeometry, ActionKind};
use crate::derive_seed;
use crate::geom::Point;
use crate::gridmodel::{CellIndex, DetectionDisc, RateGrid, DEFAULT_DETECTION_RADIUS};
use crate::navgrid::{OccupancyMap, DEFAULT_SPEED};
use crate::planner::{plan_baseline, CandidatePlan, PlanningError, PlanningProblem, Strategy};
use crate::sbt::{active_duration, step_count, ChainSemantics, NavFailurePolicy, DEFAULT_DT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("at least one run and one strategy are required")]
    Empty,
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub runs: usize,
    pub detection_radius: f64,
    pub seed: u64,
    /// Seconds a person stays detectable after arriving; 0 means only in
    /// the arrival step.
    pub person_dwell: f64,
    pub avg_speed: f64,
    pub semantics: ChainSemantics,
    /// Independently seeded plans per strategy; runs cycle through them.
    pub plan_variants: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            runs: 1000,
            detection_radius: DEFAULT_DETECTION_RADIUS,
            seed: 0,
            person_dwell: 0.0,
            avg_speed: DEFAULT_SPEED,
            semantics: ChainSemantics::default(),
            plan_variants: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("dt", self.dt),
            ("detection_radius", self.detection_radius),
            ("avg_speed", self.avg_speed),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SimError::NonPositive { name, value });
            }
        }
        if !(self.person_dwell >= 0.0 && self.person_dwell.is_finite()) {
            return Err(SimError::NonPositive {
                name: "person_dwell",
                value: self.person_dwell,
            });
        }
        if self.runs == 0 || self.plan_variants == 0 {
            return Err(SimError::Empty);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    Exhausted,
    Navigation,
}

impl FailureCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCause::Exhausted => "exhausted",
            FailureCause::Navigation => "navigation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: usize,
    pub seed: u64,
    pub success: bool,
    /// Time of the find.
    pub t_find: Option<f64>,
    /// Find time plus the drive back to the help location.
    pub t_r: Option<f64>,
    pub found_at: Option<Point>,
    /// Child of the tree that made the find.
    pub found_by: Option<usize>,
    pub failure_cause: Option<FailureCause>,
    /// When the tree finished, with or without a find.
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy)]
struct StepProb {
    p_succ: f64,
    p_nav: f64,
    mu: f64,
}

#[derive(Debug, Clone)]
enum Schedule {
    /// Stationary and without navigation hazard: one exponential draw.
    Jump { mu: f64, deadline: f64 },
    Steps(Vec<StepProb>),
}

#[derive(Debug, Clone)]
struct CompiledChild {
    steps: usize,
    deadline: f64,
    nav_fail_rate: f64,
    counts_finds: bool,
    geometry: ActionGeometry,
    schedule: Schedule,
}

/// A plan prepared for repeated runs against one ground-truth grid.
#[derive(Debug, Clone)]
pub struct CompiledPlan<'a> {
    truth: &'a RateGrid,
    map: &'a OccupancyMap,
    cfg: SimConfig,
    children: Vec<CompiledChild>,
    help: Point,
    home_dist: Vec<f64>,
}

impl<'a> CompiledPlan<'a> {
    pub fn new(plan: &CandidatePlan, truth: &'a RateGrid, map: &'a OccupancyMap, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let dt = cfg.dt;
        let disc_rate = |p: Point| {
            DetectionDisc::new(p, cfg.detection_radius)
                .map(|d| truth.rate_in_disc(&d).rate)
                .unwrap_or(0.0)
        };
        let children = plan
            .tree
            .children()
            .iter()
            .map(|c| {
                let steps = step_count(c.deadline, dt);
                let counts_finds = c.kind != ActionKind::ReturnHome || cfg.semantics.home_finds_count;
                let schedule = match &c.geometry {
                    ActionGeometry::Stationary { position } if c.nav_fail_rate == 0.0 && cfg.person_dwell == 0.0 => {
                        Schedule::Jump {
                            mu: if counts_finds { disc_rate(*position) } else { 0.0 },
                            deadline: c.deadline,
                        }
                    }
                    g => Schedule::Steps(
                        (0..steps)
                            .map(|k| {
                                let a = active_duration(c.deadline, dt, k);
                                let mu = if counts_finds { disc_rate(g.position_at(k as f64 * dt)) } else { 0.0 };
                                let keep = (-mu * a).exp();
                                StepProb {
                                    p_succ: -(-mu * a).exp_m1(),
                                    p_nav: keep * -(-c.nav_fail_rate * a).exp_m1(),
                                    mu,
                                }
                            })
                            .collect(),
                    ),
                };
                CompiledChild {
                    steps,
                    deadline: c.deadline,
                    nav_fail_rate: c.nav_fail_rate,
                    counts_finds,
                    geometry: c.geometry.clone(),
                    schedule,
                }
            })
            .collect();
        let help = plan.help_position();
        let home_cell = plan.places[0].cell;
        Ok(Self {
            truth,
            map,
            cfg: *cfg,
            children,
            help,
            home_dist: map.distance_field(home_cell),
        })
    }

    /// Driving time from `p` back to the help location.
    pub fn return_time(&self, p: Point) -> f64 {
        let spec = self.map.spec();
        let d = spec
            .world_to_cell(p)
            .map(|c| self.home_dist[spec.index(c)] + p.distance(&spec.cell_center(c)))
            .filter(|d| d.is_finite())
            .unwrap_or_else(|| p.distance(&self.help));
        d / self.cfg.avg_speed
    }

    /// Cell of the found person, drawn proportionally to the true rates in
    /// the disc around `p`.
    fn found_cell(&self, p: Point, rng: &mut ChaCha8Rng) -> Point {
        let Ok(disc) = DetectionDisc::new(p, self.cfg.detection_radius) else {
            return p;
        };
        let cells: Vec<(CellIndex, f64)> = self
            .truth
            .spec
            .cells_in_disc(&disc)
            .into_iter()
            .map(|c| (c, self.truth.rate(c)))
            .filter(|(_, r)| *r > 0.0)
            .collect();
        let total: f64 = cells.iter().map(|c| c.1).sum();
        let mut target = rng.random::<f64>() * total;
        for &(c, r) in &cells {
            if target < r {
                return self.truth.spec.cell_center(c);
            }
            target -= r;
        }
        cells.last().map_or(p, |&(c, _)| self.truth.spec.cell_center(c))
    }

    fn success(&self, run_id: usize, seed: u64, child: usize, start: f64, local: f64, rng: &mut ChaCha8Rng) -> RunOutcome {
        let c = &self.children[child];
        let pos = c.geometry.position_at(local);
        let step_pos = c.geometry.position_at((local / self.cfg.dt).floor() * self.cfg.dt);
        let t_find = start + local;
        RunOutcome {
            run_id,
            seed,
            success: true,
            t_find: Some(t_find),
            t_r: Some(t_find + self.return_time(pos)),
            found_at: Some(self.found_cell(step_pos, rng)),
            found_by: Some(child),
            failure_cause: None,
            end_time: t_find,
        }
    }

    fn failure(run_id: usize, seed: u64, cause: FailureCause, end_time: f64) -> RunOutcome {
        RunOutcome {
            run_id,
            seed,
            success: false,
            t_find: None,
            t_r: None,
            found_at: None,
            found_by: None,
            failure_cause: Some(cause),
            end_time,
        }
    }

    /// One seeded execution of the tree.
    pub fn run(&self, run_id: usize, seed: u64) -> RunOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if self.cfg.person_dwell > 0.0 {
            return self.run_dwell(run_id, seed, &mut rng);
        }
        let dt = self.cfg.dt;
        let mut start = 0.0;
        let mut cause = FailureCause::Exhausted;
        for (i, c) in self.children.iter().enumerate() {
            if c.steps == 0 {
                continue;
            }
            match &c.schedule {
                Schedule::Jump { mu, deadline } => {
                    if *mu > 0.0 {
                        let e = -(1.0 - rng.random::<f64>()).ln() / mu;
                        if e < *deadline {
                            return self.success(run_id, seed, i, start, e, &mut rng);
                        }
                    }
                }
                Schedule::Steps(probs) => {
                    let mut nav_failed = false;
                    for (k, s) in probs.iter().enumerate() {
                        let u = rng.random::<f64>();
                        if u < s.p_succ {
                            let e = -(1.0 - u).ln() / s.mu;
                            return self.success(run_id, seed, i, start, k as f64 * dt + e, &mut rng);
                        }
                        if u < s.p_succ + s.p_nav {
                            nav_failed = true;
                            start += (k + 1) as f64 * dt;
                            break;
                        }
                    }
                    if nav_failed {
                        cause = FailureCause::Navigation;
                        if self.cfg.semantics.nav_failure == NavFailurePolicy::AbortRun {
                            return Self::failure(run_id, seed, cause, start);
                        }
                        continue;
                    }
                }
            }
            cause = FailureCause::Exhausted;
            start += c.steps as f64 * dt;
        }
        Self::failure(run_id, seed, cause, start)
    }

    /// Whole-grid arrivals with people lingering for `person_dwell`.
    fn run_dwell(&self, run_id: usize, seed: u64, rng: &mut ChaCha8Rng) -> RunOutcome {
        let dt = self.cfg.dt;
        let dwell = self.cfg.person_dwell;
        let spec = self.truth.spec;
        let rates: Vec<(CellIndex, f64)> = spec
            .cells()
            .map(|c| (c, self.truth.rate(c)))
            .filter(|(_, r)| *r > 0.0)
            .collect();
        // people present: cell -> (arrival, departure)
        let mut present: BTreeMap<CellIndex, Vec<(f64, f64)>> = BTreeMap::new();
        for &(c, r) in &rates {
            let n = Poisson::new(r * dwell).map_or(0.0, |p| p.sample(rng)) as usize;
            let v: Vec<(f64, f64)> = (0..n).map(|_| (0.0, rng.random::<f64>() * dwell)).collect();
            if !v.is_empty() {
                present.insert(c, v);
            }
        }
        let mut t = 0.0;
        let mut cause = FailureCause::Exhausted;
        for (i, c) in self.children.iter().enumerate() {
            let start = t;
            let mut nav_failed = false;
            for k in 0..c.steps {
                let a = active_duration(c.deadline, dt, k);
                let t0 = start + k as f64 * dt;
                for &(cell, r) in &rates {
                    let n = Poisson::new(r * a).map_or(0.0, |p| p.sample(rng)) as usize;
                    for _ in 0..n {
                        let arr = t0 + rng.random::<f64>() * a;
                        present.entry(cell).or_default().push((arr, arr + dwell));
                    }
                }
                for v in present.values_mut() {
                    v.retain(|&(_, dep)| dep > t0);
                }
                present.retain(|_, v| !v.is_empty());
                if c.counts_finds {
                    let pos = c.geometry.position_at(k as f64 * dt);
                    if let Ok(disc) = DetectionDisc::new(pos, self.cfg.detection_radius) {
                        let first = spec
                            .cells_in_disc(&disc)
                            .iter()
                            .filter_map(|cell| present.get(cell).map(|v| (cell, v)))
                            .flat_map(|(cell, v)| v.iter().filter(|p| p.0 < t0 + a).map(move |p| (p.0.max(t0), *cell)))
                            .min_by(|x, y| x.0.total_cmp(&y.0));
                        if let Some((when, cell)) = first {
                            let local = when - start;
                            let here = c.geometry.position_at(local);
                            return RunOutcome {
                                run_id,
                                seed,
                                success: true,
                                t_find: Some(when),
                                t_r: Some(when + self.return_time(here)),
                                found_at: Some(spec.cell_center(cell)),
                                found_by: Some(i),
                                failure_cause: None,
                                end_time: when,
                            };
                        }
                    }
                }
                if rng.random::<f64>() < -(-c.nav_fail_rate * a).exp_m1() {
                    nav_failed = true;
                    t = t0 + dt;
                    break;
                }
            }
            if nav_failed {
                cause = FailureCause::Navigation;
                if self.cfg.semantics.nav_failure == NavFailurePolicy::AbortRun {
                    return Self::failure(run_id, seed, cause, t);
                }
                continue;
            }
            cause = FailureCause::Exhausted;
            t = start + c.steps as f64 * dt;
        }
        Self::failure(run_id, seed, cause, t)
    }
}

/// Seed of run `run_id` under master seed `seed`.
pub fn run_seed(seed: u64, run_id: usize) -> u64 {
    derive_seed(seed, run_id as u64)
}

pub fn run_once(
    plan: &CandidatePlan,
    truth: &RateGrid,
    map: &OccupancyMap,
    cfg: &SimConfig,
    seed: u64,
) -> Result<RunOutcome, SimError> {
    Ok(CompiledPlan::new(plan, truth, map, cfg)?.run(0, seed))
}

/// Runs `cfg.runs` seeded executions; identical to a sequential loop.
pub fn run_many(
    plan: &CandidatePlan,
    truth: &RateGrid,
    map: &OccupancyMap,
    cfg: &SimConfig,
) -> Result<Vec<RunOutcome>, SimError> {
    let compiled = CompiledPlan::new(plan, truth, map, cfg)?;
    Ok((0..cfg.runs)
        .into_par_iter()
        .map(|r| compiled.run(r, run_seed(cfg.seed, r)))
        .collect())
}

/// Fraction of runs with a find strictly before `t`.
pub fn empirical_success(outcomes: &[RunOutcome], t: f64) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.t_find.is_some_and(|f| f < t)).count() as f64 / outcomes.len() as f64
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        Some((xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    (Some(mean), std)
}

/// One strategy's plans and outcomes.
#[derive(Debug, Clone)]
pub struct StrategyRuns {
    pub name: String,
    pub plans: Vec<CandidatePlan>,
    pub outcomes: Vec<RunOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub successes: usize,
    pub p_success: f64,
    pub p_std_err: f64,
    pub t_r_mean_s: Option<f64>,
    pub t_r_std_s: Option<f64>,
    pub model_expected_time_s: Option<f64>,
    pub model_expected_time_std_s: Option<f64>,
    pub model_p_success_t_max: f64,
}

impl StrategySummary {
    fn new(r: &StrategyRuns) -> Self {
        let runs = r.outcomes.len();
        let successes = r.outcomes.iter().filter(|o| o.success).count();
        let p = successes as f64 / runs as f64;
        let t_r: Vec<f64> = r.outcomes.iter().filter_map(|o| o.t_r).collect();
        let (t_r_mean_s, t_r_std_s) = mean_std(&t_r);
        let mu_inv: Vec<f64> = r.plans.iter().filter_map(|p| p.score.expected_time_to_success).collect();
        let (model_expected_time_s, model_expected_time_std_s) = mean_std(&mu_inv);
        let model_p_success_t_max = r.plans.iter().map(CandidatePlan::p_success).sum::<f64>() / r.plans.len() as f64;
        Self {
            strategy: r.name.clone(),
            runs,
            successes,
            p_success: p,
            p_std_err: (p * (1.0 - p) / runs as f64).sqrt(),
            t_r_mean_s,
            t_r_std_s,
            model_expected_time_s,
            model_expected_time_std_s,
            model_p_success_t_max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub strategies: Vec<StrategyRuns>,
    pub summary: Vec<StrategySummary>,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

impl SimReport {
    pub fn get(&self, name: &str) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == name)
    }

    /// `strategy,run_id,seed,success,t_r_s,failure_cause`, rounds
    /// interleaved across strategies.
    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["strategy", "run_id", "seed", "success", "t_r_s", "failure_cause"])?;
        let rounds = self.strategies.iter().map(|s| s.outcomes.len()).max().unwrap_or(0);
        for r in 0..rounds {
            for s in &self.strategies {
                if let Some(o) = s.outcomes.get(r) {
                    w.write_record([
                        s.name.clone(),
                        o.run_id.to_string(),
                        o.seed.to_string(),
                        o.success.to_string(),
                        opt(o.t_r),
                        o.failure_cause.map_or("", FailureCause::as_str).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "strategy",
            "runs",
            "successes",
            "p_success",
            "p_std_err",
            "t_r_mean_s",
            "t_r_std_s",
            "model_mu_inv_s",
            "model_mu_inv_std_s",
            "model_p_success_t_max",
        ])?;
        for s in &self.summary {
            w.write_record([
                s.strategy.clone(),
                s.runs.to_string(),
                s.successes.to_string(),
                s.p_success.to_string(),
                s.p_std_err.to_string(),
                opt(s.t_r_mean_s),
                opt(s.t_r_std_s),
                opt(s.model_expected_time_s),
                opt(s.model_expected_time_std_s),
                s.model_p_success_t_max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `pₛ,T(t_k)` at `t_k = interval, 2·interval, …, t_max`: one model row
    /// per plan variant and one empirical row per strategy.
    pub fn write_curve_csv<W: Write>(&self, out: W, interval: f64, t_max: f64) -> Result<(), SimError> {
        let times = curve_times(interval, t_max);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["strategy".to_string(), "source".to_string(), "variant".to_string()];
        header.extend(times.iter().map(|t| format!("t_{t}")));
        w.write_record(&header)?;
        for s in &self.strategies {
            for (v, p) in s.plans.iter().enumerate() {
                let mut row = vec![s.name.clone(), "model".into(), v.to_string()];
                row.extend(times.iter().map(|&t| p.score.p_success_at(t).to_string()));
                w.write_record(&row)?;
            }
            let mut row = vec![s.name.clone(), "simulated".into(), String::new()];
            row.extend(times.iter().map(|&t| empirical_success(&s.outcomes, t).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `interval, 2·interval, …` up to and including `t_max`.
pub fn curve_times(interval: f64, t_max: f64) -> Vec<f64> {
    let n = (t_max / interval + 1e-9).floor() as usize;
    (1..=n).map(|k| k as f64 * interval).collect()
}

/// Runs each strategy's plans round-robin under a shared seed schedule:
/// run `r` of every strategy uses the same seed and plan variant
/// `r mod variants`.
pub fn evaluate_plans(
    entries: Vec<(String, Vec<CandidatePlan>)>,
    truth: &RateGrid,
    map: &OccupancyMap,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    cfg.validate()?;
    if entries.is_empty() || entries.iter().any(|e| e.1.is_empty()) {
        return Err(SimError::Empty);
    }
    let mut strategies = Vec::with_capacity(entries.len());
    for (name, plans) in entries {
        let compiled = plans
            .iter()
            .map(|p| CompiledPlan::new(p, truth, map, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let outcomes = (0..cfg.runs)
            .into_par_iter()
            .map(|r| compiled[r % compiled.len()].run(r, run_seed(cfg.seed, r)))
            .collect();
        strategies.push(StrategyRuns { name, plans, outcomes });
    }
    let summary = strategies.iter().map(StrategySummary::new).collect();
    Ok(SimReport { strategies, summary })
}

/// Plans every strategy (`cfg.plan_variants` seeded variants each) and
/// evaluates the plans against `truth`.
pub fn evaluate(
    strategies: &[Strategy],
    problem: &PlanningProblem,
    truth: &RateGrid,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    cfg.validate()?;
    if strategies.is_empty() {
        return Err(SimError::Empty);
    }
    let mut entries = Vec::with_capacity(strategies.len());
    for &s in strategies {
        let plans = (0..cfg.plan_variants)
            .map(|v| {
                let mut p = problem.clone();
                if cfg.plan_variants > 1 {
                    p.config.seed = derive_seed(problem.config.seed, 1000 + v as u64);
                }
                plan_baseline(&p, s).map(|o| o.chosen)
            })
            .collect::<Result<Vec<_>, _>>()?;
        entries.push((s.name().to_string(), plans));
    }
    evaluate_plans(entries, truth, &problem.map, cfg)
}
