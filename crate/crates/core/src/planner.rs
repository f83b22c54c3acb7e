//! Person-search tree synthesis.
//!
//! Places are sampled from the rate grid, ordered by an open-TSP genetic
//! algorithm, and every visit/wait/skip combination over the tour is turned
//! into a fallback tree. The tree with the highest success probability at
//! `t_max` is chosen. The comparison strategies W, NW, GC, GM and RND build
//! their trees from the same action library so all scores are comparable.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{
    make_return_home, make_search, make_wait, ActionError, ActionKind, ActionParams, Confidence, StochasticAction,
    DEFAULT_L_FAIL, DEFAULT_MAX_WAIT,
};
use crate::derive_seed;
use crate::geom::Point;
use crate::gridmodel::{CellIndex, DetectionDisc, GridError, RateGrid, SamplingParams, DEFAULT_DETECTION_RADIUS};
use crate::navgrid::{plan_path, sweep_rates, NavError, OccupancyMap, PathGeometry, Place, DEFAULT_SPEED};
use crate::sbt::{score, ChainSemantics, SearchTree, TreeError, TreeScore, DEFAULT_DT, DEFAULT_T_MAX};

pub const DEFAULT_N_PLACES: usize = 6;
pub const DEFAULT_GC_TOP_N: usize = 50;

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{strategy} plan contains action {label} that violates the total-probability condition")]
    InvalidAction { strategy: Strategy, label: String },
}

fn config_err(field: &'static str, reason: impl Into<String>) -> PlanningError {
    PlanningError::Config {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Probability that an offspring gets one random swap.
    pub mutation_rate: f64,
    pub elitism: usize,
    pub tournament: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 200,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            elitism: 2,
            tournament: 3,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), PlanningError> {
        if self.population < 2 {
            return Err(config_err("ga.population", "needs at least 2 individuals"));
        }
        if self.elitism == 0 || self.elitism > self.population {
            return Err(config_err("ga.elitism", "must lie in 1..=population"));
        }
        if self.tournament == 0 {
            return Err(config_err("ga.tournament", "must be at least 1"));
        }
        for (field, p) in [("ga.crossover_rate", self.crossover_rate), ("ga.mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(field, format!("{p} is not a probability")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanningConfig {
    /// Number of sampled places.
    pub n: usize,
    pub detection_radius: f64,
    pub p_s_prime: Confidence,
    pub dt: f64,
    pub l_fail: f64,
    pub avg_speed: f64,
    pub t_max: f64,
    pub max_wait: f64,
    pub min_separation: f64,
    pub max_variance: f64,
    pub max_distance: f64,
    /// Ignore cells whose posterior variance exceeds `max_variance` when
    /// summing encounter rates.
    pub confident_only: bool,
    /// `n_λ` of the GC baseline.
    pub gc_top_n: usize,
    pub ga: GaParams,
    pub seed: u64,
    pub semantics: ChainSemantics,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        let sampling = SamplingParams::default();
        Self {
            n: DEFAULT_N_PLACES,
            detection_radius: DEFAULT_DETECTION_RADIUS,
            p_s_prime: Confidence::default(),
            dt: DEFAULT_DT,
            l_fail: DEFAULT_L_FAIL,
            avg_speed: DEFAULT_SPEED,
            t_max: DEFAULT_T_MAX,
            max_wait: DEFAULT_MAX_WAIT,
            min_separation: sampling.min_separation,
            max_variance: sampling.max_variance,
            max_distance: sampling.max_distance,
            confident_only: true,
            gc_top_n: DEFAULT_GC_TOP_N,
            ga: GaParams::default(),
            seed: 0,
            semantics: ChainSemantics::default(),
        }
    }
}

impl PlanningConfig {
    pub fn validate(&self) -> Result<(), PlanningError> {
        if self.n == 0 {
            return Err(config_err("n", "must be at least 1"));
        }
        if self.gc_top_n == 0 {
            return Err(config_err("gc_top_n", "must be at least 1"));
        }
        for (field, v) in [
            ("detection_radius", self.detection_radius),
            ("dt", self.dt),
            ("l_fail", self.l_fail),
            ("avg_speed", self.avg_speed),
            ("t_max", self.t_max),
            ("max_wait", self.max_wait),
            ("min_separation", self.min_separation),
            ("max_variance", self.max_variance),
            ("max_distance", self.max_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(field, format!("must be positive and finite, got {v}")));
            }
        }
        if self.t_max < self.dt {
            return Err(config_err("t_max", "must be at least dt"));
        }
        self.ga.validate()
    }

    pub fn action_params(&self) -> ActionParams {
        ActionParams {
            p_s_prime: self.p_s_prime,
            l_fail: self.l_fail,
            max_wait: self.max_wait,
        }
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            n: self.n,
            min_separation: self.min_separation,
            max_variance: self.max_variance,
            max_distance: self.max_distance,
        }
    }

    fn variance_filter(&self) -> Option<f64> {
        self.confident_only.then_some(self.max_variance)
    }
}

#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub map: OccupancyMap,
    pub grid: RateGrid,
    pub help: Place,
    pub config: PlanningConfig,
}

impl PlanningProblem {
    /// The help location is snapped to the free map cell containing
    /// `help_location`.
    pub fn new(map: OccupancyMap, grid: RateGrid, help_location: Point, config: PlanningConfig) -> Result<Self, PlanningError> {
        config.validate()?;
        let help = Place::at(0, help_location, &map, &grid)?;
        Ok(Self { map, grid, help, config })
    }

    fn map_cell_of(&self, grid_cell: CellIndex) -> Option<CellIndex> {
        self.map.spec().world_to_cell(self.grid.spec.cell_center(grid_cell))
    }

    fn reachable(&self) -> Vec<f64> {
        self.map.distance_field(self.help.cell)
    }

    /// Roulette-wheel places over free cells reachable from the help
    /// location.
    pub fn sample_places(&self) -> Vec<Place> {
        let dist = self.reachable();
        let spec = *self.map.spec();
        let sampled = self.grid.sample_places_where(
            &self.config.sampling(),
            self.help.position,
            derive_seed(self.config.seed, 1),
            |c| self.map_cell_of(c).is_some_and(|m| dist[spec.index(m)].is_finite()),
        );
        sampled
            .iter()
            .filter_map(|s| spec.world_to_cell(s.position))
            .enumerate()
            .map(|(i, cell)| Place::at_cell(i + 1, cell, &self.map, &self.grid).expect("eligible cells are free"))
            .collect()
    }

    fn encounter_rate(&self, p: Point) -> f64 {
        DetectionDisc::new(p, self.config.detection_radius)
            .map(|d| self.grid.rate_in_disc_filtered(&d, self.config.variance_filter()).rate)
            .unwrap_or(0.0)
    }
}

/// Actions between and at a fixed set of places. Index 0 is the help
/// location.
#[derive(Debug, Clone)]
pub struct ActionLibrary {
    pub places: Vec<Place>,
    search: Vec<Vec<Option<StochasticAction>>>,
    wait: Vec<StochasticAction>,
    home: Vec<StochasticAction>,
    pub warnings: Vec<String>,
}

impl ActionLibrary {
    /// Builds all pairwise search actions. Places unreachable from the help
    /// location are dropped and reported in `warnings`; the remaining ones
    /// are renumbered `1..`.
    pub fn build(problem: &PlanningProblem, cells: &[CellIndex]) -> Result<Self, PlanningError> {
        let cfg = &problem.config;
        let params = cfg.action_params();
        let mut warnings = Vec::new();
        let dist = problem.reachable();
        let mut places = vec![problem.help];
        for &cell in cells {
            match Place::at_cell(places.len(), cell, &problem.map, &problem.grid) {
                Ok(p) if dist[problem.map.spec().index(cell)].is_finite() => places.push(p),
                Ok(_) => warnings.push(format!("place at cell ({}, {}) is unreachable, dropped", cell.x, cell.y)),
                Err(e) => warnings.push(format!("place at cell ({}, {}) dropped: {e}", cell.x, cell.y)),
            }
        }
        let sweep = |path: &PathGeometry| {
            sweep_rates(path, &problem.grid, cfg.detection_radius, cfg.dt, cfg.variance_filter())
        };
        let k = places.len();
        let mut paths: Vec<Vec<Option<PathGeometry>>> = vec![vec![None; k]; k];
        for i in 0..k {
            for j in 0..k {
                paths[i][j] = if j < i {
                    paths[j][i].as_ref().map(PathGeometry::reversed)
                } else {
                    Some(plan_path(&problem.map, &places[i], &places[j], cfg.avg_speed)?)
                };
            }
        }
        let mut search = vec![vec![None; k]; k];
        for i in 0..k {
            for j in 1..k {
                let path = paths[i][j].as_ref().expect("all pairs planned");
                if i != j && path.length > 0.0 {
                    search[i][j] = Some(make_search((i, j), path, &sweep(path), &params)?);
                }
            }
        }
        let wait = places
            .iter()
            .map(|p| make_wait(p.id, p.position, problem.encounter_rate(p.position), &params))
            .collect::<Result<Vec<_>, _>>()?;
        let home = (0..k)
            .map(|i| {
                let path = paths[i][0].as_ref().expect("all pairs planned");
                make_return_home(i, path, &sweep(path), &params)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            places,
            search,
            wait,
            home,
            warnings,
        })
    }

    /// Number of places besides the help location.
    pub fn n_places(&self) -> usize {
        self.places.len() - 1
    }

    /// `None` for identical places.
    pub fn search(&self, from: usize, to: usize) -> Option<&StochasticAction> {
        self.search[from][to].as_ref()
    }

    pub fn wait(&self, place: usize) -> &StochasticAction {
        &self.wait[place]
    }

    pub fn home(&self, from: usize) -> &StochasticAction {
        &self.home[from]
    }

    /// Edge costs `ν⁻¹` of the search actions.
    pub fn tour_graph(&self) -> TourGraph {
        let k = self.places.len();
        let cost = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if i == j {
                            None
                        } else {
                            Some(self.search(i, j).map_or(0.0, |a| 1.0 / a.failure_rate))
                        }
                    })
                    .collect()
            })
            .collect();
        TourGraph { cost }
    }

    /// Search to each stop in order, waiting where flagged, then return
    /// home.
    pub fn sequence(&self, stops: &[(usize, bool)]) -> Vec<StochasticAction> {
        let mut actions = Vec::with_capacity(2 * stops.len() + 1);
        let mut cur = 0;
        for &(p, wait) in stops {
            if let Some(a) = self.search(cur, p) {
                actions.push(a.clone());
            }
            if wait {
                actions.push(self.wait(p).clone());
            }
            cur = p;
        }
        actions.push(self.home(cur).clone());
        actions
    }

    pub fn wait_at_help(&self) -> Vec<StochasticAction> {
        vec![self.wait(0).clone(), self.home(0).clone()]
    }
}

/// Complete directed graph over places; `cost[i][j]` in seconds, `None`
/// on the diagonal or for missing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourGraph {
    pub cost: Vec<Vec<Option<f64>>>,
}

impl TourGraph {
    pub fn from_matrix(cost: Vec<Vec<f64>>) -> Self {
        let cost = cost
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(j, c)| (i != j && c.is_finite()).then_some(c))
                    .collect()
            })
            .collect();
        Self { cost }
    }

    pub fn len(&self) -> usize {
        self.cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cost.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.cost[i][j].unwrap_or(f64::INFINITY)
    }

    /// Cost of the open tour `0 → order[0] → order[1] → …`.
    pub fn open_cost(&self, order: &[usize]) -> f64 {
        let mut cur = 0;
        let mut total = 0.0;
        for &v in order {
            total += self.edge(cur, v);
            cur = v;
        }
        total
    }
}

/// Open tour starting at node 0; `order` excludes node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<usize>,
    pub cost: f64,
    /// Best cost after each generation; empty for exact solutions.
    #[serde(skip)]
    pub history: Vec<f64>,
}

/// Exhaustive open-TSP solver; the first minimal order in lexicographic
/// order wins.
pub fn brute_force_otsp(graph: &TourGraph) -> Tour {
    fn rec(graph: &TourGraph, cur: usize, cost: f64, order: &mut Vec<usize>, left: &mut Vec<usize>, best: &mut Tour) {
        // costs are non-negative, so a prefix at the bound cannot improve
        if cost >= best.cost {
            return;
        }
        if left.is_empty() {
            *best = Tour {
                order: order.clone(),
                cost,
                history: Vec::new(),
            };
            return;
        }
        for i in 0..left.len() {
            let v = left.remove(i);
            order.push(v);
            rec(graph, v, cost + graph.edge(cur, v), order, left, best);
            order.pop();
            left.insert(i, v);
        }
    }
    let mut left: Vec<usize> = (1..graph.len()).collect();
    let mut best = Tour {
        order: left.clone(),
        cost: f64::INFINITY,
        history: Vec::new(),
    };
    rec(graph, 0, 0.0, &mut Vec::new(), &mut left, &mut best);
    best
}

const MAX_CLONE_RETRIES: usize = 8;

fn swap_mutation(g: &mut [usize], rng: &mut ChaCha8Rng) {
    let n = g.len();
    let i = rng.random_range(0..n);
    let j = (i + rng.random_range(1..n)) % n;
    g.swap(i, j);
}

fn order_crossover(a: &[usize], b: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = a.len();
    let mut lo = rng.random_range(0..n);
    let mut hi = rng.random_range(0..n);
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut child = vec![usize::MAX; n];
    child[lo..=hi].copy_from_slice(&a[lo..=hi]);
    let mut fill = b.iter().cycle().skip(hi + 1).take(n).filter(|g| !a[lo..=hi].contains(g));
    for k in 1..=n - (hi - lo + 1) {
        child[(hi + k) % n] = *fill.next().expect("enough genes");
    }
    child
}

/// Genetic open-TSP solver: order crossover, swap mutation, tournament
/// selection and elitism. Deterministic per seed.
pub fn solve_otsp(graph: &TourGraph, ga: &GaParams, seed: u64) -> Result<Tour, PlanningError> {
    ga.validate()?;
    let n = graph.len().saturating_sub(1);
    if n <= 1 {
        let order: Vec<usize> = (1..=n).collect();
        return Ok(Tour {
            cost: graph.open_cost(&order),
            order,
            history: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<usize> = (1..=n).collect();
    let mut pop: Vec<(f64, Vec<usize>)> = (0..ga.population)
        .map(|_| {
            let mut g = base.clone();
            g.shuffle(&mut rng);
            (graph.open_cost(&g), g)
        })
        .collect();
    let sort = |pop: &mut Vec<(f64, Vec<usize>)>| pop.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    sort(&mut pop);
    let mut history = Vec::with_capacity(ga.generations);
    for _ in 0..ga.generations {
        let mut next: Vec<(f64, Vec<usize>)> = pop[..ga.elitism].to_vec();
        while next.len() < ga.population {
            let pick = |rng: &mut ChaCha8Rng| {
                (0..ga.tournament)
                    .map(|_| rng.random_range(0..pop.len()))
                    .min()
                    .expect("tournament size is positive")
            };
            let pa = pick(&mut rng);
            let pb = pick(&mut rng);
            let mut child = if rng.random::<f64>() < ga.crossover_rate {
                order_crossover(&pop[pa].1, &pop[pb].1, &mut rng)
            } else {
                pop[pa].1.clone()
            };
            if rng.random::<f64>() < ga.mutation_rate {
                swap_mutation(&mut child, &mut rng);
            }
            // clones crowd out the population; mutate them away while
            // distinct orders are still available
            for _ in 0..MAX_CLONE_RETRIES {
                if !next.iter().any(|(_, g)| *g == child) {
                    break;
                }
                swap_mutation(&mut child, &mut rng);
            }
            next.push((graph.open_cost(&child), child));
        }
        pop = next;
        sort(&mut pop);
        history.push(pop[0].0);
    }
    let (cost, order) = pop.swap_remove(0);
    Ok(Tour { order, cost, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitMask {
    Skip,
    Visit,
    VisitWait,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "PSBT")]
    Psbt,
    W,
    NW,
    GC,
    GM,
    #[serde(rename = "RND")]
    Rnd,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Psbt,
        Strategy::W,
        Strategy::NW,
        Strategy::GC,
        Strategy::GM,
        Strategy::Rnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Psbt => "PSBT",
            Strategy::W => "W",
            Strategy::NW => "NW",
            Strategy::GC => "GC",
            Strategy::GM => "GM",
            Strategy::Rnd => "RND",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown strategy `{s}` (expected one of PSBT, W, NW, GC, GM, RND)"))
    }
}

/// A scored tree together with how it was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    pub strategy: Strategy,
    /// Place 0 is the help location.
    pub places: Vec<Place>,
    pub tour: Vec<usize>,
    /// Per tour position; all `Skip` for the wait-at-help plan.
    pub mask: Vec<VisitMask>,
    pub waits_at_help: bool,
    pub tree: SearchTree,
    pub score: TreeScore,
}

impl CandidatePlan {
    pub fn p_success(&self) -> f64 {
        self.score.final_success()
    }

    /// `μ_T⁻¹`, infinite when nothing can be found.
    pub fn expected_time(&self) -> f64 {
        self.score.expected_time_to_success.unwrap_or(f64::INFINITY)
    }

    pub fn help_position(&self) -> Point {
        self.places[0].position
    }
}

/// Unscored tree of the enumeration.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub mask: Vec<VisitMask>,
    pub waits_at_help: bool,
    pub actions: Vec<StochasticAction>,
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub candidates: Vec<Candidate>,
    /// Candidates dropped because one of their actions is invalid.
    pub excluded: usize,
}

impl Enumeration {
    pub fn total(&self) -> usize {
        self.candidates.len() + self.excluded
    }
}

/// Mask number `m` in base 3, least significant digit first.
fn mask_digits(mut m: usize, n: usize) -> Vec<VisitMask> {
    (0..n)
        .map(|_| {
            let d = m % 3;
            m /= 3;
            [VisitMask::Skip, VisitMask::Visit, VisitMask::VisitWait][d]
        })
        .collect()
}

/// The wait-at-help plan followed by all `3ⁿ` masks over `tour`.
pub fn enumerate_candidates(lib: &ActionLibrary, tour: &[usize]) -> Enumeration {
    let n = tour.len();
    let mut candidates = Vec::with_capacity(3usize.pow(n as u32) + 1);
    let mut excluded = 0;
    let mut keep = |c: Candidate| {
        if c.actions.iter().all(|a| a.valid) {
            candidates.push(c);
        } else {
            excluded += 1;
        }
    };
    keep(Candidate {
        mask: vec![VisitMask::Skip; n],
        waits_at_help: true,
        actions: lib.wait_at_help(),
    });
    for m in 0..3usize.pow(n as u32) {
        let mask = mask_digits(m, n);
        let stops: Vec<(usize, bool)> = tour
            .iter()
            .zip(&mask)
            .filter(|(_, v)| **v != VisitMask::Skip)
            .map(|(&p, v)| (p, *v == VisitMask::VisitWait))
            .collect();
        keep(Candidate {
            mask,
            waits_at_help: false,
            actions: lib.sequence(&stops),
        });
    }
    Enumeration { candidates, excluded }
}

/// Candidate index preferred by the selection rule: highest `pₛ,T(t_max)`,
/// then smallest `μ_T⁻¹`, then fewest actions, then lowest index.
pub fn select_best(plans: &[CandidatePlan]) -> Option<usize> {
    (0..plans.len()).min_by(|&a, &b| {
        let (pa, pb) = (&plans[a], &plans[b]);
        pb.p_success()
            .total_cmp(&pa.p_success())
            .then_with(|| pa.expected_time().total_cmp(&pb.expected_time()))
            .then_with(|| pa.tree.len().cmp(&pb.tree.len()))
            .then_with(|| a.cmp(&b))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub label: String,
    pub mask: Vec<VisitMask>,
    pub waits_at_help: bool,
    pub p_success: f64,
    pub expected_time_s: Option<f64>,
}

/// Result of a planning call.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub chosen: CandidatePlan,
    pub candidates: Vec<CandidateSummary>,
    pub excluded: usize,
    pub warnings: Vec<String>,
    pub tour_cost: f64,
    pub planning_time: Duration,
}

fn plan_from(
    problem: &PlanningProblem,
    strategy: Strategy,
    lib: &ActionLibrary,
    tour: &[usize],
    mask: Vec<VisitMask>,
    waits_at_help: bool,
    actions: Vec<StochasticAction>,
) -> Result<CandidatePlan, PlanningError> {
    if let Some(bad) = actions.iter().find(|a| !a.valid) {
        return Err(PlanningError::InvalidAction {
            strategy,
            label: bad.label(),
        });
    }
    let tree = SearchTree::new(actions)?;
    let cfg = &problem.config;
    let score = score(&tree, cfg.dt, cfg.t_max, &cfg.semantics)?;
    Ok(CandidatePlan {
        strategy,
        places: lib.places.clone(),
        tour: tour.to_vec(),
        mask,
        waits_at_help,
        tree,
        score,
    })
}

/// Full pipeline over sampled places.
pub fn plan_psbt(problem: &PlanningProblem) -> Result<PlanOutcome, PlanningError> {
    let cells: Vec<CellIndex> = problem.sample_places().iter().map(|p| p.cell).collect();
    plan_psbt_with_places(problem, &cells)
}

/// PSBT planning over explicitly given place cells.
pub fn plan_psbt_with_places(problem: &PlanningProblem, cells: &[CellIndex]) -> Result<PlanOutcome, PlanningError> {
    let start = Instant::now();
    let lib = ActionLibrary::build(problem, cells)?;
    if lib.n_places() == 0 {
        let chosen = plan_from(problem, Strategy::Psbt, &lib, &[], vec![], true, lib.wait_at_help())?;
        let mut out = single_outcome(chosen, lib.warnings, start);
        out.warnings.push("no eligible places, planning to wait at the help location".into());
        return Ok(out);
    }
    let tour = solve_otsp(&lib.tour_graph(), &problem.config.ga, derive_seed(problem.config.seed, 2))?;
    let en = enumerate_candidates(&lib, &tour.order);
    let scored: Vec<CandidatePlan> = en
        .candidates
        .into_par_iter()
        .map(|c| plan_from(problem, Strategy::Psbt, &lib, &tour.order, c.mask, c.waits_at_help, c.actions))
        .collect::<Result<_, _>>()?;
    let best = select_best(&scored).expect("the wait-at-help plan is always valid");
    let candidates = scored
        .iter()
        .map(|p| CandidateSummary {
            label: p.tree.label.clone(),
            mask: p.mask.clone(),
            waits_at_help: p.waits_at_help,
            p_success: p.p_success(),
            expected_time_s: p.score.expected_time_to_success,
        })
        .collect();
    let chosen = scored.into_iter().nth(best).expect("index in range");
    Ok(PlanOutcome {
        chosen,
        candidates,
        excluded: en.excluded,
        warnings: lib.warnings,
        tour_cost: tour.cost,
        planning_time: start.elapsed(),
    })
}

fn reachable_cells(problem: &PlanningProblem) -> Vec<CellIndex> {
    let dist = problem.reachable();
    let spec = *problem.map.spec();
    problem
        .grid
        .spec
        .cells()
        .filter_map(|c| problem.map_cell_of(c))
        .filter(|&m| dist[spec.index(m)].is_finite())
        .collect()
}

/// Reachable map cells ordered by decreasing rate, ties in row-major
/// order.
fn cells_by_rate(problem: &PlanningProblem) -> Vec<(CellIndex, f64)> {
    let mut cells: Vec<(CellIndex, f64)> = reachable_cells(problem)
        .into_iter()
        .filter_map(|m| {
            let g = problem.grid.spec.world_to_cell(problem.map.spec().cell_center(m))?;
            Some((m, problem.grid.rate(g)))
        })
        .filter(|(_, r)| *r > 0.0)
        .collect();
    cells.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| (a.0.y, a.0.x).cmp(&(b.0.y, b.0.x))));
    cells.dedup_by_key(|c| c.0);
    cells
}

fn single_target(problem: &PlanningProblem, strategy: Strategy, cell: CellIndex) -> Result<PlanOutcome, PlanningError> {
    let start = Instant::now();
    let lib = ActionLibrary::build(problem, &[cell])?;
    let (tour, actions) = if lib.n_places() == 1 {
        (vec![1], lib.sequence(&[(1, true)]))
    } else {
        (vec![], lib.wait_at_help())
    };
    let mask = vec![VisitMask::VisitWait; tour.len()];
    let chosen = plan_from(problem, strategy, &lib, &tour, mask, tour.is_empty(), actions)?;
    Ok(single_outcome(chosen, lib.warnings, start))
}

fn single_outcome(chosen: CandidatePlan, warnings: Vec<String>, start: Instant) -> PlanOutcome {
    PlanOutcome {
        candidates: vec![CandidateSummary {
            label: chosen.tree.label.clone(),
            mask: chosen.mask.clone(),
            waits_at_help: chosen.waits_at_help,
            p_success: chosen.p_success(),
            expected_time_s: chosen.score.expected_time_to_success,
        }],
        chosen,
        excluded: 0,
        warnings,
        tour_cost: 0.0,
        planning_time: start.elapsed(),
    }
}

/// One of the comparison strategies, or PSBT itself.
pub fn plan_baseline(problem: &PlanningProblem, strategy: Strategy) -> Result<PlanOutcome, PlanningError> {
    let start = Instant::now();
    match strategy {
        Strategy::Psbt => plan_psbt(problem),
        Strategy::W => {
            let lib = ActionLibrary::build(problem, &[])?;
            let chosen = plan_from(problem, strategy, &lib, &[], vec![], true, lib.wait_at_help())?;
            Ok(single_outcome(chosen, lib.warnings, start))
        }
        Strategy::GM => match cells_by_rate(problem).first() {
            Some(&(cell, _)) => single_target(problem, strategy, cell),
            None => plan_baseline(problem, Strategy::W).map(|o| relabel(o, strategy)),
        },
        Strategy::GC => {
            let top: Vec<(CellIndex, f64)> = cells_by_rate(problem).into_iter().take(problem.config.gc_top_n).collect();
            let dist = problem.reachable();
            let spec = *problem.map.spec();
            let nearest = top
                .iter()
                .enumerate()
                .min_by(|a, b| dist[spec.index(a.1 .0)].total_cmp(&dist[spec.index(b.1 .0)]).then(a.0.cmp(&b.0)))
                .map(|(_, c)| c.0);
            match nearest {
                Some(cell) => single_target(problem, strategy, cell),
                None => plan_baseline(problem, Strategy::W).map(|o| relabel(o, strategy)),
            }
        }
        Strategy::NW => {
            let cells: Vec<CellIndex> = problem.sample_places().iter().map(|p| p.cell).collect();
            let lib = ActionLibrary::build(problem, &cells)?;
            if lib.n_places() == 0 {
                return plan_baseline(problem, Strategy::W).map(|o| relabel(o, strategy));
            }
            let tour = solve_otsp(&lib.tour_graph(), &problem.config.ga, derive_seed(problem.config.seed, 2))?;
            let stops: Vec<(usize, bool)> = tour.order.iter().map(|&p| (p, false)).collect();
            let mask = vec![VisitMask::Visit; stops.len()];
            let chosen = plan_from(problem, strategy, &lib, &tour.order, mask, false, lib.sequence(&stops))?;
            let mut out = single_outcome(chosen, lib.warnings, start);
            out.tour_cost = tour.cost;
            Ok(out)
        }
        Strategy::Rnd => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(problem.config.seed, 3));
            let pool: Vec<CellIndex> = reachable_cells(problem)
                .into_iter()
                .filter(|&c| c != problem.help.cell)
                .collect();
            let cells: Vec<CellIndex> = pool
                .choose_multiple(&mut rng, problem.config.n.min(pool.len()))
                .copied()
                .collect();
            let lib = ActionLibrary::build(problem, &cells)?;
            if lib.n_places() == 0 {
                return plan_baseline(problem, Strategy::W).map(|o| relabel(o, strategy));
            }
            let tour = solve_otsp(&lib.tour_graph(), &problem.config.ga, derive_seed(problem.config.seed, 4))?;
            let stops: Vec<(usize, bool)> = tour.order.iter().map(|&p| (p, rng.random_bool(0.5))).collect();
            let mask = stops
                .iter()
                .map(|s| if s.1 { VisitMask::VisitWait } else { VisitMask::Visit })
                .collect();
            let chosen = plan_from(problem, strategy, &lib, &tour.order, mask, false, lib.sequence(&stops))?;
            let mut out = single_outcome(chosen, lib.warnings, start);
            out.tour_cost = tour.cost;
            Ok(out)
        }
    }
}

fn relabel(mut o: PlanOutcome, strategy: Strategy) -> PlanOutcome {
    o.chosen.strategy = strategy;
    o.warnings.push(format!("{strategy}: no eligible cell, falling back to waiting at the help location"));
    o
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSummary {
    pub label: String,
    pub kind: ActionKind,
    pub places: Vec<usize>,
    pub success_rate: f64,
    pub failure_rate: f64,
    pub deadline_s: f64,
    pub nav_fail_rate: f64,
    pub path_length_m: Option<f64>,
    pub waypoints: Option<Vec<Point>>,
}

impl From<&StochasticAction> for ActionSummary {
    fn from(a: &StochasticAction) -> Self {
        Self {
            label: a.label(),
            kind: a.kind,
            places: a.places.clone(),
            success_rate: a.success_rate,
            failure_rate: a.failure_rate,
            deadline_s: a.deadline,
            nav_fail_rate: a.nav_fail_rate,
            path_length_m: a.path().map(|p| p.length),
            waypoints: a.path().map(|p| p.waypoints.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenMetrics {
    pub t_max_s: f64,
    pub p_success_t_max: f64,
    pub p_fail_t_max: f64,
    /// `μ_T⁻¹`, seconds.
    pub expected_time_to_success_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCounts {
    pub total: usize,
    pub scored: usize,
    pub excluded: usize,
}

/// Serialized form of a chosen plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub strategy: Strategy,
    pub label: String,
    pub places: Vec<Place>,
    pub tour: Vec<usize>,
    pub mask: Vec<VisitMask>,
    pub waits_at_help: bool,
    pub actions: Vec<ActionSummary>,
    pub p_success_curve_ref: Option<String>,
    pub chosen_metrics: ChosenMetrics,
    pub candidates: CandidateCounts,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub planning_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidate_scores: Option<Vec<CandidateSummary>>,
}

impl PlanReport {
    pub fn new(outcome: &PlanOutcome, curve_ref: Option<String>) -> Self {
        let c = &outcome.chosen;
        Self {
            strategy: c.strategy,
            label: c.tree.label.clone(),
            places: c.places.clone(),
            tour: c.tour.clone(),
            mask: c.mask.clone(),
            waits_at_help: c.waits_at_help,
            actions: c.tree.children().iter().map(ActionSummary::from).collect(),
            p_success_curve_ref: curve_ref,
            chosen_metrics: ChosenMetrics {
                t_max_s: c.score.t_max(),
                p_success_t_max: c.score.final_success(),
                p_fail_t_max: c.score.final_failure(),
                expected_time_to_success_s: c.score.expected_time_to_success,
            },
            candidates: CandidateCounts {
                total: outcome.candidates.len() + outcome.excluded,
                scored: outcome.candidates.len(),
                excluded: outcome.excluded,
            },
            warnings: outcome.warnings.clone(),
            planning_time_s: None,
            candidate_scores: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
