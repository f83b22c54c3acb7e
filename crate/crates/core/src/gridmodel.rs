//! Grid approximation of the spatial Poisson process of people occurrence.
//!
//! Every cell carries a Gamma posterior `(alpha, beta)` over its constant
//! arrival rate. Observations only touch cells whose center lies inside the
//! robot's circular detection zone. Only one time slice is active at a time;
//! `slice_id` labels it and switching slices means loading another grid.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;

pub const DEFAULT_WIDTH: usize = 50;
pub const DEFAULT_HEIGHT: usize = 25;
pub const DEFAULT_CELL_SIZE: f64 = 1.0;
pub const DEFAULT_DETECTION_RADIUS: f64 = 2.0;

/// Pseudo-observation count used by [`RateGrid::from_rates`]. Large enough
/// that the posterior variance of a known rate is negligible.
pub const KNOWN_RATE_PSEUDO_COUNT: f64 = 1.0e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("cell ({x}, {y}) is outside the {width}x{height} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("cell array has {got} entries, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("invalid Gamma parameters alpha={alpha}, beta={beta}")]
    InvalidCell { alpha: f64, beta: f64 },
    #[error("rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub x: usize,
    pub y: usize,
}

impl CellIndex {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub origin: Point,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            cell_size: DEFAULT_CELL_SIZE,
            origin: Point::default(),
        }
    }
}

impl GridSpec {
    pub fn new(width: usize, height: usize, cell_size: f64, origin: Point) -> Result<Self, GridError> {
        let spec = Self {
            width,
            height,
            cell_size,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.width == 0 || self.height == 0 {
            return Err(GridError::EmptyGrid {
                width: self.width,
                height: self.height,
            });
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(GridError::BadCellSize(self.cell_size));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn check(&self, cell: CellIndex) -> Result<(), GridError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(GridError::OutOfBounds {
                x: cell.x,
                y: cell.y,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Row-major storage index.
    pub fn index(&self, cell: CellIndex) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn cell_at(&self, index: usize) -> CellIndex {
        CellIndex::new(index % self.width, index / self.width)
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.cell_count()).map(|i| self.cell_at(i))
    }

    pub fn cell_center(&self, cell: CellIndex) -> Point {
        Point::new(
            self.origin.x + (cell.x as f64 + 0.5) * self.cell_size,
            self.origin.y + (cell.y as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn world_to_cell(&self, p: Point) -> Option<CellIndex> {
        let fx = ((p.x - self.origin.x) / self.cell_size).floor();
        let fy = ((p.y - self.origin.y) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        let cell = CellIndex::new(fx as usize, fy as usize);
        self.contains(cell).then_some(cell)
    }

    /// Cells whose center lies inside (or on the boundary of) the disc.
    pub fn cells_in_disc(&self, disc: &DetectionDisc) -> Vec<CellIndex> {
        let r = disc.radius;
        let cs = self.cell_size;
        let lo_x = ((disc.center.x - r - self.origin.x) / cs - 0.5).ceil().max(0.0);
        let hi_x = ((disc.center.x + r - self.origin.x) / cs - 0.5).floor();
        let lo_y = ((disc.center.y - r - self.origin.y) / cs - 0.5).ceil().max(0.0);
        let hi_y = ((disc.center.y + r - self.origin.y) / cs - 0.5).floor();
        if hi_x < 0.0 || hi_y < 0.0 || lo_x > hi_x || lo_y > hi_y {
            return Vec::new();
        }
        let hi_x = (hi_x as usize).min(self.width - 1);
        let hi_y = (hi_y as usize).min(self.height - 1);
        let mut out = Vec::new();
        for y in lo_y as usize..=hi_y {
            for x in lo_x as usize..=hi_x {
                let cell = CellIndex::new(x, y);
                if self.cell_center(cell).distance(&disc.center) <= r {
                    out.push(cell);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionDisc {
    pub center: Point,
    pub radius: f64,
}

impl DetectionDisc {
    pub fn new(center: Point, radius: f64) -> Result<Self, GridError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GridError::NonPositive {
                name: "detection radius",
                value: radius,
            });
        }
        Ok(Self { center, radius })
    }
}

/// Gamma posterior over one cell's rate. Serialized as `[alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct RateCell {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RateCell {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl From<[f64; 2]> for RateCell {
    fn from(v: [f64; 2]) -> Self {
        Self {
            alpha: v[0],
            beta: v[1],
        }
    }
}

impl From<RateCell> for [f64; 2] {
    fn from(c: RateCell) -> Self {
        [c.alpha, c.beta]
    }
}

impl RateCell {
    /// Events per second.
    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn variance(&self) -> f64 {
        self.alpha / (self.beta * self.beta)
    }

    fn is_valid(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.alpha >= 0.0 && self.beta > 0.0
    }
}

/// Result of a disc query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscRate {
    /// Summed rate means, events per second.
    pub rate: f64,
    pub covered_cells: usize,
    /// Set when the disc covers no grid cell at all.
    pub outside_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSnapshot")]
pub struct RateGrid {
    pub spec: GridSpec,
    pub slice_id: u32,
    cells: Vec<RateCell>,
}

#[derive(Deserialize)]
struct GridSnapshot {
    spec: GridSpec,
    #[serde(default)]
    slice_id: u32,
    cells: Vec<RateCell>,
}

impl TryFrom<GridSnapshot> for RateGrid {
    type Error = GridError;

    fn try_from(s: GridSnapshot) -> Result<Self, Self::Error> {
        RateGrid::from_cells(s.spec, s.slice_id, s.cells)
    }
}

/// One entry of a simulated arrival stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    /// Start of the window the arrivals fell into.
    pub time_s: f64,
    pub cell_x: usize,
    pub cell_y: usize,
    pub count: u32,
}

impl ArrivalEvent {
    pub fn cell(&self) -> CellIndex {
        CellIndex::new(self.cell_x, self.cell_y)
    }
}

/// Thresholds for place sampling. The variance and distance defaults are
/// arbitrary; tune them per environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub n: usize,
    pub min_separation: f64,
    pub max_variance: f64,
    pub max_distance: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            n: 6,
            min_separation: DEFAULT_DETECTION_RADIUS,
            max_variance: 1.0e-3,
            max_distance: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledCell {
    pub cell: CellIndex,
    pub position: Point,
    pub rate_mean: f64,
}

impl RateGrid {
    /// Grid with the uninformed prior `alpha = beta = 1` everywhere.
    pub fn new(spec: GridSpec) -> Result<Self, GridError> {
        spec.validate()?;
        Ok(Self {
            spec,
            slice_id: 0,
            cells: vec![RateCell::default(); spec.cell_count()],
        })
    }

    pub fn from_cells(spec: GridSpec, slice_id: u32, cells: Vec<RateCell>) -> Result<Self, GridError> {
        spec.validate()?;
        if cells.len() != spec.cell_count() {
            return Err(GridError::ShapeMismatch {
                got: cells.len(),
                expected: spec.cell_count(),
            });
        }
        if let Some(bad) = cells.iter().find(|c| !c.is_valid()) {
            return Err(GridError::InvalidCell {
                alpha: bad.alpha,
                beta: bad.beta,
            });
        }
        Ok(Self {
            spec,
            slice_id,
            cells,
        })
    }

    /// Grid of known rates (row-major), e.g. a synthetic ground truth. Each
    /// cell is stored as a posterior with [`KNOWN_RATE_PSEUDO_COUNT`]
    /// observations so its variance is negligible; zero rates are allowed.
    pub fn from_rates(spec: GridSpec, rates: &[f64]) -> Result<Self, GridError> {
        if let Some(&bad) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(GridError::InvalidRate(bad));
        }
        let cells = rates
            .iter()
            .map(|&r| RateCell {
                alpha: r * KNOWN_RATE_PSEUDO_COUNT,
                beta: KNOWN_RATE_PSEUDO_COUNT,
            })
            .collect();
        Self::from_cells(spec, 0, cells)
    }

    pub fn from_rate_fn(spec: GridSpec, f: impl Fn(CellIndex, Point) -> f64) -> Result<Self, GridError> {
        let rates: Vec<f64> = spec.cells().map(|c| f(c, spec.cell_center(c))).collect();
        Self::from_rates(spec, &rates)
    }

    pub fn cell(&self, cell: CellIndex) -> &RateCell {
        &self.cells[self.spec.index(cell)]
    }

    pub fn cells(&self) -> &[RateCell] {
        &self.cells
    }

    pub fn set_cell(&mut self, cell: CellIndex, value: RateCell) -> Result<(), GridError> {
        self.spec.check(cell)?;
        if !value.is_valid() {
            return Err(GridError::InvalidCell {
                alpha: value.alpha,
                beta: value.beta,
            });
        }
        let i = self.spec.index(cell);
        self.cells[i] = value;
        Ok(())
    }

    pub fn rate(&self, cell: CellIndex) -> f64 {
        self.cell(cell).mean()
    }

    pub fn means(&self) -> Vec<f64> {
        self.cells.iter().map(RateCell::mean).collect()
    }

    /// One Bayesian observation step: every cell inside the detection disc
    /// gains its detection count in `alpha` and one exposure in `beta`.
    /// Counts for cells outside the disc are ignored. Out-of-grid keys
    /// reject the whole update and leave the grid untouched.
    pub fn update(
        &mut self,
        robot_pose: Point,
        counts: &BTreeMap<CellIndex, u32>,
        disc_radius: f64,
    ) -> Result<(), GridError> {
        for &cell in counts.keys() {
            self.spec.check(cell)?;
        }
        let disc = DetectionDisc::new(robot_pose, disc_radius)?;
        for cell in self.spec.cells_in_disc(&disc) {
            let c = counts.get(&cell).copied().unwrap_or(0);
            let i = self.spec.index(cell);
            self.cells[i].alpha += f64::from(c);
            self.cells[i].beta += 1.0;
        }
        Ok(())
    }

    pub fn rate_in_disc(&self, disc: &DetectionDisc) -> DiscRate {
        self.rate_in_disc_filtered(disc, None)
    }

    /// Like [`rate_in_disc`](Self::rate_in_disc), skipping cells whose
    /// posterior variance exceeds `max_variance` when one is given.
    pub fn rate_in_disc_filtered(&self, disc: &DetectionDisc, max_variance: Option<f64>) -> DiscRate {
        let covered = self.spec.cells_in_disc(disc);
        let rate = covered
            .iter()
            .map(|&c| self.cell(c))
            .filter(|rc| max_variance.is_none_or(|v| rc.variance() <= v))
            .map(RateCell::mean)
            .sum();
        DiscRate {
            rate,
            covered_cells: covered.len(),
            outside_grid: covered.is_empty(),
        }
    }

    /// Roulette-wheel sampling of up to `n` places, `p ∝ λ`.
    pub fn sample_places(&self, params: &SamplingParams, from: Point, seed: u64) -> Vec<SampledCell> {
        self.sample_places_where(params, from, seed, |_| true)
    }

    /// Place sampling restricted to cells accepted by `eligible`, e.g. free
    /// and reachable map cells.
    ///
    /// Cells need a positive rate, variance at most `max_variance`, distance
    /// to `from` at most `max_distance`, and must lie at least
    /// `min_separation` away from `from` (the help location is covered by
    /// waiting there). When a draw lands closer than `min_separation` to a
    /// kept place, only the higher-rate cell survives and drawing continues
    /// until `n` places are kept or the pool is empty.
    pub fn sample_places_where(
        &self,
        params: &SamplingParams,
        from: Point,
        seed: u64,
        eligible: impl Fn(CellIndex) -> bool,
    ) -> Vec<SampledCell> {
        let mut pool: Vec<SampledCell> = self
            .spec
            .cells()
            .filter_map(|cell| {
                let rc = self.cell(cell);
                let position = self.spec.cell_center(cell);
                let d = position.distance(&from);
                let ok = rc.mean() > 0.0
                    && rc.variance() <= params.max_variance
                    && d <= params.max_distance
                    && d >= params.min_separation
                    && eligible(cell);
                ok.then_some(SampledCell {
                    cell,
                    position,
                    rate_mean: rc.mean(),
                })
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept: Vec<SampledCell> = Vec::with_capacity(params.n);
        while kept.len() < params.n && !pool.is_empty() {
            let total: f64 = pool.iter().map(|c| c.rate_mean).sum();
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = pool.len() - 1;
            for (i, c) in pool.iter().enumerate() {
                acc += c.rate_mean;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            let cand = pool.remove(pick);
            let conflicts: Vec<usize> = kept
                .iter()
                .enumerate()
                .filter(|(_, k)| k.position.distance(&cand.position) < params.min_separation)
                .map(|(i, _)| i)
                .collect();
            if conflicts.iter().all(|&i| kept[i].rate_mean < cand.rate_mean) {
                for &i in conflicts.iter().rev() {
                    kept.remove(i);
                }
                kept.push(cand);
            }
        }
        kept
    }

    /// Ground-truth arrivals: per cell and window of length `dt`, a
    /// Poisson(`λ·dt`) count. Sorted by time, then row-major cell order.
    pub fn simulate_arrivals(&self, horizon: f64, dt: f64, seed: u64) -> Result<Vec<ArrivalEvent>, GridError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(GridError::NonPositive { name: "dt", value: dt });
        }
        if !(horizon >= dt) {
            return Err(GridError::NonPositive {
                name: "horizon - dt",
                value: horizon - dt,
            });
        }
        let steps = (horizon / dt + 1e-9).floor() as usize;
        let active: Vec<(CellIndex, Poisson<f64>)> = self
            .spec
            .cells()
            .filter_map(|c| {
                let lam = self.rate(c) * dt;
                (lam > 0.0).then(|| (c, Poisson::new(lam).expect("positive finite mean")))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        for k in 0..steps {
            let time_s = k as f64 * dt;
            for (cell, dist) in &active {
                let count = dist.sample(&mut rng) as u32;
                if count > 0 {
                    events.push(ArrivalEvent {
                        time_s,
                        cell_x: cell.x,
                        cell_y: cell.y,
                        count,
                    });
                }
            }
        }
        Ok(events)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Writes an arrival stream as `time_s,cell_x,cell_y,count`.
pub fn write_events_csv<W: std::io::Write>(events: &[ArrivalEvent], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<ArrivalEvent>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 1.0, Point::default()).unwrap()
    }

    #[test]
    fn cell_center_round_trips() {
        let s = GridSpec::new(7, 3, 0.5, Point::new(-2.0, 4.0)).unwrap();
        for c in s.cells() {
            assert_eq!(s.world_to_cell(s.cell_center(c)), Some(c));
        }
        assert_eq!(s.world_to_cell(Point::new(-2.1, 4.1)), None);
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(GridSpec::new(0, 3, 1.0, Point::default()).is_err());
        assert!(GridSpec::new(3, 3, 0.0, Point::default()).is_err());
    }

    #[test]
    fn update_adds_counts_inside_disc() {
        let mut g = RateGrid::new(spec(10, 10)).unwrap();
        let c = CellIndex::new(5, 5);
        let counts = BTreeMap::from([(c, 3)]);
        g.update(Point::new(5.5, 5.5), &counts, 2.0).unwrap();
        assert_eq!(*g.cell(c), RateCell { alpha: 4.0, beta: 2.0 });
        assert_eq!(g.rate(c), 2.0);
    }

    #[test]
    fn update_ignores_cells_outside_disc() {
        let mut g = RateGrid::new(spec(10, 10)).unwrap();
        let far = CellIndex::new(0, 0);
        let counts = BTreeMap::from([(far, 7)]);
        g.update(Point::new(8.5, 8.5), &counts, 2.0).unwrap();
        assert_eq!(*g.cell(far), RateCell::default());
    }

    #[test]
    fn repeated_empty_observations() {
        let mut g = RateGrid::new(spec(10, 10)).unwrap();
        let c = CellIndex::new(5, 5);
        for _ in 0..10 {
            g.update(Point::new(5.5, 5.5), &BTreeMap::new(), 2.0).unwrap();
        }
        assert_eq!(*g.cell(c), RateCell { alpha: 1.0, beta: 11.0 });
        assert_relative_eq!(g.rate(c), 1.0 / 11.0);
    }

    #[test]
    fn out_of_bounds_update_leaves_grid_unchanged() {
        let mut g = RateGrid::new(spec(4, 4)).unwrap();
        let before = g.clone();
        let counts = BTreeMap::from([(CellIndex::new(1, 1), 1), (CellIndex::new(9, 0), 1)]);
        let err = g.update(Point::new(1.5, 1.5), &counts, 2.0).unwrap_err();
        assert!(matches!(err, GridError::OutOfBounds { x: 9, .. }));
        assert_eq!(g, before);
    }

    #[test]
    fn disc_sum_over_four_cells() {
        let mut rates = vec![0.0; 100];
        for (x, y) in [(4, 4), (5, 4), (4, 5), (5, 5)] {
            rates[y * 10 + x] = 0.01;
        }
        let g = RateGrid::from_rates(spec(10, 10), &rates).unwrap();
        let q = g.rate_in_disc(&DetectionDisc::new(Point::new(5.0, 5.0), 0.75).unwrap());
        assert_eq!(q.covered_cells, 4);
        assert_relative_eq!(q.rate, 0.04, max_relative = 1e-12);
    }

    #[test]
    fn disc_outside_grid_is_flagged() {
        let g = RateGrid::from_rates(spec(5, 5), &[1.0; 25]).unwrap();
        let q = g.rate_in_disc(&DetectionDisc::new(Point::new(50.0, 50.0), 2.0).unwrap());
        assert_eq!(q.rate, 0.0);
        assert!(q.outside_grid);
    }

    #[test]
    fn uniform_disc_matches_brute_force_membership() {
        let s = GridSpec::new(20, 15, 0.5, Point::new(1.0, -3.0)).unwrap();
        let c = 0.03;
        let g = RateGrid::from_rates(s, &vec![c; s.cell_count()]).unwrap();
        for (cx, cy, r) in [(4.0, 1.0, 2.0), (1.1, -2.9, 1.3), (9.0, 4.0, 3.7), (6.3, 0.2, 0.26)] {
            let disc = DetectionDisc::new(Point::new(cx, cy), r).unwrap();
            // brute force over every cell
            let k = s
                .cells()
                .filter(|&cell| s.cell_center(cell).distance(&disc.center) <= r)
                .count();
            let q = g.rate_in_disc(&disc);
            assert_eq!(q.covered_cells, k);
            assert_relative_eq!(q.rate, k as f64 * c, max_relative = 1e-9);
        }
    }

    #[test]
    fn variance_filter_drops_unconfident_cells() {
        let mut g = RateGrid::from_rates(spec(5, 5), &[0.1; 25]).unwrap();
        g.set_cell(CellIndex::new(2, 2), RateCell::default()).unwrap();
        let disc = DetectionDisc::new(Point::new(2.5, 2.5), 0.5).unwrap();
        assert_relative_eq!(g.rate_in_disc(&disc).rate, 1.0);
        assert_eq!(g.rate_in_disc_filtered(&disc, Some(1e-3)).rate, 0.0);
    }

    #[test]
    fn single_hot_cell_is_the_only_place() {
        let mut rates = vec![0.0; 100];
        rates[7 * 10 + 7] = 0.2;
        let g = RateGrid::from_rates(spec(10, 10), &rates).unwrap();
        let p = g.sample_places(&SamplingParams { n: 3, ..Default::default() }, Point::new(0.5, 0.5), 1);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].cell, CellIndex::new(7, 7));
    }

    #[test]
    fn close_pairs_keep_the_higher_rate() {
        let mut rates = vec![0.0; 100];
        rates[5 * 10 + 8] = 0.3;
        rates[5 * 10 + 9] = 0.1;
        let g = RateGrid::from_rates(spec(10, 10), &rates).unwrap();
        let params = SamplingParams { n: 2, ..Default::default() };
        for seed in 0..200 {
            let p = g.sample_places(&params, Point::new(0.5, 0.5), seed);
            assert_eq!(p.len(), 1);
            assert_eq!(p[0].cell, CellIndex::new(8, 5));
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let g = RateGrid::from_rates(spec(10, 10), &[0.05; 100]).unwrap();
        let params = SamplingParams {
            n: 6,
            min_separation: 1.0,
            ..Default::default()
        };
        let from = Point::new(-5.0, -5.0);
        let a = g.sample_places(&params, from, 9);
        let b = g.sample_places(&params, from, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        let mut cells: Vec<_> = a.iter().map(|s| s.cell).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 6);
        assert_ne!(a, g.sample_places(&params, from, 10));
    }

    #[test]
    fn sampling_respects_thresholds() {
        let mut g = RateGrid::from_rates(spec(20, 5), &[0.05; 100]).unwrap();
        g.set_cell(CellIndex::new(3, 2), RateCell::default()).unwrap();
        let params = SamplingParams {
            n: 50,
            min_separation: 1.5,
            max_variance: 1e-3,
            max_distance: 8.0,
        };
        let from = Point::new(2.5, 2.5);
        let p = g.sample_places(&params, from, 4);
        assert!(!p.is_empty());
        for s in &p {
            assert!(s.position.distance(&from) <= 8.0);
            assert!(s.position.distance(&from) >= 1.5);
            assert_ne!(s.cell, CellIndex::new(3, 2));
        }
        for (i, a) in p.iter().enumerate() {
            for b in &p[i + 1..] {
                assert!(a.position.distance(&b.position) >= 1.5);
            }
        }
    }

    #[test]
    fn no_eligible_cells_yields_empty() {
        let g = RateGrid::from_rates(spec(5, 5), &[0.0; 25]).unwrap();
        assert!(g.sample_places(&SamplingParams::default(), Point::default(), 0).is_empty());
    }

    #[test]
    fn roulette_wheel_ratio() {
        let mut rates = vec![0.0; 10];
        rates[2] = 0.3;
        rates[8] = 0.1;
        let g = RateGrid::from_rates(spec(10, 1), &rates).unwrap();
        let params = SamplingParams {
            n: 1,
            min_separation: 0.5,
            ..Default::default()
        };
        let from = Point::new(5.0, 0.5);
        let draws = 100_000;
        let hot = (0..draws as u64)
            .filter(|&s| g.sample_places(&params, from, s)[0].cell.x == 2)
            .count();
        let ratio = hot as f64 / (draws as usize - hot) as f64;
        assert!((ratio / 3.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn arrivals_zero_rate_is_empty() {
        let g = RateGrid::from_rates(spec(4, 4), &[0.0; 16]).unwrap();
        assert!(g.simulate_arrivals(100.0, 1.0, 3).unwrap().is_empty());
    }

    #[test]
    fn arrivals_match_poisson_mean() {
        let g = RateGrid::from_rates(spec(1, 1), &[0.1]).unwrap();
        let ev = g.simulate_arrivals(1.0e5, 1.0, 17).unwrap();
        let total: u32 = ev.iter().map(|e| e.count).sum();
        let expected = 1.0e4;
        assert!((f64::from(total) - expected).abs() <= 3.0 * expected.sqrt(), "{total}");
    }

    #[test]
    fn arrivals_are_seeded_and_sorted() {
        let g = RateGrid::from_rates(spec(3, 3), &[0.2; 9]).unwrap();
        let a = g.simulate_arrivals(200.0, 0.5, 1).unwrap();
        assert_eq!(a, g.simulate_arrivals(200.0, 0.5, 1).unwrap());
        assert_ne!(a, g.simulate_arrivals(200.0, 0.5, 2).unwrap());
        assert!(a.windows(2).all(|w| w[0].time_s <= w[1].time_s));
        assert!(g.simulate_arrivals(0.1, 0.5, 1).is_err());
        assert!(g.simulate_arrivals(10.0, 0.0, 1).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_validation() {
        let mut g = RateGrid::new(spec(3, 2)).unwrap();
        g.slice_id = 4;
        g.set_cell(CellIndex::new(2, 1), RateCell { alpha: 5.0, beta: 3.0 }).unwrap();
        let json = g.to_json();
        assert!(json.contains("[5.0,3.0]"));
        assert_eq!(RateGrid::from_json(&json).unwrap(), g);
        let bad = r#"{"spec":{"width":2,"height":1,"cell_size":1.0,"origin":{"x":0.0,"y":0.0}},"slice_id":0,"cells":[[1.0,1.0]]}"#;
        assert!(RateGrid::from_json(bad).is_err());
    }

    #[test]
    fn events_csv_round_trip() {
        let g = RateGrid::from_rates(spec(2, 2), &[0.5; 4]).unwrap();
        let ev = g.simulate_arrivals(20.0, 1.0, 5).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&ev, &mut buf).unwrap();
        assert!(buf.starts_with(b"time_s,cell_x,cell_y,count\n"));
        assert_eq!(read_events_csv(buf.as_slice()).unwrap(), ev);
    }

    proptest! {
        #[test]
        fn posterior_is_monotone(obs in proptest::collection::vec((0usize..6, 0usize..6, 0u32..4), 1..40)) {
            let mut g = RateGrid::new(spec(6, 6)).unwrap();
            for (x, y, c) in obs {
                let before = g.clone();
                let counts = BTreeMap::from([(CellIndex::new(x, y), c)]);
                g.update(g.spec.cell_center(CellIndex::new(x, y)), &counts, 1.5).unwrap();
                for (a, b) in before.cells().iter().zip(g.cells()) {
                    prop_assert!(b.alpha >= a.alpha && b.beta >= a.beta);
                    prop_assert!(b.alpha >= 1.0 && b.beta >= 1.0);
                }
            }
        }

        #[test]
        fn disc_rate_additive_and_translation_invariant(
            rates in proptest::collection::vec(0u32..20, 64),
            qx in 0i32..32, qy in 0i32..32, r4 in 2u32..12,
            tx in -8i32..8, ty in -8i32..8,
        ) {
            // quarter-meter lattice keeps every distance exact
            let rates: Vec<f64> = rates.iter().map(|&r| f64::from(r) / 64.0).collect();
            let s = spec(8, 8);
            let g = RateGrid::from_rates(s, &rates).unwrap();
            let center = Point::new(f64::from(qx) / 4.0, f64::from(qy) / 4.0);
            let disc = DetectionDisc::new(center, f64::from(r4) / 4.0).unwrap();
            let q = g.rate_in_disc(&disc);

            let split = |keep_even: bool| {
                let r: Vec<f64> = rates.iter().enumerate()
                    .map(|(i, &v)| if (i % 2 == 0) == keep_even { v } else { 0.0 }).collect();
                RateGrid::from_rates(s, &r).unwrap().rate_in_disc(&disc).rate
            };
            prop_assert!((split(true) + split(false) - q.rate).abs() < 1e-9);

            let shift = Point::new(f64::from(tx), f64::from(ty));
            let s2 = GridSpec::new(8, 8, 1.0, shift).unwrap();
            let g2 = RateGrid::from_rates(s2, &rates).unwrap();
            let disc2 = DetectionDisc::new(center.offset(shift.x, shift.y), disc.radius).unwrap();
            let q2 = g2.rate_in_disc(&disc2);
            prop_assert_eq!(q.covered_cells, q2.covered_cells);
            prop_assert!((q.rate - q2.rate).abs() < 1e-9);
        }
    }
}
