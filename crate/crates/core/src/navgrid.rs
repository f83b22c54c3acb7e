//! Occupancy-grid navigation: 8-connected shortest paths, polyline geometry
//! and the detection-zone sweep along a path.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;
use crate::gridmodel::{CellIndex, DetectionDisc, GridSpec, RateGrid};

pub const DEFAULT_SPEED: f64 = 0.5;
pub const DEFAULT_PGM_THRESHOLD: u8 = 128;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("no path from cell ({from_x}, {from_y}) to cell ({to_x}, {to_y})")]
    NoPath {
        from_x: usize,
        from_y: usize,
        to_x: usize,
        to_y: usize,
    },
    #[error("cell ({x}, {y}) is blocked or outside the map")]
    NotFree { x: usize, y: usize },
    #[error("point ({x}, {y}) is outside the map")]
    OutsideMap { x: f64, y: f64 },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("average speed must be positive, got {0}")]
    BadSpeed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapFile", into = "MapFile")]
pub struct OccupancyMap {
    spec: GridSpec,
    blocked: Vec<bool>,
}

/// JSON map layout: `rows[y][x]`, `true` = blocked.
#[derive(Serialize, Deserialize)]
struct MapFile {
    cell_size: f64,
    #[serde(default)]
    origin: Point,
    rows: Vec<Vec<bool>>,
}

impl TryFrom<MapFile> for OccupancyMap {
    type Error = NavError;

    fn try_from(f: MapFile) -> Result<Self, NavError> {
        let height = f.rows.len();
        let width = f.rows.first().map_or(0, Vec::len);
        if f.rows.iter().any(|r| r.len() != width) {
            return Err(NavError::InvalidMap("ragged rows".into()));
        }
        let spec = GridSpec::new(width, height, f.cell_size, f.origin)
            .map_err(|e| NavError::InvalidMap(e.to_string()))?;
        OccupancyMap::new(spec, f.rows.concat())
    }
}

impl From<OccupancyMap> for MapFile {
    fn from(m: OccupancyMap) -> Self {
        MapFile {
            cell_size: m.spec.cell_size,
            origin: m.spec.origin,
            rows: m.blocked.chunks(m.spec.width).map(<[bool]>::to_vec).collect(),
        }
    }
}

impl OccupancyMap {
    pub fn new(spec: GridSpec, blocked: Vec<bool>) -> Result<Self, NavError> {
        spec.validate().map_err(|e| NavError::InvalidMap(e.to_string()))?;
        if blocked.len() != spec.cell_count() {
            return Err(NavError::InvalidMap(format!(
                "{} cells given for a {}x{} map",
                blocked.len(),
                spec.width,
                spec.height
            )));
        }
        if blocked.iter().all(|&b| b) {
            return Err(NavError::InvalidMap("no free cell".into()));
        }
        Ok(Self { spec, blocked })
    }

    pub fn empty(spec: GridSpec) -> Self {
        Self::new(spec, vec![false; spec.cell_count()]).expect("empty map is valid")
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn is_free(&self, cell: CellIndex) -> bool {
        self.spec.contains(cell) && !self.blocked[self.spec.index(cell)]
    }

    pub fn set_blocked(&mut self, cell: CellIndex, blocked: bool) {
        let i = self.spec.index(cell);
        self.blocked[i] = blocked;
    }

    pub fn free_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.spec.cells().filter(|&c| self.is_free(c))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Parses a binary (P5) PGM. Pixels darker than `threshold` are blocked.
    /// Image row 0 is the top of the map, i.e. the largest `y` index.
    pub fn from_pgm(bytes: &[u8], cell_size: f64, origin: Point, threshold: u8) -> Result<Self, NavError> {
        let bad = |m: &str| NavError::InvalidMap(format!("pgm: {m}"));
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("expected magic P5"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit maps are supported"));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let raster = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated raster"))?;
        let spec = GridSpec::new(width, height, cell_size, origin).map_err(|e| NavError::InvalidMap(e.to_string()))?;
        let mut blocked = vec![false; width * height];
        for row in 0..height {
            let y = height - 1 - row;
            for x in 0..width {
                blocked[y * width + x] = raster[row * width + x] < threshold;
            }
        }
        Self::new(spec, blocked)
    }

    /// Free cells as 254, blocked as 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for row in 0..h {
            let y = h - 1 - row;
            out.extend((0..w).map(|x| if self.blocked[y * w + x] { 0u8 } else { 254u8 }));
        }
        out
    }

    fn neighbors(&self, c: CellIndex) -> impl Iterator<Item = (CellIndex, f64)> + '_ {
        const STEPS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let nx = c.x as i64 + dx;
            let ny = c.y as i64 + dy;
            if nx < 0 || ny < 0 {
                return None;
            }
            let n = CellIndex::new(nx as usize, ny as usize);
            if !self.is_free(n) {
                return None;
            }
            if dx != 0 && dy != 0 {
                // no corner cutting
                let a = CellIndex::new(nx as usize, c.y);
                let b = CellIndex::new(c.x, ny as usize);
                if !self.is_free(a) || !self.is_free(b) {
                    return None;
                }
                Some((n, SQRT_2))
            } else {
                Some((n, 1.0))
            }
        })
    }

    /// Shortest 8-connected path lengths (meters) from `from` to every
    /// cell; `f64::INFINITY` for unreachable or blocked cells.
    pub fn distance_field(&self, from: CellIndex) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.spec.cell_count()];
        if !self.is_free(from) {
            return dist;
        }
        let mut heap = BinaryHeap::new();
        dist[self.spec.index(from)] = 0.0;
        heap.push(Frontier { f: 0.0, g: 0.0, idx: self.spec.index(from) });
        while let Some(Frontier { g, idx, .. }) = heap.pop() {
            if g > dist[idx] {
                continue;
            }
            for (n, step) in self.neighbors(self.spec.cell_at(idx)) {
                let ni = self.spec.index(n);
                let ng = g + step;
                if ng < dist[ni] {
                    dist[ni] = ng;
                    heap.push(Frontier { f: ng, g: ng, idx: ni });
                }
            }
        }
        dist.iter().map(|d| d * self.spec.cell_size).collect()
    }

    /// A* over cells, octile heuristic. Returns the cell sequence.
    pub fn shortest_cells(&self, from: CellIndex, to: CellIndex) -> Result<Vec<CellIndex>, NavError> {
        for c in [from, to] {
            if !self.is_free(c) {
                return Err(NavError::NotFree { x: c.x, y: c.y });
            }
        }
        let n = self.spec.cell_count();
        let h = |c: CellIndex| {
            let dx = c.x.abs_diff(to.x) as f64;
            let dy = c.y.abs_diff(to.y) as f64;
            dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
        };
        let mut g = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        let start = self.spec.index(from);
        let goal = self.spec.index(to);
        g[start] = 0.0;
        heap.push(Frontier { f: h(from), g: 0.0, idx: start });
        while let Some(Frontier { g: cg, idx, .. }) = heap.pop() {
            if idx == goal {
                break;
            }
            if cg > g[idx] {
                continue;
            }
            for (nc, step) in self.neighbors(self.spec.cell_at(idx)) {
                let ni = self.spec.index(nc);
                let ng = cg + step;
                if ng < g[ni] - 1e-12 {
                    g[ni] = ng;
                    parent[ni] = idx;
                    heap.push(Frontier { f: ng + h(nc), g: ng, idx: ni });
                }
            }
        }
        if !g[goal].is_finite() {
            return Err(NavError::NoPath {
                from_x: from.x,
                from_y: from.y,
                to_x: to.x,
                to_y: to.y,
            });
        }
        let mut cells = vec![to];
        let mut cur = goal;
        while cur != start {
            cur = parent[cur];
            cells.push(self.spec.cell_at(cur));
        }
        cells.reverse();
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    f: f64,
    g: f64,
    idx: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // min-heap on f, then larger g, then index for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// A location the robot may drive to or wait at. Id 0 is the help location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub id: usize,
    pub position: Point,
    pub cell: CellIndex,
    pub rate_mean: f64,
}

impl Place {
    /// Place snapped to the center of the free map cell containing `p`.
    pub fn at(id: usize, p: Point, map: &OccupancyMap, grid: &RateGrid) -> Result<Self, NavError> {
        let cell = map
            .spec()
            .world_to_cell(p)
            .ok_or(NavError::OutsideMap { x: p.x, y: p.y })?;
        Self::at_cell(id, cell, map, grid)
    }

    pub fn at_cell(id: usize, cell: CellIndex, map: &OccupancyMap, grid: &RateGrid) -> Result<Self, NavError> {
        if !map.is_free(cell) {
            return Err(NavError::NotFree { x: cell.x, y: cell.y });
        }
        let position = map.spec().cell_center(cell);
        let rate_mean = grid.spec.world_to_cell(position).map_or(0.0, |c| grid.rate(c));
        Ok(Self {
            id,
            position,
            cell,
            rate_mean,
        })
    }
}

/// Planned polyline with its arc length and the average driving speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    pub waypoints: Vec<Point>,
    pub length: f64,
    pub avg_speed: f64,
}

impl PathGeometry {
    pub fn new(waypoints: Vec<Point>, avg_speed: f64) -> Result<Self, NavError> {
        if !(avg_speed > 0.0 && avg_speed.is_finite()) {
            return Err(NavError::BadSpeed(avg_speed));
        }
        if waypoints.is_empty() {
            return Err(NavError::InvalidMap("path without waypoints".into()));
        }
        let length = waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum();
        Ok(Self {
            waypoints,
            length,
            avg_speed,
        })
    }

    /// Traversal time `l / v̄`.
    pub fn duration(&self) -> f64 {
        self.length / self.avg_speed
    }

    pub fn start(&self) -> Point {
        self.waypoints[0]
    }

    pub fn end(&self) -> Point {
        *self.waypoints.last().expect("non-empty")
    }

    pub fn reversed(&self) -> Self {
        let mut waypoints = self.waypoints.clone();
        waypoints.reverse();
        Self {
            waypoints,
            length: self.length,
            avg_speed: self.avg_speed,
        }
    }

    pub fn point_at_distance(&self, s: f64) -> Point {
        let mut remaining = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let seg = w[0].distance(&w[1]);
            if remaining <= seg && seg > 0.0 {
                return w[0].lerp(&w[1], remaining / seg);
            }
            remaining -= seg;
        }
        self.end()
    }

    pub fn point_at_time(&self, t: f64) -> Point {
        self.point_at_distance(self.avg_speed * t)
    }

    /// Cuts the path at the first waypoint within `radius` of `goal`.
    pub fn truncate_near(&self, goal: Point, radius: f64) -> Self {
        let cut = self
            .waypoints
            .iter()
            .position(|p| p.distance(&goal) <= radius)
            .unwrap_or(self.waypoints.len() - 1);
        Self::new(self.waypoints[..=cut].to_vec(), self.avg_speed).expect("prefix of a valid path")
    }
}

/// Shortest path between two places as a world polyline through cell
/// centers. Identical cells give a zero-length path.
pub fn plan_path(map: &OccupancyMap, from: &Place, to: &Place, avg_speed: f64) -> Result<PathGeometry, NavError> {
    let cells = map.shortest_cells(from.cell, to.cell)?;
    let pts = cells.into_iter().map(|c| map.spec().cell_center(c)).collect();
    PathGeometry::new(pts, avg_speed)
}

/// Encounter rate sample at local time `t` of a traversal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub t: f64,
    pub rate: f64,
}

/// Slides the detection disc along the path: samples at `t_k = k·dt` for
/// `k = 0..=ceil(l/v̄ / dt)`, the last one at the path end.
pub fn sweep_rates(
    path: &PathGeometry,
    grid: &RateGrid,
    disc_radius: f64,
    dt: f64,
    max_variance: Option<f64>,
) -> Vec<RateSample> {
    assert!(dt > 0.0, "sweep step must be positive");
    let duration = path.duration();
    let steps = (duration / dt - 1e-9).ceil().max(0.0) as usize;
    (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            let center = path.point_at_time(t.min(duration));
            let rate = DetectionDisc::new(center, disc_radius)
                .map(|d| grid.rate_in_disc_filtered(&d, max_variance).rate)
                .unwrap_or(0.0);
            RateSample { t, rate }
        })
        .collect()
}
