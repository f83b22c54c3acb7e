#![allow(dead_code)]

use std::io::Write;

use psbt_core::gridmodel::{CellIndex, GridSpec, RateGrid};
use psbt_core::navgrid::OccupancyMap;
use psbt_core::planner::{PlanningConfig, PlanningProblem};
use psbt_core::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes straight to the process stdout so the line shows up even when
/// the test harness captures output.
pub fn report(pass: bool, criterion: u32, text: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] criterion {criterion}: {text}");
    let _ = out.flush();
}

pub fn spec(w: usize, h: usize) -> GridSpec {
    GridSpec::new(w, h, 1.0, Point::default()).unwrap()
}

pub fn open_map(w: usize, h: usize) -> OccupancyMap {
    OccupancyMap::empty(spec(w, h))
}

/// Open floor with a border wall and a few interior wall segments that
/// leave gaps, so every free cell stays reachable.
pub fn office_map(w: usize, h: usize) -> OccupancyMap {
    let mut map = open_map(w, h);
    for x in 0..w {
        map.set_blocked(CellIndex::new(x, 0), true);
        map.set_blocked(CellIndex::new(x, h - 1), true);
    }
    for y in 0..h {
        map.set_blocked(CellIndex::new(0, y), true);
        map.set_blocked(CellIndex::new(w - 1, y), true);
    }
    for &wx in &[w / 3, 2 * w / 3] {
        for y in 1..h - 1 {
            if y < h / 2 - 2 || y > h / 2 + 2 {
                map.set_blocked(CellIndex::new(wx, y), true);
            }
        }
    }
    map
}

#[derive(Debug, Clone, Copy)]
pub struct Hotspot {
    pub center: Point,
    pub peak: f64,
    pub sigma: f64,
}

pub fn hotspot_grid(spec: GridSpec, background: f64, spots: &[Hotspot]) -> RateGrid {
    RateGrid::from_rate_fn(spec, |_, p| {
        background
            + spots
                .iter()
                .map(|s| {
                    let d2 = p.distance(&s.center).powi(2);
                    s.peak * (-d2 / (2.0 * s.sigma * s.sigma)).exp()
                })
                .sum::<f64>()
    })
    .unwrap()
}

pub fn random_hotspots(rng: &mut ChaCha8Rng, spec: &GridSpec, count: usize) -> Vec<Hotspot> {
    (0..count)
        .map(|_| Hotspot {
            center: Point::new(
                rng.random_range(1.0..spec.width as f64 - 1.0),
                rng.random_range(1.0..spec.height as f64 - 1.0),
            ),
            peak: rng.random_range(0.002..0.03),
            sigma: rng.random_range(1.0..4.0),
        })
        .collect()
}

pub fn random_free_point(rng: &mut ChaCha8Rng, map: &OccupancyMap) -> Point {
    let free: Vec<CellIndex> = map.free_cells().collect();
    let c = free[rng.random_range(0..free.len())];
    map.spec().cell_center(c)
}

/// A random office-like planning problem with a few hotspots.
pub fn random_problem(seed: u64, n: usize) -> PlanningProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = office_map(30, 16);
    let count = rng.random_range(1..=4);
    let spots = random_hotspots(&mut rng, map.spec(), count);
    let grid = hotspot_grid(*map.spec(), 1e-4, &spots);
    let help = random_free_point(&mut rng, &map);
    let config = PlanningConfig {
        n,
        seed,
        ..PlanningConfig::default()
    };
    PlanningProblem::new(map, grid, help, config).unwrap()
}
