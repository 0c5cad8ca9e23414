//! Synthetic evaluation data: obstacle maps in the MAPF benchmark format,
//! goal-directed stochastic pedestrian walks, and the eight-direction toy
//! sequence.
//!
//! Walks are a softmax over cost-to-go: from cell `u` the walker moves to a
//! free neighbour `v` with probability proportional to
//! `exp(-(c(u, v) + h(v) - h(u)) / τ)`, where `h` is the shortest-path
//! distance to the goal region. Optimal moves score zero, so `τ → 0` yields
//! shortest paths and larger `τ` spreads the flow.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_4, SQRT_2, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::TrackPoint;
use crate::map::PositionedVelocity;
use crate::swgmm::Velocity;

/// Free/blocked cells with 1 m resolution; `(x, y)` is `(column, row)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObstacleGrid {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

impl ObstacleGrid {
    pub fn new(width: usize, height: usize, blocked: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || blocked.len() != width * height {
            return Err(Error::param(format!(
                "obstacle grid {width}x{height} needs {} cells, got {}",
                width * height,
                blocked.len()
            )));
        }
        if blocked.iter().all(|&b| b) {
            return Err(Error::param("obstacle grid has no free cell"));
        }
        Ok(ObstacleGrid {
            width,
            height,
            blocked,
        })
    }

    pub fn open(width: usize, height: usize) -> Self {
        ObstacleGrid::new(width, height, vec![false; width * height]).expect("non-empty open grid")
    }

    /// Parses the MAPF benchmark `.map` text format.
    pub fn parse_mapf(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut height = None;
        let mut width = None;
        loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("map header ends before the `map` line".into()))?
                .trim();
            let mut words = line.split_whitespace();
            match (words.next(), words.next()) {
                (Some("type"), Some(_)) => {}
                (Some("height"), Some(h)) => {
                    height = Some(
                        h.parse::<usize>()
                            .map_err(|_| Error::Parse(format!("bad height `{h}`")))?,
                    )
                }
                (Some("width"), Some(w)) => {
                    width = Some(
                        w.parse::<usize>()
                            .map_err(|_| Error::Parse(format!("bad width `{w}`")))?,
                    )
                }
                (Some("map"), None) => break,
                _ => return Err(Error::Parse(format!("malformed map header line `{line}`"))),
            }
        }
        let (Some(height), Some(width)) = (height, width) else {
            return Err(Error::Parse("map header lacks height or width".into()));
        };
        let rows: Vec<&str> = lines.map(|l| l.trim_end_matches('\r')).collect();
        let rows: Vec<&str> = match rows.iter().rposition(|l| !l.is_empty()) {
            Some(last) => rows[..=last].to_vec(),
            None => Vec::new(),
        };
        if rows.len() != height {
            return Err(Error::Parse(format!(
                "header says height {height} but {} rows follow",
                rows.len()
            )));
        }
        let mut blocked = Vec::with_capacity(width * height);
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Parse(format!(
                    "row {r} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for ch in row.chars() {
                blocked.push(match ch {
                    '.' | 'G' => false,
                    '@' | 'T' | 'O' => true,
                    other => {
                        return Err(Error::Parse(format!(
                            "unknown map symbol `{other}` in row {r}"
                        )))
                    }
                });
            }
        }
        ObstacleGrid::new(width, height, blocked).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_mapf(&self) -> String {
        let mut s = format!(
            "type octile\nheight {}\nwidth {}\nmap\n",
            self.height, self.width
        );
        for y in 0..self.height {
            for x in 0..self.width {
                s.push(if self.blocked[y * self.width + x] {
                    '@'
                } else {
                    '.'
                });
            }
            s.push('\n');
        }
        s
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_free(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && !self.blocked[y as usize * self.width + x as usize]
    }

    pub fn free_cells(&self) -> usize {
        self.blocked.iter().filter(|&&b| !b).count()
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Free neighbours of `(x, y)` with step lengths. Diagonal moves need both
    /// adjacent orthogonal cells free.
    pub fn neighbors(&self, x: usize, y: usize, diagonal: bool) -> Vec<((usize, usize), f64)> {
        let (x, y) = (x as i64, y as i64);
        let mut out = Vec::with_capacity(8);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            if self.is_free(x + dx, y + dy) {
                out.push((((x + dx) as usize, (y + dy) as usize), 1.0));
            }
        }
        if diagonal {
            for (dx, dy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                if self.is_free(x + dx, y + dy)
                    && self.is_free(x + dx, y)
                    && self.is_free(x, y + dy)
                {
                    out.push((((x + dx) as usize, (y + dy) as usize), SQRT_2));
                }
            }
        }
        out
    }

    /// Shortest 8-connected distance from every cell to the nearest source.
    pub fn distance_field(&self, sources: &[(usize, usize)]) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.width * self.height];
        let mut heap = BinaryHeap::new();
        for &(x, y) in sources {
            if self.is_free(x as i64, y as i64) {
                dist[self.index(x, y)] = 0.0;
                heap.push(Entry(0.0, x, y));
            }
        }
        while let Some(Entry(d, x, y)) = heap.pop() {
            if d > dist[self.index(x, y)] {
                continue;
            }
            for ((nx, ny), c) in self.neighbors(x, y, true) {
                let nd = d + c;
                let i = self.index(nx, ny);
                if nd < dist[i] {
                    dist[i] = nd;
                    heap.push(Entry(nd, nx, ny));
                }
            }
        }
        dist
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| (other.2, other.1).cmp(&(self.2, self.1)))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn load_mapf_map(path: impl AsRef<Path>) -> Result<ObstacleGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ObstacleGrid::parse_mapf(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Inclusive rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRegion {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        CellRegion {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn free_cells(&self, grid: &ObstacleGrid) -> Vec<(usize, usize)> {
        (self.y0..=self.y1)
            .flat_map(|y| (self.x0..=self.x1).map(move |x| (x, y)))
            .filter(|&(x, y)| grid.is_free(x as i64, y as i64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// Walkers go from `starts[i]` to `goals[i]`.
    A,
    /// Starts and goals swapped.
    B,
}

/// Start/goal layout and walker parameters for the two-condition dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `starts[i]` is paired with `goals[i]`.
    pub starts: Vec<CellRegion>,
    pub goals: Vec<CellRegion>,
    pub trajectories: usize,
    /// Softmax temperature on cost-to-go advantages.
    pub temperature: f64,
    pub seed: u64,
    /// Nominal walking speed, m/s.
    pub speed: f64,
    pub speed_jitter: f64,
    /// Gaussian noise on sampled positions, metres.
    pub position_noise: f64,
    /// Each condition is laid out over this many consecutive time windows.
    pub batches_per_condition: usize,
    pub batch_interval: f64,
}

impl Scenario {
    pub fn new(starts: Vec<CellRegion>, goals: Vec<CellRegion>) -> Self {
        Scenario {
            starts,
            goals,
            trajectories: 1000,
            temperature: 0.3,
            seed: 0,
            speed: 1.2,
            speed_jitter: 0.1,
            position_noise: 0.1,
            batches_per_condition: 10,
            batch_interval: 3600.0,
        }
    }

    pub fn validate(&self, grid: &ObstacleGrid) -> Result<()> {
        if self.starts.is_empty() || self.starts.len() != self.goals.len() {
            return Err(Error::param(
                "scenario needs equally many (non-zero) start and goal regions",
            ));
        }
        for r in self.starts.iter().chain(&self.goals) {
            if r.free_cells(grid).is_empty() {
                return Err(Error::param(format!("region {r:?} has no free cell")));
            }
        }
        if !(self.temperature > 0.0)
            || !(self.speed > 0.0)
            || self.batches_per_condition == 0
            || !(self.batch_interval > 0.0)
        {
            return Err(Error::param(
                "scenario temperature, speed, batch count and interval must be positive",
            ));
        }
        Ok(())
    }
}

/// Cell sequence of one walk from a start cell into the goal region.
fn walk(
    grid: &ObstacleGrid,
    cost_to_go: &[f64],
    start: (usize, usize),
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<(usize, usize)>> {
    let budget = (4.0 * cost_to_go[grid.index(start.0, start.1)]) as usize + 50;
    let mut path = vec![start];
    let mut at = start;
    while cost_to_go[grid.index(at.0, at.1)] > 0.0 {
        if path.len() > budget {
            return None;
        }
        let here = cost_to_go[grid.index(at.0, at.1)];
        let moves: Vec<((usize, usize), f64)> = grid
            .neighbors(at.0, at.1, true)
            .into_iter()
            .map(|(v, c)| (v, c + cost_to_go[grid.index(v.0, v.1)] - here))
            .collect();
        let best = moves.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = moves
            .iter()
            .map(|m| (-(m.1 - best) / temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = moves.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                pick = k;
                break;
            }
            u -= w;
        }
        at = moves[pick].0;
        path.push(at);
    }
    Some(path)
}

fn greedy_walk(
    grid: &ObstacleGrid,
    cost_to_go: &[f64],
    start: (usize, usize),
) -> Vec<(usize, usize)> {
    let mut path = vec![start];
    let mut at = start;
    while cost_to_go[grid.index(at.0, at.1)] > 0.0 {
        let here = cost_to_go[grid.index(at.0, at.1)];
        at = grid
            .neighbors(at.0, at.1, true)
            .into_iter()
            .min_by(|a, b| {
                (a.1 + cost_to_go[grid.index(a.0 .0, a.0 .1)] - here)
                    .total_cmp(&(b.1 + cost_to_go[grid.index(b.0 .0, b.0 .1)] - here))
            })
            .expect("reachable cell has a neighbour")
            .0;
        path.push(at);
    }
    path
}

const WALK_RETRIES: usize = 20;

/// Samples trajectories for one condition, each a 1 Hz track ending in the goal region.
pub fn sample_trajectories(
    grid: &ObstacleGrid,
    scenario: &Scenario,
    condition: Condition,
) -> Result<Vec<Vec<TrackPoint>>> {
    scenario.validate(grid)?;
    let (starts, goals) = match condition {
        Condition::A => (&scenario.starts, &scenario.goals),
        Condition::B => (&scenario.goals, &scenario.starts),
    };
    let fields: Vec<Vec<f64>> = goals
        .iter()
        .map(|g| grid.distance_field(&g.free_cells(grid)))
        .collect();
    let start_cells: Vec<Vec<(usize, usize)>> = starts.iter().map(|s| s.free_cells(grid)).collect();
    for (cells, field) in start_cells.iter().zip(&fields) {
        if let Some(&c) = cells
            .iter()
            .find(|c| !field[grid.index(c.0, c.1)].is_finite())
        {
            return Err(Error::Unreachable(c));
        }
    }

    let n = scenario.trajectories;
    let per_window = n.div_ceil(scenario.batches_per_condition).max(1);
    let (cond_tag, id_offset, time_offset) = match condition {
        Condition::A => (0u64, 0u64, 0.0),
        Condition::B => (
            1,
            n as u64,
            scenario.batches_per_condition as f64 * scenario.batch_interval,
        ),
    };
    let speed_dist = Normal::new(scenario.speed, scenario.speed_jitter.max(1e-12))
        .map_err(|e| Error::param(e.to_string()))?;
    let noise = Normal::new(0.0, scenario.position_noise.max(1e-12))
        .map_err(|e| Error::param(e.to_string()))?;

    let tracks = (0..n).into_par_iter().map(|t| {
        let mut rng = ChaCha8Rng::seed_from_u64(
            scenario.seed ^ (cond_tag << 63) ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let pair = rng.random_range(0..starts.len());
        let cells = &start_cells[pair];
        let start = cells[rng.random_range(0..cells.len())];
        let field = &fields[pair];
        let path = (0..WALK_RETRIES)
            .find_map(|_| walk(grid, field, start, scenario.temperature, &mut rng))
            .unwrap_or_else(|| greedy_walk(grid, field, start));

        let window = t / per_window;
        let slot = t % per_window;
        let t0 = time_offset
            + window as f64 * scenario.batch_interval
            + slot as f64 * 0.8 * scenario.batch_interval / per_window as f64;
        let speed = speed_dist.sample(&mut rng).clamp(0.3, 2.5);
        let positions = resample_polyline(&path, speed);
        positions
            .into_iter()
            .enumerate()
            .map(|(k, (x, y))| TrackPoint {
                time: t0 + k as f64,
                person_id: id_offset + t as u64,
                x: x + if scenario.position_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                },
                y: y + if scenario.position_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                },
                speed: None,
                heading: None,
            })
            .collect()
    });
    Ok(tracks.collect())
}

/// Points every `step` metres along the polyline through the cell centers,
/// ending exactly at the last center.
fn resample_polyline(cells: &[(usize, usize)], step: f64) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = cells
        .iter()
        .map(|&(x, y)| (x as f64 + 0.5, y as f64 + 0.5))
        .collect();
    let mut out = vec![pts[0]];
    let mut carry = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let mut s = step - carry;
        while s <= len + 1e-12 {
            let f = s / len;
            out.push((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)));
            s += step;
        }
        carry = len - (s - step);
    }
    if carry > 1e-9 && pts.len() > 1 {
        out.push(*pts.last().expect("non-empty"));
    }
    out
}

/// Built-in two-condition layout on a 48×48 ring corridor.
///
/// A 6-cell wide corridor runs around a solid central block. Condition A
/// sends walkers east along the top corridor (top-left to top-right corner)
/// and west along the bottom one (bottom-right to bottom-left); condition B
/// reverses both streams. The vertical corridors carry no traffic.
pub fn ring_corridor() -> (ObstacleGrid, Scenario) {
    ring_corridor_with(48, 6)
}

/// Ring corridor of `corridor` cells width inside a `size`×`size` map with a
/// two-cell wall; start and goal regions fill the four corner squares.
pub fn ring_corridor_with(size: usize, corridor: usize) -> (ObstacleGrid, Scenario) {
    assert!(
        corridor >= 1 && size >= 2 * corridor + 5,
        "ring does not fit"
    );
    let (lo, hi) = (2, size - 3);
    let inner = lo + corridor..=hi - corridor;
    let mut blocked = vec![true; size * size];
    for y in lo..=hi {
        for x in lo..=hi {
            blocked[y * size + x] = inner.contains(&x) && inner.contains(&y);
        }
    }
    let grid = ObstacleGrid::new(size, size, blocked).expect("ring has free cells");
    let near = lo + corridor - 1;
    let far = hi + 1 - corridor;
    let scenario = Scenario::new(
        vec![
            CellRegion::new(lo, lo, near, near),
            CellRegion::new(far, far, hi, hi),
        ],
        vec![
            CellRegion::new(far, lo, hi, near),
            CellRegion::new(lo, far, near, hi),
        ],
    );
    (grid, scenario)
}

/// Toy sequence: eight single-location batches whose headings rotate by 45°.
///
/// Batch `k` (0-based) has headings wrapped-normal around `k · 45°` with
/// standard deviation `sigma` and speeds normal around `speed` with 0.1 m/s
/// spread, all observed at `(0.5, 0.5)` during hour `k`.
pub fn toy_eight_directions(
    n_per_batch: usize,
    speed: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<Vec<PositionedVelocity>>> {
    let heading_noise = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    let speed_dist = Normal::new(speed, 0.1).map_err(|e| Error::param(e.to_string()))?;
    Ok((0..8)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_add(k as u64)
                    .wrapping_mul(0x2545_F491_4F6C_DD1D),
            );
            let center = k as f64 * FRAC_PI_4;
            (0..n_per_batch)
                .map(|i| PositionedVelocity {
                    x: 0.5,
                    y: 0.5,
                    velocity: Velocity::clamped(
                        center + heading_noise.sample(&mut rng),
                        speed_dist.sample(&mut rng),
                    ),
                    time: k as f64 * 3600.0 + i as f64 * 3600.0 / n_per_batch.max(1) as f64,
                })
                .collect()
        })
        .collect())
}

/// Track points carrying the toy velocities explicitly, one person per sample.
pub fn toy_track_points(batches: &[Vec<PositionedVelocity>]) -> Vec<TrackPoint> {
    batches
        .iter()
        .flatten()
        .enumerate()
        .map(|(id, p)| TrackPoint {
            time: p.time,
            person_id: id as u64,
            x: p.x,
            y: p.y,
            speed: Some(p.velocity.rho()),
            heading: Some(p.velocity.theta()),
        })
        .collect()
}

/// Heading of a grid step, `atan2(dy, dx)` in `[0, 2π)`.
pub fn step_heading(from: (usize, usize), to: (usize, usize)) -> f64 {
    let dx = to.0 as f64 - from.0 as f64;
    let dy = to.1 as f64 - from.1 as f64;
    dy.atan2(dx).rem_euclid(TAU)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swgmm::{angular_distance, circular_mean};
    use std::f64::consts::PI;

    #[test]
    fn parses_small_map() {
        let g = ObstacleGrid::parse_mapf("type octile\nheight 3\nwidth 3\nmap\n...\n.@.\n...\n")
            .unwrap();
        assert_eq!(g.free_cells(), 8);
        assert!(!g.is_free(1, 1));
        assert_eq!(ObstacleGrid::parse_mapf(&g.to_mapf()).unwrap(), g);
    }

    #[test]
    fn rejects_inconsistent_maps() {
        assert!(ObstacleGrid::parse_mapf(
            "type octile\nheight 3\nwidth 3\nmap\n...\n...\n...\n...\n"
        )
        .is_err());
        assert!(
            ObstacleGrid::parse_mapf("type octile\nheight 2\nwidth 3\nmap\n...\n..\n").is_err()
        );
        assert!(ObstacleGrid::parse_mapf("height 1\nwidth 1\nmap\nX\n").is_err());
        assert!(ObstacleGrid::parse_mapf("type octile\nwidth 1\nmap\n.\n").is_err());
        assert!(ObstacleGrid::parse_mapf("height 1\nwidth 1\nmap\n@\n").is_err());
        assert!(ObstacleGrid::parse_mapf("type octile\nheight 1\nwidth 2\nmap\nT.\n").is_ok());
    }

    #[test]
    fn den520d_header_if_present() {
        let candidates = [
            "den520d.map",
            "../../den520d.map",
            "../../examples/den520d.map",
        ];
        if let Some(path) = candidates.iter().find(|p| Path::new(p).exists()) {
            let g = load_mapf_map(path).unwrap();
            assert_eq!((g.height(), g.width()), (257, 256));
        }
    }

    fn corridor() -> (ObstacleGrid, Scenario) {
        let grid = ObstacleGrid::open(30, 5);
        let mut s = Scenario::new(
            vec![CellRegion::new(0, 0, 1, 4)],
            vec![CellRegion::new(28, 0, 29, 4)],
        );
        s.trajectories = 40;
        (grid, s)
    }

    fn headings(tracks: &[Vec<TrackPoint>]) -> f64 {
        let mut pts = Vec::new();
        for t in tracks {
            for w in t.windows(2) {
                pts.push(((w[1].y - w[0].y).atan2(w[1].x - w[0].x), 1.0));
            }
        }
        circular_mean(pts)
    }

    #[test]
    fn zero_temperature_walks_are_shortest() {
        let (grid, mut s) = corridor();
        s.temperature = 1e-9;
        s.position_noise = 0.0;
        let field = grid.distance_field(&s.goals[0].free_cells(&grid));
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = (1, (seed % 5) as usize);
            let path = walk(&grid, &field, start, s.temperature, &mut rng).unwrap();
            let len: f64 = path
                .windows(2)
                .map(|w| {
                    if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
                        SQRT_2
                    } else {
                        1.0
                    }
                })
                .sum();
            assert!((len - field[grid.index(start.0, start.1)]).abs() < 1e-9);
        }
    }

    #[test]
    fn conditions_reverse_the_flow() {
        let (grid, s) = corridor();
        let a = sample_trajectories(&grid, &s, Condition::A).unwrap();
        let b = sample_trajectories(&grid, &s, Condition::B).unwrap();
        let (ha, hb) = (headings(&a), headings(&b));
        assert!(angular_distance(ha, 0.0) < 0.3);
        assert!(angular_distance(hb, ha + PI) < 0.3, "{ha} {hb}");
        assert_eq!(a, sample_trajectories(&grid, &s, Condition::A).unwrap());
        assert!(b[0][0].time >= 10.0 * 3600.0);
        assert_eq!(b[0][0].person_id, 40);
    }

    #[test]
    fn walks_avoid_obstacles_and_reach_goal() {
        let (grid, mut s) = ring_corridor();
        s.trajectories = 30;
        s.position_noise = 0.0;
        for cond in [Condition::A, Condition::B] {
            for track in sample_trajectories(&grid, &s, cond).unwrap() {
                for p in &track {
                    assert!(
                        grid.is_free(p.x.floor() as i64, p.y.floor() as i64),
                        "{p:?}"
                    );
                }
                let last = track.last().unwrap();
                let goals = if cond == Condition::A {
                    &s.goals
                } else {
                    &s.starts
                };
                assert!(goals.iter().any(|g| g
                    .free_cells(&grid)
                    .contains(&(last.x as usize, last.y as usize))));
            }
        }
    }

    #[test]
    fn unreachable_goal_is_an_error() {
        let mut blocked = vec![false; 5 * 3];
        for y in 0..3 {
            blocked[y * 5 + 2] = true;
        }
        let grid = ObstacleGrid::new(5, 3, blocked).unwrap();
        let s = Scenario::new(
            vec![CellRegion::new(0, 0, 0, 2)],
            vec![CellRegion::new(4, 0, 4, 2)],
        );
        assert!(matches!(
            sample_trajectories(&grid, &s, Condition::A),
            Err(Error::Unreachable(_))
        ));
    }

    #[test]
    fn toy_batches() {
        let batches = toy_eight_directions(200, 1.0, 10f64.to_radians(), 1).unwrap();
        assert_eq!(batches.len(), 8);
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 1600);
        for (k, b) in batches.iter().enumerate() {
            let m = circular_mean(b.iter().map(|p| (p.velocity.theta(), 1.0)));
            assert!(
                angular_distance(m, k as f64 * FRAC_PI_4) < 3f64.to_radians(),
                "batch {k}: {m}"
            );
        }
        assert_eq!(toy_track_points(&batches).len(), 1600);
    }

    #[test]
    fn resampling_spacing() {
        let pts = resample_polyline(&[(0, 0), (1, 0), (2, 0), (3, 0)], 1.2);
        assert_eq!(pts.len(), 4);
        assert!((pts[1].0 - 1.7).abs() < 1e-12);
        assert_eq!(*pts.last().unwrap(), (3.5, 0.5));
    }
}
