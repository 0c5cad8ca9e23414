//! Flow-aware A* on an obstacle grid.
//!
//! An edge `u → v` of length `d` costs `α·d + (1 − α)·f·d`, where `f ∈ [0, 1]`
//! is the negative log-density of moving along the edge heading at the
//! nominal speed in the destination cell, clamped to `[0, cap]` and divided by
//! `cap`. Cells without a model cost the full cap. The heuristic `α·‖u − goal‖`
//! never overestimates, so returned paths are optimal.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::map::CliffMap;
use crate::swgmm::{angular_distance, Velocity};
use crate::synthetic::{step_heading, ObstacleGrid};

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Blend between path length (1) and flow cost (0).
    pub alpha: f64,
    /// Speed at which edge headings are scored, m/s.
    pub nominal_speed: f64,
    pub flow_cost_cap: f64,
    pub connectivity: Connectivity,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            alpha: 0.5,
            nominal_speed: 1.2,
            flow_cost_cap: -(1e-9f64).ln(),
            connectivity: Connectivity::Eight,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.nominal_speed >= 0.0 && self.nominal_speed.is_finite()) {
            return Err(Error::param(format!(
                "nominal speed must be finite and non-negative, got {}",
                self.nominal_speed
            )));
        }
        if !(self.flow_cost_cap > 0.0 && self.flow_cost_cap.is_finite()) {
            return Err(Error::param(format!(
                "flow cost cap must be positive, got {}",
                self.flow_cost_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub cells: Vec<Cell>,
    pub cost: f64,
    /// Euclidean length in metres.
    pub length: f64,
}

/// World coordinates of an obstacle-grid cell center.
pub fn cell_center(c: Cell) -> (f64, f64) {
    (c.0 as f64 + 0.5, c.1 as f64 + 0.5)
}

fn step_length(u: Cell, v: Cell) -> f64 {
    (v.0 as f64 - u.0 as f64).hypot(v.1 as f64 - u.1 as f64)
}

/// Normalized flow cost per metre of moving from `u` into `v`, in `[0, 1]`.
pub fn flow_cost(map: &CliffMap, u: Cell, v: Cell, cfg: &PlannerConfig) -> f64 {
    let (x, y) = cell_center(v);
    match map.model_at(x, y) {
        Some(model) => {
            let p = model.pdf(&Velocity::clamped(step_heading(u, v), cfg.nominal_speed));
            (-p.max(1e-9).ln()).clamp(0.0, cfg.flow_cost_cap) / cfg.flow_cost_cap
        }
        None => 1.0,
    }
}

pub fn edge_cost(map: &CliffMap, u: Cell, v: Cell, cfg: &PlannerConfig) -> f64 {
    let d = step_length(u, v);
    cfg.alpha * d + (1.0 - cfg.alpha) * flow_cost(map, u, v, cfg) * d
}

/// Total cost of a cell sequence under the planner's edge costs.
pub fn path_cost(map: &CliffMap, cells: &[Cell], cfg: &PlannerConfig) -> f64 {
    cells
        .windows(2)
        .map(|w| edge_cost(map, w[0], w[1], cfg))
        .sum()
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    cell: Cell,
}

impl Eq for Open {}

impl Ord for Open {
    // Lowest f first; ties go to the larger g (closer to the goal), then to
    // the lowest (row, column).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| (other.cell.1, other.cell.0).cmp(&(self.cell.1, self.cell.0)))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cheapest path from `start` to `goal`, or `None` when the goal is unreachable.
pub fn plan(
    grid: &ObstacleGrid,
    map: &CliffMap,
    start: Cell,
    goal: Cell,
    cfg: &PlannerConfig,
) -> Result<Option<Plan>> {
    cfg.validate()?;
    for (name, c) in [("start", start), ("goal", goal)] {
        if !grid.is_free(c.0 as i64, c.1 as i64) {
            return Err(Error::param(format!(
                "{name} cell ({}, {}) is blocked or outside the grid",
                c.0, c.1
            )));
        }
    }
    let n = grid.width() * grid.height();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let h = |c: Cell| cfg.alpha * step_length(c, goal);
    let si = grid.index(start.0, start.1);
    g[si] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(Open {
        f: h(start),
        g: 0.0,
        cell: start,
    });
    while let Some(Open { g: gu, cell: u, .. }) = open.pop() {
        let ui = grid.index(u.0, u.1);
        if closed[ui] {
            continue;
        }
        closed[ui] = true;
        if u == goal {
            let mut cells = vec![u];
            let mut i = ui;
            while parent[i] != usize::MAX {
                i = parent[i];
                cells.push((i % grid.width(), i / grid.width()));
            }
            cells.reverse();
            let length = cells.windows(2).map(|w| step_length(w[0], w[1])).sum();
            return Ok(Some(Plan {
                cells,
                cost: gu,
                length,
            }));
        }
        for (v, _) in grid.neighbors(u.0, u.1, cfg.connectivity == Connectivity::Eight) {
            let vi = grid.index(v.0, v.1);
            if closed[vi] {
                continue;
            }
            let gv = gu + edge_cost(map, u, v, cfg);
            if gv < g[vi] {
                g[vi] = gv;
                parent[vi] = ui;
                open.push(Open {
                    f: gv + h(v),
                    g: gv,
                    cell: v,
                });
            }
        }
    }
    Ok(None)
}

/// Mean angular distance between each edge heading and the dominant direction
/// of the cell it enters; edges into unmapped cells are skipped. `None` when
/// no edge enters a mapped cell.
pub fn path_flow_alignment(cells: &[Cell], map: &CliffMap) -> Option<f64> {
    let devs: Vec<f64> = cells
        .windows(2)
        .filter_map(|w| {
            let (x, y) = cell_center(w[1]);
            map.model_at(x, y)
                .map(|m| angular_distance(step_heading(w[0], w[1]), m.dominant().dist.mean_theta()))
        })
        .collect();
    (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64)
}

pub const PATH_HEADER: &str = "step,x,y,heading";

/// Writes the path as cell centers; each row's heading is that of the edge
/// leaving it (the last row repeats the final edge heading).
pub fn write_path_csv<W: Write>(cells: &[Cell], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{PATH_HEADER}")?;
    for (k, &c) in cells.iter().enumerate() {
        let heading = match (k.checked_sub(1).map(|p| cells[p]), cells.get(k + 1)) {
            (_, Some(&next)) => step_heading(c, next),
            (Some(prev), None) => step_heading(prev, c),
            (None, None) => 0.0,
        };
        let (x, y) = cell_center(c);
        writeln!(w, "{k},{x},{y},{heading:.6}")?;
    }
    Ok(())
}

pub fn summary_line(plan: &Plan, alignment: Option<f64>) -> String {
    let alignment = alignment.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
    format!(
        "cost={:.6} length={:.6} steps={} alignment={alignment}",
        plan.cost,
        plan.length,
        plan.cells.len()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::GridSpec;
    use crate::online::{CellState, SufficientStats};
    use crate::swgmm::{Swgmm, Swnd};
    use nalgebra::{Matrix2, Vector2};
    use std::collections::BTreeMap;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn flow_map(w: usize, h: usize, flows: &[(Cell, f64)]) -> CliffMap {
        let grid = GridSpec::new((0.0, 0.0), 1.0, w, h, 0.5).unwrap();
        let cov = Matrix2::new(0.05, 0.0, 0.0, 0.05);
        let cells: BTreeMap<_, _> = flows
            .iter()
            .map(|&(c, theta)| {
                let model = Swgmm::single(Swnd::new(theta, 1.2, cov).unwrap());
                let stats = vec![SufficientStats::from_moments(
                    1.0,
                    Vector2::new(theta, 1.2),
                    &cov,
                )];
                (
                    grid.index(c.0, c.1),
                    CellState::new(model, stats, 10.0, 1).unwrap(),
                )
            })
            .collect();
        CliffMap::from_parts(grid, cells, 1)
    }

    fn grid_from(rows: &[&str]) -> ObstacleGrid {
        let blocked = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '@'))
            .collect();
        ObstacleGrid::new(rows[0].len(), rows.len(), blocked).unwrap()
    }

    /// Exhaustive search over simple paths, pruned only by the best cost so far.
    fn brute_force(
        grid: &ObstacleGrid,
        map: &CliffMap,
        start: Cell,
        goal: Cell,
        cfg: &PlannerConfig,
    ) -> Option<f64> {
        #[allow(clippy::too_many_arguments)]
        fn go(
            grid: &ObstacleGrid,
            map: &CliffMap,
            u: Cell,
            goal: Cell,
            cfg: &PlannerConfig,
            cost: f64,
            seen: &mut Vec<bool>,
            best: &mut f64,
        ) {
            if cost >= *best {
                return;
            }
            if u == goal {
                *best = cost;
                return;
            }
            for (v, _) in grid.neighbors(u.0, u.1, cfg.connectivity == Connectivity::Eight) {
                let vi = grid.index(v.0, v.1);
                if !seen[vi] {
                    seen[vi] = true;
                    go(
                        grid,
                        map,
                        v,
                        goal,
                        cfg,
                        cost + edge_cost(map, u, v, cfg),
                        seen,
                        best,
                    );
                    seen[vi] = false;
                }
            }
        }
        let mut seen = vec![false; grid.width() * grid.height()];
        seen[grid.index(start.0, start.1)] = true;
        let mut best = f64::INFINITY;
        go(grid, map, start, goal, cfg, 0.0, &mut seen, &mut best);
        best.is_finite().then_some(best)
    }

    #[test]
    fn alpha_one_is_shortest_path() {
        let grid = grid_from(&["....", ".@@.", "....", "...."]);
        let map = flow_map(4, 4, &[((1, 0), PI), ((2, 0), PI)]);
        let cfg = PlannerConfig {
            alpha: 1.0,
            ..Default::default()
        };
        let p = plan(&grid, &map, (0, 0), (3, 0), &cfg).unwrap().unwrap();
        assert_eq!(p.cells, vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert_eq!(p.cost, 3.0);
    }

    #[test]
    fn empty_map_scales_lengths_uniformly() {
        let grid = grid_from(&["......", ".@@@@.", "......"]);
        let empty = CliffMap::new(GridSpec::new((0.0, 0.0), 1.0, 6, 3, 0.5).unwrap());
        let cfg = PlannerConfig {
            alpha: 0.3,
            ..Default::default()
        };
        let p = plan(&grid, &empty, (0, 1), (5, 1), &cfg).unwrap().unwrap();
        let q = plan(
            &grid,
            &empty,
            (0, 1),
            (5, 1),
            &PlannerConfig {
                alpha: 1.0,
                ..Default::default()
            },
        )
        .unwrap()
        .unwrap();
        assert!((p.cost - q.cost).abs() < 1e-12);
        assert!((p.length - q.length).abs() < 1e-12);
    }

    fn two_corridors() -> (ObstacleGrid, CliffMap) {
        // Upper corridor (row 1) flows east, lower corridor (row 5) flows west.
        let grid = grid_from(&[
            "@@@@@@@@", "........", ".@@@@@@.", ".@@@@@@.", ".@@@@@@.", "........", "@@@@@@@@",
            "@@@@@@@@",
        ]);
        let mut flows: Vec<(Cell, f64)> = (0..8).map(|x| ((x, 1), 0.0)).collect();
        flows.extend((0..8).map(|x| ((x, 5), PI)));
        (grid, flow_map(8, 8, &flows))
    }

    #[test]
    fn follows_the_corridor_flowing_towards_the_goal() {
        let (grid, map) = two_corridors();
        let cfg = PlannerConfig {
            alpha: 0.3,
            ..Default::default()
        };
        let east = plan(&grid, &map, (0, 3), (7, 3), &cfg).unwrap().unwrap();
        assert!(east.cells.iter().any(|c| c.1 == 1) && east.cells.iter().all(|c| c.1 != 5));
        let west = plan(&grid, &map, (7, 3), (0, 3), &cfg).unwrap().unwrap();
        assert!(west.cells.iter().any(|c| c.1 == 5) && west.cells.iter().all(|c| c.1 != 1));
        let bf = brute_force(&grid, &map, (0, 3), (7, 3), &cfg).unwrap();
        assert!((bf - east.cost).abs() < 1e-9);
    }

    #[test]
    fn matches_exhaustive_search_on_small_grids() {
        let layouts: [&[&str]; 4] = [
            &["....", "....", "....", "...."],
            &["..@...", "..@.@.", "....@.", ".@@.@.", "...@..", "@....."],
            &["......", ".@@@@.", ".@..@.", ".@..@.", ".@@.@.", "......"],
            &[".....", "@@@.@", ".....", ".@@@@", "....."],
        ];
        for (k, rows) in layouts.iter().enumerate() {
            let grid = grid_from(rows);
            let (w, h) = (grid.width(), grid.height());
            let flows: Vec<(Cell, f64)> = (0..w * h)
                .filter(|i| i % 3 != 1)
                .map(|i| ((i % w, i / w), (i as f64 * 1.7) % (2.0 * PI)))
                .collect();
            let map = flow_map(w, h, &flows);
            for alpha in [0.0, 0.3, 0.7, 1.0] {
                for connectivity in [Connectivity::Four, Connectivity::Eight] {
                    let cfg = PlannerConfig {
                        alpha,
                        connectivity,
                        ..Default::default()
                    };
                    let start = (0, 0);
                    let goal = (w - 1, h - 1);
                    let got = plan(&grid, &map, start, goal, &cfg).unwrap();
                    let want = brute_force(&grid, &map, start, goal, &cfg);
                    match (got, want) {
                        (Some(p), Some(b)) => {
                            assert!(
                                (p.cost - b).abs() < 1e-9,
                                "layout {k} alpha {alpha}: {} vs {b}",
                                p.cost
                            );
                            assert!((path_cost(&map, &p.cells, &cfg) - p.cost).abs() < 1e-9);
                        }
                        (None, None) => {}
                        (g, b) => panic!("layout {k}: plan {g:?} vs exhaustive {b:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn no_path_is_reported() {
        let grid = grid_from(&["..@..", "..@..", "..@.."]);
        let map = CliffMap::new(GridSpec::new((0.0, 0.0), 1.0, 5, 3, 0.5).unwrap());
        assert_eq!(
            plan(&grid, &map, (0, 0), (4, 2), &PlannerConfig::default()).unwrap(),
            None
        );
        assert!(plan(&grid, &map, (2, 0), (4, 2), &PlannerConfig::default()).is_err());
    }

    #[test]
    fn path_length_does_not_grow_with_alpha() {
        let (grid, map) = two_corridors();
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let cfg = PlannerConfig {
                alpha,
                ..Default::default()
            };
            let p = plan(&grid, &map, (7, 3), (0, 1), &cfg).unwrap().unwrap();
            assert!(
                p.length <= last + 1e-9,
                "alpha {alpha}: {} > {last}",
                p.length
            );
            last = p.length;
        }
    }

    #[test]
    fn alignment_values() {
        let map = flow_map(4, 1, &[((1, 0), 0.0), ((2, 0), 0.0), ((3, 0), 0.0)]);
        let along = [(0, 0), (1, 0), (2, 0), (3, 0)];
        assert!(path_flow_alignment(&along, &map).unwrap().abs() < 1e-12);
        let map_back = flow_map(4, 1, &[((0, 0), 0.0), ((1, 0), 0.0), ((2, 0), 0.0)]);
        let against = [(3, 0), (2, 0), (1, 0), (0, 0)];
        assert!((path_flow_alignment(&against, &map_back).unwrap() - PI).abs() < 1e-12);

        // Step headings 0, 7π/4 (row index decreases) and π/2 entering cells
        // whose flows are 0, π/2 and π/2: deviations 0, 3π/4 and 0.
        let map3 = flow_map(
            3,
            3,
            &[((1, 1), 0.0), ((2, 0), FRAC_PI_2), ((2, 1), FRAC_PI_2)],
        );
        let path = [(0, 1), (1, 1), (2, 0), (2, 1)];
        let want = (0.0 + 3.0 * PI / 4.0 + 0.0) / 3.0;
        assert!((path_flow_alignment(&path, &map3).unwrap() - want).abs() < 1e-12);
        assert_eq!(path_flow_alignment(&path, &flow_map(3, 3, &[])), None);
    }

    #[test]
    fn path_csv_layout() {
        let mut buf = Vec::new();
        write_path_csv(&[(0, 0), (1, 0), (1, 1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,x,y,heading\n0,0.5,0.5,0.000000\n1,1.5,0.5,1.570796\n2,1.5,1.5,1.570796\n"
        );
    }
}
