//! The grid map of dynamics: cell geometry, observation assignment, and the
//! whole-map build/update loop.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rayon::prelude::*;

use crate::batch::{build_cell, EmConfig, MeanShiftConfig};
use crate::error::{Error, Result};
use crate::online::{update_cell, CellState, UpdateConfig};
use crate::swgmm::{Swgmm, Velocity};

/// Linear cell index, `iy * width + ix`.
pub type CellIndex = usize;

/// Slack on the aggregation radius so that centers exactly at distance `r` count.
const RADIUS_SLACK: f64 = 1e-9;

/// Regular grid of locations; `origin` is the lower-left corner of cell `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Observations within this distance of a cell center feed that cell.
    pub radius: f64,
}

impl GridSpec {
    pub fn new(
        origin: (f64, f64),
        resolution: f64,
        width: usize,
        height: usize,
        radius: f64,
    ) -> Result<Self> {
        let g = GridSpec {
            origin,
            resolution,
            width,
            height,
            radius,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || !(self.radius > 0.0) {
            return Err(Error::param("grid resolution and radius must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("grid must be at least 1x1"));
        }
        if !self.origin.0.is_finite() || !self.origin.1.is_finite() {
            return Err(Error::param("grid origin must be finite"));
        }
        Ok(())
    }

    /// Smallest grid with the given resolution and radius covering all points.
    pub fn covering<'a, I>(points: I, resolution: f64, radius: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a PositionedVelocity>,
    {
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for p in points {
            lo_x = lo_x.min(p.x);
            lo_y = lo_y.min(p.y);
            hi_x = hi_x.max(p.x);
            hi_y = hi_y.max(p.y);
        }
        if !lo_x.is_finite() {
            return Err(Error::NoObservations);
        }
        let origin = (
            (lo_x / resolution).floor() * resolution,
            (lo_y / resolution).floor() * resolution,
        );
        let width = ((hi_x - origin.0) / resolution).floor() as usize + 1;
        let height = ((hi_y - origin.1) / resolution).floor() as usize + 1;
        GridSpec::new(origin, resolution, width, height, radius)
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, ix: usize, iy: usize) -> CellIndex {
        iy * self.width + ix
    }

    pub fn coords(&self, idx: CellIndex) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn center(&self, idx: CellIndex) -> (f64, f64) {
        let (ix, iy) = self.coords(idx);
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let fx = (x - self.origin.0) / self.resolution;
        let fy = (y - self.origin.1) / self.resolution;
        fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64
    }

    /// The cell containing `(x, y)`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<CellIndex> {
        if !self.contains(x, y) {
            return None;
        }
        let ix = ((x - self.origin.0) / self.resolution).floor() as usize;
        let iy = ((y - self.origin.1) / self.resolution).floor() as usize;
        Some(self.index(ix.min(self.width - 1), iy.min(self.height - 1)))
    }

    /// Every cell whose center lies within the aggregation radius of `(x, y)`.
    /// Points outside the grid feed no cell.
    pub fn assign(&self, x: f64, y: f64) -> Vec<CellIndex> {
        if !self.contains(x, y) {
            return Vec::new();
        }
        let r = self.radius + RADIUS_SLACK;
        let fx = (x - self.origin.0) / self.resolution - 0.5;
        let fy = (y - self.origin.1) / self.resolution - 0.5;
        let reach = self.radius / self.resolution + 1.0;
        let clamp = |v: f64, hi: usize| v.max(0.0).min((hi - 1) as f64) as usize;
        let (x0, x1) = (
            clamp((fx - reach).ceil(), self.width),
            clamp((fx + reach).floor(), self.width),
        );
        let (y0, y1) = (
            clamp((fy - reach).ceil(), self.height),
            clamp((fy + reach).floor(), self.height),
        );
        let mut out = Vec::new();
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let idx = self.index(ix, iy);
                let (cx, cy) = self.center(idx);
                if (cx - x).hypot(cy - y) <= r {
                    out.push(idx);
                }
            }
        }
        out
    }
}

/// A velocity observed at a place and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionedVelocity {
    pub x: f64,
    pub y: f64,
    pub velocity: Velocity,
    pub time: f64,
}

/// Everything needed to build and update cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapConfig {
    pub mean_shift: MeanShiftConfig,
    pub em: EmConfig,
    pub update: UpdateConfig,
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        self.mean_shift.validate()?;
        self.em.validate()?;
        self.update.validate()
    }
}

/// What one call to [`CliffMap::update`] did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateSummary {
    /// Observations that fell outside the grid.
    pub dropped: usize,
    pub built: usize,
    pub updated: usize,
    pub failed: Vec<(CellIndex, String)>,
}

/// A map of dynamics: one [`CellState`] per location where motion was seen.
#[derive(Debug, Clone, PartialEq)]
pub struct CliffMap {
    grid: GridSpec,
    cells: BTreeMap<CellIndex, CellState>,
    iter: u64,
}

impl CliffMap {
    pub fn new(grid: GridSpec) -> Self {
        CliffMap {
            grid,
            cells: BTreeMap::new(),
            iter: 0,
        }
    }

    pub(crate) fn from_parts(
        grid: GridSpec,
        cells: BTreeMap<CellIndex, CellState>,
        iter: u64,
    ) -> Self {
        CliffMap { grid, cells, iter }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cells(&self) -> &BTreeMap<CellIndex, CellState> {
        &self.cells
    }

    pub fn cell(&self, idx: CellIndex) -> Option<&CellState> {
        self.cells.get(&idx)
    }

    /// Number of completed update iterations.
    pub fn iter(&self) -> u64 {
        self.iter
    }

    /// Mixture of the cell containing `(x, y)`, if that cell has one.
    pub fn model_at(&self, x: f64, y: f64) -> Option<&Swgmm> {
        self.grid
            .cell_of(x, y)
            .and_then(|i| self.cells.get(&i))
            .map(|c| &c.model)
    }

    /// Groups observations by the cells they feed, preserving batch order.
    pub fn group(
        &self,
        batch: &[PositionedVelocity],
    ) -> (BTreeMap<CellIndex, Vec<Velocity>>, usize) {
        let mut groups: BTreeMap<CellIndex, Vec<Velocity>> = BTreeMap::new();
        let mut dropped = 0;
        for p in batch {
            let idx = self.grid.assign(p.x, p.y);
            if idx.is_empty() {
                dropped += 1;
            }
            for i in idx {
                groups.entry(i).or_default().push(p.velocity);
            }
        }
        (groups, dropped)
    }

    /// One iteration of the online loop: unseen cells are built from the
    /// batch, existing ones updated. Failing cells are logged and skipped.
    pub fn update(&mut self, batch: &[PositionedVelocity], cfg: &MapConfig) -> UpdateSummary {
        self.iter += 1;
        let iter = self.iter;
        let (groups, dropped) = self.group(batch);
        let cells = &self.cells;
        let results: Vec<(CellIndex, bool, Result<CellState>)> = groups
            .into_par_iter()
            .map(|(idx, obs)| match cells.get(&idx) {
                None => {
                    let built = build_cell(&obs, &cfg.mean_shift, &cfg.em).map(|mut c| {
                        c.last_update_iter = iter;
                        c
                    });
                    (idx, true, built)
                }
                Some(cell) => (idx, false, update_cell(cell, &obs, iter, &cfg.update)),
            })
            .collect();

        let mut summary = UpdateSummary {
            dropped,
            ..Default::default()
        };
        for (idx, fresh, res) in results {
            match res {
                Ok(cell) => {
                    if fresh {
                        summary.built += 1;
                    } else {
                        summary.updated += 1;
                    }
                    self.cells.insert(idx, cell);
                }
                Err(e) => {
                    warn!("cell {idx}: {e}; left unchanged");
                    summary.failed.push((idx, e.to_string()));
                }
            }
        }
        summary
    }
}

/// Non-mutating form of [`CliffMap::update`].
pub fn update_map(
    map: &CliffMap,
    batch: &[PositionedVelocity],
    cfg: &MapConfig,
) -> (CliffMap, UpdateSummary) {
    let mut next = map.clone();
    let summary = next.update(batch, cfg);
    (next, summary)
}

/// Builds a map from scratch on one batch.
pub fn build_map(
    grid: GridSpec,
    batch: &[PositionedVelocity],
    cfg: &MapConfig,
) -> (CliffMap, UpdateSummary) {
    let mut map = CliffMap::new(grid);
    let summary = map.update(batch, cfg);
    (map, summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportMode {
    All,
    Dominant,
}

/// One mixture component placed at its cell center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRecord {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub theta: f64,
    pub rho: f64,
    pub s_tt: f64,
    pub s_tr: f64,
    pub s_rr: f64,
}

pub const FIELD_HEADER: &str = "x,y,weight,theta,rho,s_tt,s_tr,s_rr";

pub fn export_field(map: &CliffMap, mode: ExportMode) -> Vec<FieldRecord> {
    let mut out = Vec::new();
    for (&idx, cell) in map.cells() {
        let (x, y) = map.grid().center(idx);
        let record = |c: &crate::swgmm::Component| {
            let cov = c.dist.cov();
            FieldRecord {
                x,
                y,
                weight: c.weight,
                theta: c.dist.mean_theta(),
                rho: c.dist.mean_rho(),
                s_tt: cov[(0, 0)],
                s_tr: cov[(0, 1)],
                s_rr: cov[(1, 1)],
            }
        };
        match mode {
            ExportMode::All => out.extend(cell.model.components().iter().map(record)),
            ExportMode::Dominant => out.push(record(cell.model.dominant())),
        }
    }
    out
}

pub fn write_field_csv<W: Write>(records: &[FieldRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{FIELD_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.x, r.y, r.weight, r.theta, r.rho, r.s_tt, r.s_tr, r.s_rr
        )?;
    }
    Ok(())
}
