//! Binary map files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CLFF"  u16 version
//! grid:   f64 origin_x, f64 origin_y, f64 resolution, u32 width, u32 height, f64 radius
//! u64 iteration, u64 cell count
//! cell:   u64 index, u64 last_update_iter, f64 n_ind, u32 J
//!         J × (f64 weight, f64 mu_theta, f64 mu_rho, f64 c_tt, f64 c_tr, f64 c_rr,
//!              f64 s1, f64 s2_theta, f64 s2_rho, f64 s3_tt, f64 s3_tr, f64 s3_rr)
//! ```
//!
//! Cells are written in ascending index order, so equal maps give equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::map::{CliffMap, GridSpec};
use crate::online::{CellState, SufficientStats};
use crate::swgmm::{Component, Swgmm, Swnd};

pub const MAGIC: &[u8; 4] = b"CLFF";
pub const FORMAT_VERSION: u16 = 1;

pub fn serialize(map: &CliffMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let g = map.grid();
    for x in [g.origin.0, g.origin.1, g.resolution] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    out.extend_from_slice(&g.radius.to_le_bytes());
    out.extend_from_slice(&map.iter().to_le_bytes());
    out.extend_from_slice(&(map.cells().len() as u64).to_le_bytes());
    for (&idx, cell) in map.cells() {
        out.extend_from_slice(&(idx as u64).to_le_bytes());
        out.extend_from_slice(&cell.last_update_iter.to_le_bytes());
        out.extend_from_slice(&cell.n_ind.to_le_bytes());
        out.extend_from_slice(&(cell.model.len() as u32).to_le_bytes());
        for (c, s) in cell.model.components().iter().zip(&cell.stats) {
            let cov = c.dist.cov();
            let fields = [
                c.weight,
                c.dist.mean_theta(),
                c.dist.mean_rho(),
                cov[(0, 0)],
                cov[(0, 1)],
                cov[(1, 1)],
                s.s1,
                s.s2.x,
                s.s2.y,
                s.s3[(0, 0)],
                s.s3[(0, 1)],
                s.s3[(1, 1)],
            ];
            for x in fields {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice has length N"))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.take::<2>(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take::<8>(what).map(f64::from_le_bytes)
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<CliffMap> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>("magic")? != MAGIC {
        return Err(Error::Format("not a CLiFF map (bad magic)".into()));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let origin = (r.f64("grid origin")?, r.f64("grid origin")?);
    let resolution = r.f64("grid resolution")?;
    let width = r.u32("grid width")? as usize;
    let height = r.u32("grid height")? as usize;
    let radius = r.f64("grid radius")?;
    let grid = GridSpec::new(origin, resolution, width, height, radius)
        .map_err(|e| Error::Format(e.to_string()))?;
    let iter = r.u64("iteration")?;
    let n_cells = r.u64("cell count")?;

    let mut cells = BTreeMap::new();
    for _ in 0..n_cells {
        let idx = r.u64("cell index")? as usize;
        let last = r.u64("cell iteration")?;
        let n_ind = r.f64("n_ind")?;
        let j = r.u32("component count")?;
        let mut components = Vec::new();
        let mut stats = Vec::new();
        for _ in 0..j {
            let mut f = [0.0; 12];
            for x in f.iter_mut() {
                *x = r.f64("component")?;
            }
            let cov = Matrix2::new(f[3], f[4], f[4], f[5]);
            let dist = Swnd::from_stored(f[1], f[2], cov).map_err(|e| cell_error(idx, e))?;
            components.push(Component { weight: f[0], dist });
            stats.push(SufficientStats {
                s1: f[6],
                s2: Vector2::new(f[7], f[8]),
                s3: Matrix2::new(f[9], f[10], f[10], f[11]),
            });
        }
        if idx >= grid.cell_count() {
            return Err(Error::Format(format!(
                "cell {idx} lies outside the {width}x{height} grid"
            )));
        }
        let model = Swgmm::new(components).map_err(|e| cell_error(idx, e))?;
        let cell = CellState::new(model, stats, n_ind, last).map_err(|e| cell_error(idx, e))?;
        if cells.insert(idx, cell).is_some() {
            return Err(Error::Format(format!("cell {idx} stored twice")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(CliffMap::from_parts(grid, cells, iter))
}

fn cell_error(idx: usize, e: Error) -> Error {
    Error::Format(format!("cell {idx}: {e}"))
}

pub fn save(map: &CliffMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize(map)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<CliffMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes)
}
