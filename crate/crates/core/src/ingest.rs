//! Trajectory datasets to positioned velocities, batches and train/test splits.
//!
//! Two delimited text layouts are understood, comma or semicolon separated,
//! with or without a header row:
//!
//! * ATC: `time, person_id, x, y, z, velocity, motion_angle, facing_angle`,
//!   positions in millimetres and speed in mm/s.
//! * native: `time,person_id,x,y,theta,rho` in metres and m/s; `theta` and
//!   `rho` may be left empty, in which case velocities are differenced from
//!   positions.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::map::PositionedVelocity;
use crate::swgmm::Velocity;

pub const NATIVE_HEADER: &str = "time,person_id,x,y,theta,rho";

/// Samples slower than this are treated as standing still and dropped.
pub const STATIONARY_SPEED: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub time: f64,
    pub person_id: u64,
    pub x: f64,
    pub y: f64,
    pub speed: Option<f64>,
    pub heading: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackFormat {
    AtcCsv,
    NativeCsv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTracks {
    pub points: Vec<TrackPoint>,
    /// Rows that could not be parsed.
    pub skipped: usize,
}

pub fn parse_tracks(path: impl AsRef<Path>, format: TrackFormat) -> Result<ParsedTracks> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tracks_from(file, format).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_tracks_from<R: Read>(mut input: R, format: TrackFormat) -> Result<ParsedTracks> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse(format!("unreadable input: {e}")))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let delimiter = if first.contains(';') { b';' } else { b',' };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut points = Vec::new();
    let mut skipped = 0;
    for (row, record) in reader.records().enumerate() {
        let Ok(record) = record else {
            skipped += 1;
            continue;
        };
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed = match format {
            TrackFormat::AtcCsv => parse_atc(&record),
            TrackFormat::NativeCsv => parse_native(&record),
        };
        match parsed {
            Some(p) => points.push(p),
            // a non-numeric first row is a header
            None if row == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) => {}
            None => skipped += 1,
        }
    }
    if points.is_empty() {
        return Err(Error::Parse(format!("no valid rows ({skipped} malformed)")));
    }
    Ok(ParsedTracks { points, skipped })
}

fn number(record: &csv::StringRecord, i: usize) -> Option<f64> {
    record.get(i)?.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn optional(record: &csv::StringRecord, i: usize) -> Option<Option<f64>> {
    match record.get(i) {
        None | Some("") => Some(None),
        Some(_) => number(record, i).map(Some),
    }
}

fn person(record: &csv::StringRecord, i: usize) -> Option<u64> {
    record.get(i)?.parse::<u64>().ok()
}

fn parse_atc(r: &csv::StringRecord) -> Option<TrackPoint> {
    if r.len() < 7 {
        return None;
    }
    Some(TrackPoint {
        time: number(r, 0)?,
        person_id: person(r, 1)?,
        x: number(r, 2)? * 1e-3,
        y: number(r, 3)? * 1e-3,
        speed: Some(number(r, 5)? * 1e-3),
        heading: Some(number(r, 6)?),
    })
}

fn parse_native(r: &csv::StringRecord) -> Option<TrackPoint> {
    if r.len() < 4 {
        return None;
    }
    let (heading, speed) = if r.len() >= 6 {
        (optional(r, 4)?, optional(r, 5)?)
    } else {
        (None, None)
    };
    if speed.is_some_and(|s| s < 0.0) {
        return None;
    }
    Some(TrackPoint {
        time: number(r, 0)?,
        person_id: person(r, 1)?,
        x: number(r, 2)?,
        y: number(r, 3)?,
        speed,
        heading,
    })
}

pub fn write_native_csv<W: Write>(points: &[TrackPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{NATIVE_HEADER}")?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.time,
            p.person_id,
            p.x,
            p.y,
            opt(p.heading),
            opt(p.speed)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Velocities {
    pub velocities: Vec<PositionedVelocity>,
    /// Tracks that yielded no velocity at all.
    pub dropped_tracks: usize,
    /// Samples dropped for moving slower than [`STATIONARY_SPEED`].
    pub stationary: usize,
}

/// Thins each person's track to at most `rate_hz` and attaches a velocity to
/// every retained sample.
///
/// Dataset-provided speed and heading win; otherwise the velocity is the
/// finite difference from the previous retained sample, placed at the later one.
pub fn to_velocities(tracks: &[TrackPoint], rate_hz: f64) -> Result<Velocities> {
    if !(rate_hz > 0.0) {
        return Err(Error::param(format!(
            "sampling rate must be positive, got {rate_hz}"
        )));
    }
    let min_gap = 1.0 / rate_hz - 1e-9;
    let mut by_person: BTreeMap<u64, Vec<&TrackPoint>> = BTreeMap::new();
    for p in tracks {
        by_person.entry(p.person_id).or_default().push(p);
    }

    let mut out = Vec::new();
    let mut dropped_tracks = 0;
    let mut stationary = 0;
    for pts in by_person.values_mut() {
        pts.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut kept: Vec<&TrackPoint> = Vec::new();
        for p in pts.iter() {
            if kept.last().is_none_or(|last| p.time - last.time >= min_gap) {
                kept.push(p);
            }
        }
        let before = out.len();
        for (k, p) in kept.iter().enumerate() {
            let v = match (p.heading, p.speed) {
                (Some(h), Some(s)) => Velocity::new(h, s).ok(),
                _ if k > 0 => {
                    let q = kept[k - 1];
                    Velocity::from_displacement(p.x - q.x, p.y - q.y, p.time - q.time).ok()
                }
                _ => None,
            };
            let Some(v) = v else { continue };
            if v.rho() < STATIONARY_SPEED {
                stationary += 1;
                continue;
            }
            out.push(PositionedVelocity {
                x: p.x,
                y: p.y,
                velocity: v,
                time: p.time,
            });
        }
        if out.len() == before {
            dropped_tracks += 1;
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(Velocities {
        velocities: out,
        dropped_tracks,
        stationary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    /// Width of each time bucket, seconds.
    pub interval: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            interval: 3600.0,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub train: Vec<PositionedVelocity>,
    pub test: Vec<PositionedVelocity>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Buckets velocities by time window, then splits each bucket into train and
/// test with a seeded permutation. `floor(n · fraction)` samples go to test.
pub fn make_batches(velocities: &[PositionedVelocity], plan: &BatchPlan) -> Result<Vec<Batch>> {
    if !(plan.interval > 0.0) {
        return Err(Error::param(format!(
            "batch interval must be positive, got {}",
            plan.interval
        )));
    }
    if !(plan.test_fraction > 0.0 && plan.test_fraction < 1.0) {
        return Err(Error::param(format!(
            "test fraction must be in (0, 1), got {}",
            plan.test_fraction
        )));
    }
    let Some(t0) = velocities.iter().map(|p| p.time).min_by(f64::total_cmp) else {
        return Ok(Vec::new());
    };
    let mut buckets: Vec<Vec<PositionedVelocity>> = Vec::new();
    for p in velocities {
        let b = ((p.time - t0) / plan.interval).floor() as usize;
        if buckets.len() <= b {
            buckets.resize_with(b + 1, Vec::new);
        }
        buckets[b].push(*p);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(b, obs)| split(obs, plan, b as u64))
        .collect())
}

fn split(obs: Vec<PositionedVelocity>, plan: &BatchPlan, bucket: u64) -> Batch {
    let n_test = (obs.len() as f64 * plan.test_fraction).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ bucket.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; obs.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = obs.into_iter().zip(is_test).partition(|(_, t)| *t);
    Batch {
        train: train.into_iter().map(|(p, _)| p).collect(),
        test: test.into_iter().map(|(p, _)| p).collect(),
    }
}
