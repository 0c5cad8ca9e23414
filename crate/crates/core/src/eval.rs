//! Experiment harness: online, history and interval map variants over a batch
//! sequence, scored by held-out negative log-likelihood and timed.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::ingest::{make_batches, to_velocities, Batch, BatchPlan, TrackPoint};
use crate::map::{build_map, CliffMap, GridSpec, MapConfig, PositionedVelocity};
use crate::synthetic::{sample_trajectories, Condition, ObstacleGrid, Scenario};

/// Likelihood charged to observations where the map has no model.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    /// One map, updated incrementally by every batch.
    Online,
    /// Rebuilt from scratch on all training data seen so far.
    History,
    /// Rebuilt from scratch on the current batch only.
    Interval,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [
        VariantKind::Online,
        VariantKind::History,
        VariantKind::Interval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Online => "online",
            VariantKind::History => "history",
            VariantKind::Interval => "interval",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "online" => Ok(VariantKind::Online),
            "history" => Ok(VariantKind::History),
            "interval" => Ok(VariantKind::Interval),
            other => Err(Error::param(format!(
                "unknown variant `{other}` (expected online, history or interval)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub config: MapConfig,
}

/// Result of one variant after one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    /// 1-based batch index.
    pub batch: usize,
    pub variant: VariantKind,
    /// Mean NLL over the batch's test points; NaN when the test set is empty.
    pub nll: f64,
    /// Wall-clock time of model construction or update only.
    pub seconds: f64,
    /// Cells holding a model after this batch.
    pub cells: usize,
    /// Test points charged the likelihood floor for lack of a model.
    pub misses: usize,
    pub test_points: usize,
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub rows: Vec<BatchRow>,
    pub map: CliffMap,
    /// Cells whose update failed, per batch: `(batch, message)`.
    pub failures: Vec<(usize, String)>,
}

/// Mean NLL of test velocities under the model of the cell containing each
/// point, together with the number of points that had no model.
pub fn score(map: &CliffMap, test: &[PositionedVelocity]) -> (f64, usize) {
    if test.is_empty() {
        return (f64::NAN, 0);
    }
    let mut misses = 0;
    let total: f64 = test
        .iter()
        .map(|p| match map.model_at(p.x, p.y) {
            Some(model) => -model.pdf(&p.velocity).max(LIKELIHOOD_FLOOR).ln(),
            None => {
                misses += 1;
                -LIKELIHOOD_FLOOR.ln()
            }
        })
        .sum();
    (total / test.len() as f64, misses)
}

/// Runs one variant over the batch sequence. `on_batch` sees the map after
/// every batch (1-based index), e.g. to snapshot it.
pub fn run_variant_with<F>(
    batches: &[Batch],
    spec: &VariantSpec,
    grid: &GridSpec,
    mut on_batch: F,
) -> Result<VariantRun>
where
    F: FnMut(usize, &CliffMap),
{
    if batches.is_empty() {
        return Err(Error::NoObservations);
    }
    spec.config.validate()?;
    grid.validate()?;
    let mut map = CliffMap::new(grid.clone());
    let mut seen: Vec<PositionedVelocity> = Vec::new();
    let mut rows = Vec::with_capacity(batches.len());
    let mut failures = Vec::new();
    for (k, batch) in batches.iter().enumerate() {
        if spec.kind == VariantKind::History {
            seen.extend_from_slice(&batch.train);
        }
        let started = Instant::now();
        let summary = match spec.kind {
            VariantKind::Online => map.update(&batch.train, &spec.config),
            VariantKind::History => {
                let (m, s) = build_map(grid.clone(), &seen, &spec.config);
                map = m;
                s
            }
            VariantKind::Interval => {
                let (m, s) = build_map(grid.clone(), &batch.train, &spec.config);
                map = m;
                s
            }
        };
        let seconds = started.elapsed().as_secs_f64();
        failures.extend(
            summary
                .failed
                .into_iter()
                .map(|(idx, msg)| (k + 1, format!("cell {idx}: {msg}"))),
        );
        let (nll, misses) = score(&map, &batch.test);
        log::debug!(
            "{} batch {}: nll {nll:.4}, {} cells, {seconds:.3}s",
            spec.kind,
            k + 1,
            map.cells().len()
        );
        rows.push(BatchRow {
            batch: k + 1,
            variant: spec.kind,
            nll,
            seconds,
            cells: map.cells().len(),
            misses,
            test_points: batch.test.len(),
        });
        on_batch(k + 1, &map);
    }
    Ok(VariantRun {
        rows,
        map,
        failures,
    })
}

pub fn run_variant(batches: &[Batch], spec: &VariantSpec, grid: &GridSpec) -> Result<VariantRun> {
    run_variant_with(batches, spec, grid, |_, _| {})
}

/// Unweighted mean NLL over all test points of all batches.
pub fn aggregate_nll(rows: &[BatchRow]) -> f64 {
    let (sum, n) = rows
        .iter()
        .filter(|r| r.test_points > 0)
        .fold((0.0, 0usize), |(s, n), r| {
            (s + r.nll * r.test_points as f64, n + r.test_points)
        });
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub aggregate_nll: f64,
    pub rows: Vec<BatchRow>,
}

/// Runs the online variant once per decay rate.
pub fn decay_sweep(
    batches: &[Batch],
    lambdas: &[f64],
    grid: &GridSpec,
    config: &MapConfig,
) -> Result<Vec<SweepPoint>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut config = config.clone();
            config.update.decay_lambda = lambda;
            let run = run_variant(
                batches,
                &VariantSpec {
                    kind: VariantKind::Online,
                    config,
                },
                grid,
            )?;
            Ok(SweepPoint {
                lambda,
                aggregate_nll: aggregate_nll(&run.rows),
                rows: run.rows,
            })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "batch,variant,nll,seconds,cells,misses";

/// Writes per-batch rows, ordered by batch then variant. With `timing` off the
/// seconds column is written as 0 so reports are byte-reproducible.
pub fn write_batch_csv<W: Write>(rows: &[BatchRow], timing: bool, mut w: W) -> std::io::Result<()> {
    let mut sorted: Vec<&BatchRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.batch, r.variant));
    writeln!(w, "{REPORT_HEADER}")?;
    for r in sorted {
        let seconds = if timing { r.seconds } else { 0.0 };
        writeln!(
            w,
            "{},{},{:.6},{:.6},{},{}",
            r.batch, r.variant, r.nll, seconds, r.cells, r.misses
        )?;
    }
    Ok(())
}

/// Table with one row per variant: mean NLL over all test points, final-batch
/// NLL and mean update time.
pub fn write_summary<W: Write>(rows: &[BatchRow], timing: bool, mut w: W) -> std::io::Result<()> {
    writeln!(w, "| variant | mean NLL | final NLL | mean seconds |")?;
    writeln!(w, "|---|---|---|---|")?;
    for kind in VariantKind::ALL {
        let own: Vec<BatchRow> = rows.iter().filter(|r| r.variant == kind).cloned().collect();
        let Some(last) = own.iter().max_by_key(|r| r.batch) else {
            continue;
        };
        let seconds = if timing {
            own.iter().map(|r| r.seconds).sum::<f64>() / own.len() as f64
        } else {
            0.0
        };
        writeln!(
            w,
            "| {kind} | {:.4} | {:.4} | {:.4} |",
            aggregate_nll(&own),
            last.nll,
            seconds
        )?;
    }
    Ok(())
}

/// Writes `batches.csv` and `summary.md` into `dir`.
pub fn report(rows: &[BatchRow], timing: bool, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Error::io(&path, e))?;
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    };
    write("batches.csv", &|b| write_batch_csv(rows, timing, b))?;
    write("summary.md", &|b| write_summary(rows, timing, b))
}

/// Condition A followed by condition B, sampled at 1 Hz, differenced into
/// velocities and cut into batches.
pub fn two_condition_batches(
    grid: &ObstacleGrid,
    scenario: &Scenario,
    plan: &BatchPlan,
) -> Result<Vec<Batch>> {
    let mut points: Vec<TrackPoint> = Vec::new();
    for condition in [Condition::A, Condition::B] {
        points.extend(
            sample_trajectories(grid, scenario, condition)?
                .into_iter()
                .flatten(),
        );
    }
    let velocities = to_velocities(&points, 1.0)?;
    make_batches(&velocities.velocities, plan)
}
