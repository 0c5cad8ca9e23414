//! `cliffmap` — generate data, build and update CLiFF-maps, run the
//! online/history/interval experiment, plan flow-aware paths and export
//! field data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cliffmap::eval::{decay_sweep, report, run_variant, VariantKind, VariantSpec};
use cliffmap::ingest::{
    make_batches, parse_tracks, to_velocities, write_native_csv, TrackFormat, TrackPoint,
};
use cliffmap::map::{
    build_map, export_field, write_field_csv, ExportMode, GridSpec, PositionedVelocity,
};
use cliffmap::persist;
use cliffmap::planner::{path_flow_alignment, plan, summary_line, write_path_csv};
use cliffmap::synthetic::{
    load_mapf_map, ring_corridor, sample_trajectories, toy_eight_directions, toy_track_points,
    Condition, Scenario,
};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cliffmap",
    version,
    about = "Online-updated maps of human-motion dynamics (CLiFF-maps)"
)]
struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (data generation, train/test split).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Build a map from one dataset.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold one batch of observations into an existing map.
    Update {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Decay rate of the effective observation count [default: 0.5].
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare online, history and interval maps over hourly batches.
    Eval {
        /// Directory whose `*.csv` track files are read in name order.
        #[arg(long)]
        data_dir: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated subset of online,history,interval [default: all].
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        /// Decay rate for the online variant [default: 0.5].
        #[arg(long)]
        lambda: Option<f64>,
        /// Also sweep the online variant over these decay rates (comma-separated).
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        #[command(flatten)]
        grid: GridArgs,
        /// Output directory for batches.csv and summary.md.
        #[arg(long)]
        report: PathBuf,
        /// Write 0 in the seconds column so reports are byte-reproducible.
        #[arg(long)]
        no_timing: bool,
    },
    /// Plan a flow-aware path on an obstacle map.
    Plan {
        #[arg(long)]
        map: PathBuf,
        /// Obstacle map in the MAPF `.map` format (1 m cells).
        #[arg(long)]
        obstacles: PathBuf,
        /// Start position in metres, `X,Y`.
        #[arg(long, value_parser = parse_point)]
        start: (f64, f64),
        /// Goal position in metres, `X,Y`.
        #[arg(long, value_parser = parse_point)]
        goal: (f64, f64),
        /// Distance vs flow-cost blend in [0, 1] [default: 0.5].
        #[arg(long)]
        alpha: Option<f64>,
        /// 4 or 8 [default: 8].
        #[arg(long)]
        connectivity: Option<u8>,
        /// Path CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot-ready field data.
    Export {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Dominant)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenKind {
    /// Eight single-location batches whose headings rotate by 45°.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        per_batch: usize,
        /// Heading spread, degrees.
        #[arg(long, default_value_t = 10.0)]
        sigma_deg: f64,
        /// Mean speed, m/s.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Two-condition trajectories with swapped starts and goals.
    Den520d {
        #[arg(long)]
        out: PathBuf,
        /// MAPF obstacle map; the built-in ring corridor when omitted.
        #[arg(long, requires = "scenario")]
        map: Option<PathBuf>,
        /// TOML file with `[[pair]]` tables of `start`/`goal` cell rectangles
        /// `[x0, y0, x1, y1]`; required with --map.
        #[arg(long, requires = "map")]
        scenario: Option<PathBuf>,
        /// Trajectories per condition.
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
        /// Softmax temperature of the walkers.
        #[arg(long, default_value_t = 0.3)]
        temperature: f64,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Track file layout.
    #[arg(long, value_enum, default_value_t = FormatArg::Native)]
    format: FormatArg,
    /// Downsampling rate of tracks, Hz [default: 1].
    #[arg(long)]
    rate_hz: Option<f64>,
}

#[derive(Args)]
struct GridArgs {
    /// Cell size, m [default: 1].
    #[arg(long)]
    resolution: Option<f64>,
    /// Aggregation radius around cell centers, m [default: 1].
    #[arg(long)]
    radius: Option<f64>,
    /// Lower-left corner `X,Y`; requires --size.
    #[arg(long, value_parser = parse_point)]
    origin: Option<(f64, f64)>,
    /// Cells `W,H`; requires --origin. Otherwise the grid is fitted to the data.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    /// `time,person_id,x,y,theta,rho` with optional header.
    Native,
    /// ATC pedestrian tracking CSV (millimetres).
    Atc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dominant,
    All,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected X,Y, got `{s}`"))?;
    let p = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("not a number: `{v}`"))
    };
    Ok((p(a)?, p(b)?))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected W,H, got `{s}`"))?;
    let p = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("not a cell count: `{v}`"))
    };
    Ok((p(a)?, p(b)?))
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<cliffmap::Error> for Failure {
    fn from(e: cliffmap::Error) -> Self {
        match e {
            cliffmap::Error::InvalidParameter(_) => Failure::Usage(e.to_string()),
            e if e.is_data_error() => Failure::Data(e.to_string()),
            e => Failure::Internal(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), Failure> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Failure::Internal(e.to_string()))?;
    fs::write(path, buf).map_err(|e| io_failure(path, e))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

impl From<FormatArg> for TrackFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Native => TrackFormat::NativeCsv,
            FormatArg::Atc => TrackFormat::AtcCsv,
        }
    }
}

fn load_velocities(
    paths: &[PathBuf],
    input: &InputArgs,
    cfg: &RunConfig,
) -> Result<Vec<PositionedVelocity>, Failure> {
    let mut points: Vec<TrackPoint> = Vec::new();
    for path in paths {
        let parsed = parse_tracks(path, input.format.into())?;
        if parsed.skipped > 0 {
            log::warn!(
                "{}: skipped {} malformed rows",
                path.display(),
                parsed.skipped
            );
        }
        points.extend(parsed.points);
    }
    let v = to_velocities(&points, input.rate_hz.unwrap_or(cfg.rate_hz()))?;
    log::info!(
        "{} velocities ({} stationary dropped, {} single-point tracks dropped)",
        v.velocities.len(),
        v.stationary,
        v.dropped_tracks
    );
    if v.velocities.is_empty() {
        return Err(Failure::Data("no usable observations in the input".into()));
    }
    Ok(v.velocities)
}

fn grid_spec(
    args: &GridArgs,
    cfg: &RunConfig,
    data: &[PositionedVelocity],
) -> Result<GridSpec, Failure> {
    let resolution = args.resolution.or(cfg.grid.resolution).unwrap_or(1.0);
    let radius = args.radius.or(cfg.grid.radius).unwrap_or(1.0);
    let origin = args.origin.or(cfg.grid.origin.map(|o| (o[0], o[1])));
    let size = args.size.or(cfg.grid.size.map(|s| (s[0], s[1])));
    match (origin, size) {
        (Some(origin), Some((w, h))) => Ok(GridSpec::new(origin, resolution, w, h, radius)?),
        (None, None) => Ok(GridSpec::covering(data, resolution, radius)?),
        _ => Err(Failure::Usage(
            "grid origin and size must be given together".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Gen { kind } => generate(kind, cli.seed),
        Command::Build {
            data,
            input,
            grid,
            out,
        } => {
            let obs = load_velocities(&[data], &input, &cfg)?;
            let grid = grid_spec(&grid, &cfg, &obs)?;
            let map_cfg = cfg.map_config();
            map_cfg.validate()?;
            let (map, summary) = build_map(grid, &obs, &map_cfg);
            log::info!(
                "built {} cells, {} observations outside the grid",
                summary.built,
                summary.dropped
            );
            report_failures(&summary.failed)?;
            persist::save(&map, &out)?;
            Ok(())
        }
        Command::Update {
            map,
            data,
            input,
            lambda,
            out,
        } => {
            let mut current = persist::load(&map)?;
            let obs = load_velocities(&[data], &input, &cfg)?;
            let mut map_cfg = cfg.map_config();
            if let Some(l) = lambda {
                map_cfg.update.decay_lambda = l;
            }
            map_cfg.validate()?;
            let summary = current.update(&obs, &map_cfg);
            log::info!(
                "iteration {}: {} cells built, {} updated, {} observations outside the grid",
                current.iter(),
                summary.built,
                summary.updated,
                summary.dropped
            );
            report_failures(&summary.failed)?;
            persist::save(&current, &out)?;
            Ok(())
        }
        Command::Eval {
            data_dir,
            input,
            variants,
            lambda,
            sweep,
            grid,
            report: out,
            no_timing,
        } => {
            let mut files: Vec<PathBuf> = fs::read_dir(&data_dir)
                .map_err(|e| io_failure(&data_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Failure::Data(format!(
                    "{}: no .csv track files",
                    data_dir.display()
                )));
            }
            let obs = load_velocities(&files, &input, &cfg)?;
            let grid = grid_spec(&grid, &cfg, &obs)?;
            let batches = make_batches(&obs, &cfg.batch_plan(cli.seed))?;
            let mut map_cfg = cfg.map_config();
            if let Some(l) = lambda {
                map_cfg.update.decay_lambda = l;
            }
            map_cfg.validate()?;
            let kinds: Vec<VariantKind> = match variants {
                Some(names) => names
                    .iter()
                    .map(|n| {
                        n.parse::<VariantKind>()
                            .map_err(|e| Failure::Usage(e.to_string()))
                    })
                    .collect::<Result<_, _>>()?,
                None => cfg
                    .variants()
                    .map_err(Failure::Usage)?
                    .unwrap_or_else(|| VariantKind::ALL.to_vec()),
            };
            let mut rows = Vec::new();
            let mut failed = false;
            for kind in kinds {
                let run = run_variant(
                    &batches,
                    &VariantSpec {
                        kind,
                        config: map_cfg.clone(),
                    },
                    &grid,
                )?;
                for (batch, msg) in &run.failures {
                    eprintln!("{kind} batch {batch}: {msg}");
                    failed = true;
                }
                rows.extend(run.rows);
            }
            report(&rows, !no_timing, &out)?;
            if let Some(lambdas) = sweep {
                let points = decay_sweep(&batches, &lambdas, &grid, &map_cfg)?;
                let path = out.join("sweep.csv");
                write_file(&path, |w| {
                    writeln!(w, "lambda,aggregate_nll")?;
                    for p in &points {
                        writeln!(w, "{},{:.6}", p.lambda, p.aggregate_nll)?;
                    }
                    Ok(())
                })?;
            }
            if failed {
                return Err(Failure::Internal("some cell updates failed".into()));
            }
            Ok(())
        }
        Command::Plan {
            map,
            obstacles,
            start,
            goal,
            alpha,
            connectivity,
            out,
        } => {
            let map = persist::load(&map)?;
            let grid = load_mapf_map(&obstacles)?;
            let mut planner = cfg.planner_config().map_err(Failure::Usage)?;
            if let Some(a) = alpha {
                planner.alpha = a;
            }
            if let Some(c) = connectivity {
                planner.connectivity = config::connectivity(c).map_err(Failure::Usage)?;
            }
            let cell = |(x, y): (f64, f64)| -> Result<(usize, usize), Failure> {
                if x < 0.0 || y < 0.0 {
                    return Err(Failure::Usage(format!(
                        "position ({x}, {y}) lies outside the obstacle map"
                    )));
                }
                Ok((x.floor() as usize, y.floor() as usize))
            };
            match plan(&grid, &map, cell(start)?, cell(goal)?, &planner)? {
                None => {
                    println!("no path");
                    Ok(())
                }
                Some(p) => {
                    let summary = summary_line(&p, path_flow_alignment(&p.cells, &map));
                    match out {
                        Some(path) => write_file(&path, |w| write_path_csv(&p.cells, w))?,
                        None => write_path_csv(&p.cells, io::stdout().lock())
                            .map_err(|e| Failure::Internal(e.to_string()))?,
                    }
                    println!("{summary}");
                    Ok(())
                }
            }
        }
        Command::Export { map, mode, out } => {
            let map = persist::load(&map)?;
            let mode = match mode {
                ModeArg::Dominant => ExportMode::Dominant,
                ModeArg::All => ExportMode::All,
            };
            let records = export_field(&map, mode);
            write_file(&out, |w| write_field_csv(&records, w))
        }
    }
}

fn report_failures(failed: &[(usize, String)]) -> Result<(), Failure> {
    for (idx, msg) in failed {
        eprintln!("cell {idx}: {msg}");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Internal(format!(
            "{} cell updates failed",
            failed.len()
        )))
    }
}

fn generate(kind: GenKind, seed: u64) -> Result<(), Failure> {
    match kind {
        GenKind::Toy {
            out,
            per_batch,
            sigma_deg,
            speed,
        } => {
            let batches = toy_eight_directions(per_batch, speed, sigma_deg.to_radians(), seed)?;
            create_dir(&out.join("batches"))?;
            write_file(&out.join("toy.csv"), |w| {
                write_native_csv(&toy_track_points(&batches), w)
            })?;
            let mut offset = 0;
            for (k, batch) in batches.iter().enumerate() {
                let mut points = toy_track_points(std::slice::from_ref(batch));
                for p in &mut points {
                    p.person_id += offset;
                }
                offset += batch.len() as u64;
                let path = out.join("batches").join(format!("batch_{}.csv", k + 1));
                write_file(&path, |w| write_native_csv(&points, w))?;
            }
            Ok(())
        }
        GenKind::Den520d {
            out,
            map,
            scenario: regions,
            trajectories,
            temperature,
        } => {
            let (grid, mut scenario) = match (&map, &regions) {
                (Some(map), Some(regions)) => {
                    let (starts, goals) = config::load_regions(regions).map_err(Failure::Usage)?;
                    (load_mapf_map(map)?, Scenario::new(starts, goals))
                }
                _ => {
                    log::info!("no --map given; using the built-in 48x48 ring corridor");
                    ring_corridor()
                }
            };
            scenario.trajectories = trajectories;
            scenario.temperature = temperature;
            scenario.seed = seed;
            create_dir(&out)?;
            let mut points = Vec::new();
            for condition in [Condition::A, Condition::B] {
                points.extend(
                    sample_trajectories(&grid, &scenario, condition)?
                        .into_iter()
                        .flatten(),
                );
            }
            write_file(&out.join("tracks.csv"), |w| write_native_csv(&points, w))?;
            fs::write(out.join("obstacles.map"), grid.to_mapf())
                .map_err(|e| io_failure(&out, e))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Data(m) => (2, m),
                Failure::Internal(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
