//! `hrmap` command-line tool.
//!
//! Exit codes: 0 on success, 1 for invalid arguments, inputs or map files,
//! 2 when a file cannot be read or written.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hrmap::eval::{evaluate_log, noise_sweep, EvalConfig, SweepMetric};
use hrmap::mapstore::{FORMAT_VERSION, MAGIC};
use hrmap::render::{render_global, render_mask, save_png, Palette, RenderMode};
use hrmap::simulate::{
    generate_trajectory_with_id, generate_world, load_log, run_scenario_with, write_log_record, InitialMap, ScenarioConfig,
    TrajectoryKind, TrajectoryParams, World, WorldParams,
};
use hrmap::{Category, Execution, GlobalMap};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "hrmap", version, about = "Historical rasterized map engine: simulate, evaluate, inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Loop,
    Outback,
    Grid,
    Straight,
}

impl From<Kind> for TrajectoryKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Loop => TrajectoryKind::Loop,
            Kind::Outback => TrajectoryKind::OutAndBack,
            Kind::Grid => TrajectoryKind::Grid,
            Kind::Straight => TrajectoryKind::Straight,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Thresholded,
    Evidence,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Map,
    Miou,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic road-network world.
    GenWorld {
        #[arg(long)]
        seed: u64,
        /// World parameters (JSON); defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a trajectory through a world.
    GenTraj {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Trajectory parameters (JSON); defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario: write the final map and the per-frame log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        map_out: PathBuf,
        #[arg(long)]
        log_out: PathBuf,
        /// Start from this map instead of the scenario's initial map.
        #[arg(long)]
        initial_map: Option<PathBuf>,
    },
    /// Evaluate a run log.
    Eval {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation settings (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Map file whose memory statistics go into the report.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Re-run a scenario over a grid of pose-noise levels.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma_t: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma_r: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "map")]
        metric: Metric,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Render a map file to PNG, or every frame's prior from a log.
    Render {
        #[arg(long, required_unless_present = "log", conflicts_with = "log", requires = "out")]
        map: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "thresholded")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log whose retrieved priors are written as numbered PNGs.
        #[arg(long, requires = "out_dir")]
        log: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Palette (JSON); red, green, blue on white when omitted.
        #[arg(long)]
        palette: Option<PathBuf>,
    },
    /// Print header fields and statistics of a map file.
    Inspect {
        #[arg(long)]
        map: PathBuf,
    },
    /// Add the evidence of several maps together.
    Merge {
        #[arg(long = "in", value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_map(path: &Path) -> Result<GlobalMap> {
    GlobalMap::load(path).with_context(|| format!("loading map {}", path.display()))
}

fn save_map(map: &GlobalMap, path: &Path) -> Result<u64> {
    map.save(path).with_context(|| format!("writing {}", path.display()))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn palette(path: Option<&Path>) -> Result<Palette> {
    let p: Palette = read_json_or_default(path)?;
    p.validate()?;
    Ok(p)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenWorld { seed, params, out } => {
            let params: WorldParams = read_json_or_default(params.as_deref())?;
            let world = generate_world(seed, &params)?;
            world.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let [d, c, b] = world.census();
            println!("elements: {} (divider {d}, crossing {c}, boundary {b})", d + c + b);
        }
        Command::GenTraj { world, seed, kind, params, id, out } => {
            let world = World::load(&world).with_context(|| format!("loading world {}", world.display()))?;
            let params: TrajectoryParams = read_json_or_default(params.as_deref())?;
            let kind = TrajectoryKind::from(kind);
            let id = id.unwrap_or_else(|| format!("{}-{seed}", kind.name()));
            let traj = generate_trajectory_with_id(&world, seed, kind, &params, id)?;
            traj.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("poses: {}", traj.poses.len());
        }
        Command::Run { scenario, map_out, log_out, initial_map } => {
            let mut config: ScenarioConfig = read_json(&scenario)?;
            if let Some(path) = initial_map {
                config.initial_map = InitialMap::File { path: std::path::absolute(path)? };
            }
            let base = scenario.parent().unwrap_or(Path::new("."));
            let scenario = config.resolve(base)?;
            let file = fs::File::create(&log_out).with_context(|| format!("creating {}", log_out.display()))?;
            let mut log = BufWriter::new(file);
            let mut frames = 0usize;
            let map = run_scenario_with(&scenario, |rec| {
                frames += 1;
                write_log_record(&mut log, &rec)
            })?;
            log.flush().with_context(|| format!("writing {}", log_out.display()))?;
            let bytes = save_map(&map, &map_out)?;
            println!("frames: {frames}");
            println!("tiles: {}", map.tile_count());
            println!("map_bytes: {bytes}");
        }
        Command::Eval { log, out, config, map, sequential } => {
            let cfg: EvalConfig = read_json_or_default(config.as_deref())?;
            let records = load_log(&log).with_context(|| format!("loading log {}", log.display()))?;
            let memory = map.as_deref().map(load_map).transpose()?.map(|m| m.memory_stats());
            let report = evaluate_log(&records, &cfg, memory, execution(sequential))?;
            write_json(&out, &report)?;
            println!("frames: {}", report.frames);
            println!("mAP: {}", report.ap.map);
            println!("mIoU: {}", report.iou.mean);
            if let Some(w) = &report.revisit.warning {
                eprintln!("warning: {w}");
            }
        }
        Command::Sweep { scenario, sigma_t, sigma_r, out, metric, config, sequential } => {
            if sigma_t.iter().chain(&sigma_r).any(|s| !(*s >= 0.0 && s.is_finite())) {
                bail!(hrmap::Error::Invalid("noise levels must be finite and >= 0".into()));
            }
            let cfg: EvalConfig = read_json_or_default(config.as_deref())?;
            let sc: ScenarioConfig = read_json(&scenario)?;
            let resolved = sc.resolve(scenario.parent().unwrap_or(Path::new(".")))?;
            let metric = match metric {
                Metric::Map => SweepMetric::Map,
                Metric::Miou => SweepMetric::Miou,
            };
            let result = noise_sweep(&resolved, &sigma_t, &sigma_r, metric, &cfg, execution(sequential))?;
            fs::write(&out, result.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", result.to_csv());
        }
        Command::Render { map, mode, out, log, out_dir, palette: palette_path } => {
            let palette = palette(palette_path.as_deref())?;
            if let Some(map_path) = map {
                let out = out.expect("clap enforces --out with --map");
                let mode = match mode {
                    Mode::Thresholded => RenderMode::Thresholded,
                    Mode::Evidence => RenderMode::Evidence,
                };
                let image = render_global(&load_map(&map_path)?, &palette, mode);
                save_png(&image, &out).with_context(|| format!("writing {}", out.display()))?;
                println!("size: {}x{}", image.width(), image.height());
            } else {
                let log_path = log.expect("clap enforces --map or --log");
                let dir = out_dir.expect("clap enforces --out-dir with --log");
                let records = load_log(&log_path).with_context(|| format!("loading log {}", log_path.display()))?;
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for (n, rec) in records.iter().enumerate() {
                    let path = dir.join(format!("frame_{n:06}.png"));
                    save_png(&render_mask(&rec.prior, &palette), &path).with_context(|| format!("writing {}", path.display()))?;
                }
                println!("frames: {}", records.len());
            }
        }
        Command::Inspect { map } => {
            let file_bytes = fs::metadata(&map).with_context(|| format!("reading {}", map.display()))?.len();
            let m = load_map(&map)?;
            let grid = m.grid();
            let params = m.params();
            let stats = m.memory_stats();
            println!("magic: {}", String::from_utf8_lossy(MAGIC));
            println!("version: {FORMAT_VERSION}");
            println!("resolution: {}", grid.resolution);
            println!("origin: {} {}", grid.origin.x, grid.origin.y);
            println!("tile_size: {}", m.tile_size());
            println!("channels: {}", Category::ALL.len());
            println!("s_plus: {}", params.s_plus);
            println!("s_minus: {}", params.s_minus);
            println!("s_th: {}", params.s_th);
            println!("tiles: {}", m.tile_count());
            println!("stored_bytes: {}", stats.stored_bytes);
            println!("index_bytes: {}", stats.index_bytes);
            println!("visited_extent_m2: {}", stats.visited_extent_m2);
            for (c, n) in Category::ALL.iter().zip(m.nonzero_cells()) {
                println!("nonzero_{}: {n}", c.name());
            }
            println!("file_bytes: {file_bytes}");
        }
        Command::Merge { inputs, out } => {
            let mut iter = inputs.iter();
            let first = iter.next().expect("clap requires at least one input");
            let mut merged = load_map(first)?;
            for path in iter {
                merged.merge(&load_map(path)?).with_context(|| format!("merging {}", path.display()))?;
            }
            save_map(&merged, &out)?;
            println!("tiles: {}", merged.tile_count());
        }
    }
    Ok(())
}

/// 2 when the failure came from the filesystem, otherwise 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<hrmap::Error>().is_some_and(hrmap::Error::is_io)
    });
    if io {
        2
    } else {
        1
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
