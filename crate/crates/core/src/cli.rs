//! The `mimic` command-line tool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::analysis::{
    self, camera_series, default_range, fit_gaussian, histogram, occupancy_heatmap, parse_outline,
    wasserstein1, CameraAxis, GridSpec,
};
use crate::eval::{self, PrimaryMetric};
use crate::loss::LossConfig;
use crate::policy::demo::{run_demo, DemoConfig};
use crate::replay::{read_replay_file, trim_start, write_replay_file, Replay};
use crate::sampler::{build_sequence, SamplerConfig, TargetMethod};
use crate::store::{self, MatchRecord, MatchStore, PlayerResult, RankMetric};

pub const DEFAULT_SEED: u64 = 7;
pub const STORE_ENV: &str = "MIMIC_STORE";

/// Optional overrides loaded with `--config`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.sampler.validate()?;
        cfg.loss.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mimic",
    version,
    about = "Behavioural-cloning data pipeline and humanness analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct StoreArg {
    /// Store directory holding matches.jsonl and results.jsonl
    #[arg(long, env = STORE_ENV)]
    store: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load replays into a match store
    Ingest {
        #[arg(required = true)]
        replays: Vec<PathBuf>,
        #[command(flatten)]
        store: StoreArg,
        /// Drop this many frames from the start of every replay
        #[arg(long, default_value_t = 0)]
        trim_start: usize,
        #[arg(long, default_value = "deathmatch")]
        config_name: String,
        #[arg(long, default_value = "unknown")]
        map_name: String,
        /// RFC 3339 timestamp recorded for new matches (default: now)
        #[arg(long)]
        played_at: Option<String>,
    },
    /// Print per-player statistics as CSV
    Stats {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, default_value = "win_rate")]
        rank: RankMetric,
    },
    /// Print the training sample anchored at one frame, as JSON
    Sample {
        replay: PathBuf,
        #[arg(short = 't', long = "anchor")]
        t: usize,
        /// Sequence length
        #[arg(short = 'N', long = "length")]
        n: Option<usize>,
        /// Frame-skip exponent
        #[arg(long)]
        lambda: Option<f64>,
        /// Target range
        #[arg(short = 'L', long = "range")]
        l: Option<usize>,
        #[arg(long)]
        method: Option<TargetMethod>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Train the surrogate policy on a synthetic task
    TrainDemo {
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Use plain squared error for the mouse heads
        #[arg(long)]
        mse_plain: bool,
        /// Print the full report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Heatmap and camera-movement histogram for one replay
    Analyze {
        replay: PathBuf,
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        outline: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        order: u8,
        #[arg(long)]
        hist: Option<PathBuf>,
        #[arg(long, default_value_t = analysis::DEFAULT_BIN_COUNT)]
        bins: usize,
        #[arg(long, default_value_t = 64.0)]
        cell_size: f64,
        #[arg(long, default_value_t = analysis::DEFAULT_MASK_THRESHOLD)]
        mask: f64,
        #[arg(long, value_enum, default_value = "turn")]
        axis: AxisArg,
    },
    /// Wasserstein-1 distance between two replays' camera movement
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1)]
        order: u8,
        #[arg(long, value_enum, default_value = "turn")]
        axis: AxisArg,
    },
    /// Summarise agent evaluation games (one JSON-lines file per agent)
    Eval {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long, default_value = "damage")]
        primary: PrimaryMetric,
    },
    /// Write CSV tables and SVG heatmaps for a whole store
    Report {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64.0)]
        cell_size: f64,
        #[arg(long)]
        outline: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        order: u8,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum AxisArg {
    Turn,
    Look,
}

impl From<AxisArg> for CameraAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Turn => CameraAxis::Turn,
            AxisArg::Look => CameraAxis::Look,
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 on success, 1 on runtime failure,
/// 2 on bad usage.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                2
            } else {
                let _ = write!(out, "{rendered}");
                0
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Ingest {
            replays,
            store,
            trim_start,
            config_name,
            map_name,
            played_at,
        } => {
            let played_at = match played_at {
                Some(s) => DateTime::parse_from_rfc3339(&s)
                    .with_context(|| format!("bad --played-at `{s}`"))?
                    .with_timezone(&Utc),
                None => Utc::now(),
            };
            ingest(
                &replays,
                &store.store,
                trim_start,
                &config_name,
                &map_name,
                played_at,
                out,
            )
        }
        Command::Stats { store, rank } => {
            let s = MatchStore::open(&store.store)?;
            write!(out, "{}", store::summaries_csv(&s.rank_players(rank)?))?;
            Ok(())
        }
        Command::Sample {
            replay,
            t,
            n,
            lambda,
            l,
            method,
            config,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => PipelineConfig::load(&p)?.sampler,
                None => SamplerConfig::default(),
            };
            cfg.sequence_length = n.unwrap_or(cfg.sequence_length);
            cfg.skip_exponent = lambda.unwrap_or(cfg.skip_exponent);
            cfg.target_range = l.unwrap_or(cfg.target_range);
            cfg.target_method = method.unwrap_or(cfg.target_method);
            cfg.validate()?;
            let r = load_replay(&replay)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = build_sequence(&r, t, &cfg, &mut rng)?;
            writeln!(out, "{}", serde_json::to_string(&sample)?)?;
            Ok(())
        }
        Command::TrainDemo {
            steps,
            seed,
            mse_plain,
            json,
        } => {
            let mut cfg = DemoConfig {
                steps,
                seed,
                ..DemoConfig::default()
            };
            cfg.loss.signed_mouse = !mse_plain;
            let report = run_demo(&cfg)?;
            if json {
                writeln!(out, "{}", serde_json::to_string(&report)?)?;
                return Ok(());
            }
            writeln!(out, "step,loss")?;
            for (i, l) in report.step_losses.iter().enumerate() {
                if i % 50 == 0 || i + 1 == report.step_losses.len() {
                    writeln!(out, "{},{:.6}", i + 1, l)?;
                }
            }
            writeln!(out, "initial_loss={:.6}", report.initial_loss)?;
            writeln!(out, "final_loss={:.6}", report.final_loss)?;
            writeln!(
                out,
                "loss_ratio={:.6}",
                report.final_loss / report.initial_loss
            )?;
            writeln!(
                out,
                "mouse_loss={}",
                if mse_plain { "plain" } else { "signed" }
            )?;
            writeln!(out, "sign_agreement={:.6}", report.sign_agreement)?;
            Ok(())
        }
        Command::Analyze {
            replay,
            heatmap,
            svg,
            outline,
            order,
            hist,
            bins,
            cell_size,
            mask,
            axis,
        } => {
            let r = load_replay(&replay)?;
            let positions = r.positions();
            let grid =
                occupancy_heatmap(&positions, GridSpec::covering(&positions, cell_size)?, mask)?;
            writeln!(
                out,
                "heatmap {}x{} cells, origin ({}, {}), {} positions, busiest cell {}",
                grid.spec.width,
                grid.spec.height,
                grid.spec.origin.0,
                grid.spec.origin.1,
                grid.in_bounds,
                grid.max()
            )?;
            if let Some(p) = heatmap {
                write_file(&p, &grid.to_csv())?;
            }
            if let Some(p) = svg {
                let outline = outline.as_deref().map(load_outline).transpose()?;
                write_file(&p, &grid.to_svg(outline.as_deref()))?;
            }
            let dist = camera_series(&r, order, axis.into())?;
            match fit_gaussian(&dist) {
                Ok(fit) => writeln!(
                    out,
                    "order {order}: n={} mean={:.6} std={:.6}",
                    dist.len(),
                    fit.mean,
                    fit.std
                )?,
                Err(_) => writeln!(out, "order {order}: n={}", dist.len())?,
            }
            if let Some(p) = hist {
                write_file(&p, &histogram(&dist, bins, default_range(order))?.to_csv())?;
            }
            Ok(())
        }
        Command::Compare { a, b, order, axis } => {
            let da = camera_series(&load_replay(&a)?, order, axis.into())?;
            let db = camera_series(&load_replay(&b)?, order, axis.into())?;
            writeln!(out, "{}", wasserstein1(&da, &db)?)?;
            Ok(())
        }
        Command::Eval { results, primary } => {
            let mut rows = Vec::new();
            for path in &results {
                let f =
                    fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let games = eval::read_results(BufReader::new(f))
                    .with_context(|| path.display().to_string())?;
                let label = path.file_stem().map_or_else(
                    || path.display().to_string(),
                    |s| s.to_string_lossy().into_owned(),
                );
                rows.push((label, eval::aggregate(&games)?));
            }
            eval::rank(&mut rows, primary);
            write!(out, "{}", eval::summary_csv(&rows))?;
            Ok(())
        }
        Command::Report {
            store,
            out: out_dir,
            cell_size,
            outline,
            order,
        } => report(
            &store.store,
            &out_dir,
            cell_size,
            outline.as_deref(),
            order,
            out,
        ),
    }
}

fn load_replay(path: &Path) -> Result<Replay> {
    read_replay_file(path).with_context(|| format!("{}", path.display()))
}

fn load_outline(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_outline(&text).with_context(|| path.display().to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// File-name-safe form of an id.
fn slug(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Stores each replay under `<store>/replays/<match>/<player>.farp` and
/// records one result per replay. New matches get a winner when exactly one
/// of their ingested players has the most kills.
fn ingest(
    paths: &[PathBuf],
    dir: &Path,
    trim: usize,
    config_name: &str,
    map_name: &str,
    played_at: DateTime<Utc>,
    out: &mut dyn Write,
) -> Result<()> {
    let mut store = MatchStore::open(dir)?;
    let mut by_match: BTreeMap<String, Vec<Replay>> = BTreeMap::new();
    for p in paths {
        let mut r = load_replay(p)?;
        if trim > 0 {
            r = trim_start(&r, trim).with_context(|| format!("trimming {}", p.display()))?;
        }
        by_match.entry(r.match_id.clone()).or_default().push(r);
    }

    let mut n_matches = 0;
    for (match_id, replays) in &by_match {
        let rel_dir = Path::new("replays").join(slug(match_id));
        fs::create_dir_all(dir.join(&rel_dir))?;
        let is_new = store.get_match(match_id).is_none();
        if is_new {
            store.record_match(MatchRecord {
                match_id: match_id.clone(),
                config_name: config_name.to_string(),
                map_name: map_name.to_string(),
                played_at,
                player_count: replays.len() as u32,
                duration_s: replays.iter().map(Replay::duration_s).fold(0.0, f64::max),
                replay_file: rel_dir.to_string_lossy().into_owned(),
            })?;
            n_matches += 1;
        }
        let final_kills = |r: &Replay| r.last_frame().map_or(0, |f| f.kills);
        let best = replays.iter().map(final_kills).max().unwrap_or(0);
        let leaders = replays.iter().filter(|r| final_kills(r) == best).count();
        for r in replays {
            let last = r.last_frame().ok_or_else(|| anyhow!("empty replay"))?;
            write_replay_file(
                dir.join(&rel_dir)
                    .join(format!("{}.farp", slug(&r.player_id))),
                r,
            )?;
            store.record_player_result(PlayerResult {
                match_id: match_id.clone(),
                player_id: r.player_id.clone(),
                kills: u32::from(last.kills),
                deaths: u32::from(last.deaths),
                damage: u64::from(last.damage),
                won: is_new && leaders == 1 && last.kills == best,
            })?;
        }
    }
    writeln!(
        out,
        "ingested {} replays ({} new matches, {} total)",
        paths.len(),
        n_matches,
        store.match_count()
    )?;
    Ok(())
}

fn report(
    dir: &Path,
    out_dir: &Path,
    cell_size: f64,
    outline: Option<&Path>,
    order: u8,
    out: &mut dyn Write,
) -> Result<()> {
    let store = MatchStore::open(dir)?;
    if store.results().is_empty() {
        bail!("store {} has no results", dir.display());
    }
    fs::create_dir_all(out_dir)?;
    let outline = outline.map(load_outline).transpose()?;

    write_file(
        &out_dir.join("players.csv"),
        &store::summaries_csv(&store.rank_players(RankMetric::WinRate)?),
    )?;
    write_file(
        &out_dir.join("matches.csv"),
        &store::matches_csv(store.matches()),
    )?;

    // per-player trajectories and camera series across all their matches
    let mut per_player: BTreeMap<String, (Vec<(f64, f64)>, Vec<f64>)> = BTreeMap::new();
    for r in store.results() {
        let Some(m) = store.get_match(&r.match_id) else {
            continue;
        };
        let path = dir
            .join(&m.replay_file)
            .join(format!("{}.farp", slug(&r.player_id)));
        if !path.exists() {
            continue;
        }
        let replay = load_replay(&path)?;
        let entry = per_player.entry(r.player_id.clone()).or_default();
        entry.0.extend(replay.positions());
        let series = camera_series(&replay, order, CameraAxis::Turn)?;
        entry.1.extend_from_slice(series.samples());
    }

    let mut dists = Vec::new();
    for (player, (positions, camera)) in &per_player {
        if positions.is_empty() {
            continue;
        }
        let grid = occupancy_heatmap(
            positions,
            GridSpec::covering(positions, cell_size)?,
            analysis::DEFAULT_MASK_THRESHOLD,
        )?;
        let name = slug(player);
        write_file(&out_dir.join(format!("heatmap_{name}.csv")), &grid.to_csv())?;
        write_file(
            &out_dir.join(format!("heatmap_{name}.svg")),
            &grid.to_svg(outline.as_deref()),
        )?;
        let dist = analysis::EmpiricalDistribution::new(camera.clone(), order)?;
        write_file(
            &out_dir.join(format!("camera_{name}.csv")),
            &histogram(&dist, analysis::DEFAULT_BIN_COUNT, default_range(order))?.to_csv(),
        )?;
        dists.push((player.clone(), dist));
    }

    let mut w1 = String::from("a,b,w1\n");
    for (i, (pa, da)) in dists.iter().enumerate() {
        for (pb, db) in &dists[i + 1..] {
            w1.push_str(&format!("{pa},{pb},{}\n", wasserstein1(da, db)?));
        }
    }
    write_file(&out_dir.join("camera_w1.csv"), &w1)?;
    writeln!(
        out,
        "wrote report for {} players to {}",
        dists.len(),
        out_dir.display()
    )?;
    Ok(())
}
