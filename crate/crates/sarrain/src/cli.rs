//! Command-line entry point.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sarrain_core::corpus::CorpusConfig;
use sarrain_core::dataset::ExtractRules;
use sarrain_core::glm::{Connectivity, COLOCATION_WINDOW_S};
use sarrain_core::koch::{Activation, DEFAULT_CALIBRATION_SPREAD};
use sarrain_core::labels::{DEFAULT_SEARCH_RADIUS_PX, THRESHOLDS_DBZ};
use sarrain_core::metrics::DEFAULT_CUT;
use sarrain_core::preproc::GmfSpec;
use sarrain_core::train::TrainConfig;

use crate::error::{Error, Result};
use crate::formats::{read_csv, read_events, read_gmf, read_json, read_params, read_scene_config, write_csv};
use crate::manifest::RunManifest;
use crate::workflow::{self, ExclusionRow, Stratification, StationRow};

pub const WORKERS_ENV: &str = "SARRAIN_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "sarrain", version, about = "Rain segmentation in SAR ocean imagery", arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads; SARRAIN_WORKERS overrides, default is all cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic swath (--config) or a whole patch dataset (--corpus).
    Synth(SynthArgs),
    /// Cut swath directories into patches with the rejection rules.
    Extract(ExtractArgs),
    /// Assign swaths to train/val/test with balanced class and wind shares.
    Split(SplitArgs),
    /// Estimate and apply the radar-to-SAR translation of every patch.
    Register(RegisterArgs),
    /// Train the multi-threshold Koch model.
    TrainKoch(TrainArgs),
    /// Write three-channel predictions for a dataset.
    Predict(PredictArgs),
    /// Score predictions against a dataset.
    Eval(EvalArgs),
    /// Cluster lightning events into a binary rain proxy.
    GlmCluster(GlmArgs),
    /// Merge metric tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
pub struct SynthSource {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub source: SynthSource,
    #[arg(long)]
    pub out: PathBuf,
    /// GMF coefficient file; the built-in CMOD5.N table by default.
    #[arg(long)]
    pub gmf: Option<PathBuf>,
    /// Seconds by which the radar scan precedes the SAR acquisition.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub radar_lag_s: i64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory whose subdirectories are swaths.
    #[arg(long)]
    pub swaths: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400.0)]
    pub resolution: f64,
    #[arg(long)]
    pub gmf: Option<PathBuf>,
    /// Patch edge in pixels; 25.6 km of ground by default.
    #[arg(long)]
    pub tile_px: Option<usize>,
    #[arg(long)]
    pub stride_px: Option<usize>,
    /// CSV "swath,patch" of patches to drop.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.79, 0.10, 0.11])]
    pub fractions: Vec<f64>,
    /// Run manifest directory; the dataset by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEARCH_RADIUS_PX)]
    pub radius: usize,
    /// CSV "swath,patch,d_row,d_col" taking precedence over estimation.
    #[arg(long = "override")]
    pub overrides: Option<PathBuf>,
    /// CSV "swath,lat,lon" of the radar station per swath.
    #[arg(long)]
    pub stations: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub resolution: f64,
    /// Parameters of the first run; every run also gets `<stem>.seed<N>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial parameters; calibrated on rain-free training pixels otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SPREAD)]
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Sigmoid,
    Clip,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One or more parameter files; several write `<out>/run<k>`.
    #[arg(long, required = true, num_args = 1..)]
    pub params: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Subset to predict, or "all".
    #[arg(long, default_value = "test")]
    pub subset: String,
    #[arg(long, value_enum, default_value_t = ActivationArg::Sigmoid)]
    pub activation: ActivationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StratArg {
    Wind,
    Incidence,
    Coast,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction directories, one per run.
    #[arg(long, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    /// Number of runs; with a single --pred, reads `<pred>/run0..`.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_enum)]
    pub strat: Option<StratArg>,
    #[arg(long, default_value_t = DEFAULT_CUT)]
    pub cut: f64,
    #[arg(long, default_value = "koch")]
    pub model: String,
    /// Also sweep the untrained binary detector with these parameters.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Subset scored by the baseline sweep, or "all".
    #[arg(long, default_value = "test")]
    pub subset: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConnectivityArg {
    #[value(name = "4")]
    Four,
    #[value(name = "8")]
    Eight,
}

#[derive(Debug, Args)]
pub struct GlmArgs {
    /// CSV "time_s,lat,lon".
    #[arg(long)]
    pub events: PathBuf,
    /// Any SGRID file whose geometry the mask should take.
    #[arg(long)]
    pub grid: PathBuf,
    /// Acquisition time; the grid timestamp by default.
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(long, default_value_t = COLOCATION_WINDOW_S)]
    pub window: f64,
    #[arg(long, value_enum, default_value_t = ConnectivityArg::Eight)]
    pub connectivity: ConnectivityArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric tables written by eval.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Worker count: the environment wins over the flag.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>> {
    match env {
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        None => match flag {
            Some(0) => Err(Error::Usage("--workers must be positive".into())),
            f => Ok(f),
        },
    }
}

fn init_pool(workers: Option<usize>) -> usize {
    if let Some(n) = workers {
        // a pool built earlier in this process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}

fn gmf(path: &Option<PathBuf>) -> Result<GmfSpec> {
    path.as_deref().map_or_else(|| Ok(GmfSpec::cmod5n()), read_gmf)
}

fn subset_filter(s: &str) -> Option<&str> {
    (s != "all").then_some(s)
}

fn print_json(out: &mut impl Write, v: &impl Serialize) {
    let _ = writeln!(out, "{}", serde_json::to_string(v).expect("summary serializes"));
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn manifest_dir(out: &Path, is_file: bool) -> PathBuf {
    if is_file {
        out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    } else {
        out.to_path_buf()
    }
}

fn execute(cmd: &Command, args: &[String], workers: usize, stdout: &mut impl Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => {
            let g = gmf(&a.gmf)?;
            let (seed, config) = if let Some(p) = &a.source.config {
                let cfg = read_scene_config(p)?;
                workflow::synth_scene(&cfg, &g, a.radar_lag_s, &a.out)?;
                print_json(stdout, &serde_json::json!({"swath": a.out, "seed": cfg.seed}));
                (cfg.seed, to_value(&cfg))
            } else {
                let p = a.source.corpus.as_ref().expect("clap enforces one source");
                let cfg: CorpusConfig = read_json(p)?;
                let s = workflow::synth_corpus(&cfg, &g, &a.out)?;
                print_json(stdout, &serde_json::json!({"swaths": s.swaths, "patches": s.patches, "rejected": s.rejected, "shifts": s.shifts.len()}));
                (cfg.seed, to_value(&cfg))
            };
            let config = serde_json::json!({"source": config, "gmf": g, "radar_lag_s": a.radar_lag_s});
            RunManifest::new("synth", args, Some(seed), workers, config).write(&a.out)
        }
        Command::Extract(a) => {
            workflow::check_resolution(a.resolution, false)?;
            let g = gmf(&a.gmf)?;
            let rules = ExtractRules {
                tile_px: a.tile_px.unwrap_or_else(|| workflow::tile_px_for(a.resolution)),
                stride_px: a.stride_px,
                ..ExtractRules::default()
            };
            let exclude: BTreeSet<ExclusionRow> = match &a.exclude {
                Some(p) => read_csv::<ExclusionRow>(p)?.into_iter().collect(),
                None => BTreeSet::new(),
            };
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&a.swaths)
                .map_err(|e| Error::io(&a.swaths, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("s0.sgrd").is_file())
                .collect();
            dirs.sort();
            if dirs.is_empty() {
                return Err(Error::Format { path: a.swaths.clone(), msg: "no swath directories with s0.sgrd".into() });
            }
            let s = workflow::extract(&dirs, &g, a.resolution, &rules, &exclude, &a.out)?;
            print_json(stdout, &s);
            let config = serde_json::json!({"rules": rules, "resolution_m": a.resolution, "gmf": g, "excluded": exclude.len(), "swaths": dirs});
            RunManifest::new("extract", args, None, workers, config).write(&a.out)
        }
        Command::Split(a) => {
            let f: [f64; 3] = a
                .fractions
                .as_slice()
                .try_into()
                .map_err(|_| Error::Usage(format!("--fractions needs 3 values, got {}", a.fractions.len())))?;
            let s = workflow::split(&a.data, f, a.seed, THRESHOLDS_DBZ)?;
            print_json(stdout, &serde_json::json!({"swath_counts": s.swath_counts, "objective": s.objective}));
            let out = a.out.clone().unwrap_or_else(|| a.data.clone());
            RunManifest::new("split", args, Some(a.seed), workers, serde_json::json!({"fractions": f})).write(&out)
        }
        Command::Register(a) => {
            let overrides = match &a.overrides {
                Some(p) => read_csv(p)?,
                None => Vec::new(),
            };
            let stations: Option<Vec<StationRow>> = a.stations.as_deref().map(read_csv).transpose()?;
            let s = workflow::register(&a.data, a.radius, THRESHOLDS_DBZ, &overrides, stations.as_deref(), &a.out)?;
            print_json(stdout, &s);
            let config = serde_json::json!({"radius_px": a.radius, "overrides": overrides.len()});
            RunManifest::new("register", args, None, workers, config).write(&a.out)
        }
        Command::TrainKoch(a) => {
            workflow::check_resolution(a.resolution, true)?;
            let mut cfg: TrainConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.runs = a.runs.unwrap_or(cfg.runs);
            cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
            cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
            let init = a.init.as_deref().map(read_params).transpose()?;
            let runs = workflow::train_koch(&a.data, a.resolution, &cfg, THRESHOLDS_DBZ, init.clone(), a.spread, &a.out)?;
            for r in &runs {
                print_json(stdout, r);
            }
            let config = serde_json::json!({"train": cfg, "resolution_m": a.resolution, "spread": a.spread, "init": init});
            RunManifest::new("train-koch", args, Some(cfg.seed), workers, config).write(&manifest_dir(&a.out, true))
        }
        Command::Predict(a) => {
            let activation = match a.activation {
                ActivationArg::Sigmoid => Activation::Sigmoid,
                ActivationArg::Clip => Activation::Clip,
            };
            let mut params = Vec::new();
            for (k, p) in a.params.iter().enumerate() {
                let prm = read_params(p)?;
                let dir = if a.params.len() > 1 { a.out.join(format!("run{k}")) } else { a.out.clone() };
                let n = workflow::predict(&a.data, &prm, subset_filter(&a.subset), activation, &dir)?;
                print_json(stdout, &serde_json::json!({"out": dir, "patches": n}));
                params.push(prm);
            }
            let config = serde_json::json!({"params": params, "subset": a.subset, "activation": format!("{:?}", a.activation)});
            RunManifest::new("predict", args, None, workers, config).write(&a.out)
        }
        Command::Eval(a) => {
            let dirs: Vec<PathBuf> = match (a.runs, a.pred.len()) {
                (_, 0) => return Err(Error::Usage("--pred is required".into())),
                (Some(n), 1) if n > 1 => (0..n).map(|k| a.pred[0].join(format!("run{k}"))).collect(),
                (Some(n), m) if n != m => {
                    return Err(Error::Usage(format!("--runs {n} does not match {m} prediction directories")))
                }
                _ => a.pred.clone(),
            };
            let strat = a.strat.map(|s| match s {
                StratArg::Wind => Stratification::Wind,
                StratArg::Incidence => Stratification::Incidence,
                StratArg::Coast => Stratification::Coast,
            });
            let report = workflow::evaluate(&dirs, &a.truth, THRESHOLDS_DBZ, a.cut, strat)?;
            let mut rows = report.rows(&a.model, a.cut)?;
            for line in report.lines()? {
                let _ = writeln!(stdout, "{line}");
            }
            if let Some(k) = strat {
                workflow::write_curves(&a.out.join(format!("strat_{}.csv", k.name())), &report)?;
            }
            if let Some(p) = &a.baseline {
                let prm = read_params(p)?;
                let b = workflow::baseline(&a.truth, subset_filter(&a.subset), &prm, THRESHOLDS_DBZ, 0.025)?;
                let _ = writeln!(stdout, "baseline macro_f1: {:.4} at threshold {:.3} (class {})", b.multiclass_f1, b.multiclass_threshold, b.multiclass_class);
                let _ = writeln!(stdout, "baseline binary_f1: {:.4} at threshold {:.3}", b.binary_f1, b.binary_threshold);
                for (metric, f, t) in [("macro_f1", b.multiclass_f1, b.multiclass_threshold), ("binary_f1", b.binary_f1, b.binary_threshold)] {
                    rows.push(crate::formats::ReportRow {
                        model: "koch_baseline".into(),
                        resolution_m: report.resolution_m,
                        metric: metric.into(),
                        threshold: format!("{t:.3}"),
                        mean: f,
                        std: 0.0,
                    });
                }
            }
            write_csv(&a.out.join("report.csv"), &rows)?;
            let config = serde_json::json!({"pred": dirs, "cut": a.cut, "model": a.model, "strat": strat.map(|s| s.name())});
            RunManifest::new("eval", args, None, workers, config).write(&a.out)
        }
        Command::GlmCluster(a) => {
            let events = read_events(&a.events)?;
            let grid = crate::sgrid::read_grid(&a.grid)?;
            let t = a.time.unwrap_or(grid.timestamp() as f64);
            let conn = match a.connectivity {
                ConnectivityArg::Four => Connectivity::Four,
                ConnectivityArg::Eight => Connectivity::Eight,
            };
            let s = workflow::glm_cluster(&events, &grid, t, a.window, conn, &a.out)?;
            print_json(stdout, &s);
            let config = serde_json::json!({"time_s": t, "window_s": a.window, "connectivity": format!("{conn:?}")});
            RunManifest::new("glm-cluster", args, None, workers, config).write(&a.out)
        }
        Command::Report(a) => {
            for line in workflow::report(&a.inputs, a.split.as_deref(), &a.out)? {
                let _ = writeln!(stdout, "{line}");
            }
            RunManifest::new("report", args, None, workers, serde_json::json!({"inputs": a.inputs})).write(&a.out)
        }
    }
}

/// Error report written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub path: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let env = std::env::var(WORKERS_ENV).ok();
    let result = resolve_workers(cli.workers, env.as_deref())
        .map(init_pool)
        .and_then(|workers| execute(&cli.command, &args, workers, stdout));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let report = ErrorReport { error: e.kind(), message: e.to_string(), path: e.path().map(Path::to_path_buf) };
            let _ = writeln!(stderr, "{}", serde_json::to_string(&report).expect("report serializes"));
            if matches!(e, Error::Usage(_)) {
                let _ = writeln!(stderr, "run `sarrain --help` for usage");
            }
            exit_code(&e)
        }
    }
}
