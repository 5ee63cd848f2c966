//! Configuration files and the subcommand implementations behind the binary.
//!
//! One TOML config drives the whole loop: `simulate` runs the randomized
//! experiment and writes per-scheme telemetry archives, `train` fits a
//! predictor on archives, `evaluate` turns archives into a comparison table
//! with confidence intervals, `ablate` trains and scores the predictor
//! variants on identical data, and `report` re-renders a plot-data file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::control::Horizon;
use crate::data::{
    self, build_training_set, join_transmission_times, parse_archive, StreamChunks,
    TrainingExample,
};
use crate::domain::QoeWeights;
use crate::nn::{self, Mlp, MlpSpec, TrainConfig, TrainSample};
use crate::predictors::{
    build_throughput_input, build_ttp_input, build_ttp_input_step, discretize_rate,
    rate_representative, transmission_time_for, discretize, Predictor, TtpVariant,
    RATE_BINS, TRANSMISSION_BINS,
};
use crate::sim::{
    self, assignment_log_csv, load_trace, load_video_spec, run_experiment, save_trace,
    save_video_spec, synth_traces, synth_video_spec, ExperimentConfig, NetworkTrace, Scheme,
    SynthTraceConfig, SynthVideoConfig, VideoSpec, WatchModel,
};
use crate::stats::{
    build_report, compare_schemes, parse_plot_data, summarize_archive, SchemeReport,
    DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES,
};

/// Errors carrying the process exit code: 1 usage, 2 data, 3 internal.
#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Internal(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Internal(m) => m,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            AppError::Usage(_) => "usage error",
            AppError::Data(_) => "data error",
            AppError::Internal(_) => "internal error",
        };
        write!(f, "{kind}: {}", self.message())
    }
}

impl From<data::DataError> for AppError {
    fn from(e: data::DataError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<sim::TraceError> for AppError {
    fn from(e: sim::TraceError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<sim::VideoError> for AppError {
    fn from(e: sim::VideoError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<nn::NnError> for AppError {
    fn from(e: nn::NnError) -> Self {
        match e {
            nn::NnError::Parse { .. } => AppError::Data(e.to_string()),
            other => AppError::Internal(other.to_string()),
        }
    }
}

impl From<crate::predictors::PredictError> for AppError {
    fn from(e: crate::predictors::PredictError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<crate::stats::StatsError> for AppError {
    fn from(e: crate::stats::StatsError) -> Self {
        AppError::Data(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> AppError {
    AppError::Data(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub traces: TracesSection,
    #[serde(default)]
    pub video: VideoSection,
    #[serde(default)]
    pub qoe: QoeSection,
    #[serde(default)]
    pub horizon: HorizonSection,
    #[serde(default)]
    pub watch: WatchSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub fugu: FuguSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    #[serde(default = "default_sessions")]
    pub sessions_per_arm: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default = "default_epoch_days")]
    pub epoch_days: u32,
}

fn default_schemes() -> Vec<String> {
    vec!["bba".into(), "mpc_hm".into()]
}
fn default_sessions() -> usize {
    20
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_epoch_days() -> u32 {
    1
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            schemes: default_schemes(),
            sessions_per_arm: default_sessions(),
            seed: 0,
            out_dir: default_out_dir(),
            epoch_days: default_epoch_days(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracesSection {
    /// Directory of `.trace` files; mutually exclusive with `synthetic`.
    #[serde(default)]
    pub dir: Option<String>,
    /// Number of synthetic traces to generate.
    #[serde(default)]
    pub synthetic: Option<usize>,
    #[serde(default = "default_trace_duration")]
    pub duration_secs: f64,
    /// High/low regime capacities in megabytes per second.
    #[serde(default = "default_high_mb")]
    pub high_mb_per_s: [f64; 2],
    #[serde(default = "default_low_mb")]
    pub low_mb_per_s: [f64; 2],
    #[serde(default = "default_dwell_high")]
    pub dwell_high_mean: f64,
    #[serde(default = "default_dwell_low")]
    pub dwell_low_mean: f64,
    #[serde(default = "default_base_delay")]
    pub base_delay: f64,
}

fn default_trace_duration() -> f64 {
    3600.0
}
fn default_high_mb() -> [f64; 2] {
    [1.2, 5.0]
}
fn default_low_mb() -> [f64; 2] {
    [0.12, 0.6]
}
fn default_dwell_high() -> f64 {
    25.0
}
fn default_dwell_low() -> f64 {
    8.0
}
fn default_base_delay() -> f64 {
    sim::DEFAULT_BASE_DELAY
}

impl Default for TracesSection {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic: Some(20),
            duration_secs: default_trace_duration(),
            high_mb_per_s: default_high_mb(),
            low_mb_per_s: default_low_mb(),
            dwell_high_mean: default_dwell_high(),
            dwell_low_mean: default_dwell_low(),
            base_delay: default_base_delay(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSection {
    /// Video spec file; when absent a synthetic video is generated.
    #[serde(default)]
    pub spec: Option<String>,
    #[serde(default = "default_video_chunks")]
    pub chunks: usize,
    #[serde(default = "default_chunk_duration")]
    pub chunk_duration: f64,
    #[serde(default = "default_mean_sizes")]
    pub mean_sizes_mb: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_video_chunks() -> usize {
    1800
}
fn default_chunk_duration() -> f64 {
    crate::domain::DEFAULT_CHUNK_DURATION
}
fn default_mean_sizes() -> Vec<f64> {
    vec![0.2, 0.45, 1.0, 2.2, 3.6]
}

impl Default for VideoSection {
    fn default() -> Self {
        Self {
            spec: None,
            chunks: default_video_chunks(),
            chunk_duration: default_chunk_duration(),
            mean_sizes_mb: default_mean_sizes(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoeSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_max_buffer")]
    pub max_buffer: f64,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_mu() -> f64 {
    100.0
}
fn default_max_buffer() -> f64 {
    crate::domain::DEFAULT_MAX_BUFFER
}

impl Default for QoeSection {
    fn default() -> Self {
        Self { lambda: default_lambda(), mu: default_mu(), max_buffer: default_max_buffer() }
    }
}

impl QoeSection {
    pub fn weights(&self) -> QoeWeights {
        QoeWeights { lambda: self.lambda, mu: self.mu, max_buffer: self.max_buffer }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_buffer_bin")]
    pub buffer_bin: f64,
}

fn default_steps() -> usize {
    5
}
fn default_buffer_bin() -> f64 {
    0.25
}

impl Default for HorizonSection {
    fn default() -> Self {
        Self { steps: default_steps(), buffer_bin: default_buffer_bin() }
    }
}

impl HorizonSection {
    pub fn horizon(&self) -> Horizon {
        Horizon { steps: self.steps, buffer_bin: self.buffer_bin }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatchSection {
    #[serde(default = "default_watch_median")]
    pub median_secs: f64,
    #[serde(default = "default_watch_sigma")]
    pub sigma: f64,
    #[serde(default = "default_watch_min")]
    pub min_secs: f64,
    #[serde(default = "default_watch_max")]
    pub max_secs: f64,
}

fn default_watch_median() -> f64 {
    300.0
}
fn default_watch_sigma() -> f64 {
    1.0
}
fn default_watch_min() -> f64 {
    10.0
}
fn default_watch_max() -> f64 {
    7200.0
}

impl Default for WatchSection {
    fn default() -> Self {
        Self {
            median_secs: default_watch_median(),
            sigma: default_watch_sigma(),
            min_secs: default_watch_min(),
            max_secs: default_watch_max(),
        }
    }
}

impl WatchSection {
    pub fn model(&self) -> WatchModel {
        WatchModel {
            median_secs: self.median_secs,
            sigma: self.sigma,
            min_secs: self.min_secs,
            max_secs: self.max_secs,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window_days")]
    pub window_days: u32,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    50
}
fn default_window_days() -> u32 {
    data::DEFAULT_WINDOW_DAYS
}
fn default_holdout() -> f64 {
    0.2
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            window_days: default_window_days(),
            holdout_fraction: default_holdout(),
        }
    }
}

impl TrainingSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuguSection {
    /// Trained predictor for the `fugu` and `fugu_point` schemes.
    #[serde(default)]
    pub predictor: Option<String>,
    /// Predictors for the end-to-end ablation schemes.
    #[serde(default)]
    pub linear_predictor: Option<String>,
    #[serde(default)]
    pub throughput_predictor: Option<String>,
    /// Train/query the shared network with the lookahead-step feature.
    #[serde(default)]
    pub horizon_aware: bool,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl Default for FuguSection {
    fn default() -> Self {
        Self {
            predictor: None,
            linear_predictor: None,
            throughput_predictor: None,
            horizon_aware: false,
            hidden: default_hidden(),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| AppError::Usage(format!("config {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub schemes: Option<Vec<String>>,
    pub sessions: Option<usize>,
}

fn load_traces_from_dir(dir: &Path) -> Result<Vec<(String, NetworkTrace)>, AppError> {
    let entries = fs::read_dir(dir).map_err(|e| {
        AppError::Usage(format!("trace directory {}: {e}", dir.display()))
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "trace").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Data(format!("no .trace files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            let name =
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_trace(&text)?))
        })
        .collect()
}

fn resolve_traces(
    cfg: &ConfigFile,
    out_dir: &Path,
) -> Result<Vec<(String, NetworkTrace)>, AppError> {
    match (&cfg.traces.dir, cfg.traces.synthetic) {
        (Some(dir), _) => load_traces_from_dir(Path::new(dir)),
        (None, Some(count)) => {
            let synth_cfg = SynthTraceConfig {
                count,
                duration_secs: cfg.traces.duration_secs,
                high_range: (cfg.traces.high_mb_per_s[0] * 1e6, cfg.traces.high_mb_per_s[1] * 1e6),
                low_range: (cfg.traces.low_mb_per_s[0] * 1e6, cfg.traces.low_mb_per_s[1] * 1e6),
                dwell_high_mean: cfg.traces.dwell_high_mean,
                dwell_low_mean: cfg.traces.dwell_low_mean,
                base_delay: cfg.traces.base_delay,
                ..Default::default()
            };
            let traces = synth_traces(&synth_cfg, cfg.experiment.seed);
            let trace_dir = out_dir.join("traces");
            fs::create_dir_all(&trace_dir).map_err(|e| io_err(&trace_dir, e))?;
            for (name, trace) in &traces {
                let path = trace_dir.join(format!("{name}.trace"));
                fs::write(&path, save_trace(trace)).map_err(|e| io_err(&path, e))?;
            }
            Ok(traces)
        }
        (None, None) => {
            Err(AppError::Usage("config needs either traces.dir or traces.synthetic".into()))
        }
    }
}

fn resolve_video(cfg: &ConfigFile, out_dir: &Path) -> Result<VideoSpec, AppError> {
    match &cfg.video.spec {
        Some(path) => {
            let p = Path::new(path);
            let text = fs::read_to_string(p)
                .map_err(|e| AppError::Usage(format!("video spec {}: {e}", p.display())))?;
            Ok(load_video_spec(&text)?)
        }
        None => {
            let synth_cfg = SynthVideoConfig {
                chunks: cfg.video.chunks,
                chunk_duration: cfg.video.chunk_duration,
                mean_sizes: cfg.video.mean_sizes_mb.iter().map(|m| m * 1e6).collect(),
                ..Default::default()
            };
            let video = synth_video_spec(&synth_cfg, cfg.video.seed);
            let path = out_dir.join("video.vspec");
            fs::write(&path, save_video_spec(&video)).map_err(|e| io_err(&path, e))?;
            Ok(video)
        }
    }
}

fn load_predictor(path: &str) -> Result<Predictor, AppError> {
    let p = Path::new(path);
    let text = fs::read_to_string(p)
        .map_err(|e| AppError::Usage(format!("predictor {}: {e}", p.display())))?;
    Ok(Predictor::load(&text)?)
}

fn resolve_scheme(name: &str, fugu: &FuguSection) -> Result<Scheme, AppError> {
    let need = |path: &Option<String>, key: &str| -> Result<Predictor, AppError> {
        match path {
            Some(p) => load_predictor(p),
            None => Err(AppError::Usage(format!("scheme {name} needs fugu.{key} in the config"))),
        }
    };
    match name {
        "bba" => Ok(Scheme::bba()),
        "mpc_hm" => Ok(Scheme::MpcHm),
        "robust_mpc_hm" => Ok(Scheme::RobustMpcHm),
        "fugu" => {
            let p = need(&fugu.predictor, "predictor")?;
            Ok(Scheme::Fugu { predictor: Arc::new(p) })
        }
        "fugu_point" => {
            let p = need(&fugu.predictor, "predictor")?;
            let point = Predictor::new(TtpVariant::Point, p.horizon_aware, p.net)?;
            Ok(Scheme::Fugu { predictor: Arc::new(point) })
        }
        "fugu_linear" => {
            let p = need(&fugu.linear_predictor, "linear_predictor")?;
            Ok(Scheme::Fugu { predictor: Arc::new(p) })
        }
        "fugu_throughput" => {
            let p = need(&fugu.throughput_predictor, "throughput_predictor")?;
            Ok(Scheme::Fugu { predictor: Arc::new(p) })
        }
        "pensieve" => Err(AppError::Usage(
            "pensieve is a report-only placeholder scheme; it cannot be simulated".into(),
        )),
        other => Err(AppError::Usage(format!("unknown scheme {other:?}"))),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), AppError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(schemes) = &args.schemes {
        cfg.experiment.schemes = schemes.clone();
    }
    if let Some(sessions) = args.sessions {
        cfg.experiment.sessions_per_arm = sessions;
    }
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.experiment.out_dir));
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    if cfg.experiment.schemes.is_empty() {
        return Err(AppError::Usage("no schemes configured".into()));
    }
    let schemes: Vec<Scheme> = cfg
        .experiment
        .schemes
        .iter()
        .map(|name| resolve_scheme(name, &cfg.fugu))
        .collect::<Result<_, _>>()?;
    let traces = resolve_traces(&cfg, &out_dir)?;
    let video = resolve_video(&cfg, &out_dir)?;

    let experiment = ExperimentConfig {
        schemes,
        traces,
        video,
        sessions_per_arm: cfg.experiment.sessions_per_arm,
        seed: cfg.experiment.seed,
        weights: cfg.qoe.weights(),
        horizon: cfg.horizon.horizon(),
        watch: cfg.watch.model(),
        start_epoch_base: 1.6e9,
        epoch_days: cfg.experiment.epoch_days,
        stall_cap: 10.0,
    };
    let outcome = run_experiment(&experiment);

    let archive_root = out_dir.join("archives");
    for (scheme, archive) in &outcome.archives {
        data::emit_archive(archive, &archive_root.join(scheme))?;
    }
    let log_path = out_dir.join("assignment.csv");
    fs::write(&log_path, assignment_log_csv(&outcome.assignments))
        .map_err(|e| io_err(&log_path, e))?;

    let aborted = outcome.aborted_sessions();
    println!(
        "simulated {} sessions across {} schemes ({} aborted); archives in {}",
        outcome.assignments.len(),
        outcome.archives.len(),
        aborted,
        archive_root.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub archives: Vec<PathBuf>,
    pub out_model: PathBuf,
    pub window_days: Option<u32>,
    pub as_of_day: Option<i64>,
    pub warm_start: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn load_streams(archives: &[PathBuf]) -> Result<(Vec<StreamChunks>, usize), AppError> {
    if archives.is_empty() {
        return Err(AppError::Usage("no archive directories given".into()));
    }
    let mut all_sent = Vec::new();
    let mut all_acked = Vec::new();
    let mut skipped = 0;
    for dir in archives {
        let (archive, report) = parse_archive(dir)?;
        skipped += report.rows_skipped;
        all_sent.extend(archive.sent);
        all_acked.extend(archive.acked);
    }
    let (streams, _join) = join_transmission_times(&all_sent, &all_acked)?;
    Ok((streams, skipped))
}

fn examples_to_samples(
    examples: &[TrainingExample],
    horizon_aware: bool,
    horizon_steps: usize,
) -> Vec<TrainSample> {
    examples
        .iter()
        .map(|e| TrainSample {
            input: if horizon_aware {
                build_ttp_input_step(&e.input, e.step, horizon_steps)
            } else {
                build_ttp_input(&e.input)
            },
            target_bin: e.target_bin,
            weight: e.weight,
        })
        .collect()
}

fn max_day(streams: &[StreamChunks]) -> i64 {
    streams
        .iter()
        .flat_map(|s| s.chunks.iter())
        .map(|c| (c.sent_time / 86_400.0).floor() as i64)
        .max()
        .unwrap_or(0)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), AppError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    let window_days = args.window_days.unwrap_or(cfg.training.window_days);
    let (streams, skipped) = load_streams(&args.archives)?;
    if streams.is_empty() {
        return Err(AppError::Data("archives contain no joinable chunks".into()));
    }
    let as_of_day = args.as_of_day.unwrap_or_else(|| max_day(&streams));
    let horizon_steps = if cfg.fugu.horizon_aware { cfg.horizon.steps } else { 1 };
    let examples = build_training_set(&streams, as_of_day, window_days, horizon_steps)?;
    if examples.is_empty() {
        return Err(AppError::Data(format!(
            "no training examples inside the {window_days}-day window ending day {as_of_day}"
        )));
    }
    let samples = examples_to_samples(&examples, cfg.fugu.horizon_aware, cfg.horizon.steps);

    let input_dim = Predictor::expected_input_dim(TtpVariant::Full, cfg.fugu.horizon_aware);
    let spec = MlpSpec::new(input_dim, cfg.fugu.hidden.clone(), TRANSMISSION_BINS, cfg.training.seed);
    let init = Mlp::new(spec)?;
    let warm = match &args.warm_start {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let prev = Predictor::load(&text)?;
            Some(prev.net)
        }
        None => None,
    };
    let (net, report) = nn::train(&init, &samples, &cfg.training.train_config(), warm.as_ref())?;
    let predictor = Predictor::new(TtpVariant::Full, cfg.fugu.horizon_aware, net)?;
    fs::write(&args.out_model, predictor.save()).map_err(|e| io_err(&args.out_model, e))?;

    println!(
        "trained on {} examples ({} telemetry rows skipped), {} epochs, loss {:.4} -> {:.4}",
        report.examples, skipped, report.epochs, report.first_epoch_loss, report.final_epoch_loss
    );
    match &args.warm_start {
        Some(p) => println!("warm start: {}", p.display()),
        None => println!("warm start: none (fresh seeded init)"),
    }
    println!("model written to {}", args.out_model.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate / report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    /// Directory of per-scheme archive subdirectories.
    pub archive_root: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub resamples: usize,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), AppError> {
    let resamples = if args.resamples == 0 { DEFAULT_RESAMPLES } else { args.resamples };
    let entries = fs::read_dir(&args.archive_root)
        .map_err(|e| AppError::Usage(format!("{}: {e}", args.archive_root.display())))?;
    let mut dirs: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(AppError::Data(format!(
            "no scheme archives under {}",
            args.archive_root.display()
        )));
    }

    let mut reports: Vec<SchemeReport> = Vec::new();
    for dir in &dirs {
        let scheme =
            dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (archive, parse_report) = parse_archive(dir)?;
        if parse_report.rows_skipped > 0 {
            eprintln!("{scheme}: skipped {} malformed rows", parse_report.rows_skipped);
        }
        let summaries = summarize_archive(&archive)?;
        reports.push(build_report(&scheme, &summaries, resamples, DEFAULT_CONFIDENCE, args.seed)?);
    }

    let comparison = compare_schemes(&reports);
    print!("{}", comparison.table);
    for (a, b) in &comparison.distinguishable {
        println!("distinguishable stall ratios: {a} vs {b}");
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let table_path = out.join("comparison.txt");
        fs::write(&table_path, &comparison.table).map_err(|e| io_err(&table_path, e))?;
        let plot_path = out.join("plot_data.csv");
        fs::write(&plot_path, &comparison.plot_data).map_err(|e| io_err(&plot_path, e))?;
        println!("wrote {} and {}", table_path.display(), plot_path.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct ReportArgs {
    pub plot_data: PathBuf,
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), AppError> {
    let text = fs::read_to_string(&args.plot_data).map_err(|e| io_err(&args.plot_data, e))?;
    let rows = parse_plot_data(&text)?;
    println!(
        "{:<16} {:>12} {:>24} {:>10} {:>22}",
        "scheme", "stall_ratio", "stall_95ci", "ssim_db", "ssim_95ci"
    );
    for r in &rows {
        println!(
            "{:<16} {:>12.5} {:>24} {:>10.3} {:>22}",
            r.scheme,
            r.stall_ratio,
            format!("[{:.5}, {:.5}]", r.stall_ci.0, r.stall_ci.1),
            r.ssim_db,
            format!("[{:.3}, {:.3}]", r.ssim_ci.0, r.ssim_ci.1)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct AblateArgs {
    pub config: PathBuf,
    pub archives: Vec<PathBuf>,
    pub seeds: usize,
    pub out: Option<PathBuf>,
}

/// Cross-entropy of a predicted distribution against the observed bin, with
/// probabilities floored so confidently wrong point predictions stay finite.
pub fn clipped_cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(1e-9).ln()
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub holdout_cross_entropy: f64,
}

/// Trains the four predictor variants on identical data and seeds and scores
/// held-out cross-entropy over the transmission-time bins.
pub fn run_ablation(
    streams: &[StreamChunks],
    training: &TrainingSection,
    hidden: &[usize],
    seeds: &[u64],
) -> Result<Vec<AblationRow>, AppError> {
    // hold out whole streams so evaluation never sees training history
    let train_streams: Vec<StreamChunks> =
        streams.iter().filter(|s| s.stream_id % 5 != 0).cloned().collect();
    let holdout_streams: Vec<StreamChunks> =
        streams.iter().filter(|s| s.stream_id % 5 == 0).cloned().collect();
    if train_streams.is_empty() || holdout_streams.is_empty() {
        return Err(AppError::Data("not enough streams for a train/holdout split".into()));
    }
    let window = training.window_days;
    let train_day = max_day(&train_streams);
    let train_examples = build_training_set(&train_streams, train_day, window, 1)?;
    let holdout_examples = build_training_set(&holdout_streams, max_day(&holdout_streams), window, 1)?;
    if train_examples.is_empty() || holdout_examples.is_empty() {
        return Err(AppError::Data("train or holdout set is empty".into()));
    }

    let time_samples = examples_to_samples(&train_examples, false, 1);
    let rate_samples: Vec<TrainSample> = train_examples
        .iter()
        .map(|e| {
            let observed_rate = e.input.candidate_size / e.transmission_time;
            TrainSample {
                input: build_throughput_input(&e.input),
                target_bin: discretize_rate(observed_rate),
                weight: e.weight,
            }
        })
        .collect();

    let mut rows = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..training.train_config() };

        let full_init =
            Mlp::new(MlpSpec::new(crate::predictors::TTP_INPUT_DIM, hidden.to_vec(), TRANSMISSION_BINS, seed))?;
        let (full, _) = nn::train(&full_init, &time_samples, &cfg, None)?;

        let linear_init =
            Mlp::new(MlpSpec::new(crate::predictors::TTP_INPUT_DIM, vec![], TRANSMISSION_BINS, seed))?;
        let (linear, _) = nn::train(&linear_init, &time_samples, &cfg, None)?;

        let thr_init = Mlp::new(MlpSpec::new(
            crate::predictors::THROUGHPUT_INPUT_DIM,
            hidden.to_vec(),
            RATE_BINS,
            seed,
        ))?;
        let (throughput, _) = nn::train(&thr_init, &rate_samples, &cfg, None)?;

        let mut ce = BTreeMap::from([
            ("full", 0.0f64),
            ("point", 0.0),
            ("linear", 0.0),
            ("throughput", 0.0),
        ]);
        for e in &holdout_examples {
            let features = build_ttp_input(&e.input);
            let full_probs = nn::softmax(&full.forward(&features)?);
            *ce.get_mut("full").expect("key") += clipped_cross_entropy(&full_probs, e.target_bin);

            let mut point = vec![0.0; TRANSMISSION_BINS];
            let argmax = full_probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .expect("non-empty")
                .0;
            point[argmax] = 1.0;
            *ce.get_mut("point").expect("key") += clipped_cross_entropy(&point, e.target_bin);

            let linear_probs = nn::softmax(&linear.forward(&features)?);
            *ce.get_mut("linear").expect("key") +=
                clipped_cross_entropy(&linear_probs, e.target_bin);

            let rate_probs = nn::softmax(&throughput.forward(&build_throughput_input(&e.input))?);
            let mut time_probs = vec![0.0; TRANSMISSION_BINS];
            for (bin, p) in rate_probs.iter().enumerate() {
                if *p > 0.0 {
                    let t = transmission_time_for(
                        e.input.candidate_size,
                        rate_representative(bin).expect("bin in range"),
                    );
                    time_probs[discretize(t)?] += p;
                }
            }
            *ce.get_mut("throughput").expect("key") +=
                clipped_cross_entropy(&time_probs, e.target_bin);
        }
        let n = holdout_examples.len() as f64;
        for (variant, total) in ce {
            rows.push(AblationRow { variant, seed, holdout_cross_entropy: total / n });
        }
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "{:<12} {:>6} {:>22}", "variant", "seed", "holdout_cross_entropy")
        .expect("write to string");
    for r in rows {
        writeln!(out, "{:<12} {:>6} {:>22.4}", r.variant, r.seed, r.holdout_cross_entropy)
            .expect("write to string");
    }
    out
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(), AppError> {
    let cfg = load_config(&args.config)?;
    let (streams, _) = load_streams(&args.archives)?;
    if streams.is_empty() {
        return Err(AppError::Data("archives contain no joinable chunks".into()));
    }
    let n_seeds = if args.seeds == 0 { 3 } else { args.seeds };
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| cfg.training.seed + i).collect();
    let rows = run_ablation(&streams, &cfg.training, &cfg.fugu.hidden, &seeds)?;
    let table = ablation_table(&rows);
    print!("{table}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        let path = out.join("ablation.txt");
        fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
