//! Randomized experiment harness: draws a common pool of (trace, watch
//! duration, start offset) session descriptors, assigns them to schemes by
//! seeded shuffle, runs the sessions, and collects per-arm telemetry.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;

use crate::control::Horizon;
use crate::data::Archive;
use crate::domain::QoeWeights;

use super::session::{run_session, Scheme, SessionConfig, SessionResult};
use super::trace::NetworkTrace;
use super::video::VideoSpec;

/// Log-normal watch-duration model (watch times are heavy-tailed).
#[derive(Debug, Clone)]
pub struct WatchModel {
    pub median_secs: f64,
    pub sigma: f64,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl Default for WatchModel {
    fn default() -> Self {
        Self { median_secs: 300.0, sigma: 1.0, min_secs: 10.0, max_secs: 7200.0 }
    }
}

impl WatchModel {
    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        let dist = LogNormal::new(self.median_secs.ln(), self.sigma).expect("valid sigma");
        dist.sample(rng).clamp(self.min_secs, self.max_secs)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub schemes: Vec<Scheme>,
    pub traces: Vec<(String, NetworkTrace)>,
    pub video: VideoSpec,
    pub sessions_per_arm: usize,
    pub seed: u64,
    pub weights: QoeWeights,
    pub horizon: Horizon,
    pub watch: WatchModel,
    /// Epoch assigned to session 0.
    pub start_epoch_base: f64,
    /// Sessions are spread across this many consecutive days.
    pub epoch_days: u32,
    pub stall_cap: f64,
}

impl ExperimentConfig {
    pub fn new(
        schemes: Vec<Scheme>,
        traces: Vec<(String, NetworkTrace)>,
        video: VideoSpec,
        sessions_per_arm: usize,
        seed: u64,
    ) -> Self {
        Self {
            schemes,
            traces,
            video,
            sessions_per_arm,
            seed,
            weights: QoeWeights::default(),
            horizon: Horizon::default(),
            watch: WatchModel::default(),
            start_epoch_base: 1.6e9,
            epoch_days: 1,
            stall_cap: 10.0,
        }
    }
}

/// One session's draw from the common pool plus its scheme assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub session: u64,
    pub scheme: String,
    pub expt_id: u64,
    pub trace: String,
    pub watch_duration: f64,
    pub start_chunk: usize,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    /// Telemetry per scheme name, sessions concatenated in session order.
    pub archives: BTreeMap<String, Archive>,
    /// Session results per scheme name, in session order.
    pub results: BTreeMap<String, Vec<SessionResult>>,
    pub assignments: Vec<Assignment>,
}

impl ExperimentOutcome {
    pub fn aborted_sessions(&self) -> usize {
        self.results.values().flatten().filter(|r| r.aborted.is_some()).count()
    }
}

/// Runs the full randomized experiment. Deterministic per seed: the pool of
/// (trace, duration, offset) descriptors is drawn before scheme labels are
/// shuffled over it, sessions execute independently, and outputs are merged
/// in session order regardless of execution order.
pub fn run_experiment(cfg: &ExperimentConfig) -> ExperimentOutcome {
    assert!(!cfg.schemes.is_empty(), "need at least one scheme");
    assert!(!cfg.traces.is_empty(), "need at least one trace");
    let total = cfg.sessions_per_arm * cfg.schemes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // common pool first, so it is identical for any same-sized scheme set
    struct PoolEntry {
        trace_idx: usize,
        watch_duration: f64,
        start_chunk: usize,
    }
    let chunk_duration = cfg.video.chunk_duration;
    let total_chunks = cfg.video.total_chunks();
    let pool: Vec<PoolEntry> = (0..total)
        .map(|_| {
            let trace_idx = rng.gen_range(0..cfg.traces.len());
            let watch_duration = cfg.watch.draw(&mut rng);
            let needed = (watch_duration / chunk_duration).ceil() as usize + 8;
            let slack = total_chunks.saturating_sub(needed);
            let start_chunk = if slack > 0 { rng.gen_range(0..slack) } else { 0 };
            PoolEntry { trace_idx, watch_duration, start_chunk }
        })
        .collect();

    let mut labels: Vec<usize> =
        (0..cfg.schemes.len()).flat_map(|s| std::iter::repeat(s).take(cfg.sessions_per_arm)).collect();
    labels.shuffle(&mut rng);

    let sessions: Vec<(SessionConfig, usize)> = pool
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(k, (entry, &arm))| {
            let day = k as u32 % cfg.epoch_days.max(1);
            let config = SessionConfig {
                scheme: cfg.schemes[arm].clone(),
                weights: cfg.weights.clone(),
                horizon: cfg.horizon.clone(),
                watch_duration: entry.watch_duration,
                stream_id: k as u64,
                expt_id: arm as u64,
                start_epoch: cfg.start_epoch_base + day as f64 * 86_400.0 + k as f64 * 10.0,
                start_chunk: entry.start_chunk,
                stall_cap: cfg.stall_cap,
            };
            (config, entry.trace_idx)
        })
        .collect();

    let runs: Vec<(SessionResult, Archive)> = sessions
        .par_iter()
        .map(|(config, trace_idx)| run_session(config, &cfg.traces[*trace_idx].1, &cfg.video))
        .collect();

    let mut archives: BTreeMap<String, Archive> = BTreeMap::new();
    let mut results: BTreeMap<String, Vec<SessionResult>> = BTreeMap::new();
    let mut assignments = Vec::with_capacity(total);
    for (k, ((config, trace_idx), (result, archive))) in
        sessions.iter().zip(runs.into_iter()).enumerate()
    {
        let name = config.scheme.name();
        let merged = archives.entry(name.clone()).or_default();
        merged.sent.extend(archive.sent);
        merged.acked.extend(archive.acked);
        merged.buffer.extend(archive.buffer);
        results.entry(name.clone()).or_default().push(result);
        assignments.push(Assignment {
            session: k as u64,
            scheme: name,
            expt_id: config.expt_id,
            trace: cfg.traces[*trace_idx].0.clone(),
            watch_duration: config.watch_duration,
            start_chunk: config.start_chunk,
        });
    }

    ExperimentOutcome { archives, results, assignments }
}

/// Assignment log in CSV form, one row per session.
pub fn assignment_log_csv(assignments: &[Assignment]) -> String {
    let mut out = String::from("session,scheme,expt_id,trace,watch_duration,start_chunk\n");
    for a in assignments {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            a.session, a.scheme, a.expt_id, a.trace, a.watch_duration, a.start_chunk
        )
        .expect("write to string");
    }
    out
}
