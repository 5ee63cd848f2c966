//! Bitrate-selection controllers: stochastic MPC over a transmission-time
//! distribution source, the harmonic-mean MPC baselines, buffer-based
//! control, and an exhaustive planning oracle used to verify the DP.

use std::collections::VecDeque;

use thiserror::Error;

use crate::domain::{advance_buffer, chunk_qoe, Chunk, ChunkVersion, PlaybackState, QoeWeights};
use crate::predictors::{
    bin_representative, discretize, hm_predict, PredictError, ThroughputHistory,
    TransmissionDistribution, TransportStats,
};

/// Default BBA reservoir (seconds of buffer below which only the smallest
/// version is fetched).
pub const BBA_RESERVOIR: f64 = 3.0;

/// Default BBA cushion top: 90% of the 15 s maximum buffer.
pub const BBA_CUSHION_TOP: f64 = 13.5;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("instance too large for exhaustive planning: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Predictor(#[from] PredictError),
    #[error("no upcoming chunks to plan over")]
    NoChunks,
}

/// Lookahead settings: number of future chunks and the buffer-grid width used
/// by the dynamic program.
#[derive(Debug, Clone, PartialEq)]
pub struct Horizon {
    pub steps: usize,
    pub buffer_bin: f64,
}

impl Default for Horizon {
    fn default() -> Self {
        Self { steps: 5, buffer_bin: 0.25 }
    }
}

/// Outcome of a planning call: the version to fetch next and the expected
/// total QoE of the optimal plan. `fallback` is set when the predictor failed
/// and the planner defaulted to the lowest-size version.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub version: usize,
    pub expected_qoe: f64,
    pub fallback: bool,
}

impl PlanResult {
    fn fallback() -> Self {
        Self { version: 0, expected_qoe: 0.0, fallback: true }
    }
}

/// Source of per-step transmission-time distributions for candidate versions.
///
/// `step` is the lookahead index (0 = the chunk being decided now). The
/// distributions are conditioned on observations made at decision time; they
/// are not rolled forward within the horizon.
pub trait StepPredictor {
    fn distribution(
        &self,
        step: usize,
        version: &ChunkVersion,
    ) -> Result<TransmissionDistribution, PredictError>;
}

impl<F> StepPredictor for F
where
    F: Fn(usize, &ChunkVersion) -> Result<TransmissionDistribution, PredictError>,
{
    fn distribution(
        &self,
        step: usize,
        version: &ChunkVersion,
    ) -> Result<TransmissionDistribution, PredictError> {
        self(step, version)
    }
}

/// Stochastic model-predictive planner.
///
/// Maximizes the expected sum of per-chunk QoE over the lookahead horizon by
/// value iteration over (step, discretized buffer, previously chosen
/// version), taking the expectation across the 21 transmission-time bins at
/// their representative times. States are explored by forward recursion with
/// memoization, so only buffers reachable from the start state are evaluated.
/// The decision-time buffer is used exactly at step 0; deeper buffers snap to
/// the grid. Within the horizon each step's variation penalty is charged
/// against the previous step's chosen quality, seeded with the last played
/// chunk. Ties prefer the lower version index.
pub fn mpc_plan(
    upcoming: &[Chunk],
    state: &PlaybackState,
    predictor: &dyn StepPredictor,
    weights: &QoeWeights,
    horizon: &Horizon,
) -> PlanResult {
    let steps = horizon.steps.min(upcoming.len());
    if steps == 0 {
        return PlanResult::fallback();
    }
    let dists = match collect_distributions(upcoming, steps, predictor) {
        Ok(d) => d,
        Err(_) => return PlanResult::fallback(),
    };

    let bin = horizon.buffer_bin;
    debug_assert!(
        (weights.max_buffer / bin - (weights.max_buffer / bin).round()).abs() < 1e-9,
        "buffer_bin should divide max_buffer evenly"
    );
    let levels = (weights.max_buffer / bin).round() as usize + 1;
    let stride = upcoming[..steps].iter().map(|c| c.versions.len()).max().unwrap_or(0) + 1;

    let mut dp = Dp {
        upcoming,
        dists: &dists,
        weights,
        bin,
        levels,
        stride,
        steps,
        seed_quality: state.last_quality,
        memo: (0..steps).map(|_| vec![None; levels * stride]).collect(),
    };

    let mut best_version = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (vi, version) in upcoming[0].versions.iter().enumerate() {
        let value = dp.action_value(0, state.buffer, state.last_quality, vi, version);
        if value > best_value {
            best_value = value;
            best_version = vi;
        }
    }
    PlanResult { version: best_version, expected_qoe: best_value, fallback: false }
}

fn collect_distributions(
    upcoming: &[Chunk],
    steps: usize,
    predictor: &dyn StepPredictor,
) -> Result<Vec<Vec<TransmissionDistribution>>, PredictError> {
    upcoming[..steps]
        .iter()
        .enumerate()
        .map(|(step, chunk)| {
            chunk.versions.iter().map(|v| predictor.distribution(step, v)).collect()
        })
        .collect()
}

struct Dp<'a> {
    upcoming: &'a [Chunk],
    dists: &'a [Vec<TransmissionDistribution>],
    weights: &'a QoeWeights,
    bin: f64,
    levels: usize,
    stride: usize,
    steps: usize,
    seed_quality: f64,
    memo: Vec<Vec<Option<f64>>>,
}

impl Dp<'_> {
    fn snap(&self, buffer: f64) -> usize {
        ((buffer / self.bin).round() as usize).min(self.levels - 1)
    }

    /// Expected QoE of choosing `version` at `step` with the given exact
    /// buffer, plus the optimal continuation value.
    fn action_value(
        &mut self,
        step: usize,
        buffer: f64,
        prev_quality: f64,
        version_idx: usize,
        version: &ChunkVersion,
    ) -> f64 {
        let mut acc = 0.0;
        // iterate over owned bin data to keep the borrow checker happy
        let probs = *self.dists[step][version_idx].probs();
        for (bin_idx, p) in probs.iter().copied().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let t = bin_representative(bin_idx).expect("bin in range");
            let qoe = chunk_qoe(version, prev_quality, t, buffer, self.weights);
            let (next_buffer, _) =
                advance_buffer(buffer, t, version.duration, self.weights.max_buffer);
            acc += p * (qoe + self.value(step + 1, self.snap(next_buffer), version_idx + 1));
        }
        acc
    }

    /// Optimal continuation value from a memoized grid state. `prev_idx` 0 is
    /// the pre-horizon seed; `1 + v` means version `v` of chunk `step - 1`.
    fn value(&mut self, step: usize, level: usize, prev_idx: usize) -> f64 {
        if step == self.steps {
            return 0.0;
        }
        if let Some(v) = self.memo[step][level * self.stride + prev_idx] {
            return v;
        }
        let prev_quality = if prev_idx == 0 {
            self.seed_quality
        } else {
            self.upcoming[step - 1].versions[prev_idx - 1].quality
        };
        let buffer = level as f64 * self.bin;
        let mut best = f64::NEG_INFINITY;
        let n_versions = self.upcoming[step].versions.len();
        for vi in 0..n_versions {
            let version = self.upcoming[step].versions[vi].clone();
            let value = self.action_value(step, buffer, prev_quality, vi, &version);
            if value > best {
                best = value;
            }
        }
        self.memo[step][level * self.stride + prev_idx] = Some(best);
        best
    }
}

/// Exhaustive planning oracle for small instances.
///
/// Recursively enumerates every action and every joint bin outcome with exact
/// (undiscretized) buffer arithmetic and returns the optimal first action.
/// Refuses instances beyond 4 steps, 4 versions per chunk, or 4 active bins
/// per distribution.
pub fn brute_force_plan(
    upcoming: &[Chunk],
    state: &PlaybackState,
    predictor: &dyn StepPredictor,
    weights: &QoeWeights,
    horizon: &Horizon,
) -> Result<PlanResult, PlanError> {
    let steps = horizon.steps.min(upcoming.len());
    if steps == 0 {
        return Err(PlanError::NoChunks);
    }
    if steps > 4 {
        return Err(PlanError::TooLarge(format!("{steps} steps")));
    }
    for chunk in &upcoming[..steps] {
        if chunk.versions.len() > 4 {
            return Err(PlanError::TooLarge(format!("{} versions", chunk.versions.len())));
        }
    }
    let dists = collect_distributions(upcoming, steps, predictor)?;
    for step_dists in &dists {
        for d in step_dists {
            let active = d.active().count();
            if active > 4 {
                return Err(PlanError::TooLarge(format!("{active} active bins")));
            }
        }
    }

    fn go(
        upcoming: &[Chunk],
        dists: &[Vec<TransmissionDistribution>],
        weights: &QoeWeights,
        steps: usize,
        step: usize,
        buffer: f64,
        prev_quality: f64,
    ) -> (f64, usize) {
        if step == steps {
            return (0.0, 0);
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_version = 0;
        for (vi, version) in upcoming[step].versions.iter().enumerate() {
            let mut acc = 0.0;
            for (bin_idx, p) in dists[step][vi].active() {
                let t = bin_representative(bin_idx).expect("bin in range");
                let qoe = chunk_qoe(version, prev_quality, t, buffer, weights);
                let (next_buffer, _) =
                    advance_buffer(buffer, t, version.duration, weights.max_buffer);
                let (cont, _) =
                    go(upcoming, dists, weights, steps, step + 1, next_buffer, version.quality);
                acc += p * (qoe + cont);
            }
            if acc > best {
                best = acc;
                best_version = vi;
            }
        }
        (best, best_version)
    }

    let (value, version) =
        go(upcoming, &dists, weights, steps, 0, state.buffer, state.last_quality);
    Ok(PlanResult { version, expected_qoe: value, fallback: false })
}

/// Per-root-action expected values from the exhaustive oracle, for margin
/// analysis in tests.
pub fn brute_force_action_values(
    upcoming: &[Chunk],
    state: &PlaybackState,
    predictor: &dyn StepPredictor,
    weights: &QoeWeights,
    horizon: &Horizon,
) -> Result<Vec<f64>, PlanError> {
    let steps = horizon.steps.min(upcoming.len());
    if steps == 0 {
        return Err(PlanError::NoChunks);
    }
    let dists = collect_distributions(upcoming, steps, predictor)?;
    let mut values = Vec::with_capacity(upcoming[0].versions.len());
    for (vi, version) in upcoming[0].versions.iter().enumerate() {
        let mut acc = 0.0;
        for (bin_idx, p) in dists[0][vi].active() {
            let t = bin_representative(bin_idx).expect("bin in range");
            let qoe = chunk_qoe(version, state.last_quality, t, state.buffer, weights);
            let (next_buffer, _) =
                advance_buffer(state.buffer, t, version.duration, weights.max_buffer);
            let sub = if steps == 1 {
                PlanResult { version: 0, expected_qoe: 0.0, fallback: false }
            } else {
                let next_state = PlaybackState {
                    buffer: next_buffer,
                    last_quality: version.quality,
                    playing: true,
                    cumulative_stall: 0.0,
                };
                brute_force_plan(&upcoming[1..], &next_state, &ShiftedPredictor(predictor), weights,
                    &Horizon { steps: steps - 1, ..horizon.clone() })?
            };
            acc += p * (qoe + sub.expected_qoe);
        }
        values.push(acc);
    }
    Ok(values)
}

/// Adapts a predictor to a horizon whose step indices start one later.
struct ShiftedPredictor<'a>(&'a dyn StepPredictor);

impl StepPredictor for ShiftedPredictor<'_> {
    fn distribution(
        &self,
        step: usize,
        version: &ChunkVersion,
    ) -> Result<TransmissionDistribution, PredictError> {
        self.0.distribution(step + 1, version)
    }
}

/// Point-mass distribution for a known throughput: every candidate's
/// transmission time is `size / rate`, discretized.
fn deterministic_predictor(rate: f64) -> impl StepPredictor {
    move |_step: usize, version: &ChunkVersion| {
        let t = version.size as f64 / rate;
        TransmissionDistribution::point_mass(discretize(t)?)
    }
}

/// MPC driven by the harmonic mean of the last five throughput samples.
///
/// With no samples yet, falls back to the transport delivery-rate estimate,
/// and to the lowest version when that is unavailable too.
pub fn mpc_hm_plan(
    upcoming: &[Chunk],
    state: &PlaybackState,
    history: &ThroughputHistory,
    stats: &TransportStats,
    weights: &QoeWeights,
    horizon: &Horizon,
) -> PlanResult {
    match cold_start_rate(history, stats) {
        Some(rate) => mpc_plan(upcoming, state, &deterministic_predictor(rate), weights, horizon),
        None => PlanResult::fallback(),
    }
}

fn cold_start_rate(history: &ThroughputHistory, stats: &TransportStats) -> Option<f64> {
    if history.is_empty() {
        if stats.delivery_rate > 0.0 {
            Some(stats.delivery_rate)
        } else {
            None
        }
    } else {
        Some(hm_predict(history).expect("history non-empty"))
    }
}

/// Rolling window of the last five relative throughput-prediction errors,
/// used by the robust MPC variant.
#[derive(Debug, Clone, Default)]
pub struct ErrorWindow {
    errors: VecDeque<f64>,
}

impl ErrorWindow {
    pub const WINDOW: usize = 5;

    pub fn new() -> Self {
        Self::default()
    }

    /// Records `|predicted - actual| / actual` for the latest chunk.
    pub fn push(&mut self, relative_error: f64) {
        debug_assert!(relative_error >= 0.0);
        if self.errors.len() == Self::WINDOW {
            self.errors.pop_front();
        }
        self.errors.push_back(relative_error);
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// MPC-HM with the predicted throughput deflated by the largest recent
/// relative prediction error: `rate / (1 + max_error)`.
pub fn robust_mpc_hm_plan(
    upcoming: &[Chunk],
    state: &PlaybackState,
    history: &ThroughputHistory,
    errors: &ErrorWindow,
    stats: &TransportStats,
    weights: &QoeWeights,
    horizon: &Horizon,
) -> PlanResult {
    match cold_start_rate(history, stats) {
        Some(rate) => {
            let deflated = rate / (1.0 + errors.max_error());
            mpc_plan(upcoming, state, &deterministic_predictor(deflated), weights, horizon)
        }
        None => PlanResult::fallback(),
    }
}

/// Size budget BBA allows at a given buffer level, interpolating between the
/// next chunk's own smallest and largest versions.
pub fn bba_size_budget(next: &Chunk, buffer: f64, reservoir: f64, cushion_top: f64) -> f64 {
    let min_size = next.min_size() as f64;
    let max_size = next.max_size() as f64;
    if buffer <= reservoir {
        min_size
    } else if buffer >= cushion_top {
        max_size
    } else {
        min_size + (buffer - reservoir) / (cushion_top - reservoir) * (max_size - min_size)
    }
}

/// Buffer-based control: picks the highest-quality version whose size fits
/// the buffer-dependent budget.
pub fn bba_select(
    next: &Chunk,
    state: &PlaybackState,
    reservoir: f64,
    cushion_top: f64,
) -> usize {
    debug_assert!(reservoir < cushion_top);
    let budget = bba_size_budget(next, state.buffer, reservoir, cushion_top);
    let mut best: Option<usize> = None;
    for (i, v) in next.versions.iter().enumerate() {
        if v.size as f64 <= budget {
            match best {
                Some(j) if v.quality <= next.versions[j].quality => {}
                _ => best = Some(i),
            }
        }
    }
    best.unwrap_or(0)
}
