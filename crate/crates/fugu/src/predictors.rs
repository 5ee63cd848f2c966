//! Transmission-time prediction: the discretized bin scheme, the neural
//! transmission-time predictor (TTP) and its ablated variants, and the
//! harmonic-mean throughput estimator used by the classical controllers.

use std::collections::VecDeque;

use thiserror::Error;

use crate::nn::{self, Mlp, NnError};

/// Number of discretized transmission-time bins.
pub const TRANSMISSION_BINS: usize = 21;

/// Number of past chunks fed to the predictor.
pub const HISTORY_LEN: usize = 8;

/// Input width of the single-step TTP: 8 sizes + 8 times + 5 transport
/// statistics + candidate size.
pub const TTP_INPUT_DIM: usize = 2 * HISTORY_LEN + 5 + 1;

/// Input width of the throughput-only ablation (no candidate size).
pub const THROUGHPUT_INPUT_DIM: usize = TTP_INPUT_DIM - 1;

/// Number of discretized throughput bins for the throughput-only ablation.
pub const RATE_BINS: usize = 21;

const BYTES_PER_MB: f64 = 1e6;
const PACKET_SCALE: f64 = 1e-3;

/// Throughput-bin geometry: representatives spaced geometrically over
/// [0.05, 50] MB/s.
const RATE_MIN: f64 = 0.05 * BYTES_PER_MB;
const RATE_MAX: f64 = 50.0 * BYTES_PER_MB;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("negative transmission time {0}")]
    NegativeTime(f64),
    #[error("bin index {0} out of range")]
    BadBin(usize),
    #[error("no throughput samples available")]
    NoSamples,
    #[error("invalid probability vector: {0}")]
    BadDistribution(String),
    #[error("predictor expects input dim {expected}, model has {got}")]
    WrongModel { expected: usize, got: usize },
    #[error("unknown predictor variant tag {0:?}")]
    UnknownVariant(String),
    #[error("predictor parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Maps a transmission time in seconds to its bin index.
///
/// Bin 0 covers [0, 0.25); bins 1..=19 are 0.5 s wide starting at 0.25;
/// bin 20 covers [9.75, inf).
pub fn discretize(t: f64) -> Result<usize, PredictError> {
    if !(t >= 0.0) {
        return Err(PredictError::NegativeTime(t));
    }
    if t < 0.25 {
        Ok(0)
    } else if t >= 9.75 {
        Ok(TRANSMISSION_BINS - 1)
    } else {
        Ok(((t - 0.25) / 0.5) as usize + 1)
    }
}

/// Representative time of a bin: the midpoint, with 10 s standing in for the
/// unbounded final bin.
pub fn bin_representative(bin: usize) -> Result<f64, PredictError> {
    match bin {
        0 => Ok(0.125),
        b if b < TRANSMISSION_BINS - 1 => Ok(0.5 * b as f64),
        b if b == TRANSMISSION_BINS - 1 => Ok(10.0),
        b => Err(PredictError::BadBin(b)),
    }
}

/// Probability mass over the 21 transmission-time bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionDistribution {
    probs: [f64; TRANSMISSION_BINS],
}

impl TransmissionDistribution {
    pub fn new(probs: [f64; TRANSMISSION_BINS]) -> Result<Self, PredictError> {
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(PredictError::BadDistribution("negative or NaN entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PredictError::BadDistribution(format!("sum {sum} not 1")));
        }
        Ok(Self { probs })
    }

    pub fn from_vec(probs: Vec<f64>) -> Result<Self, PredictError> {
        let arr: [f64; TRANSMISSION_BINS] = probs
            .try_into()
            .map_err(|v: Vec<f64>| PredictError::BadDistribution(format!("{} bins", v.len())))?;
        Self::new(arr)
    }

    pub fn point_mass(bin: usize) -> Result<Self, PredictError> {
        if bin >= TRANSMISSION_BINS {
            return Err(PredictError::BadBin(bin));
        }
        let mut probs = [0.0; TRANSMISSION_BINS];
        probs[bin] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self { probs: [1.0 / TRANSMISSION_BINS as f64; TRANSMISSION_BINS] }
    }

    pub fn probs(&self) -> &[f64; TRANSMISSION_BINS] {
        &self.probs
    }

    /// Bins carrying nonzero probability.
    pub fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().copied().enumerate().filter(|&(_, p)| p > 0.0)
    }

    /// Highest-probability bin, ties broken toward the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Sender-side transport statistics fed to the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransportStats {
    /// Congestion window, packets.
    pub cwnd: f64,
    /// Unacknowledged packets in flight.
    pub in_flight: f64,
    /// Minimum observed RTT, seconds.
    pub min_rtt: f64,
    /// Smoothed RTT estimate, seconds.
    pub srtt: f64,
    /// Delivery-rate estimate, bytes per second.
    pub delivery_rate: f64,
}

/// Predictor input: recent chunk history, transport statistics, and the
/// candidate chunk size under consideration.
///
/// History slots run oldest to newest and are right-aligned: the most recent
/// chunk always occupies slot `HISTORY_LEN - 1`. Missing slots are zero with
/// `valid` cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct TtpInput {
    pub past_sizes: [f64; HISTORY_LEN],
    pub past_times: [f64; HISTORY_LEN],
    pub valid: [bool; HISTORY_LEN],
    pub stats: TransportStats,
    pub candidate_size: f64,
}

impl TtpInput {
    /// Builds an input from up to the last `HISTORY_LEN` (size, time) pairs,
    /// ordered oldest to newest.
    pub fn new(history: &[(f64, f64)], stats: TransportStats, candidate_size: f64) -> Self {
        let mut past_sizes = [0.0; HISTORY_LEN];
        let mut past_times = [0.0; HISTORY_LEN];
        let mut valid = [false; HISTORY_LEN];
        let tail = &history[history.len().saturating_sub(HISTORY_LEN)..];
        let offset = HISTORY_LEN - tail.len();
        for (i, &(size, time)) in tail.iter().enumerate() {
            past_sizes[offset + i] = size;
            past_times[offset + i] = time;
            valid[offset + i] = true;
        }
        Self { past_sizes, past_times, valid, stats, candidate_size }
    }

    pub fn with_candidate(&self, candidate_size: f64) -> Self {
        Self { candidate_size, ..self.clone() }
    }
}

/// Scales the transport statistics into O(1) feature coordinates:
/// packet counts in thousands, rates in MB/s, times in seconds.
fn push_stats(out: &mut Vec<f64>, stats: &TransportStats) {
    out.push(stats.cwnd * PACKET_SCALE);
    out.push(stats.in_flight * PACKET_SCALE);
    out.push(stats.min_rtt);
    out.push(stats.srtt);
    out.push(stats.delivery_rate / BYTES_PER_MB);
}

/// Normalized single-step feature vector: 8 past sizes (MB), 8 past times (s),
/// 5 transport statistics, candidate size (MB).
pub fn build_ttp_input(input: &TtpInput) -> Vec<f64> {
    let mut out = Vec::with_capacity(TTP_INPUT_DIM);
    out.extend(input.past_sizes.iter().map(|s| s / BYTES_PER_MB));
    out.extend_from_slice(&input.past_times);
    push_stats(&mut out, &input.stats);
    out.push(input.candidate_size / BYTES_PER_MB);
    out
}

/// Horizon-aware feature vector: the single-step layout plus the lookahead
/// step scaled by the horizon length, making one shared network equivalent to
/// a bank of per-step predictors.
pub fn build_ttp_input_step(input: &TtpInput, step: usize, horizon_steps: usize) -> Vec<f64> {
    let mut out = build_ttp_input(input);
    out.push(step as f64 / horizon_steps.max(1) as f64);
    out
}

/// Feature vector of the throughput-only ablation: the candidate size is
/// withheld, everything else matches [`build_ttp_input`].
pub fn build_throughput_input(input: &TtpInput) -> Vec<f64> {
    let mut out = Vec::with_capacity(THROUGHPUT_INPUT_DIM);
    out.extend(input.past_sizes.iter().map(|s| s / BYTES_PER_MB));
    out.extend_from_slice(&input.past_times);
    push_stats(&mut out, &input.stats);
    out
}

/// Representative delivery rate (bytes/s) of a throughput bin.
pub fn rate_representative(bin: usize) -> Result<f64, PredictError> {
    if bin >= RATE_BINS {
        return Err(PredictError::BadBin(bin));
    }
    let ratio = RATE_MAX / RATE_MIN;
    Ok(RATE_MIN * ratio.powf(bin as f64 / (RATE_BINS - 1) as f64))
}

/// Maps a delivery rate to the nearest throughput bin in log space.
pub fn discretize_rate(rate: f64) -> usize {
    if !(rate > 0.0) {
        return 0;
    }
    let ratio = RATE_MAX / RATE_MIN;
    let pos = (rate / RATE_MIN).ln() / ratio.ln() * (RATE_BINS - 1) as f64;
    pos.round().clamp(0.0, (RATE_BINS - 1) as f64) as usize
}

/// Transmission time implied by a delivery rate for a proposed size.
pub fn transmission_time_for(size_bytes: f64, rate: f64) -> f64 {
    size_bytes / rate
}

/// Runs the full TTP: probability distribution over transmission-time bins.
pub fn ttp_predict(net: &Mlp, input: &TtpInput) -> Result<TransmissionDistribution, PredictError> {
    let features = build_ttp_input(input);
    distribution_from_logits(net, &features)
}

fn distribution_from_logits(
    net: &Mlp,
    features: &[f64],
) -> Result<TransmissionDistribution, PredictError> {
    if net.output_dim() != TRANSMISSION_BINS {
        return Err(PredictError::WrongModel {
            expected: TRANSMISSION_BINS,
            got: net.output_dim(),
        });
    }
    let logits = net.forward(features)?;
    TransmissionDistribution::from_vec(nn::softmax(&logits))
}

/// Point-estimate use of the TTP: the representative time of the modal bin.
pub fn ttp_point_predict(net: &Mlp, input: &TtpInput) -> Result<f64, PredictError> {
    let dist = ttp_predict(net, input)?;
    bin_representative(dist.argmax())
}

/// Runs the throughput-only ablation: predicts a throughput distribution
/// (ignoring the candidate size), then converts it to a transmission-time
/// distribution for the proposed size by dividing by each bin's
/// representative rate.
pub fn throughput_only_predict(
    net: &Mlp,
    input: &TtpInput,
) -> Result<TransmissionDistribution, PredictError> {
    let rate_probs = throughput_rate_probs(net, input)?;
    let mut probs = [0.0; TRANSMISSION_BINS];
    for (bin, p) in rate_probs.iter().enumerate() {
        if *p > 0.0 {
            let rate = rate_representative(bin)?;
            let t = transmission_time_for(input.candidate_size, rate);
            probs[discretize(t)?] += p;
        }
    }
    TransmissionDistribution::new(probs)
}

/// Raw throughput-bin probabilities of the ablation network.
pub fn throughput_rate_probs(net: &Mlp, input: &TtpInput) -> Result<Vec<f64>, PredictError> {
    if net.output_dim() != RATE_BINS {
        return Err(PredictError::WrongModel { expected: RATE_BINS, got: net.output_dim() });
    }
    let features = build_throughput_input(input);
    let logits = net.forward(&features)?;
    Ok(nn::softmax(&logits))
}

/// Rolling window of the last five per-chunk throughput samples.
#[derive(Debug, Clone, Default)]
pub struct ThroughputHistory {
    samples: VecDeque<f64>,
}

impl ThroughputHistory {
    pub const WINDOW: usize = 5;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes_per_second: f64) {
        debug_assert!(bytes_per_second > 0.0);
        if self.samples.len() == Self::WINDOW {
            self.samples.pop_front();
        }
        self.samples.push_back(bytes_per_second);
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().copied()
    }
}

/// Harmonic mean of the available throughput samples (up to five).
pub fn hm_predict(history: &ThroughputHistory) -> Result<f64, PredictError> {
    if history.is_empty() {
        return Err(PredictError::NoSamples);
    }
    let n = history.len() as f64;
    let recip_sum: f64 = history.samples().map(|x| 1.0 / x).sum();
    Ok(n / recip_sum)
}

// ---------------------------------------------------------------------------
// Predictor wrapper: ties a trained network to its variant tag and horizon
// mode, and handles serialization.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtpVariant {
    /// Probabilistic transmission-time predictor (the real thing).
    Full,
    /// Same trained network, collapsed to its modal bin at query time.
    Point,
    /// Predicts throughput bins without seeing the candidate size.
    ThroughputOnly,
    /// No hidden layers: multinomial logistic regression over the same inputs.
    Linear,
}

impl TtpVariant {
    pub fn tag(&self) -> &'static str {
        match self {
            TtpVariant::Full => "full",
            TtpVariant::Point => "point",
            TtpVariant::ThroughputOnly => "throughput-only",
            TtpVariant::Linear => "linear",
        }
    }

    pub fn parse(tag: &str) -> Result<Self, PredictError> {
        match tag {
            "full" => Ok(TtpVariant::Full),
            "point" => Ok(TtpVariant::Point),
            "throughput-only" => Ok(TtpVariant::ThroughputOnly),
            "linear" => Ok(TtpVariant::Linear),
            other => Err(PredictError::UnknownVariant(other.to_string())),
        }
    }
}

/// A trained predictor plus the metadata needed to query and persist it.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub variant: TtpVariant,
    /// Whether the network takes the extra lookahead-step feature.
    pub horizon_aware: bool,
    pub net: Mlp,
}

impl Predictor {
    pub fn new(variant: TtpVariant, horizon_aware: bool, net: Mlp) -> Result<Self, PredictError> {
        let p = Self { variant, horizon_aware, net };
        p.validate()?;
        Ok(p)
    }

    pub fn expected_input_dim(variant: TtpVariant, horizon_aware: bool) -> usize {
        let base = match variant {
            TtpVariant::ThroughputOnly => THROUGHPUT_INPUT_DIM,
            _ => TTP_INPUT_DIM,
        };
        base + horizon_aware as usize
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        let expected = Self::expected_input_dim(self.variant, self.horizon_aware);
        if self.net.input_dim() != expected {
            return Err(PredictError::WrongModel { expected, got: self.net.input_dim() });
        }
        let out = match self.variant {
            TtpVariant::ThroughputOnly => RATE_BINS,
            _ => TRANSMISSION_BINS,
        };
        if self.net.output_dim() != out {
            return Err(PredictError::WrongModel { expected: out, got: self.net.output_dim() });
        }
        Ok(())
    }

    /// Transmission-time distribution for one lookahead step.
    pub fn distribution(
        &self,
        input: &TtpInput,
        step: usize,
        horizon_steps: usize,
    ) -> Result<TransmissionDistribution, PredictError> {
        match self.variant {
            TtpVariant::Full | TtpVariant::Linear => {
                let features = if self.horizon_aware {
                    build_ttp_input_step(input, step, horizon_steps)
                } else {
                    build_ttp_input(input)
                };
                distribution_from_logits(&self.net, &features)
            }
            TtpVariant::Point => {
                let features = if self.horizon_aware {
                    build_ttp_input_step(input, step, horizon_steps)
                } else {
                    build_ttp_input(input)
                };
                let dist = distribution_from_logits(&self.net, &features)?;
                TransmissionDistribution::point_mass(dist.argmax())
            }
            TtpVariant::ThroughputOnly => {
                if self.horizon_aware {
                    let mut features = build_throughput_input(input);
                    features.push(step as f64 / horizon_steps.max(1) as f64);
                    let rate_logits = self.net.forward(&features)?;
                    let rate_probs = nn::softmax(&rate_logits);
                    let mut probs = [0.0; TRANSMISSION_BINS];
                    for (bin, p) in rate_probs.iter().enumerate() {
                        if *p > 0.0 {
                            let rate = rate_representative(bin)?;
                            probs[discretize(transmission_time_for(input.candidate_size, rate))?] += p;
                        }
                    }
                    TransmissionDistribution::new(probs)
                } else {
                    throughput_only_predict(&self.net, input)
                }
            }
        }
    }

    pub fn save(&self) -> String {
        format!(
            "ttp v1\nvariant {}\nhorizon-aware {}\n{}",
            self.variant.tag(),
            self.horizon_aware as u8,
            nn::save_model(&self.net)
        )
    }

    pub fn load(text: &str) -> Result<Self, PredictError> {
        let mut lines = text.splitn(4, '\n');
        let header = lines.next().unwrap_or("");
        if header.trim() != "ttp v1" {
            return Err(PredictError::Parse("missing ttp header".into()));
        }
        let variant_line = lines.next().unwrap_or("");
        let variant = variant_line
            .strip_prefix("variant ")
            .map(str::trim)
            .ok_or_else(|| PredictError::Parse("missing variant line".into()))
            .and_then(TtpVariant::parse)?;
        let horizon_line = lines.next().unwrap_or("");
        let horizon_aware = match horizon_line.strip_prefix("horizon-aware ").map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(PredictError::Parse("missing horizon-aware line".into())),
        };
        let net = nn::load_model(lines.next().unwrap_or(""))?;
        Self::new(variant, horizon_aware, net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{train, MlpSpec, TrainConfig, TrainSample};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discretize_matches_published_bins() {
        assert_eq!(discretize(0.0).unwrap(), 0);
        assert_eq!(discretize(0.3).unwrap(), 1);
        assert_eq!(discretize(10.2).unwrap(), 20);
        // boundary sweep
        assert_eq!(discretize(0.2499).unwrap(), 0);
        assert_eq!(discretize(0.25).unwrap(), 1);
        assert_eq!(discretize(0.7499).unwrap(), 1);
        assert_eq!(discretize(0.75).unwrap(), 2);
        assert_eq!(discretize(9.7499).unwrap(), 19);
        assert_eq!(discretize(9.75).unwrap(), 20);
        assert!(discretize(-0.1).is_err());
    }

    #[test]
    fn bin_representatives() {
        assert_eq!(bin_representative(0).unwrap(), 0.125);
        assert_eq!(bin_representative(1).unwrap(), 0.5);
        assert_eq!(bin_representative(3).unwrap(), 1.5);
        assert_eq!(bin_representative(20).unwrap(), 10.0);
        assert!(bin_representative(21).is_err());
    }

    #[test]
    fn representative_round_trips_through_discretize() {
        for bin in 0..TRANSMISSION_BINS {
            let t = bin_representative(bin).unwrap();
            assert_eq!(discretize(t).unwrap(), bin, "bin {bin} (t={t})");
        }
    }

    #[test]
    fn rate_bins_round_trip() {
        for bin in 0..RATE_BINS {
            let r = rate_representative(bin).unwrap();
            assert_eq!(discretize_rate(r), bin, "bin {bin} (rate={r})");
        }
        assert_eq!(discretize_rate(0.0), 0);
        assert_eq!(discretize_rate(1e12), RATE_BINS - 1);
    }

    #[test]
    fn ttp_input_layout() {
        // Empty history, zero stats, 1 MB candidate: 21 zeros then 1.0.
        let input = TtpInput::new(&[], TransportStats::default(), 1e6);
        let v = build_ttp_input(&input);
        assert_eq!(v.len(), TTP_INPUT_DIM);
        assert!(v[..21].iter().all(|&x| x == 0.0));
        assert_eq!(v[21], 1.0);

        // Constant history fills equal slots.
        let history = vec![(5e5, 0.5); 8];
        let full = TtpInput::new(&history, TransportStats::default(), 1e6);
        let fv = build_ttp_input(&full);
        assert!(fv[..8].iter().all(|&x| (x - 0.5).abs() < 1e-12));
        assert!(fv[8..16].iter().all(|&x| (x - 0.5).abs() < 1e-12));
        assert!(full.valid.iter().all(|&b| b));

        // Candidate size only affects the last coordinate.
        let other = full.with_candidate(2e6);
        let ov = build_ttp_input(&other);
        assert_eq!(&fv[..21], &ov[..21]);
        assert_ne!(fv[21], ov[21]);
    }

    #[test]
    fn ttp_input_right_aligns_partial_history() {
        let input = TtpInput::new(&[(1e6, 1.0), (2e6, 2.0)], TransportStats::default(), 1e6);
        assert!(!input.valid[5]);
        assert!(input.valid[6] && input.valid[7]);
        assert_eq!(input.past_sizes[7], 2e6);
        assert_eq!(input.past_times[6], 1.0);
        assert_eq!(input.past_sizes[0], 0.0);
    }

    #[test]
    fn horizon_feature_appends_scaled_step() {
        let input = TtpInput::new(&[], TransportStats::default(), 1e6);
        let v = build_ttp_input_step(&input, 3, 5);
        assert_eq!(v.len(), TTP_INPUT_DIM + 1);
        assert_relative_eq!(v[TTP_INPUT_DIM], 0.6);
    }

    #[test]
    fn zero_net_predicts_uniform() {
        let mut net = Mlp::new(MlpSpec::new(TTP_INPUT_DIM, vec![], TRANSMISSION_BINS, 0)).unwrap();
        for l in net.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let input = TtpInput::new(&[], TransportStats::default(), 1e6);
        let dist = ttp_predict(&net, &input).unwrap();
        for &p in dist.probs() {
            assert_relative_eq!(p, 1.0 / 21.0, max_relative = 1e-12);
        }
        // Uniform ties break toward the lowest bin.
        assert_eq!(ttp_point_predict(&net, &input).unwrap(), 0.125);
    }

    #[test]
    fn distribution_probabilities_always_sum_to_one() {
        let net = Mlp::new(MlpSpec::new(TTP_INPUT_DIM, vec![8], TRANSMISSION_BINS, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let history: Vec<(f64, f64)> = (0..rng.gen_range(0..=8))
                .map(|_| (rng.gen_range(1e5..3e6), rng.gen_range(0.01..8.0)))
                .collect();
            let stats = TransportStats {
                cwnd: rng.gen_range(0.0..500.0),
                in_flight: rng.gen_range(0.0..500.0),
                min_rtt: rng.gen_range(0.0..0.2),
                srtt: rng.gen_range(0.0..0.3),
                delivery_rate: rng.gen_range(0.0..5e6),
            };
            let input = TtpInput::new(&history, stats, rng.gen_range(1e5..4e6));
            let dist = ttp_predict(&net, &input).unwrap();
            assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn hm_predict_known_values() {
        let mut h = ThroughputHistory::new();
        for _ in 0..5 {
            h.push(1e6);
        }
        assert_relative_eq!(hm_predict(&h).unwrap(), 1e6);

        let mut h = ThroughputHistory::new();
        for s in [1.0, 2.0, 4.0, 4.0, 4.0] {
            h.push(s * 1e6);
        }
        assert_relative_eq!(hm_predict(&h).unwrap(), 5e6 / 2.25, max_relative = 1e-12);

        let mut h = ThroughputHistory::new();
        h.push(2e6);
        h.push(2e6);
        assert_relative_eq!(hm_predict(&h).unwrap(), 2e6);

        assert!(hm_predict(&ThroughputHistory::new()).is_err());
    }

    #[test]
    fn hm_never_exceeds_arithmetic_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut h = ThroughputHistory::new();
            let n = rng.gen_range(1..=5);
            let mut sum = 0.0;
            for _ in 0..n {
                let x = rng.gen_range(1e4..1e8);
                h.push(x);
                sum += x;
            }
            let hm = hm_predict(&h).unwrap();
            assert!(hm <= sum / n as f64 + 1e-6);
        }
    }

    #[test]
    fn hm_window_keeps_last_five() {
        let mut h = ThroughputHistory::new();
        for i in 1..=7 {
            h.push(i as f64);
        }
        let kept: Vec<f64> = h.samples().collect();
        assert_eq!(kept, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn point_mass_and_argmax_ties() {
        let d = TransmissionDistribution::point_mass(3).unwrap();
        assert_eq!(d.argmax(), 3);
        assert_eq!(bin_representative(d.argmax()).unwrap(), 1.5);
        let u = TransmissionDistribution::uniform();
        assert_eq!(u.argmax(), 0);
    }

    #[test]
    fn throughput_only_division_and_size_independence() {
        // Mass concentrated on one rate bin: times scale exactly as sizes.
        let rate = rate_representative(10).unwrap();
        let t1 = transmission_time_for(0.5e6, rate);
        let t2 = transmission_time_for(1.0e6, rate);
        assert_relative_eq!(t2 / t1, 2.0, max_relative = 1e-12);
        assert_relative_eq!(transmission_time_for(0.5e6, 1e6), 0.5);

        // The rate distribution itself ignores the candidate size.
        let net =
            Mlp::new(MlpSpec::new(THROUGHPUT_INPUT_DIM, vec![8], RATE_BINS, 4)).unwrap();
        let history = vec![(1e6, 1.0); 4];
        let a = TtpInput::new(&history, TransportStats::default(), 0.5e6);
        let b = a.with_candidate(1.0e6);
        let pa = throughput_rate_probs(&net, &a).unwrap();
        let pb = throughput_rate_probs(&net, &b).unwrap();
        assert_eq!(pa, pb);
        // and the induced time distributions are valid
        let da = throughput_only_predict(&net, &a).unwrap();
        assert!((da.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predictor_round_trip_with_variant_tags() {
        for (variant, in_dim, out_dim) in [
            (TtpVariant::Full, TTP_INPUT_DIM, TRANSMISSION_BINS),
            (TtpVariant::Point, TTP_INPUT_DIM, TRANSMISSION_BINS),
            (TtpVariant::ThroughputOnly, THROUGHPUT_INPUT_DIM, RATE_BINS),
            (TtpVariant::Linear, TTP_INPUT_DIM, TRANSMISSION_BINS),
        ] {
            let net = Mlp::new(MlpSpec::new(in_dim, vec![6], out_dim, 8)).unwrap();
            let p = Predictor::new(variant, false, net).unwrap();
            let text = p.save();
            let back = Predictor::load(&text).unwrap();
            assert_eq!(p, back);
            assert_eq!(back.save(), text);
        }
    }

    #[test]
    fn predictor_rejects_mismatched_model() {
        let net = Mlp::new(MlpSpec::new(10, vec![], TRANSMISSION_BINS, 0)).unwrap();
        assert!(Predictor::new(TtpVariant::Full, false, net).is_err());
    }

    /// Trains a TTP on a deterministic size->time mapping and checks the
    /// predicted mass lands on the true bin, probing bin interiors (mass on
    /// boundary inputs is legitimately split).
    #[test]
    fn trained_ttp_concentrates_on_true_bin() {
        let rate = 1e6; // bytes per second, deterministic
        let stats = TransportStats {
            cwnd: 40.0,
            in_flight: 20.0,
            min_rtt: 0.04,
            srtt: 0.04,
            delivery_rate: rate,
        };
        let make_input = |rng: &mut ChaCha8Rng, size: f64| {
            let history: Vec<(f64, f64)> = (0..8)
                .map(|_| {
                    let s = rng.gen_range(8e5..1.2e6);
                    (s, s / rate)
                })
                .collect();
            TtpInput::new(&history, stats, size)
        };

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut dataset = Vec::new();
        for _ in 0..3000 {
            let size = rng.gen_range(2e5..4e6);
            let input = make_input(&mut rng, size);
            dataset.push(TrainSample {
                input: build_ttp_input(&input),
                target_bin: discretize(size / rate).unwrap(),
                weight: 1.0,
            });
        }
        let net = Mlp::new(MlpSpec::new(TTP_INPUT_DIM, vec![32, 32], TRANSMISSION_BINS, 1)).unwrap();
        let cfg = TrainConfig { learning_rate: 0.2, batch_size: 32, epochs: 600, seed: 2 };
        let (model, report) = train(&net, &dataset, &cfg, None).unwrap();
        assert!(report.final_epoch_loss < report.first_epoch_loss);

        let mut hits = 0;
        let mut total = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for bin in 1..8 {
            let center = bin_representative(bin).unwrap();
            for _ in 0..15 {
                // stay in the middle 60% of the bin
                let t = center + rng.gen_range(-0.12..0.12);
                let input = make_input(&mut rng, t * rate);
                let dist = ttp_predict(&model, &input).unwrap();
                total += 1;
                if dist.probs()[bin] >= 0.9 {
                    hits += 1;
                }
            }
        }
        assert!(hits * 10 >= total * 9, "only {hits}/{total} inputs had >=90% mass on the true bin");
    }
}
