//! Synthetic two-state capacity traces: square waves alternating between a
//! high and a low regime with exponential dwell times. The regime switches
//! are what give predictors something to hedge against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::trace::{NetworkTrace, DEFAULT_BASE_DELAY};

#[derive(Debug, Clone)]
pub struct SynthTraceConfig {
    pub count: usize,
    /// Length of generated breakpoints, seconds (the final capacity holds
    /// beyond it).
    pub duration_secs: f64,
    /// High-regime capacity range, bytes/s.
    pub high_range: (f64, f64),
    /// Low-regime capacity range, bytes/s.
    pub low_range: (f64, f64),
    /// Probability that a low period is a deep outage instead of an ordinary
    /// dip; zero disables outages.
    pub outage_prob: f64,
    /// Outage capacity range, bytes/s.
    pub outage_range: (f64, f64),
    /// Mean dwell in the high regime, seconds.
    pub dwell_high_mean: f64,
    /// Mean dwell in the low regime, seconds.
    pub dwell_low_mean: f64,
    pub dwell_min: f64,
    pub dwell_max: f64,
    pub base_delay: f64,
}

impl Default for SynthTraceConfig {
    fn default() -> Self {
        Self {
            count: 20,
            duration_secs: 3600.0,
            high_range: (1.2e6, 5.0e6),
            low_range: (0.12e6, 0.6e6),
            outage_prob: 0.0,
            outage_range: (0.08e6, 0.18e6),
            dwell_high_mean: 25.0,
            dwell_low_mean: 8.0,
            dwell_min: 2.0,
            dwell_max: 120.0,
            base_delay: DEFAULT_BASE_DELAY,
        }
    }
}

/// Generates `count` named traces, deterministic per seed.
pub fn synth_traces(cfg: &SynthTraceConfig, seed: u64) -> Vec<(String, NetworkTrace)> {
    (0..cfg.count)
        .map(|i| {
            let trace_seed = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            (format!("synth_{i:03}"), synth_trace(cfg, trace_seed))
        })
        .collect()
}

fn synth_trace(cfg: &SynthTraceConfig, seed: u64) -> NetworkTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dwell_high = Exp::new(1.0 / cfg.dwell_high_mean).expect("positive mean");
    let dwell_low = Exp::new(1.0 / cfg.dwell_low_mean).expect("positive mean");
    let mut high = rng.gen_bool(0.7);
    let mut t = 0.0;
    let mut breakpoints = Vec::new();
    while t < cfg.duration_secs {
        let (range, dwell) = if high {
            (cfg.high_range, dwell_high.sample(&mut rng))
        } else {
            let range = if rng.gen_bool(cfg.outage_prob) {
                cfg.outage_range
            } else {
                cfg.low_range
            };
            (range, dwell_low.sample(&mut rng))
        };
        let capacity = rng.gen_range(range.0..=range.1);
        breakpoints.push((t, capacity));
        t += dwell.clamp(cfg.dwell_min, cfg.dwell_max);
        high = !high;
    }
    NetworkTrace::new(breakpoints, cfg.base_delay).expect("generated trace is valid")
}
