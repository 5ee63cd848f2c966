//! Piecewise-constant capacity traces and the fluid-flow delivery model.

use std::fmt::Write as _;

use thiserror::Error;

/// Default end-to-end one-way delay imposed on traffic, seconds.
pub const DEFAULT_BASE_DELAY: f64 = 0.040;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid trace: {0}")]
    Invalid(String),
}

/// Downlink capacity over time as step-function breakpoints
/// `(time_s, bytes_per_s)`, extended past the last breakpoint by holding its
/// capacity. All transfers additionally pay `base_delay` end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    breakpoints: Vec<(f64, f64)>,
    pub base_delay: f64,
}

impl NetworkTrace {
    pub fn new(breakpoints: Vec<(f64, f64)>, base_delay: f64) -> Result<Self, TraceError> {
        if breakpoints.is_empty() {
            return Err(TraceError::Invalid("trace needs at least one breakpoint".into()));
        }
        if breakpoints[0].0 != 0.0 {
            return Err(TraceError::Invalid("first breakpoint must be at time 0".into()));
        }
        for (i, &(t, cap)) in breakpoints.iter().enumerate() {
            if !t.is_finite() || !cap.is_finite() || cap < 0.0 {
                return Err(TraceError::Invalid(format!("bad breakpoint at index {i}")));
            }
            if i > 0 && breakpoints[i - 1].0 >= t {
                return Err(TraceError::Invalid(format!(
                    "breakpoint times must be strictly increasing (index {i})"
                )));
            }
        }
        if !(base_delay >= 0.0) {
            return Err(TraceError::Invalid("base_delay must be non-negative".into()));
        }
        Ok(Self { breakpoints, base_delay })
    }

    pub fn constant(bytes_per_second: f64, base_delay: f64) -> Self {
        Self::new(vec![(0.0, bytes_per_second)], base_delay).expect("constant trace is valid")
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Capacity in effect at time `t` (holds the last value past the end).
    pub fn capacity_at(&self, t: f64) -> f64 {
        match self.breakpoints.partition_point(|&(bt, _)| bt <= t) {
            0 => self.breakpoints[0].1,
            i => self.breakpoints[i - 1].1,
        }
    }
}

/// Parses the trace text format: one `time_s,bytes_per_s` pair per line,
/// `#` comments and blank lines ignored. The base delay is the default; use
/// [`NetworkTrace::new`] to override it.
pub fn load_trace(text: &str) -> Result<NetworkTrace, TraceError> {
    let mut breakpoints = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (t_str, cap_str) = line.split_once(',').ok_or_else(|| TraceError::Parse {
            line: i + 1,
            msg: "expected time_s,bytes_per_s".into(),
        })?;
        let t: f64 = t_str.trim().parse().map_err(|_| TraceError::Parse {
            line: i + 1,
            msg: format!("bad time {t_str:?}"),
        })?;
        let cap: f64 = cap_str.trim().parse().map_err(|_| TraceError::Parse {
            line: i + 1,
            msg: format!("bad capacity {cap_str:?}"),
        })?;
        if let Some(&(prev, _)) = breakpoints.last() {
            if t <= prev {
                return Err(TraceError::Parse {
                    line: i + 1,
                    msg: format!("time {t} not increasing (previous {prev})"),
                });
            }
        }
        breakpoints.push((t, cap));
    }
    if breakpoints.is_empty() {
        return Err(TraceError::Invalid("empty trace".into()));
    }
    NetworkTrace::new(breakpoints, DEFAULT_BASE_DELAY)
}

pub fn save_trace(trace: &NetworkTrace) -> String {
    let mut out = String::new();
    for &(t, cap) in trace.breakpoints() {
        writeln!(out, "{t},{cap}").expect("write to string");
    }
    out
}

/// Fluid-flow delivery: the smallest `t` such that the capacity integrated
/// over `[start + base_delay, start + base_delay + t]` equals `size`, plus
/// the base delay. Returns `None` when the remaining trace capacity is zero
/// forever (the chunk is never delivered).
pub fn transmit(size: f64, trace: &NetworkTrace, start: f64) -> Option<f64> {
    debug_assert!(size > 0.0 && start >= 0.0);
    let bps = trace.breakpoints();
    let t0 = start + trace.base_delay;
    let mut cursor = t0;
    let mut remaining = size;
    let mut seg = match bps.partition_point(|&(bt, _)| bt <= cursor) {
        0 => 0,
        i => i - 1,
    };
    loop {
        let cap = bps[seg].1;
        let seg_end = bps.get(seg + 1).map(|&(t, _)| t);
        match seg_end {
            None => {
                // final segment extends forever
                if cap <= 0.0 {
                    return None;
                }
                cursor += remaining / cap;
                return Some(cursor - start);
            }
            Some(end) => {
                if cap > 0.0 {
                    let deliverable = cap * (end - cursor);
                    if deliverable >= remaining {
                        cursor += remaining / cap;
                        return Some(cursor - start);
                    }
                    remaining -= deliverable;
                }
                cursor = end;
                seg += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn load_single_breakpoint() {
        let trace = load_trace("0,125000").unwrap();
        assert_eq!(trace.breakpoints(), &[(0.0, 125_000.0)]);
        assert_eq!(trace.capacity_at(99.0), 125_000.0);
    }

    #[test]
    fn load_piecewise_with_comments() {
        let trace = load_trace("# 1 Mbit/s then 2 Mbit/s\n0,125000\n10,250000\n").unwrap();
        assert_eq!(trace.breakpoints().len(), 2);
        assert_eq!(trace.capacity_at(9.999), 125_000.0);
        assert_eq!(trace.capacity_at(10.0), 250_000.0);
    }

    #[test]
    fn load_rejects_bad_input() {
        assert!(matches!(load_trace(""), Err(TraceError::Invalid(_))));
        match load_trace("0,1000\n5,abc") {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match load_trace("0,1000\n5,2000\n5,3000") {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_trace("1,1000").is_err()); // must start at 0
    }

    #[test]
    fn save_round_trips() {
        let trace = load_trace("0,125000\n10,250000\n12.5,0\n").unwrap();
        let again = load_trace(&save_trace(&trace)).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn transmit_constant_rate() {
        let trace = NetworkTrace::constant(125_000.0, 0.04);
        let t = transmit(125_000.0, &trace, 0.0).unwrap();
        assert_relative_eq!(t, 1.04, epsilon = 1e-12);
    }

    #[test]
    fn transmit_tiny_size_approaches_base_delay() {
        let trace = NetworkTrace::constant(1e6, 0.04);
        let t = transmit(1e-9, &trace, 0.0).unwrap();
        assert_relative_eq!(t, 0.04, epsilon = 1e-9);
    }

    #[test]
    fn transmit_piecewise_integral() {
        // 250 kB/s for 0.25 s, then 62.5 kB/s; no delay.
        let trace = NetworkTrace::new(vec![(0.0, 250_000.0), (0.25, 62_500.0)], 0.0).unwrap();
        let t = transmit(125_000.0, &trace, 0.0).unwrap();
        assert_relative_eq!(t, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn transmit_skips_zero_capacity_intervals() {
        let trace =
            NetworkTrace::new(vec![(0.0, 100_000.0), (1.0, 0.0), (3.0, 100_000.0)], 0.0).unwrap();
        // 0.5 s of data at 100 kB/s, then a 2 s outage, then the rest
        let t = transmit(150_000.0, &trace, 0.0).unwrap();
        assert_relative_eq!(t, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn transmit_never_delivered_on_dead_trace() {
        let trace = NetworkTrace::new(vec![(0.0, 100_000.0), (1.0, 0.0)], 0.0).unwrap();
        assert_eq!(transmit(200_000.0, &trace, 0.0), None);
        // but a chunk that fits before the outage is delivered
        assert!(transmit(50_000.0, &trace, 0.0).is_some());
    }

    #[test]
    fn transmit_starting_mid_trace() {
        let trace = NetworkTrace::new(vec![(0.0, 1_000.0), (10.0, 2_000.0)], 0.0).unwrap();
        let t = transmit(2_000.0, &trace, 11.0).unwrap();
        assert_relative_eq!(t, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn transmit_monotone_in_size(
            caps in proptest::collection::vec(1_000.0..1e7f64, 1..6),
            s1 in 1e3..1e7f64,
            extra in 0.0..1e7f64,
            start in 0.0..50.0f64,
        ) {
            let breakpoints: Vec<(f64, f64)> =
                caps.iter().enumerate().map(|(i, &c)| (i as f64 * 5.0, c)).collect();
            let trace = NetworkTrace::new(breakpoints, 0.04).unwrap();
            let a = transmit(s1, &trace, start).unwrap();
            let b = transmit(s1 + extra, &trace, start).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }
}
