//! Stream summaries and scheme-level aggregates: pooled stall ratio,
//! duration-weighted SSIM with weighted standard error, SSIM variation, and
//! stratified bootstrap confidence intervals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Archive, BufferEvent, ClientBufferRow, VideoAckedRow, VideoSentRow};
use crate::domain::ssim_to_db;
use crate::sim::SessionResult;

/// Streams must play at least this long to enter any aggregate.
pub const MIN_PLAYED_SECS: f64 = 4.0;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no eligible streams")]
    NoEligibleStreams,
    #[error("total watch time is zero")]
    ZeroWatchTime,
    #[error("need at least {needed} streams, got {got}")]
    TooFewStreams { needed: usize, got: usize },
    #[error("inconsistent telemetry: {0}")]
    Inconsistent(String),
    #[error("bad plot data: {0}")]
    PlotData(String),
}

/// Per-stream summary figures.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    /// Time between playback start and the end of the stream: played time
    /// plus stalls, excluding startup.
    pub watch_time: f64,
    pub stall_time: f64,
    pub startup_time: f64,
    /// Chunk-duration-weighted mean SSIM in dB (chunks share one duration,
    /// so this is the mean over delivered chunks). Absent with no chunks.
    pub mean_ssim_db: Option<f64>,
    /// Mean absolute SSIM-dB difference between consecutive chunks.
    pub ssim_variation_db: Option<f64>,
    /// Played at least [`MIN_PLAYED_SECS`].
    pub eligible: bool,
}

fn quality_figures(qualities: &[f64]) -> (Option<f64>, Option<f64>) {
    if qualities.is_empty() {
        return (None, None);
    }
    let mean = qualities.iter().sum::<f64>() / qualities.len() as f64;
    let variation = if qualities.len() >= 2 {
        let diffs: f64 = qualities.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        Some(diffs / (qualities.len() - 1) as f64)
    } else {
        Some(0.0)
    };
    (Some(mean), variation)
}

/// Summary straight from a simulated session result.
pub fn summarize_session(result: &SessionResult) -> StreamSummary {
    let watch_time = result.played_time() + result.stall_time();
    let qualities: Vec<f64> = result.records.iter().map(|r| r.quality).collect();
    let (mean_ssim_db, ssim_variation_db) = quality_figures(&qualities);
    StreamSummary {
        watch_time,
        stall_time: result.stall_time(),
        startup_time: result.startup_time(),
        mean_ssim_db,
        ssim_variation_db,
        eligible: result.played_time() >= MIN_PLAYED_SECS,
    }
}

/// Summary reconstructed from one stream's telemetry rows.
pub fn summarize_stream(
    sent: &[VideoSentRow],
    acked: &[VideoAckedRow],
    buffer: &[ClientBufferRow],
) -> Result<StreamSummary, StatsError> {
    for w in buffer.windows(2) {
        if w[1].cum_rebuf < w[0].cum_rebuf {
            return Err(StatsError::Inconsistent(format!(
                "cum_rebuf decreases at t={}",
                w[1].time
            )));
        }
    }
    let startup_row = buffer.iter().find(|r| r.event == BufferEvent::Startup);
    let start_time = sent
        .first()
        .map(|r| r.time)
        .into_iter()
        .chain(buffer.first().map(|r| r.time))
        .fold(f64::INFINITY, f64::min);

    let (watch_time, startup_time) = match (startup_row, buffer.last()) {
        (Some(st), Some(last)) => (last.time - st.time, st.time - start_time),
        _ => (0.0, 0.0),
    };
    let stall_time = buffer.last().map(|r| r.cum_rebuf).unwrap_or(0.0);

    // delivered chunks in presentation order
    let mut acked_ts: BTreeMap<u64, ()> = BTreeMap::new();
    for a in acked {
        acked_ts.insert(a.video_ts, ());
    }
    let mut delivered: Vec<(u64, f64)> = sent
        .iter()
        .filter(|s| acked_ts.contains_key(&s.video_ts))
        .map(|s| (s.video_ts, ssim_to_db(s.ssim_index).expect("parsed rows are in range")))
        .collect();
    delivered.sort_by_key(|&(ts, _)| ts);
    let qualities: Vec<f64> = delivered.into_iter().map(|(_, q)| q).collect();
    let (mean_ssim_db, ssim_variation_db) = quality_figures(&qualities);

    Ok(StreamSummary {
        watch_time,
        stall_time,
        startup_time,
        mean_ssim_db,
        ssim_variation_db,
        eligible: watch_time - stall_time >= MIN_PLAYED_SECS,
    })
}

/// Summaries for every stream in an archive, ordered by stream id.
pub fn summarize_archive(archive: &Archive) -> Result<Vec<StreamSummary>, StatsError> {
    let mut sent: BTreeMap<u64, Vec<&VideoSentRow>> = BTreeMap::new();
    for r in &archive.sent {
        sent.entry(r.stream_id).or_default().push(r);
    }
    let mut acked: BTreeMap<u64, Vec<&VideoAckedRow>> = BTreeMap::new();
    for r in &archive.acked {
        acked.entry(r.stream_id).or_default().push(r);
    }
    let mut buffer: BTreeMap<u64, Vec<&ClientBufferRow>> = BTreeMap::new();
    for r in &archive.buffer {
        buffer.entry(r.stream_id).or_default().push(r);
    }
    let ids: std::collections::BTreeSet<u64> = sent
        .keys()
        .chain(acked.keys())
        .chain(buffer.keys())
        .copied()
        .collect();
    ids.into_iter()
        .map(|id| {
            let s: Vec<VideoSentRow> =
                sent.get(&id).map(|v| v.iter().map(|r| (*r).clone()).collect()).unwrap_or_default();
            let a: Vec<VideoAckedRow> = acked
                .get(&id)
                .map(|v| v.iter().map(|r| (*r).clone()).collect())
                .unwrap_or_default();
            let b: Vec<ClientBufferRow> = buffer
                .get(&id)
                .map(|v| v.iter().map(|r| (*r).clone()).collect())
                .unwrap_or_default();
            summarize_stream(&s, &a, &b)
        })
        .collect()
}

fn eligible(summaries: &[StreamSummary]) -> Vec<&StreamSummary> {
    summaries.iter().filter(|s| s.eligible).collect()
}

/// Pooled stall ratio: total stalled time over total watch time across
/// eligible streams (not the mean of per-stream ratios).
pub fn aggregate_stall_ratio(summaries: &[StreamSummary]) -> Result<f64, StatsError> {
    let chosen = eligible(summaries);
    if chosen.is_empty() {
        return Err(StatsError::NoEligibleStreams);
    }
    pooled_ratio(chosen.iter().map(|s| (s.stall_time, s.watch_time)))
}

fn pooled_ratio(pairs: impl Iterator<Item = (f64, f64)>) -> Result<f64, StatsError> {
    let (mut stall, mut watch) = (0.0, 0.0);
    for (s, w) in pairs {
        stall += s;
        watch += w;
    }
    if watch <= 0.0 {
        return Err(StatsError::ZeroWatchTime);
    }
    Ok(stall / watch)
}

/// Duration-weighted mean SSIM and its weighted standard error.
///
/// Uses the standard reliability-weights variance with effective sample size
/// `(sum w)^2 / sum w^2`; with equal durations this reduces to the plain mean
/// and standard error. The SE is absent with fewer than two streams.
pub fn aggregate_ssim(summaries: &[StreamSummary]) -> Result<(f64, Option<f64>), StatsError> {
    let chosen: Vec<&StreamSummary> =
        eligible(summaries).into_iter().filter(|s| s.mean_ssim_db.is_some()).collect();
    if chosen.is_empty() {
        return Err(StatsError::NoEligibleStreams);
    }
    let w_sum: f64 = chosen.iter().map(|s| s.watch_time).sum();
    if w_sum <= 0.0 {
        return Err(StatsError::ZeroWatchTime);
    }
    let mean = chosen
        .iter()
        .map(|s| s.watch_time * s.mean_ssim_db.expect("filtered"))
        .sum::<f64>()
        / w_sum;
    if chosen.len() < 2 {
        return Ok((mean, None));
    }
    let w2_sum: f64 = chosen.iter().map(|s| s.watch_time * s.watch_time).sum();
    let n_eff = w_sum * w_sum / w2_sum;
    if n_eff <= 1.0 {
        return Ok((mean, None));
    }
    let var_w = chosen
        .iter()
        .map(|s| {
            let d = s.mean_ssim_db.expect("filtered") - mean;
            s.watch_time * d * d
        })
        .sum::<f64>()
        / w_sum;
    let sample_var = var_w * n_eff / (n_eff - 1.0);
    Ok((mean, Some((sample_var / n_eff).sqrt())))
}

/// Duration-weighted mean of the per-stream SSIM variation.
pub fn aggregate_ssim_variation(summaries: &[StreamSummary]) -> Result<f64, StatsError> {
    let chosen: Vec<&StreamSummary> =
        eligible(summaries).into_iter().filter(|s| s.ssim_variation_db.is_some()).collect();
    if chosen.is_empty() {
        return Err(StatsError::NoEligibleStreams);
    }
    let w_sum: f64 = chosen.iter().map(|s| s.watch_time).sum();
    if w_sum <= 0.0 {
        return Err(StatsError::ZeroWatchTime);
    }
    Ok(chosen
        .iter()
        .map(|s| s.watch_time * s.ssim_variation_db.expect("filtered"))
        .sum::<f64>()
        / w_sum)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap CI on the pooled stall ratio, stratified by
/// watch-duration decile: each resample draws streams with replacement
/// within strata, preserving stratum counts, so the duration mix of the
/// observed sample is retained. Deterministic per seed; resamples run in
/// parallel and merge in index order.
pub fn bootstrap_stall_ci(
    summaries: &[StreamSummary],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    assert!(level > 0.0 && level < 1.0, "confidence level in (0, 1)");
    let mut chosen: Vec<&StreamSummary> = eligible(summaries);
    if chosen.len() < 2 {
        return Err(StatsError::TooFewStreams { needed: 2, got: chosen.len() });
    }
    chosen.sort_by(|a, b| a.watch_time.total_cmp(&b.watch_time));
    let n = chosen.len();
    // up to ten duration strata; tiny samples collapse into fewer
    let n_strata = n.min(10);
    let mut strata: Vec<&[&StreamSummary]> = Vec::with_capacity(n_strata);
    let base = n / n_strata;
    let extra = n % n_strata;
    let mut start = 0;
    for k in 0..n_strata {
        let len = base + usize::from(k < extra);
        strata.push(&chosen[start..start + len]);
        start += len;
    }

    let mut stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9)));
            let (mut stall, mut watch) = (0.0, 0.0);
            for stratum in &strata {
                for _ in 0..stratum.len() {
                    let pick = stratum[rng.gen_range(0..stratum.len())];
                    stall += pick.stall_time;
                    watch += pick.watch_time;
                }
            }
            stall / watch
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((percentile(&stats, alpha / 2.0), percentile(&stats, 1.0 - alpha / 2.0)))
}

/// Aggregates one scheme's summaries into a report row.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeReport {
    pub scheme: String,
    pub stall_ratio: f64,
    pub stall_ci: (f64, f64),
    pub mean_ssim_db: f64,
    pub ssim_ci: (f64, f64),
    pub ssim_variation_db: f64,
    pub streams: usize,
    pub total_watch_time: f64,
}

pub fn build_report(
    scheme: &str,
    summaries: &[StreamSummary],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<SchemeReport, StatsError> {
    let stall_ratio = aggregate_stall_ratio(summaries)?;
    let stall_ci = if eligible(summaries).len() >= 2 {
        bootstrap_stall_ci(summaries, resamples, level, seed)?
    } else {
        (stall_ratio, stall_ratio)
    };
    let (mean_ssim_db, se) = aggregate_ssim(summaries)?;
    // normal-approximation interval at the 95% z value scaled to `level`
    let z = normal_quantile(0.5 + level / 2.0);
    let ssim_ci = match se {
        Some(se) => (mean_ssim_db - z * se, mean_ssim_db + z * se),
        None => (mean_ssim_db, mean_ssim_db),
    };
    let ssim_variation_db = aggregate_ssim_variation(summaries)?;
    let chosen = eligible(summaries);
    Ok(SchemeReport {
        scheme: scheme.to_string(),
        stall_ratio,
        stall_ci,
        mean_ssim_db,
        ssim_ci,
        ssim_variation_db,
        streams: chosen.len(),
        total_watch_time: chosen.iter().map(|s| s.watch_time).sum(),
    })
}

/// Acklam-style rational approximation of the standard normal quantile;
/// good to ~1e-9, plenty for interval endpoints.
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Rendered scheme comparison: an aligned text table, the plot-data file,
/// and the scheme pairs whose stall CIs do not overlap.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub table: String,
    pub plot_data: String,
    pub distinguishable: Vec<(String, String)>,
}

pub const PLOT_DATA_HEADER: &str = "scheme,stall_ratio,stall_lo,stall_hi,ssim_db,ssim_lo,ssim_hi";

pub fn compare_schemes(reports: &[SchemeReport]) -> Comparison {
    let mut table = String::new();
    writeln!(
        table,
        "{:<16} {:>12} {:>24} {:>10} {:>22} {:>10} {:>8} {:>12}",
        "scheme",
        "stall_ratio",
        "stall_95ci",
        "ssim_db",
        "ssim_95ci",
        "variation",
        "streams",
        "watch_hours"
    )
    .expect("write to string");
    for r in reports {
        writeln!(
            table,
            "{:<16} {:>12.5} {:>24} {:>10.3} {:>22} {:>10.3} {:>8} {:>12.2}",
            r.scheme,
            r.stall_ratio,
            format!("[{:.5}, {:.5}]", r.stall_ci.0, r.stall_ci.1),
            r.mean_ssim_db,
            format!("[{:.3}, {:.3}]", r.ssim_ci.0, r.ssim_ci.1),
            r.ssim_variation_db,
            r.streams,
            r.total_watch_time / 3600.0
        )
        .expect("write to string");
    }

    let mut plot_data = String::from(PLOT_DATA_HEADER);
    plot_data.push('\n');
    for r in reports {
        writeln!(
            plot_data,
            "{},{},{},{},{},{},{}",
            r.scheme,
            r.stall_ratio,
            r.stall_ci.0,
            r.stall_ci.1,
            r.mean_ssim_db,
            r.ssim_ci.0,
            r.ssim_ci.1
        )
        .expect("write to string");
    }

    let mut distinguishable = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let (a, b) = (&reports[i], &reports[j]);
            if a.stall_ci.1 < b.stall_ci.0 || b.stall_ci.1 < a.stall_ci.0 {
                distinguishable.push((a.scheme.clone(), b.scheme.clone()));
            }
        }
    }
    Comparison { table, plot_data, distinguishable }
}

/// One parsed plot-data row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub scheme: String,
    pub stall_ratio: f64,
    pub stall_ci: (f64, f64),
    pub ssim_db: f64,
    pub ssim_ci: (f64, f64),
}

pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>, StatsError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == PLOT_DATA_HEADER => {}
        _ => return Err(StatsError::PlotData("bad header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(StatsError::PlotData(format!("row {}: wrong field count", i + 2)));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| StatsError::PlotData(format!("row {}: bad number {s:?}", i + 2)))
        };
        rows.push(PlotRow {
            scheme: f[0].to_string(),
            stall_ratio: num(f[1])?,
            stall_ci: (num(f[2])?, num(f[3])?),
            ssim_db: num(f[4])?,
            ssim_ci: (num(f[5])?, num(f[6])?),
        });
    }
    Ok(rows)
}

pub fn plot_data_for(reports: &[SchemeReport]) -> String {
    compare_schemes(reports).plot_data
}
