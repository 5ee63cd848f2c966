//! Telemetry archives and the training pipeline built on them.
//!
//! Archives hold three comma-separated tables, one file per measurement
//! type: `video_sent` (one row per chunk sent, with transport statistics),
//! `video_acked` (one row per acknowledged chunk), and `client_buffer`
//! (buffer level and cumulative rebuffer reports). Sent and acked rows join
//! on `(stream_id, video_ts)` to recover per-chunk transmission times, which
//! become training examples with recency-decayed weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::predictors::{discretize, PredictError, TransportStats, TtpInput};

pub const VIDEO_SENT_FILE: &str = "video_sent.csv";
pub const VIDEO_ACKED_FILE: &str = "video_acked.csv";
pub const CLIENT_BUFFER_FILE: &str = "client_buffer.csv";

/// Per-day multiplicative weight decay for training examples.
pub const RECENCY_DECAY: f64 = 0.9;

/// Default training window in days.
pub const DEFAULT_WINDOW_DAYS: u32 = 14;

const SENT_HEADER: &str =
    "time,stream_id,expt_id,video_ts,size,ssim_index,cwnd,in_flight,min_rtt,rtt,delivery_rate";
const ACKED_HEADER: &str = "time,stream_id,expt_id,video_ts";
const BUFFER_HEADER: &str = "time,stream_id,expt_id,event,buffer,cum_rebuf";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad header (expected {expected:?})")]
    BadHeader { file: String, expected: &'static str },
    #[error("duplicate (stream {stream_id}, video_ts {video_ts}) in {table}")]
    Duplicate { stream_id: u64, video_ts: u64, table: &'static str },
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// One row of the `video_sent` table: emitted when a chunk leaves the server.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSentRow {
    /// Epoch seconds when the chunk was sent.
    pub time: f64,
    pub stream_id: u64,
    /// Experimental-group id; maps to a scheme via the assignment log.
    pub expt_id: u64,
    /// Chunk presentation index; the sent/acked join key.
    pub video_ts: u64,
    /// Chunk size in bytes.
    pub size: u64,
    /// SSIM index in [0, 1].
    pub ssim_index: f64,
    pub cwnd: f64,
    pub in_flight: f64,
    pub min_rtt: f64,
    pub rtt: f64,
    pub delivery_rate: f64,
}

impl VideoSentRow {
    pub fn stats(&self) -> TransportStats {
        TransportStats {
            cwnd: self.cwnd,
            in_flight: self.in_flight,
            min_rtt: self.min_rtt,
            srtt: self.rtt,
            delivery_rate: self.delivery_rate,
        }
    }

    fn valid(&self) -> bool {
        self.time.is_finite()
            && self.size > 0
            && (0.0..=1.0).contains(&self.ssim_index)
            && [self.cwnd, self.in_flight, self.min_rtt, self.rtt, self.delivery_rate]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// One row of the `video_acked` table: emitted when a chunk acknowledgement
/// arrives.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAckedRow {
    pub time: f64,
    pub stream_id: u64,
    pub expt_id: u64,
    pub video_ts: u64,
}

/// Client buffer event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferEvent {
    Periodic,
    Startup,
    Play,
    Rebuffer,
}

impl BufferEvent {
    pub fn token(&self) -> &'static str {
        match self {
            BufferEvent::Periodic => "periodic",
            BufferEvent::Startup => "startup",
            BufferEvent::Play => "play",
            BufferEvent::Rebuffer => "rebuffer",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "periodic" => Some(BufferEvent::Periodic),
            "startup" => Some(BufferEvent::Startup),
            "play" => Some(BufferEvent::Play),
            "rebuffer" => Some(BufferEvent::Rebuffer),
            _ => None,
        }
    }
}

/// One row of the `client_buffer` table.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientBufferRow {
    pub time: f64,
    pub stream_id: u64,
    pub expt_id: u64,
    pub event: BufferEvent,
    /// Playback buffer in seconds.
    pub buffer: f64,
    /// Cumulative rebuffer time in this stream, seconds.
    pub cum_rebuf: f64,
}

impl ClientBufferRow {
    fn valid(&self) -> bool {
        self.time.is_finite() && self.buffer >= 0.0 && self.cum_rebuf >= 0.0
    }
}

/// A full telemetry archive (the three tables of one experimental arm).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub sent: Vec<VideoSentRow>,
    pub acked: Vec<VideoAckedRow>,
    pub buffer: Vec<ClientBufferRow>,
}

/// Malformed-row accounting from a parse. Rows failing validation are never
/// silently dropped: they are counted here with a capped list of details.
#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub rows_ok: usize,
    pub rows_skipped: usize,
    pub details: Vec<String>,
}

impl ParseReport {
    const MAX_DETAILS: usize = 20;

    fn skip(&mut self, file: &str, line: usize, why: &str) {
        self.rows_skipped += 1;
        if self.details.len() < Self::MAX_DETAILS {
            self.details.push(format!("{file}:{line}: {why}"));
        }
    }
}

// ---------------------------------------------------------------------------
// CSV encoding. Floats use Rust's shortest round-trip formatting, so
// emit -> parse -> emit is byte-identical.
// ---------------------------------------------------------------------------

pub fn video_sent_to_csv(rows: &[VideoSentRow]) -> String {
    let mut out = String::from(SENT_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.time,
            r.stream_id,
            r.expt_id,
            r.video_ts,
            r.size,
            r.ssim_index,
            r.cwnd,
            r.in_flight,
            r.min_rtt,
            r.rtt,
            r.delivery_rate
        )
        .expect("write to string");
    }
    out
}

pub fn video_acked_to_csv(rows: &[VideoAckedRow]) -> String {
    let mut out = String::from(ACKED_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.time, r.stream_id, r.expt_id, r.video_ts)
            .expect("write to string");
    }
    out
}

pub fn client_buffer_to_csv(rows: &[ClientBufferRow]) -> String {
    let mut out = String::from(BUFFER_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.time,
            r.stream_id,
            r.expt_id,
            r.event.token(),
            r.buffer,
            r.cum_rebuf
        )
        .expect("write to string");
    }
    out
}

fn check_header(text: &str, expected: &'static str, file: &str) -> Result<(), DataError> {
    match text.lines().next() {
        Some(h) if h == expected => Ok(()),
        _ => Err(DataError::BadHeader { file: file.to_string(), expected }),
    }
}

pub fn parse_video_sent(
    text: &str,
    file: &str,
    report: &mut ParseReport,
) -> Result<Vec<VideoSentRow>, DataError> {
    check_header(text, SENT_HEADER, file)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<VideoSentRow> {
            if fields.len() != 11 {
                return None;
            }
            Some(VideoSentRow {
                time: fields[0].parse().ok()?,
                stream_id: fields[1].parse().ok()?,
                expt_id: fields[2].parse().ok()?,
                video_ts: fields[3].parse().ok()?,
                size: fields[4].parse().ok()?,
                ssim_index: fields[5].parse().ok()?,
                cwnd: fields[6].parse().ok()?,
                in_flight: fields[7].parse().ok()?,
                min_rtt: fields[8].parse().ok()?,
                rtt: fields[9].parse().ok()?,
                delivery_rate: fields[10].parse().ok()?,
            })
        })();
        match parsed {
            Some(row) if row.valid() => {
                report.rows_ok += 1;
                rows.push(row);
            }
            Some(_) => report.skip(file, i + 1, "field out of range"),
            None => report.skip(file, i + 1, "malformed row"),
        }
    }
    Ok(rows)
}

pub fn parse_video_acked(
    text: &str,
    file: &str,
    report: &mut ParseReport,
) -> Result<Vec<VideoAckedRow>, DataError> {
    check_header(text, ACKED_HEADER, file)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<VideoAckedRow> {
            if fields.len() != 4 {
                return None;
            }
            Some(VideoAckedRow {
                time: fields[0].parse().ok()?,
                stream_id: fields[1].parse().ok()?,
                expt_id: fields[2].parse().ok()?,
                video_ts: fields[3].parse().ok()?,
            })
        })();
        match parsed {
            Some(row) if row.time.is_finite() => {
                report.rows_ok += 1;
                rows.push(row);
            }
            _ => report.skip(file, i + 1, "malformed row"),
        }
    }
    Ok(rows)
}

pub fn parse_client_buffer(
    text: &str,
    file: &str,
    report: &mut ParseReport,
) -> Result<Vec<ClientBufferRow>, DataError> {
    check_header(text, BUFFER_HEADER, file)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<ClientBufferRow> {
            if fields.len() != 6 {
                return None;
            }
            Some(ClientBufferRow {
                time: fields[0].parse().ok()?,
                stream_id: fields[1].parse().ok()?,
                expt_id: fields[2].parse().ok()?,
                event: BufferEvent::parse(fields[3])?,
                buffer: fields[4].parse().ok()?,
                cum_rebuf: fields[5].parse().ok()?,
            })
        })();
        match parsed {
            Some(row) if row.valid() => {
                report.rows_ok += 1;
                rows.push(row);
            }
            Some(_) => report.skip(file, i + 1, "field out of range"),
            None => report.skip(file, i + 1, "malformed row"),
        }
    }
    Ok(rows)
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Writes the three archive tables into `dir` with deterministic field order
/// and formatting.
pub fn emit_archive(archive: &Archive, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    write(&dir.join(VIDEO_SENT_FILE), &video_sent_to_csv(&archive.sent))?;
    write(&dir.join(VIDEO_ACKED_FILE), &video_acked_to_csv(&archive.acked))?;
    write(&dir.join(CLIENT_BUFFER_FILE), &client_buffer_to_csv(&archive.buffer))?;
    Ok(())
}

/// Reads the three archive tables from `dir`. Malformed rows are skipped and
/// counted in the report; structural problems (missing file, bad header) are
/// errors.
pub fn parse_archive(dir: &Path) -> Result<(Archive, ParseReport), DataError> {
    let mut report = ParseReport::default();
    let sent = parse_video_sent(&read(&dir.join(VIDEO_SENT_FILE))?, VIDEO_SENT_FILE, &mut report)?;
    let acked =
        parse_video_acked(&read(&dir.join(VIDEO_ACKED_FILE))?, VIDEO_ACKED_FILE, &mut report)?;
    let buffer = parse_client_buffer(
        &read(&dir.join(CLIENT_BUFFER_FILE))?,
        CLIENT_BUFFER_FILE,
        &mut report,
    )?;
    Ok((Archive { sent, acked, buffer }, report))
}

// ---------------------------------------------------------------------------
// Sent/acked join and training-set assembly.
// ---------------------------------------------------------------------------

/// A sent chunk matched with its acknowledgement.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkObservation {
    pub stream_id: u64,
    pub video_ts: u64,
    /// Epoch seconds when the chunk was sent.
    pub sent_time: f64,
    pub size: u64,
    pub ssim_index: f64,
    pub stats: TransportStats,
    /// Acked time minus sent time, seconds; always positive.
    pub transmission_time: f64,
}

/// All matched chunks of one stream, ordered by `video_ts`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamChunks {
    pub stream_id: u64,
    pub expt_id: u64,
    pub chunks: Vec<ChunkObservation>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinReport {
    pub matched: usize,
    /// Sent rows with no acknowledgement; excluded from training.
    pub never_acked: usize,
    /// Pairs with non-positive transmission time (clock skew); rejected.
    pub rejected_skew: usize,
}

/// Matches sent and acked rows on `(stream_id, video_ts)` and computes the
/// per-chunk transmission time. Duplicate keys in either table are an error.
pub fn join_transmission_times(
    sent: &[VideoSentRow],
    acked: &[VideoAckedRow],
) -> Result<(Vec<StreamChunks>, JoinReport), DataError> {
    let mut ack_times: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for a in acked {
        if ack_times.insert((a.stream_id, a.video_ts), a.time).is_some() {
            return Err(DataError::Duplicate {
                stream_id: a.stream_id,
                video_ts: a.video_ts,
                table: "video_acked",
            });
        }
    }

    let mut report = JoinReport::default();
    let mut streams: BTreeMap<u64, StreamChunks> = BTreeMap::new();
    let mut seen_sent: BTreeMap<(u64, u64), ()> = BTreeMap::new();
    for s in sent {
        if seen_sent.insert((s.stream_id, s.video_ts), ()).is_some() {
            return Err(DataError::Duplicate {
                stream_id: s.stream_id,
                video_ts: s.video_ts,
                table: "video_sent",
            });
        }
        match ack_times.get(&(s.stream_id, s.video_ts)) {
            None => report.never_acked += 1,
            Some(&ack_time) => {
                let transmission_time = ack_time - s.time;
                if transmission_time <= 0.0 {
                    report.rejected_skew += 1;
                    continue;
                }
                report.matched += 1;
                streams
                    .entry(s.stream_id)
                    .or_insert_with(|| StreamChunks {
                        stream_id: s.stream_id,
                        expt_id: s.expt_id,
                        chunks: Vec::new(),
                    })
                    .chunks
                    .push(ChunkObservation {
                        stream_id: s.stream_id,
                        video_ts: s.video_ts,
                        sent_time: s.time,
                        size: s.size,
                        ssim_index: s.ssim_index,
                        stats: s.stats(),
                        transmission_time,
                    });
            }
        }
    }
    let mut out: Vec<StreamChunks> = streams.into_values().collect();
    for s in &mut out {
        s.chunks.sort_by_key(|c| c.video_ts);
    }
    Ok((out, report))
}

/// One supervised example for the transmission-time predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: TtpInput,
    /// Lookahead step this target corresponds to (0 in the single-step
    /// configuration).
    pub step: usize,
    pub target_bin: usize,
    /// Undiscretized transmission time behind `target_bin`, seconds.
    pub transmission_time: f64,
    pub weight: f64,
    pub day_age: u32,
}

/// Assembles training examples from joined streams.
///
/// Each chunk contributes the stream's previous (up to 8) chunk sizes and
/// transmission times, the transport statistics stored when it was sent, and
/// its own size; the target is its discretized transmission time. Examples
/// are weighted `RECENCY_DECAY^day_age` relative to `as_of_day` and chunks
/// outside the window are excluded. With `horizon_steps > 1`, each position
/// additionally emits examples targeting the next `horizon_steps - 1` chunk
/// transmission times, tagged with their lookahead step.
pub fn build_training_set(
    streams: &[StreamChunks],
    as_of_day: i64,
    window_days: u32,
    horizon_steps: usize,
) -> Result<Vec<TrainingExample>, DataError> {
    let horizon_steps = horizon_steps.max(1);
    let mut out = Vec::new();
    for stream in streams {
        let chunks = &stream.chunks;
        for i in 0..chunks.len() {
            let c = &chunks[i];
            let day = (c.sent_time / 86_400.0).floor() as i64;
            let age = as_of_day - day;
            if age < 0 || age >= window_days as i64 {
                continue;
            }
            let day_age = age as u32;
            let weight = RECENCY_DECAY.powi(day_age as i32);
            let history: Vec<(f64, f64)> = chunks[i.saturating_sub(8)..i]
                .iter()
                .map(|h| (h.size as f64, h.transmission_time))
                .collect();
            for step in 0..horizon_steps {
                let Some(target_chunk) = chunks.get(i + step) else { break };
                let input = TtpInput::new(&history, c.stats, target_chunk.size as f64);
                out.push(TrainingExample {
                    input,
                    step,
                    target_bin: discretize(target_chunk.transmission_time)?,
                    transmission_time: target_chunk.transmission_time,
                    weight,
                    day_age,
                });
            }
        }
    }
    Ok(out)
}
