//! One simulated stream: the scheme picks a version, the fluid-flow model
//! delivers it, the playback buffer drains and refills, and telemetry rows
//! are emitted in the open-data schema.
//!
//! Time inside a session is tracked in integer nanoseconds, with every
//! elapsed interval charged to exactly one of three buckets (startup, played,
//! stalled), so the accounting identity `wall = startup + played + stalled`
//! holds exactly rather than to float tolerance.

use std::sync::Arc;

use crate::control::{
    bba_select, mpc_hm_plan, mpc_plan, robust_mpc_hm_plan, ErrorWindow, Horizon,
    BBA_CUSHION_TOP, BBA_RESERVOIR,
};
use crate::data::{Archive, BufferEvent, ClientBufferRow, VideoAckedRow, VideoSentRow};
use crate::domain::{db_to_ssim, PlaybackState, QoeWeights};
use crate::predictors::{hm_predict, Predictor, ThroughputHistory, TransportStats, TtpInput, TtpVariant};
use crate::sim::trace::{transmit, NetworkTrace};
use crate::sim::video::VideoSpec;

const NANOS_PER_SEC: f64 = 1e9;

fn to_nanos(secs: f64) -> u64 {
    debug_assert!(secs >= 0.0);
    (secs * NANOS_PER_SEC).round() as u64
}

fn to_secs(nanos: u64) -> f64 {
    nanos as f64 / NANOS_PER_SEC
}

/// The ABR scheme driving a session.
#[derive(Debug, Clone)]
pub enum Scheme {
    Bba { reservoir: f64, cushion_top: f64 },
    MpcHm,
    RobustMpcHm,
    Fugu { predictor: Arc<Predictor> },
}

impl Scheme {
    pub fn bba() -> Self {
        Scheme::Bba { reservoir: BBA_RESERVOIR, cushion_top: BBA_CUSHION_TOP }
    }

    /// Scheme label used in reports and archive directories.
    pub fn name(&self) -> String {
        match self {
            Scheme::Bba { .. } => "bba".into(),
            Scheme::MpcHm => "mpc_hm".into(),
            Scheme::RobustMpcHm => "robust_mpc_hm".into(),
            Scheme::Fugu { predictor } => match predictor.variant {
                TtpVariant::Full => "fugu".into(),
                TtpVariant::Point => "fugu_point".into(),
                TtpVariant::ThroughputOnly => "fugu_throughput".into(),
                TtpVariant::Linear => "fugu_linear".into(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub scheme: Scheme,
    pub weights: QoeWeights,
    pub horizon: Horizon,
    /// The viewer leaves once the session wall clock reaches this, seconds.
    pub watch_duration: f64,
    pub stream_id: u64,
    pub expt_id: u64,
    /// Epoch seconds assigned to the session start in telemetry.
    pub start_epoch: f64,
    /// First chunk of the video this session starts from.
    pub start_chunk: usize,
    /// Stall charged when a chunk is never delivered, before aborting.
    pub stall_cap: f64,
}

impl SessionConfig {
    pub fn new(scheme: Scheme, watch_duration: f64) -> Self {
        Self {
            scheme,
            weights: QoeWeights::default(),
            horizon: Horizon::default(),
            watch_duration,
            stream_id: 0,
            expt_id: 0,
            start_epoch: 1.6e9,
            start_chunk: 0,
            stall_cap: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbortReason {
    /// The network went silent forever mid-chunk.
    NeverDelivered,
    /// The scheme could not run (for example a predictor with wrong dims).
    SchemeError(String),
}

/// Per-chunk outcome record.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    /// Position within the session.
    pub index: usize,
    /// Chunk presentation index in the video (the telemetry join key).
    pub video_ts: u64,
    pub version: usize,
    pub size: u64,
    pub quality: f64,
    pub transmission_time: f64,
    /// Buffer when the download started, seconds.
    pub buffer_before: f64,
    /// Buffer after the chunk was added, seconds.
    pub buffer_after: f64,
    /// Stall incurred while this chunk downloaded, seconds.
    pub stall: f64,
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub records: Vec<ChunkRecord>,
    /// Time before the first chunk finished delivering, nanoseconds.
    pub startup_ns: u64,
    /// Video time played, nanoseconds.
    pub played_ns: u64,
    /// Total rebuffering time, nanoseconds.
    pub stalled_ns: u64,
    pub aborted: Option<AbortReason>,
}

impl SessionResult {
    pub fn startup_time(&self) -> f64 {
        to_secs(self.startup_ns)
    }

    pub fn played_time(&self) -> f64 {
        to_secs(self.played_ns)
    }

    pub fn stall_time(&self) -> f64 {
        to_secs(self.stalled_ns)
    }

    /// Total session wall clock; exactly startup + played + stalled.
    pub fn wall_clock_ns(&self) -> u64 {
        self.startup_ns + self.played_ns + self.stalled_ns
    }

    pub fn wall_clock(&self) -> f64 {
        to_secs(self.wall_clock_ns())
    }
}

/// Synthesizes transport statistics from the last completed delivery: the
/// delivery rate is the last chunk's bytes over seconds, both RTT fields sit
/// at the path's base delay, and cwnd/in-flight are the bandwidth-delay
/// product in 1500-byte packets.
pub fn synth_transport_stats(
    last_delivery: Option<(f64, f64)>,
    base_delay: f64,
) -> TransportStats {
    let delivery_rate = last_delivery.map(|(bytes, secs)| bytes / secs).unwrap_or(0.0);
    let packets = delivery_rate * base_delay / 1500.0;
    TransportStats {
        cwnd: packets,
        in_flight: packets,
        min_rtt: base_delay,
        srtt: base_delay,
        delivery_rate,
    }
}

struct SessionState {
    startup_ns: u64,
    played_ns: u64,
    stalled_ns: u64,
    buffer_ns: u64,
    playing: bool,
    last_quality: f64,
    history: Vec<(f64, f64)>,
    thr_history: ThroughputHistory,
    err_window: ErrorWindow,
    last_delivery: Option<(f64, f64)>,
}

impl SessionState {
    fn wall_ns(&self) -> u64 {
        self.startup_ns + self.played_ns + self.stalled_ns
    }

    fn wall_secs(&self) -> f64 {
        to_secs(self.wall_ns())
    }

    /// Plays `ns` of buffered video.
    fn play(&mut self, ns: u64) {
        debug_assert!(ns <= self.buffer_ns);
        self.buffer_ns -= ns;
        self.played_ns += ns;
    }
}

/// Runs one session to its watch duration (or the video's end), returning
/// the per-chunk results and the telemetry archive rows.
pub fn run_session(
    config: &SessionConfig,
    trace: &NetworkTrace,
    video: &VideoSpec,
) -> (SessionResult, Archive) {
    let mut archive = Archive::default();
    let mut st = SessionState {
        startup_ns: 0,
        played_ns: 0,
        stalled_ns: 0,
        buffer_ns: 0,
        playing: false,
        last_quality: 0.0,
        history: Vec::new(),
        thr_history: ThroughputHistory::new(),
        err_window: ErrorWindow::new(),
        last_delivery: None,
    };
    let mut records = Vec::new();
    let mut aborted = None;

    if let Scheme::Fugu { predictor } = &config.scheme {
        if let Err(e) = predictor.validate() {
            return (
                SessionResult {
                    records,
                    startup_ns: 0,
                    played_ns: 0,
                    stalled_ns: 0,
                    aborted: Some(AbortReason::SchemeError(e.to_string())),
                },
                archive,
            );
        }
    }

    let dur_ns = to_nanos(video.chunk_duration);
    let watch_ns = to_nanos(config.watch_duration);
    let max_buffer_ns = to_nanos(config.weights.max_buffer);
    let total = video.total_chunks();

    let buffer_row = |st: &SessionState, event: BufferEvent| ClientBufferRow {
        time: config.start_epoch + st.wall_secs(),
        stream_id: config.stream_id,
        expt_id: config.expt_id,
        event,
        buffer: to_secs(st.buffer_ns),
        cum_rebuf: to_secs(st.stalled_ns),
    };

    let mut index = 0usize;
    while st.wall_ns() < watch_ns {
        let chunk_pos = config.start_chunk + index;
        if chunk_pos >= total {
            break; // video ended
        }
        let chunk = &video.chunks[chunk_pos];

        // wait for buffer room before fetching the next chunk
        if st.buffer_ns + dur_ns > max_buffer_ns {
            let wait = st.buffer_ns + dur_ns - max_buffer_ns;
            st.play(wait.min(st.buffer_ns));
            archive.buffer.push(buffer_row(&st, BufferEvent::Periodic));
            if st.wall_ns() >= watch_ns {
                break;
            }
        }

        let stats = synth_transport_stats(st.last_delivery, trace.base_delay);
        let state = PlaybackState {
            buffer: to_secs(st.buffer_ns),
            last_quality: st.last_quality,
            playing: st.playing,
            cumulative_stall: to_secs(st.stalled_ns),
        };
        // the first chunk has no predecessor to vary from
        let weights = if st.playing {
            config.weights.clone()
        } else {
            QoeWeights { lambda: 0.0, ..config.weights.clone() }
        };
        let upcoming = &video.chunks[chunk_pos..total.min(chunk_pos + config.horizon.steps)];
        let version_idx = match &config.scheme {
            Scheme::Bba { reservoir, cushion_top } => {
                bba_select(chunk, &state, *reservoir, *cushion_top)
            }
            Scheme::MpcHm => {
                mpc_hm_plan(upcoming, &state, &st.thr_history, &stats, &weights, &config.horizon)
                    .version
            }
            Scheme::RobustMpcHm => robust_mpc_hm_plan(
                upcoming,
                &state,
                &st.thr_history,
                &st.err_window,
                &stats,
                &weights,
                &config.horizon,
            )
            .version,
            Scheme::Fugu { predictor } => {
                let base = TtpInput::new(&st.history, stats, 0.0);
                let horizon_steps = config.horizon.steps;
                let pred = |step: usize, version: &crate::domain::ChunkVersion| {
                    predictor.distribution(
                        &base.with_candidate(version.size as f64),
                        step,
                        horizon_steps,
                    )
                };
                mpc_plan(upcoming, &state, &pred, &weights, &config.horizon).version
            }
        };
        let version = &chunk.versions[version_idx];

        let send_time = config.start_epoch + st.wall_secs();
        archive.sent.push(VideoSentRow {
            time: send_time,
            stream_id: config.stream_id,
            expt_id: config.expt_id,
            video_ts: chunk_pos as u64,
            size: version.size,
            ssim_index: db_to_ssim(version.quality),
            cwnd: stats.cwnd,
            in_flight: stats.in_flight,
            min_rtt: stats.min_rtt,
            rtt: stats.srtt,
            delivery_rate: stats.delivery_rate,
        });

        let buffer_before = to_secs(st.buffer_ns);
        let Some(t_secs) = transmit(version.size as f64, trace, st.wall_secs()) else {
            // dead network: drain, charge the capped stall, and give up
            if st.playing {
                st.play(st.buffer_ns);
                st.stalled_ns += to_nanos(config.stall_cap);
                archive.buffer.push(buffer_row(&st, BufferEvent::Rebuffer));
            }
            aborted = Some(AbortReason::NeverDelivered);
            break;
        };
        let t_ns = to_nanos(t_secs);

        let mut stall_ns = 0;
        if st.playing {
            let play = t_ns.min(st.buffer_ns);
            stall_ns = t_ns - play;
            st.play(play);
            if stall_ns > 0 {
                archive.buffer.push(buffer_row(&st, BufferEvent::Rebuffer));
                st.stalled_ns += stall_ns;
            }
        } else {
            st.startup_ns += t_ns;
            st.playing = true;
        }
        st.buffer_ns = (st.buffer_ns + dur_ns).min(max_buffer_ns);
        let event = if !records.is_empty() && stall_ns == 0 {
            BufferEvent::Periodic
        } else if records.is_empty() {
            BufferEvent::Startup
        } else {
            BufferEvent::Play
        };
        archive.buffer.push(buffer_row(&st, event));
        archive.acked.push(VideoAckedRow {
            time: send_time + t_secs,
            stream_id: config.stream_id,
            expt_id: config.expt_id,
            video_ts: chunk_pos as u64,
        });

        records.push(ChunkRecord {
            index,
            video_ts: chunk_pos as u64,
            version: version_idx,
            size: version.size,
            quality: version.quality,
            transmission_time: t_secs,
            buffer_before,
            buffer_after: to_secs(st.buffer_ns),
            stall: to_secs(stall_ns),
        });

        // post-delivery bookkeeping for the predictors
        if let Scheme::RobustMpcHm = &config.scheme {
            let predicted = if st.thr_history.is_empty() {
                stats.delivery_rate
            } else {
                hm_predict(&st.thr_history).expect("non-empty")
            };
            let actual = version.size as f64 / t_secs;
            if predicted > 0.0 {
                st.err_window.push((predicted - actual).abs() / actual);
            }
        }
        st.history.push((version.size as f64, t_secs));
        st.thr_history.push(version.size as f64 / t_secs);
        st.last_delivery = Some((version.size as f64, t_secs));
        st.last_quality = version.quality;
        index += 1;
    }

    // the viewer drains what is buffered (up to the watch limit)
    if st.playing && aborted.is_none() && st.buffer_ns > 0 && st.wall_ns() < watch_ns {
        let drain = st.buffer_ns.min(watch_ns - st.wall_ns());
        st.play(drain);
    }
    archive.buffer.push(buffer_row(&st, BufferEvent::Periodic));

    (
        SessionResult {
            records,
            startup_ns: st.startup_ns,
            played_ns: st.played_ns,
            stalled_ns: st.stalled_ns,
            aborted,
        },
        archive,
    )
}
