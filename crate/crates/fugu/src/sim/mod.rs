//! Trace-driven streaming simulator: capacity traces and the fluid-flow
//! delivery model, video specs, the per-session playback loop, and the
//! randomized experiment runner.

mod experiment;
mod session;
mod synth;
mod trace;
mod video;

pub use experiment::{
    assignment_log_csv, run_experiment, Assignment, ExperimentConfig, ExperimentOutcome,
    WatchModel,
};
pub use session::{
    run_session, synth_transport_stats, AbortReason, ChunkRecord, Scheme, SessionConfig,
    SessionResult,
};
pub use synth::{synth_traces, SynthTraceConfig};
pub use trace::{load_trace, save_trace, transmit, NetworkTrace, TraceError, DEFAULT_BASE_DELAY};
pub use video::{
    load_video_spec, save_video_spec, synth_video_spec, SynthVideoConfig, VideoError, VideoSpec,
};
