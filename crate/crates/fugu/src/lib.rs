//! Adaptive bitrate control built around a learned transmission-time
//! predictor, with the baseline controllers it is usually compared against,
//! a trace-driven streaming simulator, a telemetry pipeline that closes the
//! collect/train/deploy loop, and a statistics engine for scheme comparison.
//!
//! The crate is organized as a stack:
//!
//! - [`domain`]: chunk/QoE value types and buffer arithmetic.
//! - [`nn`]: a small fully-connected network with manual backprop and SGD.
//! - [`predictors`]: the transmission-time predictor (TTP), its ablated
//!   variants, and the harmonic-mean throughput estimator.
//! - [`control`]: stochastic MPC over the predictor output, MPC-HM,
//!   RobustMPC-HM, BBA, and a brute-force planning oracle.
//! - [`data`]: telemetry row types, CSV archives, the sent/acked join, and
//!   training-set assembly with recency weighting.
//! - [`sim`]: fluid-flow network traces, the per-session playback loop, and
//!   the randomized experiment runner.
//! - [`stats`]: per-stream summaries, pooled metrics, and bootstrap
//!   confidence intervals.
//! - [`cli`]: configuration file handling and the subcommand entry points.

pub mod cli;
pub mod control;
pub mod data;
pub mod domain;
pub mod nn;
pub mod predictors;
pub mod sim;
pub mod stats;
