//! Video specifications: the per-chunk version tables sessions stream from,
//! their file format, and a synthetic generator with VBR-like variability.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::domain::{Chunk, ChunkVersion, DomainError, DEFAULT_CHUNK_DURATION};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("video spec parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid video spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// A video as the ABR controllers see it: equal-duration chunks, each with
/// the same number of encoded versions in ascending size order.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSpec {
    pub chunk_duration: f64,
    pub chunks: Vec<Chunk>,
}

impl VideoSpec {
    pub fn new(chunk_duration: f64, chunks: Vec<Chunk>) -> Result<Self, VideoError> {
        if !(chunk_duration > 0.0) {
            return Err(VideoError::Invalid("chunk_duration must be positive".into()));
        }
        if chunks.is_empty() {
            return Err(VideoError::Invalid("video needs at least one chunk".into()));
        }
        let versions = chunks[0].versions.len();
        for c in &chunks {
            if c.versions.len() != versions {
                return Err(VideoError::Invalid(format!(
                    "chunk {} has {} versions, expected {versions}",
                    c.index,
                    c.versions.len()
                )));
            }
            for v in &c.versions {
                if (v.duration - chunk_duration).abs() > 1e-9 {
                    return Err(VideoError::Invalid(format!(
                        "chunk {} version duration {} differs from {chunk_duration}",
                        c.index, v.duration
                    )));
                }
            }
        }
        Ok(Self { chunk_duration, chunks })
    }

    pub fn total_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn version_count(&self) -> usize {
        self.chunks[0].versions.len()
    }
}

/// Parses the video spec format: a `chunks,duration_s,versions` header line,
/// then one line per chunk of space-separated `size_bytes:ssim_db` pairs in
/// ascending size order. `#` comments and blank lines are ignored.
pub fn load_video_spec(text: &str) -> Result<VideoSpec, VideoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) =
        lines.next().ok_or_else(|| VideoError::Invalid("empty video spec".into()))?;
    let parts: Vec<&str> = header.split(',').collect();
    if parts.len() != 3 {
        return Err(VideoError::Parse {
            line: hline,
            msg: "expected chunks,duration_s,versions".into(),
        });
    }
    let chunk_count: usize = parts[0]
        .trim()
        .parse()
        .map_err(|_| VideoError::Parse { line: hline, msg: "bad chunk count".into() })?;
    let duration: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| VideoError::Parse { line: hline, msg: "bad duration".into() })?;
    let version_count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| VideoError::Parse { line: hline, msg: "bad version count".into() })?;

    let mut chunks = Vec::with_capacity(chunk_count);
    for index in 0..chunk_count {
        let (ln, line) = lines.next().ok_or_else(|| {
            VideoError::Invalid(format!("expected {chunk_count} chunk lines, got {index}"))
        })?;
        let mut versions = Vec::with_capacity(version_count);
        for pair in line.split_whitespace() {
            let (size_str, q_str) = pair.split_once(':').ok_or_else(|| VideoError::Parse {
                line: ln,
                msg: format!("expected size:ssim_db, got {pair:?}"),
            })?;
            let size: u64 = size_str.parse().map_err(|_| VideoError::Parse {
                line: ln,
                msg: format!("bad size {size_str:?}"),
            })?;
            let quality: f64 = q_str.parse().map_err(|_| VideoError::Parse {
                line: ln,
                msg: format!("bad quality {q_str:?}"),
            })?;
            versions.push(ChunkVersion::with_duration(size, quality, duration));
        }
        if versions.len() != version_count {
            return Err(VideoError::Parse {
                line: ln,
                msg: format!("expected {version_count} versions, got {}", versions.len()),
            });
        }
        chunks.push(Chunk::new(index, versions)?);
    }
    VideoSpec::new(duration, chunks)
}

pub fn save_video_spec(video: &VideoSpec) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{},{},{}",
        video.total_chunks(),
        video.chunk_duration,
        video.version_count()
    )
    .expect("write to string");
    for chunk in &video.chunks {
        let line: Vec<String> =
            chunk.versions.iter().map(|v| format!("{}:{}", v.size, v.quality)).collect();
        writeln!(out, "{}", line.join(" ")).expect("write to string");
    }
    out
}

/// Synthetic video generator settings.
///
/// Per-chunk sizes jitter around the per-version means and qualities are
/// drawn to correlate with log size, so size-aware prediction has signal.
#[derive(Debug, Clone)]
pub struct SynthVideoConfig {
    pub chunks: usize,
    pub chunk_duration: f64,
    /// Mean size per version, bytes, ascending.
    pub mean_sizes: Vec<f64>,
    /// Uniform relative size jitter (0.3 means +/-30%).
    pub size_jitter: f64,
    /// SSIM-dB at 1 MB.
    pub quality_at_1mb: f64,
    /// SSIM-dB gained per doubling of size.
    pub quality_per_doubling: f64,
    /// Gaussian quality noise, dB.
    pub quality_noise: f64,
}

impl Default for SynthVideoConfig {
    fn default() -> Self {
        Self {
            chunks: 1800,
            chunk_duration: DEFAULT_CHUNK_DURATION,
            mean_sizes: vec![0.2e6, 0.45e6, 1.0e6, 2.2e6, 3.6e6],
            size_jitter: 0.3,
            quality_at_1mb: 16.0,
            quality_per_doubling: 3.0,
            quality_noise: 0.4,
        }
    }
}

/// Generates a synthetic video, deterministic per seed.
pub fn synth_video_spec(cfg: &SynthVideoConfig, seed: u64) -> VideoSpec {
    assert!(!cfg.mean_sizes.is_empty(), "need at least one version");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.quality_noise.max(1e-12)).expect("valid sigma");
    let mut chunks = Vec::with_capacity(cfg.chunks);
    for index in 0..cfg.chunks {
        let mut versions: Vec<ChunkVersion> = cfg
            .mean_sizes
            .iter()
            .map(|&mean| {
                let jitter = rng.gen_range(-cfg.size_jitter..=cfg.size_jitter);
                let size = (mean * (1.0 + jitter)).max(1.0) as u64;
                let quality = cfg.quality_at_1mb
                    + cfg.quality_per_doubling * (size as f64 / 1e6).log2()
                    + noise.sample(&mut rng);
                ChunkVersion::with_duration(size, quality.clamp(1.0, 59.0), cfg.chunk_duration)
            })
            .collect();
        versions.sort_by_key(|v| v.size);
        // jitter can collide neighboring rungs; nudge duplicates apart
        for i in 1..versions.len() {
            if versions[i].size <= versions[i - 1].size {
                versions[i].size = versions[i - 1].size + 1;
            }
        }
        chunks.push(Chunk::new(index, versions).expect("generated chunk is valid"));
    }
    VideoSpec::new(cfg.chunk_duration, chunks).expect("generated video is valid")
}
