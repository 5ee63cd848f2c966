//! Core value types shared by every controller: encoded chunk versions,
//! QoE weights, playback state, and the buffer/QoE arithmetic.

use thiserror::Error;

/// Default chunk duration in seconds (NTSC-rate video segments).
pub const DEFAULT_CHUNK_DURATION: f64 = 2.002;

/// Default maximum playback buffer in seconds.
pub const DEFAULT_MAX_BUFFER: f64 = 15.0;

/// SSIM-dB value assigned to (near-)lossless chunks instead of +inf.
pub const SSIM_DB_CAP: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("ssim index {0} outside [0, 1]")]
    SsimOutOfRange(f64),
    #[error("chunk needs at least one version")]
    NoVersions,
    #[error("chunk version sizes must be strictly increasing (index {0})")]
    NonIncreasingSizes(usize),
    #[error("invalid chunk version: {0}")]
    InvalidVersion(String),
}

/// One encoded version of a video chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkVersion {
    /// Compressed size in bytes.
    pub size: u64,
    /// Picture quality in SSIM-dB.
    pub quality: f64,
    /// Play duration in seconds.
    pub duration: f64,
}

impl ChunkVersion {
    pub fn new(size: u64, quality: f64) -> Self {
        Self::with_duration(size, quality, DEFAULT_CHUNK_DURATION)
    }

    pub fn with_duration(size: u64, quality: f64, duration: f64) -> Self {
        debug_assert!(size > 0 && duration > 0.0 && quality.is_finite());
        Self { size, quality, duration }
    }

    fn validate(&self) -> Result<(), DomainError> {
        if self.size == 0 {
            return Err(DomainError::InvalidVersion("size must be positive".into()));
        }
        if !(self.duration > 0.0) {
            return Err(DomainError::InvalidVersion("duration must be positive".into()));
        }
        if !self.quality.is_finite() {
            return Err(DomainError::InvalidVersion("quality must be finite".into()));
        }
        Ok(())
    }
}

/// A chunk together with the menu of encoded versions the controller picks from.
///
/// Versions are kept in ascending size order with no duplicate sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub index: usize,
    pub versions: Vec<ChunkVersion>,
}

impl Chunk {
    pub fn new(index: usize, versions: Vec<ChunkVersion>) -> Result<Self, DomainError> {
        if versions.is_empty() {
            return Err(DomainError::NoVersions);
        }
        for (i, v) in versions.iter().enumerate() {
            v.validate()?;
            if i > 0 && versions[i - 1].size >= v.size {
                return Err(DomainError::NonIncreasingSizes(i));
            }
        }
        Ok(Self { index, versions })
    }

    pub fn min_size(&self) -> u64 {
        self.versions.first().map(|v| v.size).unwrap_or(0)
    }

    pub fn max_size(&self) -> u64 {
        self.versions.last().map(|v| v.size).unwrap_or(0)
    }
}

/// Weights of the per-chunk QoE objective plus the buffer cap they assume.
#[derive(Debug, Clone, PartialEq)]
pub struct QoeWeights {
    /// Quality-variation penalty weight (dimensionless, on the dB scale).
    pub lambda: f64,
    /// Stall penalty in QoE units per second of rebuffering.
    pub mu: f64,
    /// Maximum playback buffer in seconds.
    pub max_buffer: f64,
}

impl Default for QoeWeights {
    fn default() -> Self {
        Self { lambda: 1.0, mu: 100.0, max_buffer: DEFAULT_MAX_BUFFER }
    }
}

/// Client playback state as seen by a controller at decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackState {
    /// Buffered video in seconds, within [0, max_buffer].
    pub buffer: f64,
    /// SSIM-dB of the previously selected chunk.
    pub last_quality: f64,
    /// False only before the first chunk has been delivered.
    pub playing: bool,
    /// Total stall time accumulated so far this stream.
    pub cumulative_stall: f64,
}

impl PlaybackState {
    pub fn startup() -> Self {
        Self { buffer: 0.0, last_quality: 0.0, playing: false, cumulative_stall: 0.0 }
    }
}

/// Converts an SSIM index in [0, 1] to the dB scale, capped for lossless input.
pub fn ssim_to_db(ssim_index: f64) -> Result<f64, DomainError> {
    if !(0.0..=1.0).contains(&ssim_index) || ssim_index.is_nan() {
        return Err(DomainError::SsimOutOfRange(ssim_index));
    }
    if ssim_index >= 1.0 - 1e-6 {
        return Ok(SSIM_DB_CAP);
    }
    Ok(-10.0 * (1.0 - ssim_index).log10())
}

/// Inverse of [`ssim_to_db`] for telemetry emission.
pub fn db_to_ssim(db: f64) -> f64 {
    if db >= SSIM_DB_CAP {
        return 1.0;
    }
    1.0 - 10f64.powf(-db / 10.0)
}

/// Per-chunk QoE: quality minus the variation penalty minus the stall penalty.
///
/// `buffer` is the playback buffer at the moment the chunk starts downloading;
/// any transmission time beyond it counts as a stall.
pub fn chunk_qoe(
    version: &ChunkVersion,
    prev_quality: f64,
    transmission_time: f64,
    buffer: f64,
    weights: &QoeWeights,
) -> f64 {
    let q = version.quality;
    q - weights.lambda * (q - prev_quality).abs()
        - weights.mu * (transmission_time - buffer).max(0.0)
}

/// Buffer dynamics for one chunk download.
///
/// Drains the buffer by the full transmission time (stalling once it empties),
/// then adds the chunk's duration, capped at `max_buffer`. Returns the new
/// buffer level and the stall incurred.
pub fn advance_buffer(
    buffer: f64,
    transmission_time: f64,
    chunk_duration: f64,
    max_buffer: f64,
) -> (f64, f64) {
    let stall = (transmission_time - buffer).max(0.0);
    let new_buffer = ((buffer - transmission_time).max(0.0) + chunk_duration).min(max_buffer);
    (new_buffer, stall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ssim_to_db_known_values() {
        assert_relative_eq!(ssim_to_db(0.9).unwrap(), 10.0, max_relative = 1e-12);
        assert_eq!(ssim_to_db(0.0).unwrap(), 0.0);
        assert_relative_eq!(ssim_to_db(0.99).unwrap(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn ssim_to_db_clamps_lossless() {
        assert_eq!(ssim_to_db(1.0).unwrap(), SSIM_DB_CAP);
        assert_eq!(ssim_to_db(1.0 - 1e-7).unwrap(), SSIM_DB_CAP);
    }

    #[test]
    fn ssim_to_db_rejects_out_of_range() {
        assert!(ssim_to_db(-0.1).is_err());
        assert!(ssim_to_db(1.2).is_err());
        assert!(ssim_to_db(f64::NAN).is_err());
    }

    #[test]
    fn db_round_trip() {
        for &s in &[0.0, 0.3, 0.9, 0.99, 0.9999] {
            let db = ssim_to_db(s).unwrap();
            assert_relative_eq!(db_to_ssim(db), s, epsilon = 1e-12);
        }
    }

    #[test]
    fn qoe_hand_evaluations() {
        let w = QoeWeights::default();
        let v = |q: f64| ChunkVersion::new(1, q);
        assert_relative_eq!(chunk_qoe(&v(16.0), 15.0, 0.5, 2.0, &w), 15.0);
        assert_relative_eq!(chunk_qoe(&v(16.0), 16.0, 0.0, 0.0, &w), 16.0);
        assert_relative_eq!(chunk_qoe(&v(16.0), 15.0, 0.5, 0.125, &w), -22.5);
    }

    #[test]
    fn advance_buffer_hand_evaluations() {
        assert_eq!(advance_buffer(5.0, 1.0, 2.002, 15.0), (6.002, 0.0));
        assert_eq!(advance_buffer(0.0, 0.0, 2.002, 15.0), (2.002, 0.0));
        let (b, stall) = advance_buffer(0.5, 2.0, 2.002, 15.0);
        assert_relative_eq!(b, 2.002);
        assert_relative_eq!(stall, 1.5);
    }

    #[test]
    fn chunk_rejects_bad_version_lists() {
        assert_eq!(Chunk::new(0, vec![]).unwrap_err(), DomainError::NoVersions);
        let dup = vec![ChunkVersion::new(5, 1.0), ChunkVersion::new(5, 2.0)];
        assert!(matches!(Chunk::new(0, dup), Err(DomainError::NonIncreasingSizes(1))));
        let decreasing = vec![ChunkVersion::new(9, 1.0), ChunkVersion::new(5, 2.0)];
        assert!(Chunk::new(0, decreasing).is_err());
    }

    proptest! {
        #[test]
        fn qoe_non_increasing_in_transmission_time(
            q in 0.0..30.0f64, prev in 0.0..30.0f64,
            t1 in 0.0..20.0f64, dt in 0.0..20.0f64, b in 0.0..15.0f64,
        ) {
            let w = QoeWeights::default();
            let v = ChunkVersion::new(1, q);
            let lo = chunk_qoe(&v, prev, t1 + dt, b, &w);
            let hi = chunk_qoe(&v, prev, t1, b, &w);
            prop_assert!(lo <= hi + 1e-12);
        }

        #[test]
        fn advance_buffer_stays_in_range(
            b in 0.0..15.0f64, t in 0.0..40.0f64, dur in 0.01..5.0f64,
        ) {
            let (nb, stall) = advance_buffer(b, t, dur, 15.0);
            prop_assert!((0.0..=15.0).contains(&nb));
            prop_assert!(stall >= 0.0);
            if t <= b {
                prop_assert_eq!(stall, 0.0);
            }
        }

        #[test]
        fn ssim_to_db_strictly_increasing(a in 0.0..0.999f64, d in 1e-6..0.0009f64) {
            let b = (a + d).min(1.0 - 1e-6);
            prop_assume!(b > a);
            prop_assert!(ssim_to_db(b).unwrap() > ssim_to_db(a).unwrap());
        }
    }
}
