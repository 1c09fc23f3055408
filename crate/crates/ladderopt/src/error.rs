//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rate-quality curve needs at least 2 samples, got {count}")]
    TooFewSamples { count: usize },

    #[error("sample bitrate must be positive and finite, got {bitrate}")]
    BadSampleBitrate { bitrate: f64 },

    #[error("sample quality must be finite, got {quality}")]
    BadSampleQuality { quality: f64 },

    #[error("duplicate sample bitrate {bitrate} in curve for resolution {resolution}p")]
    DuplicateSampleBitrate { resolution: u32, bitrate: f64 },

    #[error("sample qualities must be non-decreasing in bitrate for resolution {resolution}p (quality drops at bitrate {bitrate})")]
    NonMonotoneQuality { resolution: u32, bitrate: f64 },

    #[error("curve resolution {resolution}p exceeds source resolution {source_resolution}p")]
    CurveAboveSource {
        resolution: u32,
        source_resolution: u32,
    },

    #[error("chunk model has no curve for resolution {resolution}p")]
    UnknownResolution { resolution: u32 },

    #[error("chunk model needs at least one curve")]
    EmptyModel,

    #[error("duplicate curve resolution {resolution}p in chunk model")]
    DuplicateResolution { resolution: u32 },

    #[error("synthetic curve parameters must be positive (a={a}, b={b}, r_knee={r_knee})")]
    BadSynthParams { a: f64, b: f64, r_knee: f64 },

    #[error("operating point set is empty")]
    EmptyPointSet,

    #[error("operating point (rate {rate}, quality {quality}) must be finite with positive rate")]
    BadPoint { rate: f64, quality: f64 },

    #[error("ladder needs at least one entry")]
    EmptyLadder,

    #[error("ladder entries must have positive finite bitrates, got {bitrate}")]
    BadLadderBitrate { bitrate: f64 },

    #[error("ladder bitrates must be non-decreasing with entry order (entry {index} has bitrate {bitrate} after {previous})")]
    LadderBitrateOrder {
        index: usize,
        bitrate: f64,
        previous: f64,
    },

    #[error("ladder resolutions must be non-decreasing with bitrate (entry {index} has resolution {resolution}p after {previous}p)")]
    LadderResolutionOrder {
        index: usize,
        resolution: u32,
        previous: u32,
    },

    #[error("ladder has two entries with resolution {resolution}p and bitrate {bitrate}")]
    DuplicateLadderEntry { resolution: u32, bitrate: f64 },

    #[error("ladder bitrate {bitrate} for resolution {resolution}p is outside the curve's sampled range [{lo}, {hi}]")]
    BitrateOutsideCurve {
        resolution: u32,
        bitrate: f64,
        lo: f64,
        hi: f64,
    },

    #[error("viewport probabilities must sum to 1, got {sum}")]
    PmfNotNormalized { sum: f64 },

    #[error("viewport height {height}p is not a supported value")]
    UnsupportedViewport { height: u32 },

    #[error("no usable records in trace (saw {skipped} malformed records)")]
    EmptyTrace { skipped: u64 },

    #[error("bandwidth interval has lo {lo} > hi {hi}")]
    BadInterval { lo: f64, hi: f64 },

    #[error("bandwidth density is undefined under step smoothing; use piecewise linear smoothing")]
    DensityUnderStep,

    #[error("no sample labeled {label:?} in curve for resolution {resolution}p")]
    MissingLabel { resolution: u32, label: String },

    #[error("anchor resolution {resolution}p is not in the chunk model")]
    MissingAnchor { resolution: u32 },

    #[error("anchor resolutions must straddle the model: low {low}p must be <= high {high}p")]
    BadAnchors { low: u32, high: u32 },

    #[error("cannot parse baseline spec {spec:?}; expected fixed:<label> or hull:<low>:<high>:<label>")]
    BadBaselineSpec { spec: String },

    #[error("ordered box is empty: no bitrates satisfy the bounds and minimum gap")]
    EmptyFeasibleBox,

    #[error("quality floor {quality_floor} is unreachable: quality at the upper bitrate bounds is {attainable}")]
    UnreachableQualityFloor {
        quality_floor: f64,
        attainable: f64,
    },

    #[error("no start reached quality floor {quality_floor} within the iteration budget (best shortfall {shortfall})")]
    Infeasible {
        quality_floor: f64,
        shortfall: f64,
    },

    #[error("optimizer needs at least one start")]
    NoStarts,

    #[error("start {index} has {got} bitrates but the problem has {expected} entries")]
    BadStartLength {
        index: usize,
        got: usize,
        expected: usize,
    },

    #[error("simulation needs at least one session and one segment per session")]
    EmptySimulation,

    #[error("comparison needs at least two reports")]
    TooFewReports,

    #[error("comparison reference {name:?} is not among the reports")]
    MissingReference { name: String },

    #[error("reports cover different chunks: {a:?} vs {b:?}")]
    MismatchedChunks { a: String, b: String },

    #[error("{path}: cannot detect trace format from extension (expected .csv, .jsonl, .ndjson, optionally .gz)")]
    UnknownTraceFormat { path: PathBuf },

    #[error("{path} line {line}: {message}")]
    TraceParse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: unsupported schema_version {found} (this build reads version {supported})")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
}

impl Error {
    /// Attaches a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a path to a JSON error.
    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
