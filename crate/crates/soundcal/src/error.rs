use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported MLS order {0}: primitive polynomial table covers orders 2..=20")]
    UnsupportedOrder(u32),

    #[error("no supported MLS order is close to {0} samples")]
    NoSuitableOrder(f64),

    #[error("invalid signal: {0}")]
    BadSignal(String),

    #[error("frequency {freq_hz} Hz is at or above Nyquist ({nyquist_hz} Hz)")]
    AboveNyquist { freq_hz: f64, nyquist_hz: f64 },

    #[error("tone not detected: {0}")]
    ToneNotDetected(String),

    #[error("period not detected: {0}")]
    PeriodNotDetected(String),

    #[error("resample ratio {0:.4} outside sanity bounds [0.25, 4]")]
    RatioOutOfRange(f64),

    #[error("length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("frequency responses are on different bin grids")]
    GridMismatch,

    #[error("gain curve unusable for fitting: {0}")]
    InsufficientPoints(String),

    #[error("compression fit did not converge; best RMS error {best_rms_db:.3} dB")]
    NonConvergence { best_rms_db: f64 },

    #[error("requested duration {duration_sec} s exceeds the response length")]
    DurationTooLong { duration_sec: f64 },

    #[error("all-zero {0}")]
    AllZero(&'static str),

    #[error("cannot satisfy power limit: minimal band already holds {found_db:.1} dB > {limit_db:.1} dB")]
    PowerLimitUnsatisfiable { limit_db: f64, found_db: f64 },

    #[error("noise dominates the recording: {excluded} of {total} in-band bins unusable")]
    NoiseDominates { excluded: usize, total: usize },

    #[error("profile store: {0}")]
    Store(String),

    #[error("broken chain: parent profile {missing_id} not found")]
    BrokenChain { missing_id: String },

    #[error("cycle detected in profile chain at {0}")]
    ChainCycle(String),

    #[error("config: {0}")]
    Config(String),

    #[error("report has no {0} section")]
    MissingReportSection(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
