use thiserror::Error;

/// Errors produced by the bdft pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("multisine spec has no components")]
    EmptySpec,
    #[error("invalid multisine spec: {0}")]
    InvalidSpec(String),
    #[error("invalid time series: {0}")]
    InvalidSeries(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("component at {freq_hz} Hz violates Nyquist for sample rate {sample_rate} Hz")]
    NyquistViolation { freq_hz: f64, sample_rate: f64 },
    #[error("signal has zero RMS")]
    ZeroSignal,
    #[error("target PSD has no support inside band [{lo}, {hi}] Hz")]
    BandEmpty { lo: f64, hi: f64 },
    #[error("band [{lo}, {hi}] Hz lies outside the PSD frequency range")]
    BandOutsidePsd { lo: f64, hi: f64 },
    #[error("cannot place {requested} distinct commensurate frequencies in band: {reason}")]
    FrequencyCollision { requested: usize, reason: String },
    #[error("{freq_hz} Hz completes {cycles} cycles on the record; not an integer")]
    NonCommensurate { freq_hz: f64, cycles: f64 },
    #[error("invalid BDFT parameters: {0}")]
    InvalidParams(String),
    #[error("sample rate {sample_rate} Hz too low for natural frequency {natural_frequency} rad/s")]
    SampleRateTooLow {
        sample_rate: f64,
        natural_frequency: f64,
    },
    #[error("scheduling variable {value} outside range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("schedule yields invalid parameters: {0}")]
    InvalidSchedule(String),
    #[error("scheduling variable values are all equal")]
    DegenerateVariable,
    #[error("excitation power at bin {bin} is negligible")]
    ZeroExcitation { bin: usize },
    #[error("need at least {required} frequency points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("measured signal has zero variance")]
    ZeroVariance,
    #[error("length or sample-rate mismatch: {0}")]
    LengthMismatch(String),
    #[error("reference trajectory has content at excitation bin {bin} ({freq_hz} Hz)")]
    ReferenceOverlap { bin: usize, freq_hz: f64 },
    #[error("row {row}, column `{column}`: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Schema {
            row,
            column: String::new(),
            message: e.to_string(),
        }
    }
}
