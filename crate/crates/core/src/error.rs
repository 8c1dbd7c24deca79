use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("negative PSD value {value} at channel {channel}, bin {bin}")]
    NegativePsd { channel: usize, bin: usize, value: f64 },
    #[error("unsupported sample rate {0} Hz (only 16000 Hz is accepted)")]
    SampleRate(u32),
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("rank-deficient regressor at channel {channel}, frequency bin {bin}")]
    RankDeficient { channel: usize, bin: usize },
    #[error("undefined ratio: {0}")]
    ZeroEnergy(String),
    #[error("state snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
