use thiserror::Error;

#[derive(Debug, Error)]
pub enum DvError {
    #[error("empty audio")]
    EmptyAudio,
    #[error("silent reference: clean signal has zero power")]
    SilentReference,
    #[error("unsupported sample rate {0} Hz (expected 8000)")]
    SampleRate(u32),
    #[error("{what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("missing utterances: {0:?}")]
    MissingUtterances(Vec<String>),
    #[error("unvoiced: no autocorrelation peak above threshold")]
    Unvoiced,
    #[error("training diverged at epoch {epoch} ({phase})")]
    Diverged {
        epoch: usize,
        phase: &'static str,
        last_good: Option<Box<crate::trainer::Checkpoint>>,
    },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Nd(#[from] ndcore::NdError),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DvError>;

pub(crate) fn invalid(msg: impl Into<String>) -> DvError {
    DvError::Invalid(msg.into())
}
