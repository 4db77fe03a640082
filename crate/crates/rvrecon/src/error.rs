//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough
//! context (file, row, index, shape) that a caller can report the failure
//! without re-deriving where it happened.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the crate.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A constructor or operation received an argument that violates its
    /// documented preconditions.
    #[error("invalid {what}: {why}")]
    InvalidInput {
        /// What was being constructed or called.
        what: String,
        /// Which precondition failed.
        why: String,
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite {
        /// Where the value appeared.
        context: String,
    },

    /// Malformed tabular input.
    #[error("{path}:{row}: {msg}")]
    Malformed {
        /// Offending file.
        path: String,
        /// 1-based line number (the header is line 1).
        row: usize,
        /// What was wrong.
        msg: String,
    },

    /// A file header did not match the required schema.
    #[error("{path}: schema mismatch: {msg}")]
    Schema {
        /// Offending file.
        path: String,
        /// Expected-versus-found description.
        msg: String,
    },

    /// Array dimensions disagree with what the operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An RV window caught fewer than two respiratory samples.
    #[error("degenerate RV window at volume {volume}: {n_samples} sample(s) in window, need at least 2")]
    DegenerateWindow {
        /// Volume whose window was degenerate.
        volume: usize,
        /// How many belt samples the window caught.
        n_samples: usize,
    },

    /// A scan has fewer volumes than one analysis window.
    #[error("scan too short: {t} volumes, need at least {needed}")]
    ScanTooShort {
        /// Volumes present.
        t: usize,
        /// Volumes required.
        needed: usize,
    },

    /// Not enough data for the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A frequency band contains no PSD bins.
    #[error("no spectral bins in band [{lo} Hz, {hi} Hz]")]
    EmptyBand {
        /// Band lower edge in Hz.
        lo: f64,
        /// Band upper edge in Hz.
        hi: f64,
    },

    /// A quantity that must vary was constant.
    #[error("zero variance in {0}")]
    ZeroVariance(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Divergence {
        /// Epoch (0-based) in which the loss went non-finite.
        epoch: usize,
        /// Batch index (0-based) within that epoch.
        batch: usize,
        /// Details, including the offending example if known.
        msg: String,
    },

    /// A model checkpoint could not be interpreted.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Incompatible channel layout (e.g. a 96-channel model fed 90 channels).
    #[error("channel mode mismatch: {0}")]
    ChannelMode(String),

    /// Cross-validation setup is impossible for the given data.
    #[error("fold split: {0}")]
    Split(String),

    /// A statistical test received unusable input.
    #[error("statistical test: {0}")]
    StatTest(String),

    /// Filesystem failure, with the path that triggered it.
    #[error("{path}: {source}")]
    Io {
        /// Offending path.
        path: String,
        /// Underlying I/O error.
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure, with the path involved.
    #[error("{path}: {source}")]
    Json {
        /// Offending file (or a label for in-memory serialization).
        path: String,
        /// Underlying JSON error.
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Shorthand for [`Error::InvalidInput`].
    pub fn invalid(what: impl Into<String>, why: impl Into<String>) -> Self {
        Error::InvalidInput {
            what: what.into(),
            why: why.into(),
        }
    }

    /// Shorthand for [`Error::Io`] keeping the offending path.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
