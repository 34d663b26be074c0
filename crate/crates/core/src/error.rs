use thiserror::Error;

/// Errors produced by the statistics, simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mean photon number must be finite and nonnegative, got {0}")]
    InvalidMean(f64),

    #[error("mode count must be at least 1")]
    InvalidModeCount,

    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("dark count probability must be finite and nonnegative, got {0}")]
    InvalidDarkProb(f64),

    #[error("detector bin count must be at least 1")]
    InvalidBinCount,

    #[error("click count {clicks} outside detector range 0..={bins}")]
    ClickCountOutOfRange { clicks: u32, bins: u32 },

    #[error("Taylor expansion supported to order 1 or 2, got {0}")]
    UnsupportedTaylorOrder(u32),

    #[error("photon-number truncations differ: {left} vs {right}")]
    TruncationMismatch { left: usize, right: usize },

    #[error(
        "photon-number truncation uncertified: tail bound {tail_bound:.3e} exceeds \
         tolerance {tolerance:.3e}; raise n_max"
    )]
    TruncationUncertified { tail_bound: f64, tolerance: f64 },

    #[error("distribution invalid: {0}")]
    InvalidDistribution(String),

    #[error("{quantity} is undefined: {reason}")]
    UndefinedResult {
        quantity: &'static str,
        reason: String,
    },

    #[error("{quantity} out of domain: violated {bound}")]
    OutOfDomain {
        quantity: &'static str,
        bound: String,
    },

    #[error("simulation config invalid: {0}")]
    InvalidSimConfig(String),

    #[error("count tally overflow while merging records")]
    TallyOverflow,

    #[error("count record inconsistent: {0}")]
    InconsistentRecord(String),

    #[error("tag parse error at line {line}: {message}")]
    TagParse { line: u64, message: String },

    #[error("unknown channel {channel} at line {line}")]
    UnknownChannel { channel: u32, line: u64 },

    #[error("tag stream not sorted by timestamp at index {index}")]
    UnsortedTags { index: usize },

    #[error("no trigger tags found in explicit-trigger mode")]
    NoTriggers,

    #[error("gate config invalid: {0}")]
    InvalidGateConfig(String),

    #[error("zero count for {0}; acquire more pulses")]
    ZeroCount(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
