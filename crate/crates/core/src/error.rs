use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("zero valid rows ({rejected} rejected)")]
    ZeroValidRows { rejected: usize },

    #[error("invalid firm record: {0}")]
    InvalidRecord(String),

    #[error("unknown industry {0:?} (strict classification)")]
    UnknownIndustry(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-positive or non-finite size {0}")]
    NonPositiveSize(f64),

    #[error("need at least {need} points in range [{s_minus}, {s_plus}], found {found}")]
    TooFewInRange {
        need: usize,
        found: usize,
        s_minus: f64,
        s_plus: f64,
    },

    #[error("zero variance of log(size) in fit range")]
    ZeroVariance,

    #[error("fitted exponent is not positive (gamma_hat = {0})")]
    NonPositiveExponent(f64),

    #[error("invalid range: s_minus = {s_minus}, s_plus = {s_plus}")]
    InvalidRange { s_minus: f64, s_plus: f64 },

    #[error("no candidate range satisfies residual RMS <= {threshold}")]
    NoAdmissibleRange { threshold: f64 },

    #[error("n_top = {n_top} exceeds available firms ({available})")]
    TopExceedsSize { n_top: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parameters imply negative exit rate h = {0}")]
    NegativeExitRate(f64),

    #[error("only {found} firms matched by name, need at least {need}")]
    TooFewMatches { found: usize, need: usize },

    #[error("time step too coarse: {rate_name} * dt = {value} > 0.5")]
    StepTooCoarse { rate_name: &'static str, value: f64 },

    #[error("population extinct at t = {time} years")]
    Extinct { time: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("simulation failed at lambda = {lambda}: {source}")]
    Candidate {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Name of the module an error originates from, for machine-readable
    /// error records.
    pub fn module(&self) -> &'static str {
        use Error::*;
        match self {
            Io { .. } | Csv(_) | MalformedHeader(_) | ZeroValidRows { .. } | InvalidRecord(_) | UnknownIndustry(_) => {
                "dataset"
            }
            EmptyInput(_)
            | NonPositiveSize(_)
            | TooFewInRange { .. }
            | ZeroVariance
            | NonPositiveExponent(_)
            | InvalidRange { .. }
            | NoAdmissibleRange { .. } => "tailfit",
            TopExceedsSize { .. } => "sbindex",
            InvalidParameter(_)
            | NegativeExitRate(_)
            | TooFewMatches { .. }
            | StepTooCoarse { .. }
            | Extinct { .. } => "prgsim",
            LengthMismatch(_) | Candidate { .. } => "calibrate",
        }
    }

    /// Short stable identifier of the error kind.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            Io { .. } => "io",
            Csv(_) => "csv",
            MalformedHeader(_) => "malformed_header",
            ZeroValidRows { .. } => "zero_valid_rows",
            InvalidRecord(_) => "invalid_record",
            UnknownIndustry(_) => "unknown_industry",
            EmptyInput(_) => "empty_input",
            NonPositiveSize(_) => "non_positive_size",
            TooFewInRange { .. } => "too_few_in_range",
            ZeroVariance => "zero_variance",
            NonPositiveExponent(_) => "non_positive_exponent",
            InvalidRange { .. } => "invalid_range",
            NoAdmissibleRange { .. } => "no_admissible_range",
            TopExceedsSize { .. } => "n_top_exceeds_size",
            InvalidParameter(_) => "invalid_parameter",
            NegativeExitRate(_) => "negative_exit_rate",
            TooFewMatches { .. } => "too_few_matches",
            StepTooCoarse { .. } => "step_too_coarse",
            Extinct { .. } => "extinct",
            LengthMismatch(_) => "length_mismatch",
            Candidate { .. } => "candidate_failed",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
