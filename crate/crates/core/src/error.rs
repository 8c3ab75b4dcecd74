use thiserror::Error;

use crate::geometry::CoordKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid `{coordinate}` function: {message}")]
    Structure { coordinate: String, message: String },
    #[error("mapping defines {found} output bits but the address is {expected} bits wide")]
    WidthMismatch { expected: u32, found: u32 },
    #[error("mapping is not invertible (rank {rank} of {width})")]
    Singular { rank: usize, width: u32 },
    #[error("physical address {pa:#x} outside [0, {total:#x})")]
    PaOutOfRange { pa: u64, total: u64 },
    #[error("{field} index {value} out of range (extent {extent})")]
    CoordOutOfRange {
        field: CoordKind,
        value: u64,
        extent: u64,
    },
    #[error("unknown preset mapping `{0}`")]
    UnknownPreset(String),
    #[error("geometry incompatible with preset mappings: {0}")]
    PresetGeometry(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid plan request: {0}")]
    Invalid(String),
    #[error("no placement for vm{vm} ({size:#x} bytes): {reason}")]
    Infeasible { vm: u32, size: u64, reason: String },
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Scenario(_) => "scenario",
            HarnessError::Map(_) => "mapping",
            HarnessError::Plan(_) => "plan",
            HarnessError::Trace(_) => "trace",
            HarnessError::Io { .. } => "io",
            HarnessError::Json { .. } => "json",
        }
    }
}
