use std::path::PathBuf;

use thiserror::Error;

use crate::grid::CellIndex;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell ({x}, {y}) is outside a {height}x{width} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        height: usize,
        width: usize,
    },

    #[error("point ({lat}, {lon}) lies outside the grid bounding box")]
    OutOfDomain { lat: f64, lon: f64 },

    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{channel} value {value} at flat index {index} violates the channel range")]
    ChannelRange {
        channel: &'static str,
        index: usize,
        value: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("cannot impute station {station} at hour {hour}: no neighbour within {radius_km} km")]
    UnimputableGap {
        station: String,
        hour: i64,
        radius_km: f64,
    },

    #[error("undefined metric {metric}: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: String,
    },

    #[error("episode already finished; call reset first")]
    EpisodeDone,

    #[error("action {action} is outside the action space of size {size}")]
    InvalidAction { action: usize, size: usize },

    #[error("every action is masked; the distribution is degenerate")]
    DegenerateDistribution,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at episode {episode}: {reason}")]
    Diverged {
        episode: usize,
        reason: String,
        snapshot: Option<PathBuf>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("self-check failed: {0}")]
    SelfCheck(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn out_of_bounds(cell: CellIndex, height: usize, width: usize) -> Self {
        Error::OutOfBounds {
            x: cell.x,
            y: cell.y,
            height,
            width,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs or configuration rather
    /// than by a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::MissingInput(_)
                | Error::Parse { .. }
                | Error::ChannelRange { .. }
                | Error::InvalidGrid(_)
                | Error::InvalidParameter(_)
                | Error::OutOfDomain { .. }
        )
    }
}
