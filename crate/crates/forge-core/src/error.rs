//! Error type shared by all pipeline stages.

use std::path::PathBuf;
use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem failure, tagged with the path that caused it.
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line in an NDJSON file failed to parse. Reported with the file and
    /// 1-based line number so the offending record can be found directly.
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A request named an endpoint that was never registered with the gateway.
    #[error("endpoint `{0}` is not registered")]
    UnregisteredEndpoint(String),

    /// A model reply could not be parsed into the expected structured fields,
    /// even after one corrective retry. The raw reply is preserved for
    /// quarantine and debugging.
    #[error("structured parse failed: {message}")]
    StructuredParse { message: String, raw: String },

    /// A mixture part asked for more data than its matching pool holds.
    #[error("pool `{selector}` cannot satisfy its share: need {needed} {unit}, have {available}")]
    PoolShortfall {
        selector: String,
        needed: u64,
        available: u64,
        unit: &'static str,
    },

    /// A curriculum group referenced a pool selector that matched nothing.
    #[error("empty group pool: selector `{0}` matched no records")]
    EmptyGroupPool(String),

    /// Decontamination was asked to index an empty evaluation set.
    #[error("evaluation set is empty")]
    EmptyEvalSet,

    /// An evaluation task declared a metric that cannot score its answer schema.
    #[error("metric `{metric}` is incompatible with answer schema `{schema}`")]
    MetricSchemaMismatch { metric: String, schema: String },

    /// A document reached a scoring or mixing stage without the artifact the
    /// stage depends on (e.g. a filter verdict with no judgment). This is a
    /// pipeline wiring bug, not a data problem, so it aborts the stage.
    #[error("no judgment for document `{0}`: scoring must run before filtering")]
    MissingJudgment(String),

    /// Invalid configuration (bad weights, missing seed, unparseable spec...).
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Wraps a `std::io::Error` with the path being touched.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
