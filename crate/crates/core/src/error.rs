use thiserror::Error;

/// Errors produced by the sensing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Kernel evaluated at coincident (or near-coincident) source and
    /// observation points.
    #[error("kernel evaluation at coincident points (separation {sep:.3e} below guard {guard:.3e})")]
    CoincidentPoints { sep: f64, guard: f64 },

    /// Invalid surface geometry parameters.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// Inconsistent matrix/vector shapes or grid mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Linear solver breakdown (singular or badly conditioned system).
    #[error("solver breakdown: {reason} (condition estimate {cond:.3e})")]
    Solver { reason: String, cond: f64 },

    /// Invalid configuration value or preset.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Degenerate data (e.g. all-zero recombination weights).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A pipeline stage failed; the stage tag identifies where.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with a pipeline stage tag.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
