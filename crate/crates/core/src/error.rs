use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression parse error at byte {pos}: {msg}")]
    ExprParse { pos: usize, msg: String },

    #[error("metric degenerate or of wrong signature at {at:?}: {msg}")]
    BadMetric { at: Vec<f64>, msg: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("chart validity radius shrank below {0:.3e}")]
    ChartRadius(f64),

    #[error("focal degeneracy: |det Y| fell to {0:.3e}")]
    FocalPoint(f64),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("boundary data exceeds smallness threshold: sup {got:.3e} > {limit:.3e}")]
    SmallnessViolation { got: f64, limit: f64 },

    #[error("stationary point check failed: {0}")]
    StationaryPoint(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed grid file: {0}")]
    GridFormat(String),
}
