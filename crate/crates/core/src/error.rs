use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not elliptic: symmetric part has eigenvalue {eigenvalue:e}")]
    NotElliptic { eigenvalue: f64 },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cell {cell}: flux-to-energy ratio is infinite (singular symmetric part)")]
    InfiniteMu { cell: usize },

    #[error("incompatible sizes: {0}")]
    Incompatible(String),

    #[error("degenerate system: {rows} rows without any coupling")]
    DegenerateSystem { rows: usize },

    #[error("Krylov iteration did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("operator is not coercive (non-positive curvature {curvature:e} at iteration {iteration})")]
    NotCoercive { iteration: usize, curvature: f64 },

    #[error("malformed binary file: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn at_cell(self, cell: usize) -> Error {
        Error::Cell { cell, source: Box::new(self) }
    }
}
