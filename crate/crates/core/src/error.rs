use thiserror::Error;

/// Cell index `(i1, i2)` in a background grid.
pub type CellIndex = [usize; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("quadrature failed in cell {cell:?}: {reason}")]
    Quadrature { cell: CellIndex, reason: String },

    #[error("small cell {cell:?} has no valid neighbour to merge with; lower the volume fraction threshold")]
    UnmergeableCell { cell: CellIndex },

    #[error("degenerate element {element}: mass matrix is not positive definite")]
    DegenerateElement { element: usize },

    #[error("non-physical state in element {element} of level {level}: rho = {rho}, p = {pressure}")]
    Positivity {
        level: usize,
        element: usize,
        rho: f64,
        pressure: f64,
    },

    #[error("non-physical state: rho = {rho}, p = {pressure}")]
    NonPhysical { rho: f64, pressure: f64 },

    #[error("Riemann problem generates vacuum")]
    Vacuum,

    #[error("transfer operator inconsistency: {0}")]
    Transfer(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
