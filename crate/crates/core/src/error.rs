use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by frontends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Precondition,
    Numerical,
    Acceptance,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("incompatible grids: {0}")]
    Grid(String),

    #[error("conjugate argmax on truncation boundary (component {component}, v = {v:?}, radius {radius})")]
    Coercivity {
        component: usize,
        v: Vec<f64>,
        radius: f64,
    },

    #[error("CFL condition violated: {0}")]
    Cfl(String),

    #[error("non-finite value at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("cell methods disagree: discount {discount}, large-time {large_time} (tol {tol})")]
    CellDisagreement {
        discount: f64,
        large_time: f64,
        tol: f64,
    },

    #[error("effective cache queried outside its box: {0}")]
    OutOfBox(String),

    #[error("velocity box too small: minimizer pinned in {fraction:.4} of updates (v_bound {v_bound})")]
    VelocityPinned { fraction: f64, v_bound: f64 },

    #[error("endpoint unreachable: |y - x| = {distance} > v_bound * dt = {reach}")]
    Unreachable { distance: f64, reach: f64 },

    #[error("value iteration not contracting: {0}")]
    NonContraction(String),

    #[error("iteration diverged: {0}")]
    Divergence(String),

    #[error("acceptance check failed: {0}")]
    Acceptance(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Precondition(_) | Error::Grid(_) | Error::Config(_) | Error::Unreachable { .. } => {
                ErrorKind::Precondition
            }
            Error::Acceptance(_) => ErrorKind::Acceptance,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        }
    }

    /// Process exit status: 2 precondition, 3 numerical failure, 4 acceptance failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Precondition => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Acceptance => 4,
            ErrorKind::Io => 1,
        }
    }
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
