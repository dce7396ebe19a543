use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("raw moment of order {order} is undefined for {dist}")]
    MomentUndefined { order: u32, dist: String },

    #[error("{0}")]
    Domain(String),

    #[error("variance form is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("norm-form residual {residual:e} exceeds round-off allowance")]
    NormFormResidual { residual: f64 },

    #[error("assumption not attested: {0}")]
    NotAttested(&'static str),

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("infeasible at outer iteration {iteration}: {detail}")]
    Infeasible { iteration: usize, detail: String },

    #[error("risk allocation infeasible: tight risk sum {risk_sum:.6e} exceeds alpha {alpha}")]
    AllocationInfeasible { risk_sum: f64, alpha: f64 },

    #[error("solver failure: {0}")]
    Numerical(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
