use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("root not bracketed on [{lo}, {hi}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    NotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("projection annihilates the state (residual norm {residual:e})")]
    DegenerateState { residual: f64 },

    #[error("incomplete basis: Parseval deficit {deficit:e} exceeds {limit:e}")]
    IncompleteBasis { deficit: f64, limit: f64 },

    #[error("quadrature budget exceeded at t = {t}: {panels} panels needed, budget is {budget}")]
    QuadratureBudget {
        t: f64,
        panels: usize,
        budget: usize,
    },

    #[error("boundary contamination: t = {t} exceeds the safe window t_max = {t_safe}")]
    BoundaryContamination { t: f64, t_safe: f64 },

    #[error("degenerate combination: {0}")]
    DegenerateCombination(String),

    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
