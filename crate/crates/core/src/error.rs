use thiserror::Error;

/// Errors produced by the pulse design and verification routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("negative duration {0}")]
    NegativeDuration(f64),

    #[error("segment {segment}: amplitude {amplitude} exceeds the field bound 1")]
    AmplitudeExceeded { segment: usize, amplitude: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Bloch norm drift {drift:e} at t = {t} exceeds the per-step limit")]
    IntegrationDrift { t: f64, drift: f64 },

    #[error("degenerate initial costates: {0}")]
    DegenerateCostates(&'static str),

    #[error("extremal reached the singular set (r < r_min) at t = {t}")]
    SingularHit { t: f64 },

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("degenerate potential well: turning points coincide")]
    DegenerateWell,

    #[error("Kepler constant s vanishes; the elliptic form does not apply")]
    ZeroKeplerConstant,

    #[error("coordinate chart breakdown for spin {spin} at t = {t}")]
    ChartBreakdown { spin: usize, t: f64 },

    #[error("no convergence: {0}")]
    NotConverged(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
