use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("critical set is not isolated near ({x:.6}, {y:.6})")]
    NonIsolatedCritical { x: String, y: String },

    #[error("projection onto the fiber diverged (residual {residual:.3e})")]
    ProjectionDiverged { residual: f64 },

    #[error("path came within {grad:.3e} of a critical point of H")]
    HitCritical { grad: f64 },

    #[error("real trajectory did not close within arclength {max_length}")]
    NotClosed { max_length: f64 },

    #[error("Hessian is degenerate at the critical point (|det| = {det:.3e})")]
    DegenerateHessian { det: f64 },

    #[error("base points differ by {distance:.3e}")]
    BasePointMismatch { distance: f64 },

    #[error("connector leaves the fiber (residual {residual:.3e})")]
    ConnectorOffFiber { residual: f64 },

    #[error("resonance: |exp(I) - 1| = {distance:.3e}")]
    Resonance { distance: f64 },

    #[error("{which} is not in S (|exp(I) - 1| = {distance:.3e})")]
    NotInS { which: &'static str, distance: f64 },

    #[error("trajectory did not return to the section within time {max_time}")]
    NoReturn { max_time: f64 },

    #[error("section is tangent to the flow (|cross| = {cross:.3e})")]
    SectionTangency { cross: f64 },

    #[error("all fitted orders vanish within the noise floor")]
    AllOrdersVanish,

    #[error("differentiation is ill-conditioned (amplification {amplification:.3e})")]
    IllConditioned { amplification: f64 },

    #[error("normal coordinate escaped: |z| = {z:.3e} exceeds {bound:.3e}")]
    NormalEscape { z: f64, bound: f64 },

    #[error("base point drifted by {distance:.3e} during transport")]
    BasePointDrift { distance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
