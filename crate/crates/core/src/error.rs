//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument value violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A user coincides with an antenna location; the free-space distance
    /// (and hence the channel coefficient) is undefined.
    #[error("degenerate geometry: user {user} and antenna {waveguide} coincide")]
    DegenerateGeometry { user: usize, waveguide: usize },

    /// Matrix dimensions disagree with the configuration.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Power normalization of an identically zero beamforming matrix.
    #[error("normalization undefined for an all-zero beamforming matrix")]
    NormalizationUndefined,

    /// A first-order expansion anchor has zero effective gain for a user
    /// with a nonzero beam, so the expansion denominator vanishes.
    #[error("linearization anchor is singular for user {user}")]
    LinearizationSingular { user: usize },

    /// A barrier objective was evaluated on or outside the feasible boundary.
    #[error("point is outside the open barrier domain (power slack {slack:.3e})")]
    BarrierDomain { slack: f64 },

    /// An exhaustive grid would exceed the hard evaluation budget.
    #[error("position grid has {points} points, above the {limit} limit")]
    GridTooLarge { points: u128, limit: u128 },

    /// Variables from different tapes were mixed in one recording.
    #[error("operands belong to different tapes")]
    TapeMismatch,

    /// Recording a primitive outside its real domain.
    #[error("domain error recording {op} at {value}")]
    TapeDomain { op: &'static str, value: f64 },

    /// Checkpoint payload cannot be decoded or belongs to a different shape.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
