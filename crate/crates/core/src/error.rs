use thiserror::Error;

/// Errors raised by the measure, transport, attention and flow routines.
///
/// Variant names double as the stable error strings reported by the CLI.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("LengthMismatch: {points} points but {weights} weights")]
    LengthMismatch { points: usize, weights: usize },
    #[error("NonpositiveWeight: weight {value} at atom {index}")]
    NonpositiveWeight { index: usize, value: f64 },
    #[error("PointOutsideBox: atom {index} lies outside the ambient box")]
    PointOutsideBox { index: usize },
    #[error("MapUndefinedAtAtom: map failed or returned a non-finite value at atom {index}")]
    MapUndefinedAtAtom { index: usize },
    #[error("SupportTooLarge: {n} atoms exceeds the enumeration cap {cap}")]
    SupportTooLarge { n: usize, cap: usize },
    #[error("ExhaustedRetries: no admissible perturbation after {attempts} draws")]
    ExhaustedRetries { attempts: usize },
    #[error("EmptySequence")]
    EmptySequence,
    #[error("EmptyMeasure")]
    EmptyMeasure,
    #[error("NotRationalGrid: weight {weight} is not a multiple of 1/{n}")]
    NotRationalGrid { weight: f64, n: usize },
    #[error("DimensionNotOne: got dimension {0}")]
    DimensionNotOne(usize),
    #[error("DimensionMismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("MassMismatch: total masses {left} and {right} differ")]
    MassMismatch { left: f64, right: f64 },
    #[error("ProblemTooLarge: {n} atoms exceeds the solver cap {cap}")]
    ProblemTooLarge { n: usize, cap: usize },
    #[error("InvalidParameters: {0}")]
    InvalidParameters(String),
    #[error("SkipNotUnit: MLP skip coefficient is {0}, velocity needs 1")]
    SkipNotUnit(f64),
    #[error("NonFiniteState: non-finite coordinate at step {step}")]
    NonFiniteState { step: usize },
    #[error("TooFewTimePoints: {0} time points, need at least 3")]
    TooFewTimePoints(usize),
    #[error("AnchorsTooClose: patch radius shrank below {r_min}")]
    AnchorsTooClose { r_min: f64 },
    #[error("DisplacementTooLarge: support moved {displacement} (limit {limit}) at eps {eps}")]
    DisplacementTooLarge { displacement: f64, limit: f64, eps: f64 },
    #[error("OutOfDomain: {0}")]
    OutOfDomain(String),
    #[error("NotProbability: total mass {0}")]
    NotProbability(f64),
    #[error("Format: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
