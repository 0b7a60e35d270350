use thiserror::Error;

use crate::dynamics::Side;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("potential is not Morse: degenerate critical point at x = {x:.12} (V'' = {vpp:.3e})")]
    NonMorse { x: f64, vpp: f64 },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error(
        "outermost critical point at x = {x:.6} is a minimum; basins must be bounded by maxima"
    )]
    BoundaryNotMaximum { x: f64 },

    #[error(
        "position x = {x} is at a basin boundary (maximum at {maximum}); basin label is ambiguous"
    )]
    AmbiguousPoint { x: f64, maximum: f64 },

    #[error("position x = {x} lies outside the basin topology [{lo}, {hi}]")]
    OutsideTopology { x: f64, lo: f64, hi: f64 },

    #[error("trajectory escaped the potential domain [{lo}, {hi}] at x = {x}")]
    DomainEscape { x: f64, lo: f64, hi: f64 },

    #[error("no exit after {steps} steps (elapsed time {elapsed})")]
    Timeout { steps: u64, elapsed: f64 },

    #[error("QSD rejection sampling infeasible: {restarts} restarts without surviving t_relax = {t_relax}")]
    Infeasible { restarts: u64, t_relax: f64 },

    #[error("eigen solver failed: {0}")]
    Solver(String),

    #[error(
        "principal eigenvalue underflows at beta = {beta} (beta * barrier = {exponent:.1}); \
         use a log-space formulation or a smaller beta"
    )]
    Underflow { beta: f64, exponent: f64 },

    #[error("degenerate eigenpair: QSD density has no mass on the grid")]
    DegenerateEigenpair,

    #[error("grid too coarse: boundary flux defect {defect:.3e} exceeds {tolerance:.1e}; increase grid_n")]
    GridTooCoarse { defect: f64, tolerance: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("barrier bound violated: e_min = {e_min} exceeds the {side} barrier {barrier} of basin {basin}")]
    BarrierBoundViolated {
        basin: usize,
        side: Side,
        e_min: f64,
        barrier: f64,
    },

    #[error("empty sample")]
    EmptySample,

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(
    cond: bool,
    name: &'static str,
    reason: impl FnOnce() -> String,
) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: reason(),
        })
    }
}
