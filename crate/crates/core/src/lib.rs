//! Temperature accelerated dynamics (original, modified and idealized) for
//! one-dimensional overdamped Langevin dynamics, with the quasistationary
//! distribution machinery the idealized variant needs and a statistical
//! harness that checks the method's exactness properties.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod potential;
pub mod qsd;
pub mod tad;
pub mod verify;

pub use dynamics::{stream_rng, ExitEvent, SdeConfig, Side, SimRng};
pub use error::{Error, Result};
pub use potential::{assign_basin, Basin, BasinTopology, Potential};
pub use qsd::{exit_statistics, solve_principal_eigenpair, EigenPair, ExitStatistics, ThetaTable};
