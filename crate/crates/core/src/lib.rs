//! Numerical control of piecewise deterministic Markov processes: embedded
//! operators evaluated by quadrature along flows, discounted value iteration,
//! the vanishing-discount scheme for the average cost, a Monte Carlo
//! simulator and diagnostics for the growth and ergodicity conditions.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments, clippy::type_complexity, clippy::needless_range_loop)]

pub mod archive;
pub mod benchmarks;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod model;
pub mod onestage;
pub mod operators;
pub mod point;
pub mod problem;
pub mod quadrature;
pub mod registry;
pub mod simulator;
pub mod solvers;
pub mod witness;

pub use error::{PdmpError, Result};
pub use grid::{GridFunction, StateGrid};
pub use model::ModelSpec;
pub use point::Point;
