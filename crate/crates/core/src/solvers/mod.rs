//! Discounted and average-cost solvers built on the one-stage operator.

mod average;
mod bounds;
mod discounted;

use std::sync::{Arc, OnceLock};

pub use average::{AverageOptions, AverageSolution, default_schedule, solve_average};
pub use bounds::{NeumannReport, PairViolation, PointViolation, ValueBoundReport, check_value_bounds, minimizing_paths, neumann_check};
pub use discounted::{DiscountedSolution, RelativeValueIteration, ValueIteration};

use crate::error::Result;
use crate::grid::GridFunction;
use crate::problem::Problem;
use crate::registry::Registry;

/// Optional starting data for a discounted solve.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    /// `(ρ, h)` from a nearby discount rate.
    pub relative: Option<(f64, GridFunction)>,
}

pub trait DiscountedSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &Problem, alpha: f64, warm: &WarmStart) -> Result<DiscountedSolution>;
}

pub fn solvers() -> &'static Registry<dyn DiscountedSolver> {
    static SOLVERS: OnceLock<Registry<dyn DiscountedSolver>> = OnceLock::new();
    SOLVERS.get_or_init(|| {
        let mut r: Registry<dyn DiscountedSolver> = Registry::new("discounted solver");
        r.register("value-iteration", Arc::new(ValueIteration));
        r.register("relative-value-iteration", Arc::new(RelativeValueIteration));
        r
    })
}

/// `J_D^α` with the solver named in the problem's numerics.
pub fn solve_discounted(problem: &Problem, alpha: f64) -> Result<DiscountedSolution> {
    solvers()
        .get(&problem.numerics.strategy)?
        .solve(problem, alpha, &WarmStart::default())
}
