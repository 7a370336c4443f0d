//! Exhaustive policy enumeration on a coarse grid, evaluated by simulation
//! with common random numbers across policies.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PdmpError, Result};
use crate::grid::StateGrid;
use crate::model::ModelSpec;
use crate::onestage::FeedbackSelector;
use crate::point::Point;
use crate::problem::Problem;
use crate::simulator::{Simulator, discounted_cost_cap};

#[derive(Clone, Debug, Serialize)]
pub struct PolicyValue {
    /// Action indices at the coarse interior points, then at the boundary points.
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub best: PolicyValue,
    pub values: Vec<PolicyValue>,
    pub seed: u64,
    pub replications: usize,
    /// Horizon for average costs; truncation time of the best policy for discounted ones.
    pub horizon: f64,
}

/// Every selector on `coarse`: all index combinations over interior then boundary points.
pub fn coarse_policies(model: &ModelSpec, coarse: &StateGrid) -> Vec<FeedbackSelector> {
    let mut radices: Vec<usize> = coarse.interior().iter().map(|x| model.actions(x).len()).collect();
    let ni = radices.len();
    radices.extend(coarse.boundary().iter().map(|z| model.boundary_actions(z).len()));
    let total: usize = radices.iter().product();
    (0..total)
        .map(|mut k| {
            let mut idx = vec![0; radices.len()];
            // Last position varies fastest.
            for (slot, r) in idx.iter_mut().zip(&radices).rev() {
                *slot = k % r;
                k /= r;
            }
            FeedbackSelector::from_indices(model, coarse, &idx[..ni], &idx[ni..])
        })
        .collect()
}

fn enumerate(
    problem: &Problem,
    coarse_axes: &[Vec<f64>],
    budget: usize,
    eval: impl Fn(&Simulator<'_>) -> Result<(f64, f64, f64)> + Sync,
    seed: u64,
    replications: usize,
) -> Result<OracleResult> {
    let model = &*problem.model;
    let coarse = StateGrid::tensor(model, coarse_axes.to_vec())?;
    let policies = coarse_policies(model, &coarse);
    if policies.len() > budget {
        return Err(PdmpError::Contract(format!(
            "enumeration needs {} policies, budget is {budget}",
            policies.len()
        )));
    }
    let evals = policies
        .par_iter()
        .map(|sel| {
            let mut sim = Simulator::new(model, &coarse, sel, problem.q())?;
            sim.explosion_guard = problem.numerics.explosion_guard;
            let (mean, se, horizon) = eval(&sim)?;
            Ok((
                PolicyValue {
                    interior: sel.interior.iter().map(|c| c.index).collect(),
                    boundary: sel.boundary.iter().map(|c| c.index).collect(),
                    mean,
                    std_error: se,
                },
                horizon,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    // Lowest mean; the first policy in enumeration order wins ties.
    let (bi, _) = evals
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bm), (i, (v, _))| if v.mean < bm { (i, v.mean) } else { (bi, bm) });
    let horizon = evals[bi].1;
    let values: Vec<PolicyValue> = evals.into_iter().map(|e| e.0).collect();
    Ok(OracleResult {
        best: values[bi].clone(),
        values,
        seed,
        replications,
        horizon,
    })
}

/// Minimum over coarse policies of the simulated discounted cost from `x`.
pub fn oracle_discounted(
    problem: &Problem,
    coarse_axes: &[Vec<f64>],
    x: &Point,
    alpha: f64,
    replications: usize,
    seed: u64,
    budget: usize,
) -> Result<OracleResult> {
    let cap = discounted_cost_cap(problem, alpha);
    enumerate(
        problem,
        coarse_axes,
        budget,
        |sim| {
            let e = sim.estimate_discounted_cost(x, alpha, replications, seed, cap)?;
            Ok((e.mean, e.std_error, e.horizon))
        },
        seed,
        replications,
    )
}

/// Minimum over coarse policies of the simulated long-run average cost,
/// started from the grid centroid.
pub fn oracle_average(
    problem: &Problem,
    coarse_axes: &[Vec<f64>],
    horizon: f64,
    replications: usize,
    seed: u64,
    budget: usize,
) -> Result<OracleResult> {
    let x = problem.grid.interior()[problem.grid.centroid_index()];
    enumerate(
        problem,
        coarse_axes,
        budget,
        |sim| {
            let e = sim.estimate_average_cost(&x, horizon, replications, seed)?;
            Ok((e.estimate.mean, e.estimate.std_error, horizon))
        },
        seed,
        replications,
    )
}
