use rayon::prelude::*;
use serde::Serialize;

use super::DiscountedSolution;
use crate::diagnostics::embedded_chain;
use crate::error::Result;
use crate::grid::GridFunction;
use crate::operators::{ControlPath, EmbeddedChain};
use crate::point::Point;
use crate::problem::Problem;
use crate::witness::ErgodicityWitness;

#[derive(Clone, Debug, Serialize)]
pub struct NeumannReport {
    pub alpha: f64,
    /// `‖S_K − J‖_g` for `K = 0, 1, …`, along the minimizing paths of `𝒯_α(0,J)`.
    pub errors: Vec<f64>,
    /// The same partial sums along paths induced by the grid feedback selector;
    /// their limit differs from `J` by the selector's achievement gap.
    pub selector_errors: Vec<f64>,
    /// Set when some partial-sum error grew.
    pub warning: Option<String>,
}

/// The path attaining `𝒯_α(0,J)(x)` at every grid point.
pub fn minimizing_paths(problem: &Problem, alpha: f64, value: &GridFunction) -> Result<Vec<ControlPath>> {
    let op = problem.one_stage();
    problem
        .grid
        .interior()
        .par_iter()
        .map(|x| op.eval_t(alpha, 0.0, value, x).map(|r| r.path))
        .collect()
}

fn partial_sums(chain: &EmbeddedChain, value: &[f64], g: &[f64], k: usize) -> Vec<f64> {
    let dist = |s: &[f64]| {
        s.iter()
            .zip(value)
            .zip(g)
            .map(|((a, b), gx)| (a - b).abs() / gx)
            .fold(0.0, f64::max)
    };
    let mut term = chain.one_jump_cost.clone();
    let mut sum = term.clone();
    let mut errors = vec![dist(&sum)];
    for _ in 0..k {
        term = chain.apply(&term);
        for (s, t) in sum.iter_mut().zip(&term) {
            *s += t;
        }
        errors.push(dist(&sum));
    }
    errors
}

/// Partial sums `S_K = Σ_{k≤K} G_α^k (L_αf + H_αr)` of the Neumann series for `J_D^α`.
pub fn neumann_check(problem: &Problem, sol: &DiscountedSolution, k: usize) -> Result<NeumannReport> {
    let (m, grid, q) = (&*problem.model, &*problem.grid, problem.q());
    let g = &problem.g.values;
    let paths = minimizing_paths(problem, sol.alpha, &sol.value)?;
    let chain = EmbeddedChain::build(m, grid, q, &paths, sol.alpha)?;
    let errors = partial_sums(&chain, &sol.value.values, g, k);
    let sel_chain = embedded_chain(problem, &sol.selector, sol.alpha)?;
    let selector_errors = partial_sums(&sel_chain, &sol.value.values, g, k);
    let warning = errors
        .windows(2)
        .position(|w| w[1] > w[0])
        .map(|i| format!("partial-sum error grew at K = {}: {} → {}", i + 1, errors[i], errors[i + 1]));
    Ok(NeumannReport {
        alpha: sol.alpha,
        errors,
        selector_errors,
        warning,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PointViolation {
    pub point: Point,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairViolation {
    pub x: Point,
    pub y: Point,
    pub difference: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValueBoundReport {
    pub alpha: f64,
    pub min_slack: f64,
    pub point_violations: Vec<PointViolation>,
    pub pairs_checked: usize,
    /// Minimum of `bound − |J(x) − J(y)|` over the sampled pairs.
    pub min_pair_slack: Option<f64>,
    pub pair_violations: Vec<PairViolation>,
    pub pass: bool,
}

/// At most this many points enter the pairwise check; all pairs among them are used.
const PAIR_SAMPLE: usize = 200;

/// Pointwise growth bound on `J_D^α`, plus the pairwise oscillation bound when
/// an ergodicity witness is given.
pub fn check_value_bounds(
    problem: &Problem,
    sol: &DiscountedSolution,
    ergodicity: Option<&ErgodicityWitness>,
) -> Result<ValueBoundReport> {
    let w = &problem.growth;
    let pts = problem.grid.interior();
    let vals = &sol.value.values;
    let mut min_slack = f64::INFINITY;
    let mut point_violations = Vec::new();
    for (x, &v) in pts.iter().zip(vals) {
        let bound = w.value_bound(x, sol.alpha);
        min_slack = min_slack.min(bound - v);
        if v > bound {
            point_violations.push(PointViolation { point: *x, value: v, bound });
        }
    }
    let mut pairs_checked = 0;
    let mut min_pair_slack = None;
    let mut pair_violations = Vec::new();
    if let Some(e) = ergodicity {
        let scale = e.a_const * w.m_prime(problem.hyp.k_lambda) / (1.0 - e.kappa);
        let stride = pts.len().div_ceil(PAIR_SAMPLE).max(1);
        let sample: Vec<usize> = (0..pts.len()).step_by(stride).collect();
        let mut worst = f64::INFINITY;
        for &i in &sample {
            for &j in &sample {
                let bound = scale * (1.0 + problem.g.values[j]) * problem.g.values[i];
                let diff = (vals[i] - vals[j]).abs();
                worst = worst.min(bound - diff);
                pairs_checked += 1;
                if diff > bound {
                    pair_violations.push(PairViolation {
                        x: pts[i],
                        y: pts[j],
                        difference: diff,
                        bound,
                    });
                }
            }
        }
        min_pair_slack = Some(worst);
    }
    let pass = point_violations.is_empty() && pair_violations.is_empty();
    Ok(ValueBoundReport {
        alpha: sol.alpha,
        min_slack,
        point_violations,
        pairs_checked,
        min_pair_slack,
        pair_violations,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{costs, problem, variant};
    use crate::solvers::solve_discounted;

    fn coarse() -> Option<Vec<Vec<f64>>> {
        Some(vec![crate::grid::StateGrid::uniform_axis(0.05, 0.95, 0.05)])
    }

    #[test]
    fn zero_costs_sum_to_zero() {
        let p = variant("A", costs(0.0, 0.0), coarse());
        let sol = solve_discounted(&p, 0.5).unwrap();
        let r = neumann_check(&p, &sol, 5).unwrap();
        assert_eq!(r.errors.len(), 6);
        assert!(r.errors.iter().all(|&e| e == 0.0), "{:?}", r.errors);
        assert!(r.warning.is_none());
    }

    #[test]
    fn first_term_is_below_the_value() {
        let p = variant("A", Default::default(), coarse());
        let sol = solve_discounted(&p, 0.5).unwrap();
        let paths = minimizing_paths(&p, 0.5, &sol.value).unwrap();
        let chain = EmbeddedChain::build(&p.model, &p.grid, p.q(), &paths, 0.5).unwrap();
        for (s0, j) in chain.one_jump_cost.iter().zip(&sol.value.values) {
            assert!(*s0 <= j + 1e-9, "{s0} > {j}");
        }
        let r = neumann_check(&p, &sol, 0).unwrap();
        assert_eq!(r.errors.len(), 1);
        assert!(r.errors[0] > 0.0);
    }

    #[test]
    fn neumann_errors_shrink_on_drain_reset() {
        let p = problem("A").unwrap();
        let sol = solve_discounted(&p, 0.5).unwrap();
        let r = neumann_check(&p, &sol, 40).unwrap();
        assert!(r.warning.is_none(), "{:?}", r.warning);
        assert!(r.errors[40] <= 1e-3, "{}", r.errors[40]);
    }

    #[test]
    fn zero_cost_slack_is_the_whole_bound() {
        let p = variant("A", costs(0.0, 0.0), coarse());
        let sol = solve_discounted(&p, 0.5).unwrap();
        let r = check_value_bounds(&p, &sol, None).unwrap();
        let least = p
            .grid
            .interior()
            .iter()
            .map(|x| p.growth.value_bound(x, 0.5))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.min_slack, least);
        assert!(r.pass && r.pairs_checked == 0 && r.min_pair_slack.is_none());
    }

    #[test]
    fn drain_reset_values_respect_the_growth_bound() {
        let p = problem("A").unwrap();
        for alpha in [0.25, 1.0] {
            let sol = solve_discounted(&p, alpha).unwrap();
            let r = check_value_bounds(&p, &sol, None).unwrap();
            assert!(r.pass && r.point_violations.is_empty(), "α {alpha}: {}", r.min_slack);
            assert!(r.min_slack > 0.0);
        }
    }

    #[test]
    fn pairwise_bound_uses_the_ergodicity_witness() {
        let p = variant("A", Default::default(), coarse());
        let sol = solve_discounted(&p, 0.5).unwrap();
        let e = ErgodicityWitness {
            a_const: 1.0,
            kappa: 0.5,
            nu_g: 1.0,
            fit_residual: 0.0,
        };
        let r = check_value_bounds(&p, &sol, Some(&e)).unwrap();
        let n = p.grid.interior().len();
        assert_eq!(r.pairs_checked, n * n);
        assert!(r.min_pair_slack.unwrap() > 0.0);
        let tiny = ErgodicityWitness { a_const: 1e-9, ..e };
        let r = check_value_bounds(&p, &sol, Some(&tiny)).unwrap();
        assert!(!r.pass && !r.pair_violations.is_empty());
    }
}
