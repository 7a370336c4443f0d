use serde::Serialize;

use super::{DiscountedSolver, WarmStart};
use crate::error::{PdmpError, Result};
use crate::grid::GridFunction;
use crate::onestage::{AlphaStage, FeedbackSelector, boundary_selector};
use crate::problem::Problem;

#[derive(Clone, Debug, Serialize)]
pub struct DiscountedSolution {
    pub alpha: f64,
    #[serde(skip)]
    pub value: GridFunction,
    pub selector: FeedbackSelector,
    pub iterations: usize,
    /// `‖𝒯_α(0,J) − J‖_g` from a final plain sweep.
    pub residual: f64,
    pub strategy: &'static str,
    pub residual_trace: Vec<f64>,
    /// Grid points where some iterate decreased; only tracked by plain value iteration.
    pub monotone_violations: Option<usize>,
}

/// Boundary values `min_a r(z,a) + Qv(z,a)` so that `v` is defined on the boundary set too.
pub(crate) fn extend_to_boundary(problem: &Problem, values: Vec<f64>) -> Result<GridFunction> {
    let nb = problem.grid.boundary().len();
    let mut v = GridFunction::new(problem.grid.clone(), values, vec![0.0; nb])?;
    let b = problem
        .grid
        .boundary()
        .iter()
        .map(|z| boundary_selector(&problem.model, &v, z).map(|c| c.value))
        .collect::<Result<Vec<_>>>()?;
    v.boundary_values = b;
    Ok(v)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(PdmpError::Contract(format!("discount rate must be positive, got {alpha}")))
    }
}

/// Plain sweep at `J`, the selector it induces, and `‖𝒯J − J‖_g`.
fn finish(
    problem: &Problem,
    stage: &AlphaStage,
    value: GridFunction,
    iterations: usize,
    strategy: &'static str,
    residual_trace: Vec<f64>,
    monotone_violations: Option<usize>,
) -> Result<DiscountedSolution> {
    let op = problem.one_stage();
    let sw = op.sweep(stage, 0.0, &value)?;
    let t = GridFunction::new(problem.grid.clone(), sw.values.clone(), value.boundary_values.clone())?;
    let residual = t.g_dist(&value, &problem.g);
    let selector = op.selector_from(&sw.values, &value)?;
    let sol = DiscountedSolution {
        alpha: stage.alpha,
        value,
        selector,
        iterations,
        residual,
        strategy,
        residual_trace,
        monotone_violations,
    };
    bound_guard(problem, &sol)?;
    Ok(sol)
}

/// Fails when the value exceeds `Mg/(c+α) + Mb/(cα)` beyond the HJB tolerance.
fn bound_guard(problem: &Problem, sol: &DiscountedSolution) -> Result<()> {
    let tol = problem.hjb_tol(&sol.value);
    for (x, v) in problem.grid.interior().iter().zip(&sol.value.values) {
        let bound = problem.growth.value_bound(x, sol.alpha);
        if *v > bound + tol {
            return Err(PdmpError::Diagnostic(format!(
                "value {v} at {x:?} exceeds the growth bound {bound} (α = {})",
                sol.alpha
            )));
        }
    }
    Ok(())
}

/// `v_{m+1} = 𝒯_α(0, v_m)` from `v_0 = 0`.
pub struct ValueIteration;

impl DiscountedSolver for ValueIteration {
    fn name(&self) -> &'static str {
        "value-iteration"
    }

    fn solve(&self, problem: &Problem, alpha: f64, _warm: &WarmStart) -> Result<DiscountedSolution> {
        check_alpha(alpha)?;
        let op = problem.one_stage();
        let stage = op.alpha_stage(alpha);
        let num = &problem.numerics;
        let mut v = problem.zeros();
        let mut trace = Vec::new();
        let mut decreased = vec![false; v.values.len()];
        for it in 1..=num.max_iter {
            let sw = op.sweep(&stage, 0.0, &v)?;
            for ((d, new), old) in decreased.iter_mut().zip(&sw.values).zip(&v.values) {
                *d |= *new < old - 1e-12 * (1.0 + old.abs());
            }
            let next = extend_to_boundary(problem, sw.values)?;
            let res = next.g_dist(&v, &problem.g);
            trace.push(res);
            v = next;
            if res <= num.vi_tol {
                let violations = decreased.iter().filter(|d| **d).count();
                return finish(problem, &stage, v, it, self.name(), trace, Some(violations));
            }
        }
        Err(PdmpError::Convergence {
            iterations: num.max_iter,
            last_residual: trace.last().copied().unwrap_or(f64::NAN),
            trace,
        })
    }
}

/// Iterates `h ← 𝒯_α(ρ, h)` with `ρ` re-solved each step so that the update
/// vanishes at an anchor point; the value is `ρ/α + h`.
///
/// A shift `δ` of `h` moves `ρ` by about `δ/𝓛_α(x₀)` and `𝒯_α(ρ,h)(x)` by
/// `δ·𝓛_α(x)/𝓛_α(x₀)`, so the anchor is the point with the longest expected
/// cycle; a short-cycle anchor makes the iteration diverge.
pub struct RelativeValueIteration;

/// Newton on the concave, decreasing map `ρ ↦ 𝒯_α(ρ,h)(x₀)`, whose slope is `−𝓛_α`.
pub(crate) fn anchor_rho(problem: &Problem, stage: &AlphaStage, x0: usize, rho: f64, h: &GridFunction) -> Result<f64> {
    let op = problem.one_stage();
    let mut rho = rho;
    for _ in 0..100 {
        let (v, len) = op.at_grid_point(stage, x0, rho, h)?;
        if !(len > 0.0) {
            return Err(PdmpError::Numeric {
                message: format!("cycle length {len} at the anchor point"),
                last_time: 0.0,
            });
        }
        let step = v / len;
        rho += step;
        if step.abs() <= 1e-15 * (1.0 + rho.abs()) {
            return Ok(rho);
        }
    }
    Ok(rho)
}

impl DiscountedSolver for RelativeValueIteration {
    fn name(&self) -> &'static str {
        "relative-value-iteration"
    }

    fn solve(&self, problem: &Problem, alpha: f64, warm: &WarmStart) -> Result<DiscountedSolution> {
        check_alpha(alpha)?;
        let op = problem.one_stage();
        let stage = op.alpha_stage(alpha);
        let num = &problem.numerics;
        let (mut rho, mut h) = match &warm.relative {
            Some((r, h)) => (*r, h.clone()),
            None => (0.0, problem.zeros()),
        };
        let lengths = op.sweep(&stage, rho, &h)?.cycle_lengths;
        let x0 = lengths
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bl), (i, &l)| if l > bl { (i, l) } else { (bi, bl) })
            .0;
        let mut trace = Vec::new();
        for it in 1..=num.max_iter {
            rho = anchor_rho(problem, &stage, x0, rho, &h)?;
            let sw = op.sweep(&stage, rho, &h)?;
            // ‖𝒯_α(ρ,h) − h‖_g equals ‖𝒯_α(0,J) − J‖_g for J = ρ/α + h.
            let res = sw
                .values
                .iter()
                .zip(&h.values)
                .zip(&problem.g.values)
                .map(|((a, b), g)| (a - b).abs() / g)
                .fold(0.0, f64::max);
            trace.push(res);
            if res <= num.vi_tol {
                let j: Vec<f64> = h.values.iter().map(|v| rho / alpha + v).collect();
                let j = extend_to_boundary(problem, j)?;
                return finish(problem, &stage, j, it, self.name(), trace, None);
            }
            let d = num.damping;
            let mut next: Vec<f64> = sw
                .values
                .iter()
                .zip(&h.values)
                .map(|(new, old)| d * new + (1.0 - d) * old)
                .collect();
            next[x0] = 0.0;
            h = GridFunction::new(problem.grid.clone(), next, h.boundary_values.clone())?;
        }
        Err(PdmpError::Convergence {
            iterations: num.max_iter,
            last_residual: trace.last().copied().unwrap_or(f64::NAN),
            trace,
        })
    }
}
