use serde::Serialize;

use super::discounted::extend_to_boundary;
use super::{WarmStart, solvers};
use crate::diagnostics::check_acoi;
use crate::error::{PdmpError, Result};
use crate::grid::GridFunction;
use crate::onestage::FeedbackSelector;
use crate::problem::Problem;

#[derive(Clone, Debug, Default)]
pub struct AverageOptions {
    /// Strictly decreasing positive discount rates; empty means `(c/2)·2^{−k}`, `k < 12`.
    pub schedule: Vec<f64>,
    pub x0: Option<usize>,
    /// Stop at the first `k` where both Cauchy tests pass instead of running the whole schedule.
    pub early_stop: bool,
}

pub fn default_schedule(c: f64) -> Vec<f64> {
    (0..12).map(|k| 0.5 * c * 0.5f64.powi(k)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AverageSolution {
    pub rho: f64,
    #[serde(skip)]
    pub h: GridFunction,
    pub selector: FeedbackSelector,
    /// `(α_k, ρ_k)`.
    pub rho_trace: Vec<(f64, f64)>,
    /// `‖h_k − h_{k−1}‖_g` for `k ≥ 1`.
    pub h_steps: Vec<f64>,
    /// `h_k(x₀)` for every `k`; zero by construction.
    pub anchor_values: Vec<f64>,
    pub acoi_residual: f64,
    pub acoi_tol: f64,
    pub x0: usize,
}

pub fn solve_average(problem: &Problem, opts: &AverageOptions) -> Result<AverageSolution> {
    let schedule = if opts.schedule.is_empty() {
        default_schedule(problem.growth.c)
    } else {
        opts.schedule.clone()
    };
    if schedule.len() < 2 || schedule.windows(2).any(|w| w[1] >= w[0]) || schedule.iter().any(|a| !(*a > 0.0)) {
        return Err(PdmpError::Contract(
            "schedule must hold at least two strictly decreasing positive rates".into(),
        ));
    }
    let x0 = opts.x0.unwrap_or_else(|| problem.grid.centroid_index());
    if x0 >= problem.grid.len() {
        return Err(PdmpError::Contract(format!("anchor index {x0} outside the grid")));
    }
    let solver = solvers().get(&problem.numerics.strategy)?;
    let mut warm = WarmStart::default();
    let mut rho_trace = Vec::new();
    let mut hs: Vec<GridFunction> = Vec::new();
    let mut h_steps = Vec::new();
    let mut anchor_values = Vec::new();
    let mut rho_tol = problem.numerics.rho_tol;
    for (k, &alpha) in schedule.iter().enumerate() {
        let sol = solver.solve(problem, alpha, &warm)?;
        let j0 = sol.value.values[x0];
        let rho = alpha * j0;
        let h = sol.value.map(|v| v - j0);
        anchor_values.push(h.values[x0]);
        if k == 0 {
            rho_tol *= rho.max(1.0);
        }
        rho_trace.push((alpha, rho));
        if let Some(prev) = hs.last() {
            h_steps.push(h.g_dist(prev, &problem.g));
        }
        warm.relative = Some((rho, h.clone()));
        hs.push(h);
        if opts.early_stop && k >= 2 && cauchy(&rho_trace, &h_steps, rho_tol) {
            break;
        }
    }
    if !cauchy(&rho_trace, &h_steps, rho_tol) {
        let trace = rho_trace.iter().map(|p| p.1).collect();
        return Err(PdmpError::Convergence {
            iterations: rho_trace.len(),
            last_residual: (rho_trace[rho_trace.len() - 1].1 - rho_trace[rho_trace.len() - 2].1).abs(),
            trace,
        });
    }
    let rho = rho_trace.last().unwrap().1;
    let n = hs.len();
    let mins: Vec<f64> = hs[n - 1].values.iter().zip(&hs[n - 2].values).map(|(a, b)| a.min(*b)).collect();
    let h = extend_to_boundary(problem, mins)?;
    let report = check_acoi(problem, rho, &h)?;
    if !report.pass {
        return Err(PdmpError::Diagnostic(format!(
            "ACOI residual {} below −{} at {:?}",
            report.min_residual, report.tolerance, report.worst_point
        )));
    }
    let selector = problem.one_stage().extract_selector(0.0, rho, &h)?;
    Ok(AverageSolution {
        rho,
        h,
        selector,
        rho_trace,
        h_steps,
        anchor_values,
        acoi_residual: report.min_residual,
        acoi_tol: report.tolerance,
        x0,
    })
}

/// Last `ρ` step within tolerance and `h` steps not growing.
fn cauchy(rho_trace: &[(f64, f64)], h_steps: &[f64], rho_tol: f64) -> bool {
    let n = rho_trace.len();
    if n < 2 {
        return false;
    }
    let rho_ok = (rho_trace[n - 1].1 - rho_trace[n - 2].1).abs() <= rho_tol;
    let h_ok = match h_steps {
        [.., a, b] => *b <= a.max(1e-9) * 1.5,
        _ => true,
    };
    rho_ok && h_ok
}
