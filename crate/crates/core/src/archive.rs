//! Solution archives: JSON with the value table, selector and traces, bound to
//! the grid and the configuration by hash, plus CSV exports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PdmpError, Result};
use crate::grid::{GridFunction, csv_err};
use crate::onestage::FeedbackSelector;
use crate::problem::Problem;
use crate::solvers::{AverageSolution, DiscountedSolution};

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SolveKind {
    Discounted,
    Average,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Converged,
    Failed,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct SolutionArchive {
    pub kind: SolveKind,
    pub status: Status,
    pub error: Option<String>,
    pub model: String,
    pub grid_hash: String,
    pub config_hash: String,
    pub strategy: Option<String>,
    pub alpha: Option<f64>,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    pub residual_trace: Vec<f64>,
    pub rho: Option<f64>,
    /// `(α_k, ρ_k)` along the vanishing-discount schedule.
    pub rho_trace: Vec<(f64, f64)>,
    pub acoi_residual: Option<f64>,
    pub x0: Option<usize>,
    pub points: Vec<Vec<f64>>,
    /// `J_α` for discounted solves, `h` for average ones.
    pub value: Vec<f64>,
    pub boundary_points: Vec<Vec<f64>>,
    pub boundary_value: Vec<f64>,
    /// Action index per interior grid point.
    pub selector: Vec<usize>,
    pub boundary_selector: Vec<usize>,
}

fn coords(pts: &[crate::point::Point]) -> Vec<Vec<f64>> {
    pts.iter().map(|p| p.coords().to_vec()).collect()
}

impl SolutionArchive {
    fn empty(problem: &Problem, config_hash: &str, kind: SolveKind) -> Self {
        Self {
            kind,
            status: Status::Converged,
            error: None,
            model: problem.name.clone(),
            grid_hash: problem.grid_hash(),
            config_hash: config_hash.into(),
            strategy: None,
            alpha: None,
            residual: None,
            iterations: None,
            residual_trace: Vec::new(),
            rho: None,
            rho_trace: Vec::new(),
            acoi_residual: None,
            x0: None,
            points: coords(problem.grid.interior()),
            value: Vec::new(),
            boundary_points: coords(problem.grid.boundary()),
            boundary_value: Vec::new(),
            selector: Vec::new(),
            boundary_selector: Vec::new(),
        }
    }

    fn set_tables(&mut self, value: &GridFunction, sel: &FeedbackSelector) {
        self.value = value.values.clone();
        self.boundary_value = value.boundary_values.clone();
        self.selector = sel.interior.iter().map(|c| c.index).collect();
        self.boundary_selector = sel.boundary.iter().map(|c| c.index).collect();
    }

    pub fn discounted(problem: &Problem, config_hash: &str, sol: &DiscountedSolution) -> Self {
        let mut a = Self::empty(problem, config_hash, SolveKind::Discounted);
        a.strategy = Some(sol.strategy.into());
        a.alpha = Some(sol.alpha);
        a.residual = Some(sol.residual);
        a.iterations = Some(sol.iterations);
        a.residual_trace = sol.residual_trace.clone();
        a.set_tables(&sol.value, &sol.selector);
        a
    }

    pub fn average(problem: &Problem, config_hash: &str, sol: &AverageSolution) -> Self {
        let mut a = Self::empty(problem, config_hash, SolveKind::Average);
        a.strategy = Some(problem.numerics.strategy.clone());
        a.rho = Some(sol.rho);
        a.rho_trace = sol.rho_trace.clone();
        a.acoi_residual = Some(sol.acoi_residual);
        a.residual_trace = sol.h_steps.clone();
        a.x0 = Some(sol.x0);
        a.set_tables(&sol.h, &sol.selector);
        a
    }

    /// Record of a solve that did not finish; keeps the residual trace when there is one.
    pub fn failed(problem: &Problem, config_hash: &str, kind: SolveKind, alpha: Option<f64>, err: &PdmpError) -> Self {
        let mut a = Self::empty(problem, config_hash, kind);
        a.status = Status::Failed;
        a.error = Some(err.to_string());
        a.alpha = alpha;
        a.strategy = Some(problem.numerics.strategy.clone());
        if let PdmpError::Convergence {
            iterations,
            last_residual,
            trace,
        } = err
        {
            a.iterations = Some(*iterations);
            a.residual = Some(*last_residual);
            a.residual_trace = trace.clone();
        }
        a
    }

    fn check_binding(&self, problem: &Problem) -> Result<()> {
        let h = problem.grid_hash();
        if self.grid_hash != h {
            return Err(PdmpError::Config(format!(
                "archive was solved on grid {} of model `{}`, not on grid {h} of `{}`",
                self.grid_hash, self.model, problem.name
            )));
        }
        if self.status != Status::Converged {
            return Err(PdmpError::Config("archive records a failed solve".into()));
        }
        Ok(())
    }

    /// The stored selector, after checking the archive belongs to `problem`.
    pub fn selector(&self, problem: &Problem) -> Result<FeedbackSelector> {
        self.check_binding(problem)?;
        let (m, grid) = (&*problem.model, &*problem.grid);
        let bad = self.selector.len() != grid.interior().len()
            || self.boundary_selector.len() != grid.boundary().len()
            || grid.interior().iter().zip(&self.selector).any(|(x, &i)| i >= m.actions(x).len())
            || grid
                .boundary()
                .iter()
                .zip(&self.boundary_selector)
                .any(|(z, &i)| i >= m.boundary_actions(z).len());
        if bad {
            return Err(PdmpError::Config("archive selector does not fit the action sets".into()));
        }
        Ok(FeedbackSelector::from_indices(m, grid, &self.selector, &self.boundary_selector))
    }

    pub fn value_function(&self, problem: &Problem) -> Result<GridFunction> {
        self.check_binding(problem)?;
        GridFunction::new(problem.grid.clone(), self.value.clone(), self.boundary_value.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Columns `x0, …, value, boundary`.
    pub fn write_value_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.points.first().or(self.boundary_points.first()).map_or(1, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
        header.extend(["value", "boundary"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        let rows = self
            .points
            .iter()
            .zip(&self.value)
            .map(|r| (r, 0))
            .chain(self.boundary_points.iter().zip(&self.boundary_value).map(|r| (r, 1)));
        for ((p, v), flag) in rows {
            let mut rec: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            rec.push(v.to_string());
            rec.push(flag.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columns `k, alpha, rho`.
    pub fn write_rho_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "alpha", "rho"]).map_err(csv_err)?;
        for (k, (a, r)) in self.rho_trace.iter().enumerate() {
            w.write_record([k.to_string(), a.to_string(), r.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
