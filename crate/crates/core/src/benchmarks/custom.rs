use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{PdmpError, Result};
use crate::model::{ActionSets, DiscreteDist, Kernel, ModelSpec, ScalarField};
use crate::point::Point;

/// Piecewise-linear function of one variable, constant beyond the end knots.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Table {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Table {
    pub fn constant(v: f64) -> Self {
        Self {
            x: vec![0.0],
            y: vec![v],
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.x.is_empty() || self.x.len() != self.y.len() {
            return Err(PdmpError::Config(format!("table {what}: x and y must be non-empty and equally long")));
        }
        if self.x.windows(2).any(|w| w[1] <= w[0]) || self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(PdmpError::Config(format!("table {what}: knots must be finite and strictly increasing")));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&k| k <= t) - 1;
        let w = (t - self.x[i]) / (self.x[i + 1] - self.x[i]);
        self.y[i] + w * (self.y[i + 1] - self.y[i])
    }

    fn min(&self) -> f64 {
        self.y.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn default_name() -> String {
    "custom".into()
}

fn quarter() -> f64 {
    0.25
}

/// One-dimensional model on `(lower, upper)` with constant drift and a fixed kernel:
/// `λ(x,a) = a·intensity(x)`, `f(x,a) = running_cost(x) + action_cost·a²`, `r ≡ boundary_cost`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    #[serde(default = "default_name")]
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
    pub actions: Vec<f64>,
    pub intensity: Table,
    pub running_cost: Table,
    #[serde(default)]
    pub action_cost: f64,
    #[serde(default)]
    pub boundary_cost: f64,
    pub kernel_support: Vec<f64>,
    pub kernel_weights: Option<Vec<f64>>,
    /// Witness `g`; defaults to the constant 1.
    pub g: Option<Table>,
    #[serde(default)]
    pub r_bar: f64,
    #[serde(default = "quarter")]
    pub c: f64,
    #[serde(default = "quarter")]
    pub delta: f64,
}

impl CustomModel {
    pub fn model(&self) -> Result<ModelSpec> {
        let (lo, hi, v) = (self.lower, self.upper, self.velocity);
        if !(lo < hi) || !v.is_finite() {
            return Err(PdmpError::Config("custom model needs lower < upper and a finite velocity".into()));
        }
        if self.actions.is_empty() || self.actions.iter().any(|a| !(*a >= 0.0)) {
            return Err(PdmpError::Config("custom model actions must be nonnegative and non-empty".into()));
        }
        self.intensity.validate("intensity")?;
        self.running_cost.validate("running_cost")?;
        if self.intensity.min() < 0.0 || self.running_cost.min() < 0.0 || self.action_cost < 0.0 || self.boundary_cost < 0.0 {
            return Err(PdmpError::Config("custom model rates and costs must be nonnegative".into()));
        }
        let support: Vec<Point> = self.kernel_support.iter().map(|&p| Point::scalar(p)).collect();
        let dist = match &self.kernel_weights {
            Some(w) => DiscreteDist::new(support, w.clone())?,
            None => DiscreteDist::uniform(support)?,
        };
        let hit = move |x: &Point| {
            if v < 0.0 {
                (x.x() - lo) / -v
            } else if v > 0.0 {
                (hi - x.x()) / v
            } else {
                f64::INFINITY
            }
        };
        let lam = self.intensity.clone();
        let cost = self.running_cost.clone();
        let (ac, rc) = (self.action_cost, self.boundary_cost);
        ModelSpec::builder(self.name.clone(), 1)
            .interior(move |x| x.x() > lo && x.x() < hi)
            .closed_form_flow(move |x, t| Point::scalar(x.x() + v * t), hit)
            .intensity(move |x, a| a * lam.eval(x.x()))
            .kernel(Kernel::Fixed(Arc::new(dist)))
            .running_cost(move |x, a| cost.eval(x.x()) + ac * a * a)
            .boundary_cost(move |_, _| rc)
            .actions(ActionSets::uniform(self.actions.clone()))
            .build()
    }

    /// Lower bound on the jump rate, used for tail certificates.
    pub fn rate_floor(&self) -> f64 {
        let amin = self.actions.iter().copied().fold(f64::INFINITY, f64::min);
        (amin * self.intensity.min()).max(0.0)
    }

    pub fn g(&self) -> ScalarField {
        match &self.g {
            Some(t) => {
                let t = t.clone();
                Arc::new(move |x: &Point| t.eval(x.x()))
            }
            None => Arc::new(|_: &Point| 1.0),
        }
    }

    pub fn r_bar(&self) -> ScalarField {
        let r = self.r_bar;
        Arc::new(move |_: &Point| r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolates_and_clamps() {
        let t = Table {
            x: vec![0.0, 1.0, 3.0],
            y: vec![1.0, 3.0, 2.0],
        };
        assert_eq!(t.eval(-1.0), 1.0);
        assert_eq!(t.eval(0.5), 2.0);
        assert_eq!(t.eval(2.0), 2.5);
        assert_eq!(t.eval(9.0), 2.0);
    }

    #[test]
    fn custom_drain_hits_lower_end() {
        let cm = CustomModel {
            name: "t".into(),
            lower: 0.0,
            upper: 2.0,
            velocity: -0.5,
            actions: vec![1.0],
            intensity: Table::constant(1.0),
            running_cost: Table::constant(1.0),
            action_cost: 0.0,
            boundary_cost: 0.0,
            kernel_support: vec![1.0],
            kernel_weights: None,
            g: None,
            r_bar: 0.0,
            c: 0.25,
            delta: 0.25,
        };
        let m = cm.model().unwrap();
        assert!((m.hit_time(&Point::scalar(1.5)).unwrap() - 3.0).abs() < 1e-12);
        let bad = CustomModel {
            kernel_support: vec![5.0],
            ..cm
        };
        assert!(bad.model().is_err());
    }
}
