//! Built-in models, their variants, a tabulated 1-D model, and brute-force oracles.

mod custom;
mod oracle;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

pub use custom::{CustomModel, Table};
pub use oracle::{OracleResult, PolicyValue, coarse_policies, oracle_average, oracle_discounted};

use crate::diagnostics::{calibrate_growth, calibrate_k_lambda};
use crate::error::{PdmpError, Result};
use crate::grid::StateGrid;
use crate::model::{ActionSets, DiscreteDist, Kernel, ModelSpec, ScalarField};
use crate::point::Point;
use crate::problem::{Numerics, Problem};
use crate::quadrature::QuadratureConfig;
use crate::registry::Registry;
use crate::witness::{GrowthWitness, Hyp8aWitness};

/// A named model with its witness functions and default discretization.
pub trait Benchmark: Send + Sync {
    fn id(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn model(&self) -> Result<ModelSpec>;
    fn axes(&self) -> Vec<Vec<f64>>;
    fn numerics(&self) -> Numerics;
    fn g(&self) -> ScalarField;
    fn r_bar(&self) -> ScalarField;
    fn c(&self) -> f64;
    fn delta(&self) -> f64;
    /// Five-point grid on which oracle policies are enumerated.
    fn coarse_axes(&self) -> Vec<Vec<f64>>;
}

/// `E = (0,1)`, `φ(x,t) = x − t`, reset to `{0.5,…,0.8}` at random times or at `0`.
pub struct DrainReset;

impl Benchmark for DrainReset {
    fn id(&self) -> &'static str {
        "drain-reset"
    }

    fn description(&self) -> &'static str {
        "linear drain to 0 with random and forced resets"
    }

    fn model(&self) -> Result<ModelSpec> {
        ModelSpec::builder("drain-reset", 1)
            .interior(|x| x.x() > 0.0 && x.x() < 1.0)
            .closed_form_flow(|x, t| Point::scalar(x.x() - t), |x| x.x())
            .intensity(|x, a| a * (1.0 + x.x()))
            .kernel(Kernel::Fixed(Arc::new(DiscreteDist::uniform(
                [0.5, 0.6, 0.7, 0.8].map(Point::scalar).to_vec(),
            )?)))
            .running_cost(|x, a| x.x() + 0.2 * a * a)
            .boundary_cost(|_, _| 1.0)
            .actions(ActionSets::uniform(vec![0.5, 1.0, 1.5, 2.0]))
            .build()
    }

    fn axes(&self) -> Vec<Vec<f64>> {
        vec![StateGrid::uniform_axis(0.01, 0.99, 0.01)]
    }

    fn numerics(&self) -> Numerics {
        let mut n = Numerics::default();
        n.quad.rate_floor = 0.5;
        n
    }

    fn g(&self) -> ScalarField {
        Arc::new(|x: &Point| 2.0 - x.x())
    }

    fn r_bar(&self) -> ScalarField {
        Arc::new(|_: &Point| 0.3)
    }

    fn c(&self) -> f64 {
        0.25
    }

    fn delta(&self) -> f64 {
        0.25
    }

    fn coarse_axes(&self) -> Vec<Vec<f64>> {
        vec![vec![0.1, 0.3, 0.5, 0.7, 0.9]]
    }
}

/// `E = (0,5)`, `φ(x,t) = x·e^{−t}`, no boundary.
pub struct Decay;

impl Benchmark for Decay {
    fn id(&self) -> &'static str {
        "decay"
    }

    fn description(&self) -> &'static str {
        "exponential decay toward 0, never exits, jumps to {1,2,3}"
    }

    fn model(&self) -> Result<ModelSpec> {
        ModelSpec::builder("decay", 1)
            .interior(|x| x.x() > 0.0 && x.x() < 5.0)
            .closed_form_flow(|x, t| Point::scalar(x.x() * (-t).exp()), |_| f64::INFINITY)
            .intensity(|x, a| a + 0.5 * x.x())
            .kernel(Kernel::Fixed(Arc::new(DiscreteDist::uniform(
                [1.0, 2.0, 3.0].map(Point::scalar).to_vec(),
            )?)))
            .running_cost(|x, a| x.x() * x.x() / (1.0 + x.x()) + 0.1 * a)
            .actions(ActionSets::uniform(vec![1.0, 2.0, 3.0]))
            .build()
    }

    fn axes(&self) -> Vec<Vec<f64>> {
        vec![StateGrid::uniform_axis(0.05, 4.95, 0.05)]
    }

    fn numerics(&self) -> Numerics {
        let mut n = Numerics::default();
        n.quad.node_count = 32;
        n.quad.t_max = 45.0;
        n.quad.rate_floor = 1.0;
        n
    }

    fn g(&self) -> ScalarField {
        Arc::new(|x: &Point| 1.0 + x.x())
    }

    fn r_bar(&self) -> ScalarField {
        Arc::new(|_: &Point| 0.0)
    }

    fn c(&self) -> f64 {
        0.5
    }

    fn delta(&self) -> f64 {
        0.5
    }

    fn coarse_axes(&self) -> Vec<Vec<f64>> {
        vec![vec![0.5, 1.5, 2.5, 3.5, 4.5]]
    }
}

pub fn benchmarks() -> &'static Registry<dyn Benchmark> {
    static BENCH: OnceLock<Registry<dyn Benchmark>> = OnceLock::new();
    BENCH.get_or_init(|| {
        let mut r: Registry<dyn Benchmark> = Registry::new("benchmark");
        r.register("drain-reset", Arc::new(DrainReset));
        r.register("A", Arc::new(DrainReset));
        r.register("decay", Arc::new(Decay));
        r.register("B", Arc::new(Decay));
        r
    })
}

/// Data replacements applied to a benchmark before calibration.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// `λ(x,a) ≡` this constant.
    pub intensity: Option<f64>,
    /// `f(x,a) ≡` this constant.
    pub running_cost: Option<f64>,
    /// `r(z,a) ≡` this constant.
    pub boundary_cost: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, model: ModelSpec) -> ModelSpec {
        let mut m = model;
        if let Some(l) = self.intensity {
            m = m.with_intensity(move |_, _| l);
        }
        if let Some(f) = self.running_cost {
            m = m.with_running_cost(move |_, _| f);
        }
        if let Some(r) = self.boundary_cost {
            m = m.with_boundary_cost(move |_, _| r);
        }
        m
    }
}

/// Witness settings; `c`, `δ` default to the benchmark's, and `m_scale`
/// multiplies the calibrated `M` (values below 1 break the witness on purpose).
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WitnessSettings {
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub m_scale: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum ModelChoice {
    Benchmark { id: String, overrides: Overrides },
    Custom(Box<CustomModel>),
}

/// Everything needed to build a [`Problem`].
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub model: ModelChoice,
    /// Replaces the default grid axes when set.
    pub axes: Option<Vec<Vec<f64>>>,
    pub witness: WitnessSettings,
    /// Replaces the benchmark's default numerics when set.
    pub numerics: Option<Numerics>,
}

impl ProblemSpec {
    pub fn benchmark(id: &str) -> Self {
        Self {
            model: ModelChoice::Benchmark {
                id: id.into(),
                overrides: Overrides::default(),
            },
            axes: None,
            witness: WitnessSettings::default(),
            numerics: None,
        }
    }

    pub fn with_overrides(mut self, o: Overrides) -> Self {
        if let ModelChoice::Benchmark { overrides, .. } = &mut self.model {
            *overrides = o;
        }
        self
    }

    /// Name recorded in archives and hashed with the grid.
    pub fn label(&self) -> String {
        match &self.model {
            ModelChoice::Benchmark { id, overrides } if *overrides == Overrides::default() => id.clone(),
            ModelChoice::Benchmark { id, overrides } => format!("{id}{overrides:?}"),
            ModelChoice::Custom(c) => format!("custom:{}", c.name),
        }
    }
}

/// `λ̲(x) = min_a λ(x,a)` and `f̄(x) = max_a f(x,a)` over the action set.
fn action_envelopes(model: &ModelSpec) -> (ScalarField, ScalarField) {
    let m = Arc::new(model.clone());
    let m2 = m.clone();
    let lower: ScalarField = Arc::new(move |x: &Point| {
        m.actions(x).iter().map(|&a| m.intensity(x, a)).fold(f64::INFINITY, f64::min)
    });
    let upper: ScalarField = Arc::new(move |x: &Point| {
        m2.actions(x).iter().map(|&a| m2.running_cost(x, a)).fold(0.0, f64::max)
    });
    (lower, upper)
}

/// Calibrates `(b, M)` and `K_λ` on the grid, then applies `m_scale`.
fn calibrated(
    model: &ModelSpec,
    grid: &StateGrid,
    q: &QuadratureConfig,
    g: ScalarField,
    r_bar: ScalarField,
    c: f64,
    delta: f64,
    m_scale: f64,
) -> Result<(GrowthWitness, Hyp8aWitness)> {
    let mut growth = calibrate_growth(model, grid, move |x| g(x), move |z| r_bar(z), c, delta)?;
    growth.m *= m_scale;
    let (lower, upper) = action_envelopes(model);
    let hyp = calibrate_k_lambda(model, grid, q, move |x| lower(x), move |x| upper(x), c)?;
    Ok((growth, hyp))
}

pub fn build_problem(spec: &ProblemSpec) -> Result<Problem> {
    let m_scale = spec.witness.m_scale.unwrap_or(1.0);
    if !(m_scale >= 0.0) {
        return Err(PdmpError::Config(format!("m_scale must be nonnegative, got {m_scale}")));
    }
    match &spec.model {
        ModelChoice::Benchmark { id, overrides } => {
            let b = benchmarks().get(id)?;
            let model = overrides.apply(b.model()?);
            let mut numerics = spec.numerics.clone().unwrap_or_else(|| b.numerics());
            if let Some(l) = overrides.intensity {
                numerics.quad.rate_floor = numerics.quad.rate_floor.min(l);
            }
            let c = spec.witness.c.unwrap_or(b.c());
            let delta = spec.witness.delta.unwrap_or(b.delta());
            let (g, r_bar) = (b.g(), b.r_bar());
            Problem::build(
                spec.label(),
                model,
                spec.axes.clone().unwrap_or_else(|| b.axes()),
                numerics,
                Box::new(move |m: &ModelSpec, grid: &StateGrid, q: &QuadratureConfig| {
                    calibrated(m, grid, q, g, r_bar, c, delta, m_scale)
                }),
            )
        }
        ModelChoice::Custom(cm) => {
            let model = cm.model()?;
            let axes = spec
                .axes
                .clone()
                .ok_or_else(|| PdmpError::Config("a custom model needs [grid] axes".into()))?;
            let mut numerics = spec.numerics.clone().unwrap_or_default();
            numerics.quad.rate_floor = numerics.quad.rate_floor.min(cm.rate_floor());
            let c = spec.witness.c.unwrap_or(cm.c);
            let delta = spec.witness.delta.unwrap_or(cm.delta);
            let (g, r_bar) = (cm.g(), cm.r_bar());
            Problem::build(
                spec.label(),
                model,
                axes,
                numerics,
                Box::new(move |m: &ModelSpec, grid: &StateGrid, q: &QuadratureConfig| {
                    calibrated(m, grid, q, g, r_bar, c, delta, m_scale)
                }),
            )
        }
    }
}

/// Builds a registered benchmark with default settings.
pub fn problem(id: &str) -> Result<Problem> {
    build_problem(&ProblemSpec::benchmark(id))
}

/// Benchmark variant with constant overrides and, optionally, its own grid.
#[cfg(test)]
pub(crate) fn variant(id: &str, overrides: Overrides, axes: Option<Vec<Vec<f64>>>) -> Problem {
    let mut spec = ProblemSpec::benchmark(id).with_overrides(overrides);
    spec.axes = axes;
    build_problem(&spec).unwrap()
}

#[cfg(test)]
pub(crate) fn costs(running: f64, boundary: f64) -> Overrides {
    Overrides {
        intensity: None,
        running_cost: Some(running),
        boundary_cost: Some(boundary),
    }
}

#[cfg(test)]
pub(crate) fn rate(l: f64) -> Overrides {
    Overrides {
        intensity: Some(l),
        ..Default::default()
    }
}
