//! TOML run configuration.
//!
//! ```toml
//! [model]
//! id = "drain-reset"            # registered benchmark, or "custom"
//! [model.overrides]             # optional constant replacements
//! running_cost = 1.0
//! [grid]
//! axes = [[0.01, 0.99, 0.01]]   # lo, hi, step per axis
//! [witness]
//! m_scale = 0.5                 # scales the calibrated M
//! [numerics]
//! node_count = 64
//! [solver]
//! strategy = "value-iteration"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::{CustomModel, ModelChoice, Overrides, ProblemSpec, WitnessSettings, benchmarks};
use crate::error::{PdmpError, Result};
use crate::grid::StateGrid;
use crate::problem::Numerics;
use crate::quadrature::rules;
use crate::solvers::solvers;

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Overrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomModel>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// `[lo, hi, step]` per axis.
    pub axes: Option<Vec<[f64; 3]>>,
    /// Explicit coordinates per axis; takes precedence over `axes`.
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WitnessSection {
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub m_scale: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub node_count: Option<usize>,
    pub sub_panels: Option<usize>,
    pub rule: Option<String>,
    pub t_max: Option<f64>,
    pub tail_tol: Option<f64>,
    pub quad_tol: Option<f64>,
    pub rate_floor: Option<f64>,
    pub vi_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub hjb_tol: Option<f64>,
    pub check_tol: Option<f64>,
    pub acoi_tol: Option<f64>,
    pub rho_tol: Option<f64>,
    pub explosion_guard: Option<usize>,
    pub damping: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub strategy: Option<String>,
    /// Vanishing-discount schedule for average-cost solves.
    pub schedule: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub witness: WitnessSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub solver: SolverSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PdmpError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn benchmark(id: &str) -> Self {
        Self {
            model: ModelSection {
                id: id.into(),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// SHA-256 of the canonical JSON form, so formatting and comments do not matter.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }

    fn axes(&self) -> Result<Option<Vec<Vec<f64>>>> {
        if let Some(p) = &self.grid.points {
            return Ok(Some(p.clone()));
        }
        match &self.grid.axes {
            Some(ax) => ax
                .iter()
                .map(|&[lo, hi, step]| {
                    if !(step > 0.0) || !(hi >= lo) {
                        return Err(PdmpError::Config(format!("bad grid axis [{lo}, {hi}, {step}]")));
                    }
                    Ok(StateGrid::uniform_axis(lo, hi, step))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            None => Ok(None),
        }
    }

    fn numerics(&self, base: Numerics) -> Result<Numerics> {
        let s = &self.numerics;
        let mut n = base;
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = s.$field.clone() { $target = v; })*
            };
        }
        set!(
            node_count => n.quad.node_count,
            sub_panels => n.quad.sub_panels,
            t_max => n.quad.t_max,
            tail_tol => n.quad.tail_tol,
            quad_tol => n.quad.quad_tol,
            rate_floor => n.quad.rate_floor,
            vi_tol => n.vi_tol,
            max_iter => n.max_iter,
            hjb_tol => n.hjb_tol,
            check_tol => n.check_tol,
            acoi_tol => n.acoi_tol,
            rho_tol => n.rho_tol,
            explosion_guard => n.explosion_guard,
            damping => n.damping,
        );
        if let Some(r) = &s.rule {
            n.quad.rule = rules().get(r)?;
        }
        if let Some(st) = &self.solver.strategy {
            solvers().get(st)?;
            n.strategy = st.clone();
        }
        Ok(n)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let witness = WitnessSettings {
            c: self.witness.c,
            delta: self.witness.delta,
            m_scale: self.witness.m_scale,
        };
        let (model, base) = if self.model.id == "custom" {
            let c = self
                .model
                .custom
                .as_ref()
                .ok_or_else(|| PdmpError::Config("model id \"custom\" needs a [model.custom] table".into()))?;
            if self.model.overrides.is_some() {
                return Err(PdmpError::Config("overrides apply to benchmarks only".into()));
            }
            let mut cm = c.clone();
            cm.c = witness.c.unwrap_or(cm.c);
            cm.delta = witness.delta.unwrap_or(cm.delta);
            (ModelChoice::Custom(Box::new(cm)), Numerics::default())
        } else {
            if self.model.custom.is_some() {
                return Err(PdmpError::Config("[model.custom] requires id = \"custom\"".into()));
            }
            let b = benchmarks().get(&self.model.id)?;
            let overrides = self.model.overrides.clone().unwrap_or_default();
            (
                ModelChoice::Benchmark {
                    id: b.id().into(),
                    overrides,
                },
                b.numerics(),
            )
        };
        Ok(ProblemSpec {
            model,
            axes: self.axes()?,
            witness,
            numerics: Some(self.numerics(base)?),
        })
    }
}
