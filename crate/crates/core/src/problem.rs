//! A model bundled with its grid, witnesses and numeric settings.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{PdmpError, Result};
use crate::grid::{GridFunction, StateGrid};
use crate::model::ModelSpec;
use crate::onestage::{OneStage, StageCache};
use crate::quadrature::QuadratureConfig;
use crate::witness::{GrowthWitness, Hyp8aWitness};

#[derive(Clone, Debug)]
pub struct Numerics {
    pub quad: QuadratureConfig,
    pub vi_tol: f64,
    pub max_iter: usize,
    /// Relative factors: the absolute tolerances scale with `1 + ‖h‖_g` or `max(b,1)`.
    pub hjb_tol: f64,
    pub check_tol: f64,
    pub acoi_tol: f64,
    pub rho_tol: f64,
    pub explosion_guard: usize,
    /// Under-relaxation for relative value iteration, in `(0, 1]`.
    pub damping: f64,
    /// Registered name of the discounted solver.
    pub strategy: String,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            quad: QuadratureConfig::default(),
            vi_tol: 1e-8,
            max_iter: 100_000,
            hjb_tol: 1e-6,
            check_tol: 1e-6,
            acoi_tol: 1e-3,
            rho_tol: 1e-4,
            explosion_guard: 1_000_000,
            damping: 1.0,
            strategy: "relative-value-iteration".into(),
        }
    }
}

pub struct Problem {
    pub name: String,
    pub model: Arc<ModelSpec>,
    pub grid: Arc<StateGrid>,
    pub growth: GrowthWitness,
    pub hyp: Hyp8aWitness,
    pub numerics: Numerics,
    /// The witness `g` sampled on the grid.
    pub g: GridFunction,
    cache: StageCache,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("grid_points", &self.grid.len())
            .field("growth", &self.growth)
            .field("numerics", &self.numerics)
            .finish_non_exhaustive()
    }
}

pub type WitnessBuilder<'a> =
    dyn FnOnce(&ModelSpec, &StateGrid, &QuadratureConfig) -> Result<(GrowthWitness, Hyp8aWitness)> + 'a;

impl Problem {
    /// Builds the grid, lets `witnesses` calibrate against it, then caches path tables.
    pub fn build(
        name: impl Into<String>,
        model: ModelSpec,
        axes: Vec<Vec<f64>>,
        mut numerics: Numerics,
        witnesses: Box<WitnessBuilder<'_>>,
    ) -> Result<Self> {
        if numerics.quad.sub_panels == 0 || numerics.quad.node_count == 0 {
            return Err(PdmpError::Config("node_count and sub_panels must be positive".into()));
        }
        if !(numerics.damping > 0.0 && numerics.damping <= 1.0) {
            return Err(PdmpError::Config(format!("damping {} outside (0, 1]", numerics.damping)));
        }
        let grid = Arc::new(StateGrid::tensor(&model, axes)?);
        let (growth, hyp) = witnesses(&model, &grid, &numerics.quad)?;
        if growth.c <= 0.0 || growth.delta <= 0.0 || growth.b < 0.0 || growth.m < 0.0 {
            return Err(PdmpError::Config(format!("invalid growth witness constants {growth:?}")));
        }
        numerics.quad.alpha_floor = -growth.c;
        let g = growth.g_grid(grid.clone());
        if let Some(bad) = g.values.iter().chain(&g.boundary_values).find(|v| **v < 1.0) {
            return Err(PdmpError::Config(format!("witness g takes value {bad} < 1 on the grid")));
        }
        let cache = StageCache::build(&model, &grid, &numerics.quad)?;
        Ok(Self {
            name: name.into(),
            model: Arc::new(model),
            grid,
            growth,
            hyp,
            numerics,
            g,
            cache,
        })
    }

    pub fn one_stage(&self) -> OneStage<'_> {
        OneStage {
            model: &self.model,
            grid: &self.grid,
            q: &self.numerics.quad,
            cache: &self.cache,
        }
    }

    pub fn q(&self) -> &QuadratureConfig {
        &self.numerics.quad
    }

    pub fn zeros(&self) -> GridFunction {
        GridFunction::zeros(self.grid.clone())
    }

    pub fn hjb_tol(&self, h: &GridFunction) -> f64 {
        self.numerics.hjb_tol * (1.0 + h.g_norm(&self.g))
    }

    pub fn acoi_tol(&self, h: &GridFunction) -> f64 {
        self.numerics.acoi_tol * (1.0 + h.g_norm(&self.g))
    }

    pub fn check_tol(&self) -> f64 {
        self.numerics.check_tol * self.growth.b.max(1.0)
    }

    /// SHA-256 over the problem label and every grid coordinate.
    pub fn grid_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.name.as_bytes());
        for p in self.grid.interior().iter().chain(self.grid.boundary()) {
            for c in p.coords() {
                hasher.update(c.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}
