//! Witness data for the growth, integrability and ergodicity conditions.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::grid::{GridFunction, StateGrid};
use crate::model::ScalarField;
use crate::point::Point;

/// `(g, r̄, b, c, δ, M)` for the expected-growth inequalities.
#[derive(Clone)]
pub struct GrowthWitness {
    pub g: ScalarField,
    pub r_bar: ScalarField,
    pub b: f64,
    pub c: f64,
    pub delta: f64,
    pub m: f64,
}

impl fmt::Debug for GrowthWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthWitness")
            .field("b", &self.b)
            .field("c", &self.c)
            .field("delta", &self.delta)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl GrowthWitness {
    pub fn new(
        g: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        r_bar: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        b: f64,
        c: f64,
        delta: f64,
        m: f64,
    ) -> Self {
        Self {
            g: Arc::new(g),
            r_bar: Arc::new(r_bar),
            b,
            c,
            delta,
            m,
        }
    }

    #[inline]
    pub fn g(&self, x: &Point) -> f64 {
        (self.g)(x)
    }

    #[inline]
    pub fn r_bar(&self, z: &Point) -> f64 {
        (self.r_bar)(z)
    }

    pub fn g_grid(&self, grid: Arc<StateGrid>) -> GridFunction {
        GridFunction::sample(grid, |p| self.g(p))
    }

    /// `M' = M(1 + b/c)(1 + b·K_λ)/c`.
    pub fn m_prime(&self, k_lambda: f64) -> f64 {
        self.m * (1.0 + self.b / self.c) * (1.0 + self.b * k_lambda) / self.c
    }

    /// `M·g(x)/(c+α) + M·b/(c·α)`.
    pub fn value_bound(&self, x: &Point, alpha: f64) -> f64 {
        self.m * self.g(x) / (self.c + alpha) + self.m * self.b / (self.c * alpha)
    }
}

/// `(λ̲, f̄, K_λ)` for the integrability conditions.
#[derive(Clone)]
pub struct Hyp8aWitness {
    pub lambda_lower: ScalarField,
    pub f_upper: ScalarField,
    pub k_lambda: f64,
}

impl fmt::Debug for Hyp8aWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hyp8aWitness")
            .field("k_lambda", &self.k_lambda)
            .finish_non_exhaustive()
    }
}

impl Hyp8aWitness {
    pub fn new(
        lambda_lower: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        f_upper: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        k_lambda: f64,
    ) -> Self {
        Self {
            lambda_lower: Arc::new(lambda_lower),
            f_upper: Arc::new(f_upper),
            k_lambda,
        }
    }

    #[inline]
    pub fn lambda_lower(&self, x: &Point) -> f64 {
        (self.lambda_lower)(x)
    }

    #[inline]
    pub fn f_upper(&self, x: &Point) -> f64 {
        (self.f_upper)(x)
    }
}

/// Empirical `(a, κ, ν(g))`; only produced by the ergodicity estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErgodicityWitness {
    pub a_const: f64,
    pub kappa: f64,
    pub nu_g: f64,
    pub fit_residual: f64,
}
