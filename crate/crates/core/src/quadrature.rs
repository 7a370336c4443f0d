//! Panel quadrature rules and the truncation configuration shared by the
//! operators, the one-stage scheme and the simulator.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{PdmpError, Result};
use crate::registry::Registry;

/// A rule integrating over one panel `[0, h]` from samples at `0, h/2, h`.
pub trait QuadratureRule: Send + Sync {
    fn name(&self) -> &'static str;

    /// Order of the composite error in the panel width.
    fn order(&self) -> u32;

    /// Integral of the rule's interpolant over `[0, s]`, `0 ≤ s ≤ h`.
    fn partial(&self, h: f64, f0: f64, fm: f64, f1: f64, s: f64) -> f64;

    fn panel(&self, h: f64, f0: f64, fm: f64, f1: f64) -> f64 {
        self.partial(h, f0, fm, f1, h)
    }

    /// Integral over the first half `[0, h/2]`.
    fn half(&self, h: f64, f0: f64, fm: f64, f1: f64) -> f64 {
        self.partial(h, f0, fm, f1, 0.5 * h)
    }
}

/// Composite trapezoid on the two half panels.
pub struct Trapezoid;

impl QuadratureRule for Trapezoid {
    fn name(&self) -> &'static str {
        "trapezoid"
    }

    fn order(&self) -> u32 {
        2
    }

    fn partial(&self, h: f64, f0: f64, fm: f64, f1: f64, s: f64) -> f64 {
        let m = 0.5 * h;
        if s <= m {
            let slope = (fm - f0) / m;
            s * f0 + 0.5 * slope * s * s
        } else {
            let u = s - m;
            let slope = (f1 - fm) / m;
            0.5 * m * (f0 + fm) + u * fm + 0.5 * slope * u * u
        }
    }

    fn panel(&self, h: f64, f0: f64, fm: f64, f1: f64) -> f64 {
        0.25 * h * (f0 + 2.0 * fm + f1)
    }

    fn half(&self, h: f64, f0: f64, fm: f64, _f1: f64) -> f64 {
        0.25 * h * (f0 + fm)
    }
}

/// Simpson's rule; partial integrals use the interpolating quadratic.
pub struct CompositeSimpson;

impl QuadratureRule for CompositeSimpson {
    fn name(&self) -> &'static str {
        "composite-simpson"
    }

    fn order(&self) -> u32 {
        4
    }

    fn partial(&self, h: f64, f0: f64, fm: f64, f1: f64, s: f64) -> f64 {
        let r = s / h;
        let (r2, r3) = (r * r, r * r * r);
        let l0 = 2.0 * r3 / 3.0 - 1.5 * r2 + r;
        let lm = -4.0 * r3 / 3.0 + 2.0 * r2;
        let l1 = 2.0 * r3 / 3.0 - 0.5 * r2;
        h * (l0 * f0 + lm * fm + l1 * f1)
    }

    fn panel(&self, h: f64, f0: f64, fm: f64, f1: f64) -> f64 {
        h / 6.0 * (f0 + 4.0 * fm + f1)
    }

    fn half(&self, h: f64, f0: f64, fm: f64, f1: f64) -> f64 {
        h / 24.0 * (5.0 * f0 + 8.0 * fm - f1)
    }
}

pub fn rules() -> &'static Registry<dyn QuadratureRule> {
    static RULES: OnceLock<Registry<dyn QuadratureRule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let mut r: Registry<dyn QuadratureRule> = Registry::new("quadrature rule");
        r.register("composite-simpson", Arc::new(CompositeSimpson));
        r.register("trapezoid", Arc::new(Trapezoid));
        r
    })
}

/// Path discretization and truncation settings.
#[derive(Clone)]
pub struct QuadratureConfig {
    /// Path intervals per unit time.
    pub node_count: usize,
    pub rule: Arc<dyn QuadratureRule>,
    /// Sub-panels per path interval in the fine operator quadrature (even).
    pub sub_panels: usize,
    /// Truncation horizon when `t*(x) = ∞`.
    pub t_max: f64,
    pub tail_tol: f64,
    pub quad_tol: f64,
    /// Smallest admissible discount rate, `−c`.
    pub alpha_floor: f64,
    /// A lower bound on `λ` along every flow, used by the tail bound.
    pub rate_floor: f64,
}

impl fmt::Debug for QuadratureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadratureConfig")
            .field("node_count", &self.node_count)
            .field("rule", &self.rule.name())
            .field("sub_panels", &self.sub_panels)
            .field("t_max", &self.t_max)
            .field("tail_tol", &self.tail_tol)
            .field("quad_tol", &self.quad_tol)
            .field("alpha_floor", &self.alpha_floor)
            .field("rate_floor", &self.rate_floor)
            .finish()
    }
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            node_count: 64,
            rule: Arc::new(CompositeSimpson),
            sub_panels: 2,
            t_max: 40.0,
            tail_tol: 1e-8,
            quad_tol: 1e-7,
            alpha_floor: f64::NEG_INFINITY,
            rate_floor: 0.0,
        }
    }
}

impl QuadratureConfig {
    pub fn spacing(&self) -> f64 {
        1.0 / self.node_count as f64
    }

    /// Path nodes `0 = t₀ < … < t_N = t_end` at the configured spacing; the
    /// last interval absorbs a remainder shorter than a quarter step.
    pub fn time_nodes(&self, t_end: f64) -> Vec<f64> {
        let dt = self.spacing();
        let n = (t_end / dt).floor() as usize;
        let mut nodes: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let last = *nodes.last().unwrap();
        if t_end - last > 0.25 * dt || nodes.len() == 1 {
            nodes.push(t_end);
        } else {
            *nodes.last_mut().unwrap() = t_end;
        }
        if nodes.len() >= 2 && nodes[nodes.len() - 1] <= nodes[nodes.len() - 2] {
            nodes.pop();
        }
        nodes
    }

    /// Truncation end for a flow with hit time `t_star`.
    pub fn horizon(&self, t_star: f64) -> f64 {
        t_star.min(self.t_max)
    }

    /// `e^{−(α+c)T_max}·sup g ≤ tail_tol`, the horizon condition on the grid.
    pub fn check_horizon(&self, alpha: f64, c: f64, sup_g: f64) -> Result<()> {
        let rate = alpha + c;
        if rate <= 0.0 {
            return Ok(());
        }
        let bound = (-rate * self.t_max).exp() * sup_g;
        if bound > self.tail_tol {
            return Err(PdmpError::TailCertificate {
                bound,
                tol: self.tail_tol,
                required_t_max: (sup_g / self.tail_tol).ln() / rate,
            });
        }
        Ok(())
    }

    /// Bound on `∫_T^∞ e^{−αs−Λ(s)} v ds` given the weight at `T` and `sup |v|`;
    /// uses `Λ(s) − Λ(T) ≥ rate_floor·(s − T)`.
    pub fn tail_bound(&self, alpha: f64, weight_at_t: f64, v_sup: f64) -> Result<f64> {
        let rate = alpha + self.rate_floor;
        if weight_at_t == 0.0 || v_sup == 0.0 {
            return Ok(0.0);
        }
        if rate <= 0.0 {
            return Err(PdmpError::TailCertificate {
                bound: f64::INFINITY,
                tol: self.tail_tol,
                required_t_max: f64::INFINITY,
            });
        }
        let bound = weight_at_t * v_sup / rate;
        if bound > self.tail_tol {
            return Err(PdmpError::TailCertificate {
                bound,
                tol: self.tail_tol,
                required_t_max: self.t_max + (bound / self.tail_tol).ln() / rate,
            });
        }
        Ok(bound)
    }
}
