//! The one-stage operator `𝒯_α(ρ,h)` by backward induction along each flow,
//! and the pointwise feedback selector built from it.
//!
//! Each path interval is one quadrature panel (left, middle, right samples).
//! Per action the panel yields the survival factor `E = e^{−αΔ−Λ(Δ)}`, the
//! discounted length, the `λ`-weighted mass and the running-cost integral;
//! these are rescaled so that `E + α·len + mass = 1` holds exactly, which keeps
//! the discrete operator a sub-Markov transport of constants.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PdmpError, Result};
use crate::grid::{csv_err, GridFunction, StateGrid};
use crate::model::{Kernel, ModelSpec};
use crate::operators::ControlPath;
use crate::point::Point;
use crate::quadrature::QuadratureConfig;

#[derive(Clone, Debug)]
struct Entry {
    a: f64,
    idx: usize,
    lam: [f64; 3],
    f: [f64; 3],
}

#[derive(Clone, Debug)]
enum Terminal {
    Boundary(Point),
    /// Horizon reached before `t*`; the tail is valued with the state frozen at `y`.
    Frozen(Point),
}

/// Path data for one origin that does not depend on `α`, `ρ` or `h`.
#[derive(Clone, Debug)]
struct OriginTable {
    origin: Point,
    t_star: f64,
    nodes: Vec<f64>,
    /// `2N+1` samples: node `k` at `2k`, interval midpoint at `2k+1`.
    points: Vec<Point>,
    offsets: Vec<usize>,
    entries: Vec<Entry>,
    terminal: Terminal,
}

impl OriginTable {
    fn build(model: &ModelSpec, q: &QuadratureConfig, x: &Point) -> Result<Self> {
        let t_star = model.hit_time(x)?;
        let end = q.horizon(t_star);
        let nodes = q.time_nodes(end);
        let mut times = Vec::with_capacity(2 * nodes.len() - 1);
        for w in nodes.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(end);
        let points = model.flow_samples(x, &times)?;
        let n = nodes.len() - 1;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut entries = Vec::new();
        for k in 0..n {
            offsets.push(entries.len());
            let (p0, pm, p1) = (&points[2 * k], &points[2 * k + 1], &points[2 * k + 2]);
            for (idx, &a) in model.actions(p0).iter().enumerate() {
                entries.push(Entry {
                    a,
                    idx,
                    lam: [model.intensity(p0, a), model.intensity(pm, a), model.intensity(p1, a)],
                    f: [
                        model.running_cost(p0, a),
                        model.running_cost(pm, a),
                        model.running_cost(p1, a),
                    ],
                });
            }
        }
        offsets.push(entries.len());
        let last = *points.last().unwrap();
        let terminal = if t_star.is_finite() && end >= t_star {
            Terminal::Boundary(last)
        } else {
            Terminal::Frozen(last)
        };
        Ok(Self {
            origin: *x,
            t_star,
            nodes,
            points,
            offsets,
            entries,
            terminal,
        })
    }

    fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Per-grid-point path tables shared by every sweep.
#[derive(Clone, Debug)]
pub struct StageCache {
    tables: Vec<OriginTable>,
}

impl StageCache {
    pub fn build(model: &ModelSpec, grid: &StateGrid, q: &QuadratureConfig) -> Result<Self> {
        let tables = grid
            .interior()
            .par_iter()
            .map(|x| OriginTable::build(model, q, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tables })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Coef {
    e: f64,
    len: f64,
    mass: f64,
    cost: f64,
    /// Weights of `Qh` at the three samples.
    q: [f64; 3],
}

fn coefficients(q: &QuadratureConfig, alpha: f64, dt: f64, en: &Entry) -> Coef {
    let rule = &q.rule;
    let [l0, lm, l1] = en.lam;
    let hz_m = rule.half(dt, l0, lm, l1);
    let hz_1 = rule.panel(dt, l0, lm, l1);
    let w = [1.0, (-0.5 * alpha * dt - hz_m).exp(), (-alpha * dt - hz_1).exp()];
    let unit = [
        rule.panel(dt, 1.0, 0.0, 0.0),
        rule.panel(dt, 0.0, 1.0, 0.0),
        rule.panel(dt, 0.0, 0.0, 1.0),
    ];
    let len = rule.panel(dt, w[0], w[1], w[2]);
    let qw = [unit[0] * w[0] * l0, unit[1] * w[1] * lm, unit[2] * w[2] * l1];
    let mass = qw.iter().sum::<f64>();
    let cost = rule.panel(dt, w[0] * en.f[0], w[1] * en.f[1], w[2] * en.f[2]);
    let total = w[2] + alpha * len + mass;
    Coef {
        e: w[2] / total,
        len: len / total,
        mass: mass / total,
        cost: cost / total,
        q: qw.map(|c| c / total),
    }
}

/// Coefficients of every cached table at one discount rate.
#[derive(Clone, Debug)]
pub struct AlphaStage {
    pub alpha: f64,
    coefs: Vec<Vec<Coef>>,
}

impl AlphaStage {
    pub fn new(cache: &StageCache, q: &QuadratureConfig, alpha: f64) -> Self {
        let coefs = cache
            .tables
            .par_iter()
            .map(|t| table_coefs(t, q, alpha))
            .collect();
        Self { alpha, coefs }
    }
}

fn table_coefs(t: &OriginTable, q: &QuadratureConfig, alpha: f64) -> Vec<Coef> {
    let mut out = Vec::with_capacity(t.entries.len());
    for k in 0..t.intervals() {
        let dt = t.nodes[k + 1] - t.nodes[k];
        for en in &t.entries[t.offsets[k]..t.offsets[k + 1]] {
            out.push(coefficients(q, alpha, dt, en));
        }
    }
    out
}

/// An action choice: index into the local action list plus its value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Choice {
    pub index: usize,
    pub action: f64,
    pub value: f64,
}

/// Exhaustive argmin of `r(z,a) + Qh(z,a)` over `𝕌(z)`, lowest index on ties.
pub fn boundary_selector(model: &ModelSpec, h: &GridFunction, z: &Point) -> Result<Choice> {
    argmin(model.boundary_actions(z), z, |a| {
        model.boundary_cost(z, a) + model.kernel_at(z, a).expectation(|y| h.eval(y))
    })
}

/// Exhaustive argmin of `f(x,a) − λ(x,a)[w − Qh(x,a)]` over `𝕌(x)`.
pub fn hamiltonian_selector(model: &ModelSpec, w_val: f64, h: &GridFunction, x: &Point) -> Result<Choice> {
    argmin(model.actions(x), x, |a| {
        let qh = model.kernel_at(x, a).expectation(|y| h.eval(y));
        model.running_cost(x, a) - model.intensity(x, a) * (w_val - qh)
    })
}

fn argmin(actions: &[f64], at: &Point, objective: impl Fn(f64) -> f64) -> Result<Choice> {
    let mut best: Option<Choice> = None;
    for (index, &action) in actions.iter().enumerate() {
        let value = objective(action);
        if best.is_none_or(|b| value < b.value) {
            best = Some(Choice { index, action, value });
        }
    }
    best.ok_or_else(|| PdmpError::Contract(format!("empty action set at {at:?}")))
}

/// One node of the minimization record along the flow.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceNode {
    pub time: f64,
    pub action: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct OneStageResult {
    pub value: f64,
    pub path: ControlPath,
    /// Discounted expected cycle length `𝓛_α` of `path` under the scheme.
    pub cycle_length: f64,
    pub hamiltonian_trace: Vec<TraceNode>,
}

struct Backward {
    value: f64,
    cycle: f64,
    choices: Vec<usize>,
    terminal: Option<Choice>,
    values: Vec<f64>,
}

/// `Qh` at a sample; constant for a fixed kernel.
fn qh_at(model: &ModelSpec, fixed: Option<f64>, h: &GridFunction, p: &Point, a: f64) -> f64 {
    fixed.unwrap_or_else(|| model.kernel_at(p, a).expectation(|y| h.eval(y)))
}

fn fixed_qh(model: &ModelSpec, h: &GridFunction) -> Option<f64> {
    match model.kernel() {
        Kernel::Fixed(d) => Some(d.expectation(|y| h.eval(y))),
        Kernel::Varying(_) => None,
    }
}

fn backward(
    model: &ModelSpec,
    t: &OriginTable,
    coefs: &[Coef],
    alpha: f64,
    rho: f64,
    h: &GridFunction,
    fixed: Option<f64>,
    keep_values: bool,
) -> Result<Backward> {
    let (mut w, mut ell, terminal) = match &t.terminal {
        Terminal::Boundary(z) => {
            let c = boundary_selector(model, h, z)?;
            (c.value, 0.0, Some(c))
        }
        Terminal::Frozen(y) => {
            let mut best: Option<(f64, f64)> = None;
            for &a in model.actions(y) {
                let lam = model.intensity(y, a);
                let rate = alpha + lam;
                let (v, l) = if rate > 0.0 {
                    let qh = qh_at(model, fixed, h, y, a);
                    ((-rho + model.running_cost(y, a) + lam * qh) / rate, 1.0 / rate)
                } else {
                    (0.0, 0.0)
                };
                if best.is_none_or(|b| v < b.0) {
                    best = Some((v, l));
                }
            }
            let (v, l) = best.ok_or_else(|| PdmpError::Contract(format!("empty action set at {y:?}")))?;
            (v, l, None)
        }
    };
    let n = t.intervals();
    let mut choices = vec![0usize; n];
    let mut values = if keep_values { vec![0.0; n + 1] } else { Vec::new() };
    if keep_values {
        values[n] = w;
    }
    for k in (0..n).rev() {
        let (lo, hi) = (t.offsets[k], t.offsets[k + 1]);
        let mut best = f64::INFINITY;
        let mut best_e = lo;
        for e in lo..hi {
            let c = &coefs[e];
            let en = &t.entries[e];
            let ql = match fixed {
                Some(qh) => c.mass * qh,
                None => {
                    let pts = [&t.points[2 * k], &t.points[2 * k + 1], &t.points[2 * k + 2]];
                    (0..3)
                        .map(|j| c.q[j] * model.kernel_at(pts[j], en.a).expectation(|y| h.eval(y)))
                        .sum()
                }
            };
            let v = c.cost - rho * c.len + ql + c.e * w;
            if v < best {
                best = v;
                best_e = e;
            }
        }
        if !best.is_finite() {
            return Err(PdmpError::Numeric {
                message: format!("non-finite one-stage value from {:?}", t.origin),
                last_time: t.nodes[k],
            });
        }
        ell = coefs[best_e].len + coefs[best_e].e * ell;
        w = best;
        choices[k] = best_e;
        if keep_values {
            values[k] = w;
        }
    }
    Ok(Backward {
        value: w,
        cycle: ell,
        choices,
        terminal,
        values,
    })
}

/// Grid-wide results of one application of `𝒯_α(ρ, ·)`.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub values: Vec<f64>,
    pub cycle_lengths: Vec<f64>,
    /// Action chosen on the first interval at every grid point.
    pub first_actions: Vec<Choice>,
}

/// Evaluator for `𝒯_α` on a fixed model, grid and quadrature configuration.
pub struct OneStage<'a> {
    pub model: &'a ModelSpec,
    pub grid: &'a StateGrid,
    pub q: &'a QuadratureConfig,
    pub cache: &'a StageCache,
}

impl<'a> OneStage<'a> {
    pub fn alpha_stage(&self, alpha: f64) -> AlphaStage {
        AlphaStage::new(self.cache, self.q, alpha)
    }

    fn check(&self, alpha: f64, h: &GridFunction) -> Result<()> {
        if alpha < 0.0 {
            return Err(PdmpError::Contract(format!("one-stage operator needs alpha >= 0, got {alpha}")));
        }
        if !h.is_finite() {
            return Err(PdmpError::Numeric {
                message: "non-finite values in h".into(),
                last_time: 0.0,
            });
        }
        Ok(())
    }

    /// `𝒯_α(ρ,h)` at every interior grid point.
    pub fn sweep(&self, stage: &AlphaStage, rho: f64, h: &GridFunction) -> Result<Sweep> {
        self.check(stage.alpha, h)?;
        let fixed = fixed_qh(self.model, h);
        let out: Vec<(f64, f64, Choice)> = self
            .cache
            .tables
            .par_iter()
            .zip(&stage.coefs)
            .map(|(t, c)| {
                let b = backward(self.model, t, c, stage.alpha, rho, h, fixed, false)?;
                let first = t.entries[b.choices[0]].clone();
                Ok((
                    b.value,
                    b.cycle,
                    Choice {
                        index: first.idx,
                        action: first.a,
                        value: b.value,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        let mut sw = Sweep {
            values: Vec::with_capacity(out.len()),
            cycle_lengths: Vec::with_capacity(out.len()),
            first_actions: Vec::with_capacity(out.len()),
        };
        for (v, l, c) in out {
            sw.values.push(v);
            sw.cycle_lengths.push(l);
            sw.first_actions.push(c);
        }
        Ok(sw)
    }

    /// `𝒯_α(ρ,h)` at a single grid point, with cycle length.
    pub fn at_grid_point(&self, stage: &AlphaStage, i: usize, rho: f64, h: &GridFunction) -> Result<(f64, f64)> {
        self.check(stage.alpha, h)?;
        let fixed = fixed_qh(self.model, h);
        let b = backward(self.model, &self.cache.tables[i], &stage.coefs[i], stage.alpha, rho, h, fixed, false)?;
        Ok((b.value, b.cycle))
    }

    /// Full evaluation at any interior state, including the minimizing path.
    pub fn eval_t(&self, alpha: f64, rho: f64, h: &GridFunction, x: &Point) -> Result<OneStageResult> {
        self.check(alpha, h)?;
        let i = self.grid.nearest_interior(x);
        let owned;
        let table = if self.grid.interior()[i].dist(x) <= 1e-12 {
            &self.cache.tables[i]
        } else {
            owned = OriginTable::build(self.model, self.q, x)?;
            &owned
        };
        let coefs = table_coefs(table, self.q, alpha);
        let fixed = fixed_qh(self.model, h);
        let b = backward(self.model, table, &coefs, alpha, rho, h, fixed, true)?;
        let actions: Vec<f64> = b.choices.iter().map(|&e| table.entries[e].a).collect();
        let node_points: Vec<Point> = table.points.iter().step_by(2).copied().collect();
        let boundary = match (&table.terminal, b.terminal) {
            (Terminal::Boundary(z), Some(c)) => Some((*z, c.action)),
            _ => None,
        };
        let trace = (0..table.intervals())
            .map(|k| TraceNode {
                time: table.nodes[k],
                action: actions[k],
                value: b.values[k],
            })
            .collect();
        // A finite t* beyond the horizon is cut like an infinite one.
        let t_star = if boundary.is_some() { table.t_star } else { f64::INFINITY };
        let path = ControlPath::new(
            self.model,
            *x,
            table.nodes.clone(),
            node_points,
            actions,
            boundary,
            t_star,
        )?;
        Ok(OneStageResult {
            value: b.value,
            path,
            cycle_length: b.cycle,
            hamiltonian_trace: trace,
        })
    }

    /// `û(𝒯(ρ,h), h)` given the grid values `w = 𝒯_α(ρ,h)`.
    pub fn selector_from(&self, w: &[f64], h: &GridFunction) -> Result<FeedbackSelector> {
        let interior = self
            .grid
            .interior()
            .par_iter()
            .zip(w)
            .map(|(x, &wv)| hamiltonian_selector(self.model, wv, h, x))
            .collect::<Result<Vec<_>>>()?;
        let boundary = self
            .grid
            .boundary()
            .iter()
            .map(|z| boundary_selector(self.model, h, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeedbackSelector { interior, boundary })
    }

    /// Sweep followed by selector extraction.
    pub fn extract_selector(&self, alpha: f64, rho: f64, h: &GridFunction) -> Result<FeedbackSelector> {
        let sw = self.sweep(&self.alpha_stage(alpha), rho, h)?;
        self.selector_from(&sw.values, h)
    }
}

/// Actions on the interior grid and on the boundary set.
#[derive(Clone, Debug, Serialize)]
pub struct FeedbackSelector {
    pub interior: Vec<Choice>,
    pub boundary: Vec<Choice>,
}

impl FeedbackSelector {
    /// Selector with the same action index everywhere (clamped to each action list).
    pub fn constant_index(model: &ModelSpec, grid: &StateGrid, idx: usize) -> Self {
        let pick = |acts: &[f64]| {
            let i = idx.min(acts.len() - 1);
            Choice {
                index: i,
                action: acts[i],
                value: f64::NAN,
            }
        };
        Self {
            interior: grid.interior().iter().map(|x| pick(model.actions(x))).collect(),
            boundary: grid.boundary().iter().map(|z| pick(model.boundary_actions(z))).collect(),
        }
    }

    /// Selector from per-point index tables (clamped to each action list).
    pub fn from_indices(model: &ModelSpec, grid: &StateGrid, interior: &[usize], boundary: &[usize]) -> Self {
        let pick = |acts: &[f64], i: usize| {
            let i = i.min(acts.len() - 1);
            Choice {
                index: i,
                action: acts[i],
                value: f64::NAN,
            }
        };
        Self {
            interior: grid
                .interior()
                .iter()
                .zip(interior)
                .map(|(x, &i)| pick(model.actions(x), i))
                .collect(),
            boundary: grid
                .boundary()
                .iter()
                .zip(boundary)
                .map(|(z, &i)| pick(model.boundary_actions(z), i))
                .collect(),
        }
    }

    /// Action at any interior state: nearest grid point, projected onto `𝕌(x)`.
    pub fn action_at(&self, model: &ModelSpec, grid: &StateGrid, x: &Point) -> f64 {
        let a = self.interior[grid.nearest_interior(x)].action;
        project(model.actions(x), a)
    }

    pub fn boundary_action_at(&self, model: &ModelSpec, grid: &StateGrid, z: &Point) -> f64 {
        let acts = model.boundary_actions(z);
        match grid.nearest_boundary(z) {
            Some(i) => project(acts, self.boundary[i].action),
            None => acts[0],
        }
    }

    /// The induced open-loop control `u_φ(x)` on the standard node grid.
    pub fn induced_path(
        &self,
        model: &ModelSpec,
        grid: &StateGrid,
        q: &QuadratureConfig,
        x: &Point,
    ) -> Result<ControlPath> {
        ControlPath::induced(
            model,
            q,
            x,
            |_, p| self.action_at(model, grid, p),
            |z| self.boundary_action_at(model, grid, z),
        )
    }

    /// CSV with columns `x0, …, action_index, action_value, boundary`.
    pub fn write_csv<W: Write>(&self, grid: &StateGrid, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..grid.dim()).map(|d| format!("x{d}")).collect();
        header.extend(["action_index", "action_value", "boundary"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        let rows = grid
            .interior()
            .iter()
            .zip(&self.interior)
            .map(|(p, c)| (p, c, 0))
            .chain(grid.boundary().iter().zip(&self.boundary).map(|(p, c)| (p, c, 1)));
        for (p, c, flag) in rows {
            let mut rec: Vec<String> = p.coords().iter().map(|v| v.to_string()).collect();
            rec.push(c.index.to_string());
            rec.push(c.action.to_string());
            rec.push(flag.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn project(acts: &[f64], a: f64) -> f64 {
    acts.iter()
        .copied()
        .min_by(|x, y| (x - a).abs().total_cmp(&(y - a).abs()))
        .unwrap_or(a)
}
