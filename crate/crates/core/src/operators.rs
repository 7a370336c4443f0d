//! Quadrature of `Λ`, `L_α`, `H_α`, `G_α` and `𝓛_α` along one flow trajectory
//! under a piecewise-constant control.

use std::borrow::Cow;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PdmpError, Result};
use crate::grid::{csv_err, StateGrid};
use crate::model::{Kernel, ModelSpec};
use crate::point::Point;
use crate::quadrature::QuadratureConfig;

/// An open-loop control `(μ, μ_∂)` along the flow from `origin`.
#[derive(Clone, Debug)]
pub struct ControlPath {
    pub origin: Point,
    pub time_nodes: Vec<f64>,
    /// `φ(origin, t_k)` for every node.
    pub node_points: Vec<Point>,
    /// One action per interval `[t_k, t_{k+1})`.
    pub actions: Vec<f64>,
    /// Boundary point and action, present iff `t*(origin) < ∞`.
    pub boundary: Option<(Point, f64)>,
    pub t_star: f64,
}

impl ControlPath {
    /// Path on the standard node grid with actions chosen at each left node.
    pub fn induced(
        model: &ModelSpec,
        q: &QuadratureConfig,
        x: &Point,
        interior: impl Fn(usize, &Point) -> f64,
        boundary: impl Fn(&Point) -> f64,
    ) -> Result<Self> {
        let t_star = model.hit_time(x)?;
        let nodes = q.time_nodes(q.horizon(t_star));
        let points = model.flow_samples(x, &nodes)?;
        let actions = points[..points.len() - 1]
            .iter()
            .enumerate()
            .map(|(k, p)| interior(k, p))
            .collect();
        let boundary = if t_star.is_finite() {
            let z = *points.last().unwrap();
            Some((z, boundary(&z)))
        } else {
            None
        };
        Self::new(model, *x, nodes, points, actions, boundary, t_star)
    }

    /// Same action on every interval and at the boundary.
    pub fn constant(model: &ModelSpec, q: &QuadratureConfig, x: &Point, a: f64, a_boundary: f64) -> Result<Self> {
        Self::induced(model, q, x, |_, _| a, |_| a_boundary)
    }

    pub fn new(
        model: &ModelSpec,
        origin: Point,
        time_nodes: Vec<f64>,
        node_points: Vec<Point>,
        actions: Vec<f64>,
        boundary: Option<(Point, f64)>,
        t_star: f64,
    ) -> Result<Self> {
        if time_nodes.len() < 2
            || time_nodes[0] != 0.0
            || actions.len() + 1 != time_nodes.len()
            || node_points.len() != time_nodes.len()
            || time_nodes.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(PdmpError::Contract("malformed control path".into()));
        }
        for (k, a) in actions.iter().enumerate() {
            if !model.is_feasible(&node_points[k], *a, false) {
                return Err(PdmpError::Contract(format!(
                    "action {a} infeasible at {:?} (interval {k})",
                    node_points[k]
                )));
            }
        }
        if t_star.is_finite() != boundary.is_some() {
            return Err(PdmpError::Contract(
                "boundary action must be present exactly when t* is finite".into(),
            ));
        }
        if let Some((z, a)) = &boundary {
            if !model.is_feasible(z, *a, true) {
                return Err(PdmpError::Contract(format!("boundary action {a} infeasible at {z:?}")));
            }
        }
        Ok(Self {
            origin,
            time_nodes,
            node_points,
            actions,
            boundary,
            t_star,
        })
    }

    pub fn end_time(&self) -> f64 {
        *self.time_nodes.last().unwrap()
    }

    /// Whether the horizon stops short of `t*`.
    pub fn truncated(&self) -> bool {
        self.end_time() < self.t_star
    }

    pub fn intervals(&self) -> usize {
        self.actions.len()
    }
}

/// A quadrature value with its estimated absolute error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Fine samples of a control path: `2r+1` equispaced points per interval.
#[derive(Clone, Debug)]
pub struct PathSamples<'a> {
    model: &'a ModelSpec,
    q: &'a QuadratureConfig,
    path: Cow<'a, ControlPath>,
    r: usize,
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub lambda: Vec<f64>,
    /// `Λ(t)` at every sample.
    pub hazard: Vec<f64>,
}

impl<'a> PathSamples<'a> {
    /// Samples with `q.sub_panels` panels per interval.
    pub fn new(model: &'a ModelSpec, q: &'a QuadratureConfig, path: &'a ControlPath) -> Result<Self> {
        Self::with_panels(model, q, path, q.sub_panels.max(1))
    }

    /// Samples that own their path.
    pub fn owned(model: &'a ModelSpec, q: &'a QuadratureConfig, path: ControlPath) -> Result<Self> {
        Self::sampled(model, q, Cow::Owned(path), q.sub_panels.max(1))
    }

    pub fn with_panels(
        model: &'a ModelSpec,
        q: &'a QuadratureConfig,
        path: &'a ControlPath,
        r: usize,
    ) -> Result<Self> {
        Self::sampled(model, q, Cow::Borrowed(path), r)
    }

    fn sampled(model: &'a ModelSpec, q: &'a QuadratureConfig, path: Cow<'a, ControlPath>, r: usize) -> Result<Self> {
        let per = 2 * r + 1;
        let n = path.intervals();
        let mut times = Vec::with_capacity(n * per);
        for k in 0..n {
            let (t0, t1) = (path.time_nodes[k], path.time_nodes[k + 1]);
            let step = (t1 - t0) / (2 * r) as f64;
            times.extend((0..per).map(|j| if j + 1 == per { t1 } else { t0 + j as f64 * step }));
        }
        // Flow samples per interval, restarting from the node point to keep
        // ODE drift from accumulating across intervals.
        let mut points = Vec::with_capacity(times.len());
        for k in 0..n {
            let t0 = path.time_nodes[k];
            let rel: Vec<f64> = times[k * per..(k + 1) * per].iter().map(|t| t - t0).collect();
            points.extend(model.flow_samples(&path.node_points[k], &rel)?);
        }
        let lambda: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(i, p)| model.intensity(p, path.actions[i / per]))
            .collect();
        let mut s = Self {
            model,
            q,
            path,
            r,
            times,
            points,
            lambda,
            hazard: Vec::new(),
        };
        s.hazard = s.cumulative(&s.lambda);
        Ok(s)
    }

    pub fn path(&self) -> &ControlPath {
        &self.path
    }

    fn per(&self) -> usize {
        2 * self.r + 1
    }

    pub fn action_of(&self, sample: usize) -> f64 {
        self.path.actions[sample / self.per()]
    }

    /// Running integral of sampled values, reported at every sample.
    pub fn cumulative(&self, v: &[f64]) -> Vec<f64> {
        let per = self.per();
        let rule = &self.q.rule;
        let mut out = vec![0.0; v.len()];
        let mut carry = 0.0;
        for k in 0..self.path.intervals() {
            let base = k * per;
            let hs = (self.times[base + per - 1] - self.times[base]) / self.r as f64;
            out[base] = carry;
            for p in 0..self.r {
                let i = base + 2 * p;
                let (f0, fm, f1) = (v[i], v[i + 1], v[i + 2]);
                out[i + 1] = out[i] + rule.half(hs, f0, fm, f1);
                out[i + 2] = out[i] + rule.panel(hs, f0, fm, f1);
            }
            carry = out[base + per - 1];
        }
        out
    }

    /// Integral of the interpolant of `v` over `[0, t]`, given `cum = cumulative(v)`.
    pub fn integral_at(&self, v: &[f64], cum: &[f64], t: f64) -> Result<f64> {
        let (i, hs, s) = self.locate(t)?;
        Ok(cum[i] + self.q.rule.partial(hs, v[i], v[i + 1], v[i + 2], s))
    }

    /// Sub-panel start index, panel width and offset for time `t`.
    fn locate(&self, t: f64) -> Result<(usize, f64, f64)> {
        let end = self.path.end_time();
        if !(0.0..=end * (1.0 + 1e-14)).contains(&t) {
            return Err(PdmpError::Contract(format!(
                "time {t} outside path support [0, {end}]"
            )));
        }
        let nodes = &self.path.time_nodes;
        let k = (nodes.partition_point(|&n| n <= t).max(1) - 1).min(self.path.intervals() - 1);
        let base = k * self.per();
        let hs = (nodes[k + 1] - nodes[k]) / self.r as f64;
        let p = (((t - nodes[k]) / hs).floor() as usize).min(self.r - 1);
        let start = nodes[k] + p as f64 * hs;
        Ok((base + 2 * p, hs, (t - start).clamp(0.0, hs)))
    }

    /// `Λ(x, t)`.
    pub fn integrated_hazard(&self, t: f64) -> Result<f64> {
        self.integral_at(&self.lambda, &self.hazard, t)
    }

    /// `e^{−αt−Λ(t)}` at every sample.
    pub fn weights(&self, alpha: f64) -> Vec<f64> {
        self.times
            .iter()
            .zip(&self.hazard)
            .map(|(t, l)| (-alpha * t - l).exp())
            .collect()
    }

    /// Fine and one-level-coarser integrals of sampled values over the path.
    fn integrate_samples(&self, v: &[f64]) -> (f64, f64) {
        let per = self.per();
        let rule = &self.q.rule;
        let (mut fine, mut coarse) = (0.0, 0.0);
        for k in 0..self.path.intervals() {
            let base = k * per;
            let width = self.times[base + per - 1] - self.times[base];
            let hs = width / self.r as f64;
            for p in 0..self.r {
                let i = base + 2 * p;
                fine += rule.panel(hs, v[i], v[i + 1], v[i + 2]);
            }
            coarse += rule.panel(width, v[base], v[base + self.r], v[base + per - 1]);
        }
        (fine, coarse)
    }

    fn check_alpha(&self, alpha: f64) -> Result<()> {
        if alpha < self.q.alpha_floor - 1e-12 {
            return Err(PdmpError::Contract(format!(
                "alpha {alpha} below -c = {}",
                self.q.alpha_floor
            )));
        }
        Ok(())
    }

    fn weighted(&self, alpha: f64, v: &[f64]) -> Result<Estimate> {
        let w = self.weights(alpha);
        let prod: Vec<f64> = w.iter().zip(v).map(|(a, b)| a * b).collect();
        let (fine, coarse) = self.integrate_samples(&prod);
        let scale = (self.r as f64).powi(self.q.rule.order() as i32) - 1.0;
        let mut error = if scale > 0.0 { (fine - coarse).abs() / scale } else { 0.0 };
        if self.path.truncated() {
            let v_sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            error += self.q.tail_bound(alpha, *w.last().unwrap(), v_sup)?;
        }
        Ok(Estimate {
            value: fine,
            error: error.max(1e-14 * fine.abs()),
        })
    }

    /// `L_α v(x, Θ)`.
    pub fn eval_l(&self, alpha: f64, v: impl Fn(&Point, f64) -> f64) -> Result<Estimate> {
        self.check_alpha(alpha)?;
        let vals: Vec<f64> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| v(p, self.action_of(i)))
            .collect();
        self.weighted(alpha, &vals)
    }

    /// `𝓛_α(x, Θ) = L_α 1`.
    pub fn curly_l(&self, alpha: f64) -> Result<Estimate> {
        self.eval_l(alpha, |_, _| 1.0)
    }

    /// `e^{−αt*−Λ(t*)}`, zero when `t* = ∞` or beyond the horizon.
    pub fn boundary_weight(&self, alpha: f64) -> f64 {
        match self.path.boundary {
            Some(_) if !self.path.truncated() => {
                (-alpha * self.path.t_star - self.hazard.last().unwrap()).exp()
            }
            _ => 0.0,
        }
    }

    /// `H_α w(x, Θ)`.
    pub fn eval_h(&self, alpha: f64, w: impl Fn(&Point, f64) -> f64) -> Result<f64> {
        self.check_alpha(alpha)?;
        Ok(match self.path.boundary {
            Some((z, a)) if !self.path.truncated() => self.boundary_weight(alpha) * w(&z, a),
            _ => 0.0,
        })
    }

    /// `G_α h(x, Θ)`: the `λQh` integral plus the boundary jump term.
    pub fn eval_g(&self, alpha: f64, h: impl Fn(&Point) -> f64) -> Result<Estimate> {
        self.check_alpha(alpha)?;
        let model = self.model;
        let fixed = match model.kernel() {
            Kernel::Fixed(d) => Some(d.expectation(&h)),
            Kernel::Varying(_) => None,
        };
        let qh = |p: &Point, a: f64| fixed.unwrap_or_else(|| model.kernel_at(p, a).expectation(&h));
        let vals: Vec<f64> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| self.lambda[i] * qh(p, self.action_of(i)))
            .collect();
        let mut est = self.weighted(alpha, &vals)?;
        est.value += self.eval_h(alpha, qh)?;
        Ok(est)
    }
}

/// `G_α`, `L_αf + H_αr` and `𝓛_α` on the grid under fixed per-point paths:
/// row `i` of the chain is the functional `h ↦ G_α h(x_i, Θ_i)`.
#[derive(Clone, Debug)]
pub struct EmbeddedChain {
    pub alpha: f64,
    rows: Vec<Vec<(usize, f64)>>,
    pub one_jump_cost: Vec<f64>,
    pub curly_l: Vec<f64>,
}

impl EmbeddedChain {
    pub fn build(
        model: &ModelSpec,
        grid: &StateGrid,
        q: &QuadratureConfig,
        paths: &[ControlPath],
        alpha: f64,
    ) -> Result<Self> {
        if paths.len() != grid.len() {
            return Err(PdmpError::Contract("one path per grid point required".into()));
        }
        let built = paths
            .par_iter()
            .map(|path| chain_row(model, grid, q, path, alpha))
            .collect::<Result<Vec<_>>>()?;
        let mut chain = Self {
            alpha,
            rows: Vec::with_capacity(built.len()),
            one_jump_cost: Vec::with_capacity(built.len()),
            curly_l: Vec::with_capacity(built.len()),
        };
        for (row, cost, l) in built {
            chain.rows.push(row);
            chain.one_jump_cost.push(cost);
            chain.curly_l.push(l);
        }
        Ok(chain)
    }

    #[cfg(test)]
    pub(crate) fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        Self {
            alpha: 0.0,
            rows,
            one_jump_cost: vec![0.0; n],
            curly_l: vec![0.0; n],
        }
    }

    /// `G_α h` at every grid point, `h` given by its interior grid values.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * h[j]).sum())
            .collect()
    }

    /// `G_α 1` at every grid point.
    pub fn mass(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(_, w)| w).sum()).collect()
    }
}

fn chain_row(
    model: &ModelSpec,
    grid: &StateGrid,
    q: &QuadratureConfig,
    path: &ControlPath,
    alpha: f64,
) -> Result<(Vec<(usize, f64)>, f64, f64)> {
    let s = PathSamples::new(model, q, path)?;
    s.check_alpha(alpha)?;
    let w = s.weights(alpha);
    // Linear weights of the rule on each sub-panel.
    let unit = [
        q.rule.panel(1.0, 1.0, 0.0, 0.0),
        q.rule.panel(1.0, 0.0, 1.0, 0.0),
        q.rule.panel(1.0, 0.0, 0.0, 1.0),
    ];
    let per = s.per();
    let mut coef = vec![0.0; s.times.len()];
    for k in 0..path.intervals() {
        let base = k * per;
        let hs = (s.times[base + per - 1] - s.times[base]) / s.r as f64;
        for p in 0..s.r {
            let i = base + 2 * p;
            for j in 0..3 {
                coef[i + j] += hs * unit[j];
            }
        }
    }
    let mut dense = vec![0.0; grid.len()];
    let mut add_kernel = |weight: f64, p: &Point, a: f64| {
        if weight == 0.0 {
            return;
        }
        let dist = model.kernel_at(p, a);
        for (y, py) in dist.support().iter().zip(dist.weights()) {
            for (j, sw) in grid.stencil(y).iter() {
                dense[j] += weight * py * sw;
            }
        }
    };
    let fixed = matches!(model.kernel(), Kernel::Fixed(_));
    let mut mass = 0.0;
    for i in 0..s.times.len() {
        let m = coef[i] * w[i] * s.lambda[i];
        if fixed {
            mass += m;
        } else {
            add_kernel(m, &s.points[i], s.action_of(i));
        }
    }
    if let Some((z, a)) = path.boundary {
        let bw = s.boundary_weight(alpha);
        if fixed {
            mass += bw;
        } else {
            add_kernel(bw, &z, a);
        }
    }
    if fixed {
        add_kernel(mass, &path.origin, path.actions[0]);
    }
    let row: Vec<(usize, f64)> = dense
        .into_iter()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .collect();
    let cost = s.eval_l(alpha, |p, a| model.running_cost(p, a))?.value
        + s.eval_h(alpha, |z, a| model.boundary_cost(z, a))?;
    let l = s.curly_l(alpha)?.value;
    Ok((row, cost, l))
}

/// One row of an operator sweep.
#[derive(Clone, Debug, Serialize)]
pub struct OperatorRow {
    pub x: Point,
    pub alpha: f64,
    pub l: f64,
    pub h: f64,
    pub g: f64,
    pub curly_l: f64,
}

/// `L_α f`, `H_α r`, `G_α h` and `𝓛_α` along `path`.
pub fn operator_row(
    model: &ModelSpec,
    q: &QuadratureConfig,
    path: &ControlPath,
    alpha: f64,
    h: impl Fn(&Point) -> f64,
) -> Result<OperatorRow> {
    let s = PathSamples::new(model, q, path)?;
    Ok(OperatorRow {
        x: path.origin,
        alpha,
        l: s.eval_l(alpha, |p, a| model.running_cost(p, a))?.value,
        h: s.eval_h(alpha, |z, a| model.boundary_cost(z, a))?,
        g: s.eval_g(alpha, h)?.value,
        curly_l: s.curly_l(alpha)?.value,
    })
}

/// CSV with columns `x0, …, alpha, L, H, G, curlyL`.
pub fn write_sweep_csv<W: Write>(rows: &[OperatorRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = rows.first().map_or(1, |r| r.x.dim());
    let mut header: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
    header.extend(["alpha", "L", "H", "G", "curlyL"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec: Vec<String> = r.x.coords().iter().map(|c| c.to_string()).collect();
        rec.extend([r.alpha, r.l, r.h, r.g, r.curly_l].map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
