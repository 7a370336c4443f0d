//! Controlled PDMP data model: flow, hit time, intensity, post-jump kernel,
//! costs and action sets, plus the primitive evaluations built on them.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use crate::error::{PdmpError, Result};
use crate::point::Point;

pub type ScalarField = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type StateActionField = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
pub type FlowMap = Arc<dyn Fn(&Point, f64) -> Point + Send + Sync>;
pub type KernelMap = Arc<dyn Fn(&Point, f64) -> DiscreteDist + Send + Sync>;
pub type Predicate = Arc<dyn Fn(&Point) -> bool + Send + Sync>;

/// Slack allowed when comparing a requested time against `t*(x)`.
const TIME_SLACK: f64 = 1e-12;

/// Finite discrete distribution `{(y_i, p_i)}`, weights normalized on construction.
#[derive(Clone, Debug)]
pub struct DiscreteDist {
    support: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(support: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(PdmpError::Config(format!(
                "kernel needs matching non-empty support/weights, got {} and {}",
                support.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PdmpError::Config("kernel weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(PdmpError::Config("kernel weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { support, weights })
    }

    pub fn uniform(support: Vec<Point>) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0; n])
    }

    pub fn support(&self) -> &[Point] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expectation(&self, h: impl Fn(&Point) -> f64) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(y, p)| p * h(y))
            .sum()
    }

    /// Index of the support point selected by a uniform draw `u ∈ [0,1)`.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.weights.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

/// The post-jump kernel `Q(x,a;·)`.
#[derive(Clone)]
pub enum Kernel {
    /// Same distribution for every state and action.
    Fixed(Arc<DiscreteDist>),
    Varying(KernelMap),
}

/// ODE-defined flow `ẋ = F(x)` with a signed distance to the boundary.
#[derive(Clone)]
pub struct OdeFlow {
    pub drift: VectorField,
    /// Largest integration step.
    pub step: f64,
    /// Positive inside `E`, zero on `∂E`.
    pub boundary_distance: ScalarField,
    /// Horizon of the exit scan.
    pub t_scan: f64,
    /// Model author's declaration that the boundary distance never decreases
    /// once it has stopped decreasing at the end of the scan.
    pub monotone_after_scan: bool,
}

#[derive(Clone)]
pub enum Flow {
    ClosedForm {
        map: FlowMap,
        /// `t*(x)`; `f64::INFINITY` when the flow never exits.
        hit_time: ScalarField,
    },
    Ode(OdeFlow),
}

impl Flow {
    pub fn kind(&self) -> FlowKind {
        match self {
            Flow::ClosedForm { .. } => FlowKind::ClosedForm,
            Flow::Ode(_) => FlowKind::OdeDefined,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    ClosedForm,
    OdeDefined,
}

/// Finite action lists; `selector` maps a point (and boundary flag) to the list it uses.
#[derive(Clone)]
pub struct ActionSets {
    sets: Vec<Vec<f64>>,
    selector: Option<Arc<dyn Fn(&Point, bool) -> usize + Send + Sync>>,
}

impl ActionSets {
    pub fn uniform(actions: Vec<f64>) -> Self {
        Self {
            sets: vec![actions],
            selector: None,
        }
    }

    pub fn by_region(
        sets: Vec<Vec<f64>>,
        selector: impl Fn(&Point, bool) -> usize + Send + Sync + 'static,
    ) -> Self {
        Self {
            sets,
            selector: Some(Arc::new(selector)),
        }
    }

    fn get(&self, x: &Point, boundary: bool) -> &[f64] {
        let idx = self.selector.as_ref().map_or(0, |s| s(x, boundary));
        &self.sets[idx.min(self.sets.len() - 1)]
    }
}

/// Numeric knobs owned by the model primitives.
#[derive(Clone, Copy, Debug)]
pub struct ModelTolerances {
    pub flow_tol: f64,
    pub fd_step: f64,
}

impl Default for ModelTolerances {
    fn default() -> Self {
        Self {
            flow_tol: 1e-9,
            fd_step: 1e-5,
        }
    }
}

/// Result of [`ModelSpec::directional_derivative`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivative {
    pub value: f64,
    /// Set when the point was too close to the boundary for a central difference.
    pub reduced_accuracy: bool,
}

/// A fully specified controlled PDMP.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub state_dim: usize,
    interior: Predicate,
    flow: Flow,
    cemetery: Point,
    intensity: StateActionField,
    kernel: Kernel,
    running_cost: StateActionField,
    boundary_cost: StateActionField,
    actions: ActionSets,
    pub tolerances: ModelTolerances,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("flow_kind", &self.flow.kind())
            .finish_non_exhaustive()
    }
}

pub struct ModelBuilder {
    name: String,
    state_dim: usize,
    interior: Option<Predicate>,
    flow: Option<Flow>,
    cemetery: Option<Point>,
    intensity: Option<StateActionField>,
    kernel: Option<Kernel>,
    running_cost: Option<StateActionField>,
    boundary_cost: Option<StateActionField>,
    actions: Option<ActionSets>,
    tolerances: ModelTolerances,
}

impl ModelBuilder {
    pub fn interior(mut self, f: impl Fn(&Point) -> bool + Send + Sync + 'static) -> Self {
        self.interior = Some(Arc::new(f));
        self
    }

    pub fn closed_form_flow(
        mut self,
        map: impl Fn(&Point, f64) -> Point + Send + Sync + 'static,
        hit_time: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.flow = Some(Flow::ClosedForm {
            map: Arc::new(map),
            hit_time: Arc::new(hit_time),
        });
        self
    }

    pub fn ode_flow(mut self, flow: OdeFlow) -> Self {
        self.flow = Some(Flow::Ode(flow));
        self
    }

    pub fn cemetery(mut self, p: Point) -> Self {
        self.cemetery = Some(p);
        self
    }

    pub fn intensity(mut self, f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.intensity = Some(Arc::new(f));
        self
    }

    pub fn kernel(mut self, k: Kernel) -> Self {
        self.kernel = Some(k);
        self
    }

    pub fn running_cost(mut self, f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.running_cost = Some(Arc::new(f));
        self
    }

    pub fn boundary_cost(mut self, f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.boundary_cost = Some(Arc::new(f));
        self
    }

    pub fn actions(mut self, a: ActionSets) -> Self {
        self.actions = Some(a);
        self
    }

    pub fn tolerances(mut self, t: ModelTolerances) -> Self {
        self.tolerances = t;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let missing = |what: &str| PdmpError::Config(format!("model `{}` has no {what}", self.name));
        let interior = self.interior.clone().ok_or_else(|| missing("interior test"))?;
        let flow = self.flow.clone().ok_or_else(|| missing("flow"))?;
        let intensity = self.intensity.clone().ok_or_else(|| missing("intensity"))?;
        let kernel = self.kernel.clone().ok_or_else(|| missing("kernel"))?;
        let running_cost = self.running_cost.clone().ok_or_else(|| missing("running cost"))?;
        let actions = self.actions.clone().ok_or_else(|| missing("action sets"))?;
        if actions.sets.iter().any(|s| s.is_empty()) {
            return Err(missing("non-empty action set"));
        }
        if let Kernel::Fixed(dist) = &kernel {
            if let Some(bad) = dist.support().iter().find(|y| !interior(y)) {
                return Err(PdmpError::Config(format!(
                    "kernel support point {bad:?} is not in E"
                )));
            }
        }
        Ok(ModelSpec {
            cemetery: self.cemetery.unwrap_or_else(|| Point::new(&vec![f64::MAX; self.state_dim])),
            boundary_cost: self
                .boundary_cost
                .unwrap_or_else(|| Arc::new(|_: &Point, _: f64| 0.0)),
            name: self.name,
            state_dim: self.state_dim,
            interior,
            flow,
            intensity,
            kernel,
            running_cost,
            actions,
            tolerances: self.tolerances,
        })
    }
}

impl ModelSpec {
    pub fn builder(name: impl Into<String>, state_dim: usize) -> ModelBuilder {
        ModelBuilder {
            name: name.into(),
            state_dim,
            interior: None,
            flow: None,
            cemetery: None,
            intensity: None,
            kernel: None,
            running_cost: None,
            boundary_cost: None,
            actions: None,
            tolerances: ModelTolerances::default(),
        }
    }

    /// Copy of the model with one ingredient swapped; used to build variants.
    pub fn with_intensity(&self, f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            intensity: Arc::new(f),
            ..self.clone()
        }
    }

    pub fn with_running_cost(&self, f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            running_cost: Arc::new(f),
            ..self.clone()
        }
    }

    pub fn with_boundary_cost(&self, f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            boundary_cost: Arc::new(f),
            ..self.clone()
        }
    }

    pub fn with_actions(&self, a: ActionSets) -> Self {
        Self {
            actions: a,
            ..self.clone()
        }
    }

    pub fn with_kernel(&self, k: Kernel) -> Self {
        Self {
            kernel: k,
            ..self.clone()
        }
    }

    pub fn flow(&self) -> &Flow {
        &self.flow
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn cemetery(&self) -> Point {
        self.cemetery
    }

    pub fn is_cemetery(&self, p: &Point) -> bool {
        *p == self.cemetery
    }

    #[inline]
    pub fn is_interior(&self, x: &Point) -> bool {
        (self.interior)(x)
    }

    #[inline]
    pub fn intensity(&self, x: &Point, a: f64) -> f64 {
        (self.intensity)(x, a)
    }

    #[inline]
    pub fn running_cost(&self, x: &Point, a: f64) -> f64 {
        (self.running_cost)(x, a)
    }

    #[inline]
    pub fn boundary_cost(&self, z: &Point, a: f64) -> f64 {
        (self.boundary_cost)(z, a)
    }

    /// Discretized `𝕌(x)` for an interior point.
    pub fn actions(&self, x: &Point) -> &[f64] {
        self.actions.get(x, false)
    }

    /// Discretized `𝕌(z)` for a boundary point.
    pub fn boundary_actions(&self, z: &Point) -> &[f64] {
        self.actions.get(z, true)
    }

    pub fn is_feasible(&self, x: &Point, a: f64, boundary: bool) -> bool {
        let set = if boundary {
            self.boundary_actions(x)
        } else {
            self.actions(x)
        };
        set.iter().any(|b| (b - a).abs() <= 1e-12 * (1.0 + a.abs()))
    }

    pub fn kernel_at(&self, x: &Point, a: f64) -> Cow<'_, DiscreteDist> {
        match &self.kernel {
            Kernel::Fixed(d) => Cow::Borrowed(d.as_ref()),
            Kernel::Varying(k) => Cow::Owned(k(x, a)),
        }
    }

    /// `t*(x) = inf{t > 0 : φ(x,t) ∈ ∂E}`, `f64::INFINITY` when the flow never exits.
    pub fn hit_time(&self, x: &Point) -> Result<f64> {
        if !self.is_interior(x) {
            return Err(PdmpError::Domain(format!("hit_time needs an interior point, got {x:?}")));
        }
        match &self.flow {
            Flow::ClosedForm { hit_time, .. } => Ok(hit_time(x)),
            Flow::Ode(ode) => self.ode_hit_time(ode, x),
        }
    }

    /// `φ(x,t)` for `0 ≤ t ≤ t*(x)`; exactly `t*(x)` yields the boundary point.
    pub fn flow_at(&self, x: &Point, t: f64) -> Result<Point> {
        if t < 0.0 {
            return Err(PdmpError::Domain(format!("negative flow time {t}")));
        }
        match &self.flow {
            Flow::ClosedForm { map, hit_time } => {
                let ts = if self.is_interior(x) { hit_time(x) } else { 0.0 };
                if t > ts + TIME_SLACK * (1.0 + ts.abs()) {
                    return Err(PdmpError::Domain(format!(
                        "flow past boundary: t = {t} > t*(x) = {ts} at {x:?}"
                    )));
                }
                Ok(map(x, t.min(ts)))
            }
            Flow::Ode(ode) => {
                let y = self.ode_integrate(ode, x, t)?;
                if (ode.boundary_distance)(&y) < -1e3 * self.tolerances.flow_tol {
                    return Err(PdmpError::Domain(format!(
                        "flow past boundary: φ({x:?}, {t}) = {y:?} lies outside Ē"
                    )));
                }
                Ok(y)
            }
        }
    }

    /// Flow evaluated at an increasing list of times, integrating incrementally for ODE flows.
    pub fn flow_samples(&self, x: &Point, times: &[f64]) -> Result<Vec<Point>> {
        match &self.flow {
            Flow::ClosedForm { .. } => times.iter().map(|&t| self.flow_at(x, t)).collect(),
            Flow::Ode(ode) => {
                let mut out = Vec::with_capacity(times.len());
                let mut cur = *x;
                let mut last = 0.0;
                for &t in times {
                    if t < last {
                        return Err(PdmpError::Contract("flow_samples needs sorted times".into()));
                    }
                    cur = self.ode_integrate(ode, &cur, t - last)?;
                    last = t;
                    out.push(cur);
                }
                Ok(out)
            }
        }
    }

    /// `Qh(x,a) = Σ_i h(y_i) p_i`.
    pub fn kernel_expectation(
        &self,
        h: impl Fn(&Point) -> f64,
        x: &Point,
        a: f64,
        boundary: bool,
    ) -> Result<f64> {
        if !self.is_feasible(x, a, boundary) {
            return Err(PdmpError::Contract(format!("action {a} infeasible at {x:?}")));
        }
        Ok(self.kernel_at(x, a).expectation(h))
    }

    /// Central finite-difference approximation of `𝒳v(x) = d/dt v(φ(x,t))|₀`.
    pub fn directional_derivative(
        &self,
        v: impl Fn(&Point) -> f64,
        x: &Point,
    ) -> Result<Derivative> {
        let ts = self.hit_time(x)?;
        let scale = x.coords().iter().fold(1.0_f64, |m, c| m.max(c.abs()));
        let step = self.tolerances.fd_step * scale;
        let fwd = self.flow_at(x, step.min(ts))?;
        match self.backward_point(x, step) {
            Some(back) if ts > 2.0 * step => Ok(Derivative {
                value: (v(&fwd) - v(&back)) / (2.0 * step),
                reduced_accuracy: false,
            }),
            Some(back) => {
                // Too close to the exit for the forward half; difference backwards.
                let value = (v(x) - v(&back)) / step;
                Ok(Derivative {
                    value,
                    reduced_accuracy: true,
                })
            }
            None => {
                let h = step.min(0.5 * ts);
                let fwd = self.flow_at(x, h)?;
                Ok(Derivative {
                    value: (v(&fwd) - v(x)) / h,
                    reduced_accuracy: true,
                })
            }
        }
    }

    /// `φ(x,−s)` when it stays in `E` and can be computed.
    fn backward_point(&self, x: &Point, s: f64) -> Option<Point> {
        let y = match &self.flow {
            Flow::ClosedForm { map, .. } => map(x, -s),
            Flow::Ode(ode) => {
                let neg = OdeFlow {
                    drift: {
                        let d = ode.drift.clone();
                        Arc::new(move |p: &Point| {
                            let mut v = d(p);
                            v.coords_mut().iter_mut().for_each(|c| *c = -*c);
                            v
                        })
                    },
                    ..ode.clone()
                };
                self.ode_integrate(&neg, x, s).ok()?
            }
        };
        (y.is_finite() && self.is_interior(&y)).then_some(y)
    }

    fn rk4_step(ode: &OdeFlow, y: &Point, h: f64) -> Point {
        let k1 = (ode.drift)(y);
        let k2 = (ode.drift)(&y.axpy(0.5 * h, &k1));
        let k3 = (ode.drift)(&y.axpy(0.5 * h, &k2));
        let k4 = (ode.drift)(&y.axpy(h, &k3));
        let mut out = *y;
        for i in 0..y.dim() {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    /// RK4 with step doubling; local error per accepted step ≤ `flow_tol`.
    fn ode_integrate(&self, ode: &OdeFlow, x: &Point, t: f64) -> Result<Point> {
        let tol = self.tolerances.flow_tol;
        let mut y = *x;
        let mut done = 0.0;
        let mut h = ode.step.min(t);
        while t - done > 1e-15 * (1.0 + t) {
            h = h.min(t - done);
            let full = Self::rk4_step(ode, &y, h);
            let half = Self::rk4_step(ode, &Self::rk4_step(ode, &y, 0.5 * h), 0.5 * h);
            let err = full.dist(&half);
            if !half.is_finite() || err > tol {
                h *= 0.5;
                if h < 1e-14 {
                    return Err(PdmpError::Numeric {
                        message: format!("ODE step size underflow from {x:?}"),
                        last_time: done,
                    });
                }
                continue;
            }
            y = half;
            done += h;
            if err < tol / 32.0 {
                h = (2.0 * h).min(ode.step);
            }
        }
        Ok(y)
    }

    fn ode_hit_time(&self, ode: &OdeFlow, x: &Point) -> Result<f64> {
        let dist = |p: &Point| (ode.boundary_distance)(p);
        let mut t = 0.0;
        let mut y = *x;
        let mut d_prev = dist(&y);
        let mut d_prev_prev = d_prev;
        while t < ode.t_scan {
            let h = ode.step.min(ode.t_scan - t);
            let next = self.ode_integrate(ode, &y, h)?;
            let d = dist(&next);
            if d <= 0.0 {
                // Bisection on [t, t+h] starting from y.
                let (mut lo, mut hi) = (0.0, h);
                while hi - lo > 1e-10 {
                    let mid = 0.5 * (lo + hi);
                    let p = self.ode_integrate(ode, &y, mid)?;
                    if dist(&p) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Ok(t + 0.5 * (lo + hi));
            }
            d_prev_prev = d_prev;
            d_prev = d;
            y = next;
            t += h;
        }
        if ode.monotone_after_scan && d_prev >= d_prev_prev {
            Ok(f64::INFINITY)
        } else {
            Err(PdmpError::AmbiguousHitTime(format!(
                "no exit before t_scan = {} from {x:?} and boundary distance not declared monotone \
                 (last values {d_prev_prev:.3e}, {d_prev:.3e})",
                ode.t_scan
            )))
        }
    }
}
