//! Runnable checks of the growth inequalities, the integrability conditions on
//! `(λ̲, f̄, K_λ)`, geometric ergodicity of the embedded chain and the average
//! cost optimality inequality.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PdmpError, Result};
use crate::grid::{GridFunction, StateGrid};
use crate::model::ModelSpec;
use crate::onestage::FeedbackSelector;
use crate::operators::{ControlPath, EmbeddedChain, PathSamples};
use crate::point::Point;
use crate::problem::Problem;
use crate::quadrature::QuadratureConfig;
use crate::witness::{ErgodicityWitness, GrowthWitness, Hyp8aWitness};

const WORST: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub point: Point,
    pub action: f64,
    pub slack: f64,
}

/// Left-minus-right slacks of one inequality over every checked pair.
#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub name: &'static str,
    pub checked: usize,
    pub max_slack: f64,
    pub violations: usize,
    /// Largest violations first, at most ten.
    pub worst: Vec<Violation>,
    pub pass: bool,
}

impl InequalityReport {
    fn collect(name: &'static str, mut rows: Vec<Violation>, tol: f64) -> Self {
        let checked = rows.len();
        let max_slack = rows.iter().map(|v| v.slack).fold(f64::NEG_INFINITY, f64::max);
        rows.retain(|v| v.slack > tol || v.slack.is_nan());
        rows.sort_by(|a, b| b.slack.total_cmp(&a.slack));
        let violations = rows.len();
        rows.truncate(WORST);
        Self {
            name,
            checked,
            max_slack: if checked == 0 { 0.0 } else { max_slack },
            violations,
            worst: rows,
            pass: violations == 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub tolerance: f64,
    pub inequalities: Vec<InequalityReport>,
    /// Points where `𝒳g` fell back to a one-sided difference.
    pub reduced_accuracy_points: usize,
    pub pass: bool,
}

/// `𝒳g(x) + c·g(x) − λ(x,a)[g(x) − Qg(x,a)]` for every action, plus the accuracy flag.
fn drift_terms(model: &ModelSpec, w: &GrowthWitness, x: &Point) -> Result<(Vec<(f64, f64)>, bool)> {
    let d = model.directional_derivative(|p| w.g(p), x)?;
    let gx = w.g(x);
    let rows = model
        .actions(x)
        .iter()
        .map(|&a| {
            let qg = model.kernel_at(x, a).expectation(|y| w.g(y));
            (a, d.value + w.c * gx - model.intensity(x, a) * (gx - qg))
        })
        .collect();
    Ok((rows, d.reduced_accuracy))
}

/// Audits the four growth inequalities on grid × actions and boundary points × actions.
pub fn check_growth(model: &ModelSpec, w: &GrowthWitness, grid: &StateGrid, check_tol: f64) -> Result<GrowthReport> {
    let per_point = grid
        .interior()
        .par_iter()
        .map(|x| drift_terms(model, w, x))
        .collect::<Result<Vec<_>>>()?;
    let mut drift = Vec::new();
    let mut cost = Vec::new();
    let mut reduced = 0;
    for (x, (rows, flag)) in grid.interior().iter().zip(per_point) {
        reduced += usize::from(flag);
        for (a, lhs) in rows {
            drift.push(Violation {
                point: *x,
                action: a,
                slack: lhs - w.b,
            });
            cost.push(Violation {
                point: *x,
                action: a,
                slack: model.running_cost(x, a) - w.m * w.g(x),
            });
        }
    }
    let mut jump = Vec::new();
    let mut bcost = Vec::new();
    for z in grid.boundary() {
        for &a in model.boundary_actions(z) {
            let qg = model.kernel_at(z, a).expectation(|y| w.g(y));
            jump.push(Violation {
                point: *z,
                action: a,
                slack: w.r_bar(z) + qg - w.g(z),
            });
            bcost.push(Violation {
                point: *z,
                action: a,
                slack: model.boundary_cost(z, a) - w.m / (w.c + w.delta) * w.r_bar(z),
            });
        }
    }
    let inequalities = vec![
        InequalityReport::collect("drift", drift, check_tol),
        InequalityReport::collect("running-cost", cost, check_tol),
        InequalityReport::collect("boundary-jump", jump, check_tol),
        InequalityReport::collect("boundary-cost", bcost, check_tol),
    ];
    let pass = inequalities.iter().all(|r| r.pass);
    Ok(GrowthReport {
        tolerance: check_tol,
        inequalities,
        reduced_accuracy_points: reduced,
        pass,
    })
}

/// Grid points plus states reached along their flows, where the suprema in
/// the growth constants are taken.
pub fn flow_closure(model: &ModelSpec, grid: &StateGrid) -> Result<Vec<Point>> {
    const TIMES: [f64; 9] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let mut out = grid.interior().to_vec();
    for (i, x) in grid.interior().iter().enumerate() {
        let ts = grid.hit_time(i);
        for &t in TIMES.iter().filter(|&&t| t < ts) {
            let y = model.flow_at(x, t)?;
            if model.is_interior(&y) {
                out.push(y);
            }
        }
    }
    Ok(out)
}

/// Smallest `b` and `M` for which the growth inequalities hold over the flow closure
/// of the grid and over the boundary images, inflated by a relative `1e-9`.
pub fn calibrate_growth(
    model: &ModelSpec,
    grid: &StateGrid,
    g: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    r_bar: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    c: f64,
    delta: f64,
) -> Result<GrowthWitness> {
    let mut w = GrowthWitness::new(g, r_bar, 0.0, c, delta, 0.0);
    let pts = flow_closure(model, grid)?;
    let lhs = pts
        .par_iter()
        .map(|x| drift_terms(model, &w, x))
        .collect::<Result<Vec<_>>>()?;
    let b = lhs
        .iter()
        .flat_map(|(rows, _)| rows.iter().map(|r| r.1))
        .fold(0.0f64, f64::max);
    let mut m = pts
        .iter()
        .flat_map(|x| {
            let gx = w.g(x);
            model.actions(x).iter().map(move |&a| model.running_cost(x, a) / gx)
        })
        .fold(0.0f64, f64::max);
    for z in grid.boundary() {
        for &a in model.boundary_actions(z) {
            let r = model.boundary_cost(z, a);
            if r > 0.0 {
                let rb = w.r_bar(z);
                if rb <= 0.0 {
                    return Err(PdmpError::Config(format!(
                        "r̄ vanishes at {z:?} where the boundary cost is {r}"
                    )));
                }
                m = m.max((c + delta) * r / rb);
            }
        }
    }
    let inflate = |v: f64| v * (1.0 + 1e-9) + 1e-12;
    w.b = inflate(b);
    w.m = inflate(m);
    Ok(w)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsequenceReport {
    pub alpha: f64,
    /// `g + b𝓛_α − (c+α)L_αg − H_αr̄ − G_αg` per grid point.
    pub slacks: Vec<f64>,
    pub min_slack: f64,
    pub worst_point: Point,
}

/// The growth inequalities integrated over one cycle under `selector`:
/// `g(x) + b𝓛_α(x) ≥ (c+α)L_αg(x) + H_αr̄(x) + G_αg(x)` for `α ≥ −c`.
pub fn check_growth_consequence(problem: &Problem, selector: &FeedbackSelector, alpha: f64) -> Result<ConsequenceReport> {
    let (m, grid, q, w) = (&*problem.model, &*problem.grid, problem.q(), &problem.growth);
    let slacks = grid
        .interior()
        .par_iter()
        .map(|x| {
            let path = selector.induced_path(m, grid, q, x)?;
            let s = PathSamples::new(m, q, &path)?;
            let l = s.curly_l(alpha)?.value;
            let lg = s.eval_l(alpha, |p, _| w.g(p))?.value;
            let hr = s.eval_h(alpha, |z, _| w.r_bar(z))?;
            let gg = s.eval_g(alpha, |p| w.g(p))?.value;
            Ok(w.g(x) + w.b * l - (w.c + alpha) * lg - hr - gg)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (i, &min_slack) = slacks
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    Ok(ConsequenceReport {
        alpha,
        min_slack,
        worst_point: grid.interior()[i],
        slacks,
    })
}

/// Integrals along the flow from one state under the lower rate `λ̲`.
#[derive(Clone, Copy, Debug, Serialize)]
struct LowerRateStats {
    /// `∫ e^{ct − Λ̲(t)} dt` including its certified tail (∞ if the tail fails).
    k_integral: f64,
    /// `e^{cT − Λ̲(T)}` at `T` and `T/2`; only meaningful when truncated.
    decay_end: f64,
    decay_mid: f64,
    /// `e^{−Λ̲(t)} g(φ(x,t))` at `T` and `T/2`.
    g_end: f64,
    g_mid: f64,
    /// `∫ e^{−Λ̲(t)} f̄(φ(x,t)) dt` with its tail (∞ if the tail fails).
    f_integral: f64,
    truncated: bool,
}

fn lower_rate_stats(
    lower: &ModelSpec,
    q: &QuadratureConfig,
    x: &Point,
    hyp: &Hyp8aWitness,
    c: f64,
    g: &(dyn Fn(&Point) -> f64 + Sync),
) -> Result<LowerRateStats> {
    let path = ControlPath::induced(
        lower,
        q,
        x,
        |_, p| lower.actions(p)[0],
        |z| lower.boundary_actions(z)[0],
    )?;
    let s = PathSamples::new(lower, q, &path)?;
    let total = |r: Result<crate::operators::Estimate>| match r {
        Ok(e) => Ok(e.value + e.error),
        Err(PdmpError::TailCertificate { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    };
    let k_integral = total(s.eval_l(-c, |_, _| 1.0))?;
    let f_integral = total(s.eval_l(0.0, |p, _| hyp.f_upper(p)))?;
    let end = path.end_time();
    let mid = 0.5 * end;
    let (lam_end, lam_mid) = (s.integrated_hazard(end)?, s.integrated_hazard(mid)?);
    let (y_end, y_mid) = (lower.flow_at(x, end)?, lower.flow_at(x, mid)?);
    Ok(LowerRateStats {
        k_integral,
        decay_end: (c * end - lam_end).exp(),
        decay_mid: (c * mid - lam_mid).exp(),
        g_end: (-lam_end).exp() * g(&y_end),
        g_mid: (-lam_mid).exp() * g(&y_mid),
        f_integral,
        truncated: path.truncated(),
    })
}

/// Copy of `model` whose intensity is `λ̲` and a quadrature set up for it.
fn lower_rate_setup(
    model: &ModelSpec,
    hyp: &Hyp8aWitness,
    q: &QuadratureConfig,
    c: f64,
    pts: &[Point],
) -> (ModelSpec, QuadratureConfig) {
    let lam = hyp.lambda_lower.clone();
    let lower = model.with_intensity(move |x, _| lam(x));
    let floor = pts.iter().map(|p| hyp.lambda_lower(p)).fold(f64::INFINITY, f64::min);
    let q = QuadratureConfig {
        alpha_floor: -c,
        rate_floor: floor,
        ..q.clone()
    };
    (lower, q)
}

/// `K_λ = sup ∫₀^{t*} e^{ct − ∫λ̲}` over the flow closure of the grid, inflated by `1e-9`.
/// Infinite when the integral diverges on some flow.
pub fn calibrate_k_lambda(
    model: &ModelSpec,
    grid: &StateGrid,
    q: &QuadratureConfig,
    lambda_lower: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    f_upper: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    c: f64,
) -> Result<Hyp8aWitness> {
    let mut hyp = Hyp8aWitness::new(lambda_lower, f_upper, 0.0);
    let pts = flow_closure(model, grid)?;
    let (lower, lq) = lower_rate_setup(model, &hyp, q, c, &pts);
    let one = |_: &Point| 1.0;
    let k = pts
        .par_iter()
        .map(|x| lower_rate_stats(&lower, &lq, x, &hyp, c, &one).map(|s| s.k_integral))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    // A divergent integral leaves K_λ infinite; check_hyp8a reports it.
    hyp.k_lambda = k * (1.0 + 1e-9);
    Ok(hyp)
}

#[derive(Clone, Debug, Serialize)]
pub struct ItemReport {
    pub item: &'static str,
    pub pass: bool,
    /// Worst observed quantity for the item (a slack, a bound, or a tail value).
    pub worst: f64,
    pub worst_point: Option<Point>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Hyp8aReport {
    pub items: Vec<ItemReport>,
    pub pass: bool,
}

/// Decay threshold for the limits in items (c) and (d), evaluated at `T_max`.
const LIMIT_TOL: f64 = 1e-4;

/// Checks items (a)–(e) of the integrability assumption on the grid.
pub fn check_hyp8a(
    model: &ModelSpec,
    hyp: &Hyp8aWitness,
    grid: &StateGrid,
    q: &QuadratureConfig,
    c: f64,
    g: &(dyn Fn(&Point) -> f64 + Sync),
) -> Result<Hyp8aReport> {
    // (a) pointwise domination.
    let mut worst_a = (f64::NEG_INFINITY, None);
    for x in grid.interior() {
        for &a in model.actions(x) {
            let s = (hyp.lambda_lower(x) - model.intensity(x, a)).max(model.running_cost(x, a) - hyp.f_upper(x));
            if s > worst_a.0 {
                worst_a = (s, Some(*x));
            }
        }
    }
    let item_a = ItemReport {
        item: "a",
        pass: worst_a.0 <= 1e-12,
        worst: worst_a.0,
        worst_point: worst_a.1,
        detail: "max of λ̲ − λ and f − f̄ over grid × actions".into(),
    };

    let (lower, lq) = lower_rate_setup(model, hyp, q, c, grid.interior());
    let stats = grid
        .interior()
        .par_iter()
        .map(|x| lower_rate_stats(&lower, &lq, x, hyp, c, g))
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: &dyn Fn(&LowerRateStats) -> Option<f64>| {
        let mut best = (f64::NEG_INFINITY, None);
        for (x, s) in grid.interior().iter().zip(&stats) {
            if let Some(v) = f(s) {
                if v > best.0 || v.is_nan() {
                    best = (v, Some(*x));
                }
            }
        }
        best
    };
    let (kb, kb_at) = pick(&|s| Some(s.k_integral));
    let item_b = ItemReport {
        item: "b",
        pass: kb <= hyp.k_lambda * (1.0 + 1e-9),
        worst: kb,
        worst_point: kb_at,
        detail: format!("max ∫ e^{{ct−∫λ̲}} vs K_λ = {}", hyp.k_lambda),
    };
    let limit_item = |item: &'static str, end: fn(&LowerRateStats) -> (f64, f64), what: &str| {
        let mut worst = (0.0f64, None);
        let mut pass = true;
        for (x, s) in grid.interior().iter().zip(&stats) {
            if !s.truncated {
                continue;
            }
            let (e, m) = end(s);
            if !(e <= LIMIT_TOL && e <= m) {
                pass = false;
            }
            if e > worst.0 || !e.is_finite() {
                worst = (e, Some(*x));
            }
        }
        ItemReport {
            item,
            pass,
            worst: worst.0,
            worst_point: worst.1,
            detail: format!("{what} at T_max must be ≤ {LIMIT_TOL:e} and decreasing"),
        }
    };
    let item_c = limit_item("c", |s| (s.decay_end, s.decay_mid), "e^{cT−∫λ̲}");
    let item_d = limit_item("d", |s| (s.g_end, s.g_mid), "e^{−∫λ̲}·g(φ)");
    let (fe, fe_at) = pick(&|s| Some(s.f_integral));
    let item_e = ItemReport {
        item: "e",
        pass: fe.is_finite(),
        worst: fe,
        worst_point: fe_at,
        detail: "max ∫ e^{−∫λ̲} f̄ with certified tail".into(),
    };
    let items = vec![item_a, item_b, item_c, item_d, item_e];
    let pass = items.iter().all(|i| i.pass);
    Ok(Hyp8aReport { items, pass })
}

/// Iterates `G^k h` for one probe.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeTrace {
    pub norm: f64,
    pub nu: f64,
    /// `‖G^k h − ν̂(h)‖_g` for `k = 0..=K`.
    pub errors: Vec<f64>,
    /// Iterates kept for the fit: those up to and including the first at the noise floor.
    pub observed: usize,
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicityEstimate {
    pub witness: ErgodicityWitness,
    /// Relative noise floor used: `max(1e-9, 2(K+1)·max|G1 − 1|)`.
    pub noise_floor_rel: f64,
    pub mass_defect: f64,
    pub probes: Vec<ProbeTrace>,
    /// Smallest slack of `a‖h‖_g κ^k g(x) − |G^k h(x) − ν̂(h)|` over observed triples.
    pub min_slack: f64,
}

/// Smallest relative level below which iterate errors are treated as round-off.
pub const NOISE_FLOOR: f64 = 1e-9;

/// `g` plus three bounded modulations of it.
pub fn default_probes(problem: &Problem) -> Vec<GridFunction> {
    let g = &problem.g;
    let grid = problem.grid.clone();
    let s = |p: &Point| p.coords().iter().sum::<f64>();
    vec![
        g.clone(),
        GridFunction::sample(grid.clone(), |p| problem.growth.g(p) * (3.0 * s(p) + 1.0).sin()),
        GridFunction::sample(grid.clone(), |p| problem.growth.g(p) * (5.0 * s(p)).cos()),
        GridFunction::sample(grid, |p| if s(p) < 0.5 * (p.dim() as f64) { 1.0 } else { -1.0 }),
    ]
}

/// Undiscounted embedded chain under `selector`.
pub fn embedded_chain(problem: &Problem, selector: &FeedbackSelector, alpha: f64) -> Result<EmbeddedChain> {
    let (m, grid, q) = (&*problem.model, &*problem.grid, problem.q());
    let paths = grid
        .interior()
        .par_iter()
        .map(|x| selector.induced_path(m, grid, q, x))
        .collect::<Result<Vec<_>>>()?;
    EmbeddedChain::build(m, grid, q, &paths, alpha)
}

/// Power iteration of `G` under `selector` with a log-linear fit of the
/// geometric decay; see [`NOISE_FLOOR`] for the treatment of exact contraction.
pub fn estimate_ergodicity(
    problem: &Problem,
    selector: &FeedbackSelector,
    probes: &[GridFunction],
    k: usize,
    margin: f64,
) -> Result<ErgodicityEstimate> {
    let chain = embedded_chain(problem, selector, 0.0)?;
    ergodicity_from_chain(&chain, &problem.g.values, probes, k, margin)
}

pub fn ergodicity_from_chain(
    chain: &EmbeddedChain,
    g: &[f64],
    probes: &[GridFunction],
    k: usize,
    margin: f64,
) -> Result<ErgodicityEstimate> {
    // Iterates cannot be resolved below the drift that the mass defect
    // |G1 − 1| accumulates over K steps.
    let defect = chain.mass().iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    let noise = NOISE_FLOOR.max(2.0 * (k + 1) as f64 * defect);
    let mut traces = Vec::new();
    let mut iterates_all = Vec::new();
    for h in probes {
        let mut its = vec![h.values.clone()];
        for _ in 0..k {
            let next = chain.apply(its.last().unwrap());
            its.push(next);
        }
        let nu = its[k].iter().sum::<f64>() / its[k].len() as f64;
        let gdev = |v: &[f64]| {
            v.iter()
                .zip(g)
                .map(|(x, gx)| (x - nu).abs() / gx)
                .fold(0.0f64, f64::max)
        };
        let norm = h.values.iter().zip(g).map(|(x, gx)| x.abs() / gx).fold(0.0f64, f64::max);
        let errors: Vec<f64> = its.iter().map(|v| gdev(v)).collect();
        let floor = norm.max(f64::MIN_POSITIVE) * noise;
        let observed = errors
            .iter()
            .position(|&e| e <= floor)
            .map_or(errors.len(), |i| i + 1);
        let kappa = if errors[0] <= floor {
            None
        } else if observed <= 2 {
            Some(errors.get(1).copied().unwrap_or(floor).max(floor) / errors[0])
        } else {
            // Least squares of ln e_k on k over iterates above the floor.
            let pts: Vec<(f64, f64)> = errors[..observed - 1]
                .iter()
                .enumerate()
                .map(|(i, e)| (i as f64, e.ln()))
                .collect();
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            Some((sxy / sxx).exp())
        };
        traces.push(ProbeTrace {
            norm,
            nu,
            errors,
            observed,
            kappa,
        });
        iterates_all.push(its);
    }
    let kappa = traces
        .iter()
        .filter_map(|t| t.kappa)
        .fold(f64::NAN, f64::max);
    if kappa.is_nan() {
        return Err(PdmpError::Diagnostic("every probe is invariant under G; nothing to fit".into()));
    }
    if kappa >= 1.0 - margin {
        return Err(PdmpError::Diagnostic(format!(
            "no geometric contraction detected (κ̂ = {kappa:.6} ≥ 1 − {margin})"
        )));
    }
    // Smallest a with |G^k h − ν̂| ≤ a‖h‖_g κ^k g on observed iterates.
    let mut a: f64 = 0.0;
    for (t, its) in traces.iter().zip(&iterates_all) {
        if t.norm == 0.0 {
            continue;
        }
        for (kk, v) in its.iter().enumerate().take(t.observed) {
            let scale = t.norm * kappa.powi(kk as i32);
            for (x, gx) in v.iter().zip(g) {
                a = a.max((x - t.nu).abs() / (scale * gx));
            }
        }
    }
    let a = a.max(1e-12);
    let mut min_slack = f64::INFINITY;
    let mut fit_res = 0.0f64;
    for (t, its) in traces.iter().zip(&iterates_all) {
        for (kk, v) in its.iter().enumerate().take(t.observed) {
            let scale = a * t.norm * kappa.powi(kk as i32);
            for (x, gx) in v.iter().zip(g) {
                min_slack = min_slack.min(scale * gx - (x - t.nu).abs());
            }
            if t.errors[0] > 0.0 && kk + 1 < t.observed {
                let model = t.errors[0] * kappa.powi(kk as i32);
                fit_res = fit_res.max((t.errors[kk].ln() - model.ln()).abs());
            }
        }
    }
    let nu_g = traces.first().map_or(f64::NAN, |t| t.nu);
    Ok(ErgodicityEstimate {
        witness: ErgodicityWitness {
            a_const: a,
            kappa,
            nu_g,
            fit_residual: fit_res,
        },
        noise_floor_rel: noise,
        mass_defect: defect,
        probes: traces,
        min_slack,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AcoiReport {
    pub rho: f64,
    pub tolerance: f64,
    pub min_residual: f64,
    pub mean_residual: f64,
    pub worst_point: Point,
    pub residuals: Vec<f64>,
    pub pass: bool,
}

/// Residual `h − 𝒯(ρ,h)` on the grid.
pub fn check_acoi(problem: &Problem, rho: f64, h: &GridFunction) -> Result<AcoiReport> {
    let op = problem.one_stage();
    let t = op.sweep(&op.alpha_stage(0.0), rho, h)?;
    let residuals: Vec<f64> = h.values.iter().zip(&t.values).map(|(a, b)| a - b).collect();
    let (imin, &min_residual) = residuals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    let tolerance = problem.acoi_tol(h);
    Ok(AcoiReport {
        rho,
        tolerance,
        min_residual,
        mean_residual: residuals.iter().sum::<f64>() / residuals.len() as f64,
        worst_point: problem.grid.interior()[imin],
        residuals,
        pass: min_residual >= -tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{costs, problem, rate, variant};
    use crate::solvers::{AverageOptions, solve_average};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn small_axes() -> Vec<Vec<f64>> {
        vec![StateGrid::uniform_axis(0.05, 0.95, 0.05)]
    }

    #[test]
    fn constant_witness_on_inert_model_is_tight() {
        let a = problem("A").unwrap();
        let m = a
            .model
            .with_intensity(|_, _| 0.0)
            .with_running_cost(|_, _| 0.0)
            .with_boundary_cost(|_, _| 0.0);
        let grid = StateGrid::tensor(&m, small_axes()).unwrap();
        let w = GrowthWitness::new(|_| 1.0, |_| 0.0, 0.3, 0.3, 0.1, 0.0);
        let r = check_growth(&m, &w, &grid, 1e-12).unwrap();
        assert!(r.pass);
        for i in &r.inequalities {
            assert!(i.max_slack.abs() < 1e-12, "{} {}", i.name, i.max_slack);
            assert!(i.checked > 0);
        }
    }

    #[test]
    fn benchmarks_pass_their_growth_audit() {
        for id in ["A", "B"] {
            let p = problem(id).unwrap();
            let r = check_growth(&p.model, &p.growth, &p.grid, p.check_tol()).unwrap();
            assert!(r.pass, "{id}: {:?}", r.inequalities);
        }
    }

    #[test]
    fn halved_m_is_caught() {
        let p = problem("A").unwrap();
        let mut w = p.growth.clone();
        w.m *= 0.5;
        let r = check_growth(&p.model, &w, &p.grid, p.check_tol()).unwrap();
        assert!(!r.pass);
        let cost = r.inequalities.iter().find(|i| i.name == "running-cost").unwrap();
        assert!(cost.violations > 0 && cost.worst.len() <= 10);
        assert!(cost.worst.windows(2).all(|w| w[0].slack >= w[1].slack));
    }

    #[test]
    fn constant_lower_rate_gives_the_closed_form() {
        // No boundary: ∫₀^∞ e^{(c−λ₀)t} dt = 1/(λ₀ − c).
        let p = problem("B").unwrap();
        let (c, l0) = (0.5, 1.0);
        let hyp = calibrate_k_lambda(&p.model, &p.grid, p.q(), move |_| l0, |x| x.x() + 0.3, c).unwrap();
        assert!((hyp.k_lambda - 1.0 / (l0 - c)).abs() < 1e-6 * 2.0, "{}", hyp.k_lambda);
        let g = |x: &Point| 1.0 + x.x();
        let r = check_hyp8a(&p.model, &hyp, &p.grid, p.q(), c, &g).unwrap();
        assert!(r.pass, "{:?}", r.items);
    }

    #[test]
    fn slow_lower_rate_fails_the_limit_item() {
        let p = problem("B").unwrap();
        let c = 0.5;
        let hyp = Hyp8aWitness::new(move |_| c / 2.0, |x| x.x() + 0.3, 10.0);
        let g = |x: &Point| 1.0 + x.x();
        let r = check_hyp8a(&p.model, &hyp, &p.grid, p.q(), c, &g).unwrap();
        let item = |n: &str| r.items.iter().find(|i| i.item == n).unwrap();
        assert!(!item("c").pass);
        assert!(!item("b").pass);
        assert!(item("a").pass);
        assert!(!r.pass);
    }

    #[test]
    fn benchmark_witnesses_pass_integrability() {
        for id in ["A", "B"] {
            let p = problem(id).unwrap();
            let r = check_hyp8a(&p.model, &p.hyp, &p.grid, p.q(), p.growth.c, &*p.growth.g).unwrap();
            assert!(r.pass, "{id}: {:?}", r.items);
        }
    }

    fn solved_a() -> &'static (crate::problem::Problem, crate::solvers::AverageSolution) {
        static A: OnceLock<(crate::problem::Problem, crate::solvers::AverageSolution)> = OnceLock::new();
        A.get_or_init(|| {
            let p = problem("A").unwrap();
            let s = solve_average(&p, &AverageOptions::default()).unwrap();
            (p, s)
        })
    }

    #[test]
    fn constants_are_invariant_and_fit_bounds_hold() {
        let (p, s) = solved_a();
        let one = GridFunction::constant(p.grid.clone(), 1.0);
        let e = estimate_ergodicity(p, &s.selector, std::slice::from_ref(&one), 10, 1e-3);
        assert!(matches!(e, Err(PdmpError::Diagnostic(_))));
        let mut probes = default_probes(p);
        probes.push(one);
        let e = estimate_ergodicity(p, &s.selector, &probes, 30, 1e-3).unwrap();
        let last = e.probes.last().unwrap();
        assert!(last.errors.iter().all(|&x| x <= last.norm * e.noise_floor_rel));
        assert!(last.kappa.is_none());
        assert!(e.witness.kappa < 1.0);
        assert!(e.min_slack >= -1e-12, "{}", e.min_slack);
    }

    #[test]
    fn two_state_chain_contracts_at_its_second_eigenvalue() {
        // Rows (0.9, 0.1) and (0.3, 0.7): second eigenvalue 0.6.
        let chain = EmbeddedChain::from_rows(vec![vec![(0, 0.9), (1, 0.1)], vec![(0, 0.3), (1, 0.7)]]);
        let p = variant("A", Default::default(), Some(vec![vec![0.3, 0.7]]));
        let nb = p.grid.boundary().len();
        let probe = GridFunction::new(p.grid.clone(), vec![1.0, -1.0], vec![0.0; nb]).unwrap();
        let e = ergodicity_from_chain(&chain, &[1.0, 1.0], &[probe], 20, 1e-3).unwrap();
        // ν̂ is read off the last iterate, which biases the late errors slightly.
        assert!((e.witness.kappa - 0.6).abs() < 0.01, "{}", e.witness.kappa);
        assert!(e.min_slack >= -1e-15);
    }

    #[test]
    fn cycle_inequality_holds_for_constant_selectors() {
        for id in ["A", "B"] {
            let p = problem(id).unwrap();
            for k in 0..p.model.actions(&p.grid.interior()[0]).len() {
                let sel = FeedbackSelector::constant_index(&p.model, &p.grid, k);
                for alpha in [-p.growth.c, 0.0, 0.5] {
                    let r = check_growth_consequence(&p, &sel, alpha).unwrap();
                    assert!(r.min_slack >= -1e-6, "{id} a{k} α {alpha}: {}", r.min_slack);
                }
            }
        }
    }

    #[test]
    fn cycle_inequality_is_tight_for_the_inert_witness() {
        // g ≡ 1, r̄ ≡ 0, b = c: slack = 1 + c𝓛 − (c+α)𝓛 − G_α1 = 1 − α𝓛 − G_α1 = 0.
        let mut p = variant("A", rate(0.0), Some(small_axes()));
        p.growth = GrowthWitness::new(|_| 1.0, |_| 0.0, 0.25, 0.25, 0.25, 1.0);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 0);
        for alpha in [-0.25, 0.0, 0.5] {
            let r = check_growth_consequence(&p, &sel, alpha).unwrap();
            assert!(r.slacks.iter().all(|s| s.abs() < 1e-7), "α {alpha}: {}", r.min_slack);
        }
    }

    #[test]
    fn trivial_model_has_zero_residual() {
        let p = variant("A", costs(0.0, 0.0), Some(small_axes()));
        let r = check_acoi(&p, 0.0, &p.zeros()).unwrap();
        assert_eq!(r.min_residual, 0.0);
        assert!(r.pass);
        let p = variant("A", costs(1.3, 0.0), Some(small_axes()));
        let r = check_acoi(&p, 1.3, &p.zeros()).unwrap();
        assert!(r.min_residual.abs() < 1e-9, "{}", r.min_residual);
    }

    #[test]
    fn solved_drain_reset_satisfies_the_inequality() {
        let (p, s) = solved_a();
        let r = check_acoi(p, s.rho, &s.h).unwrap();
        assert!(r.pass, "{}", r.min_residual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn residual_is_antitone_in_rho(eps in 0.05f64..0.5) {
            let (p, s) = solved_a();
            let base = check_acoi(p, s.rho, &s.h).unwrap();
            let up = check_acoi(p, s.rho * (1.0 + eps), &s.h).unwrap();
            for (a, b) in base.residuals.iter().zip(&up.residuals) {
                prop_assert!(b >= a);
            }
            prop_assert!(up.min_residual > 0.0);
        }
    }
}
