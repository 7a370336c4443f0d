//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Value, json};

use pdmp_core::benchmarks::{Benchmark, DrainReset, ProblemSpec, WitnessSettings, build_problem, oracle_average, problem};
use pdmp_core::config::Config;
use pdmp_core::diagnostics::{check_growth, check_growth_consequence, default_probes, embedded_chain, estimate_ergodicity};
use pdmp_core::onestage::FeedbackSelector;
use pdmp_core::operators::{ControlPath, EmbeddedChain};
use pdmp_core::problem::Problem;
use pdmp_core::simulator::{Simulator, discounted_cost_cap};
use pdmp_core::solvers::{
    AverageOptions, AverageSolution, DiscountedSolution, check_value_bounds, neumann_check, solve_average,
    solve_discounted,
};
use pdmp_core::{GridFunction, Point};

const SEED: u64 = 20240501;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let mut o = f();
        let took = t.elapsed();
        if let Some(l) = limit {
            if took > l {
                o.pass = false;
                o.detail += &format!("; over the {} s limit", l.as_secs());
            }
        }
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {n:>2} {name}: {} ({:.2} s)", o.detail, took.as_secs_f64());
        self.failed += usize::from(!o.pass);
    }
}

fn sec(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn operator_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut rows = 0;
    for id in ["A", "B"] {
        let p = problem(id).unwrap();
        let (m, grid, q) = (&*p.model, &*p.grid, p.q());
        let acts = m.actions(&grid.interior()[0]).to_vec();
        for &a in &acts {
            let paths: Vec<ControlPath> = grid
                .interior()
                .iter()
                .map(|x| {
                    let ab = m.boundary_actions(x).first().copied().unwrap_or(a);
                    ControlPath::constant(m, q, x, a, ab).unwrap()
                })
                .collect();
            for alpha in [0.0, 0.1, 0.5, 1.0] {
                let chain = EmbeddedChain::build(m, grid, q, &paths, alpha).unwrap();
                for (g1, l) in chain.mass().iter().zip(&chain.curly_l) {
                    worst = worst.max((g1 + alpha * l - 1.0).abs());
                    rows += 1;
                }
            }
        }
    }
    outcome(worst <= 1e-6, format!("max |G_α1 + α𝓛_α − 1| = {worst:.2e} over {rows} rows"))
}

fn growth_audit() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for id in ["A", "B"] {
        let p = problem(id).unwrap();
        let r = check_growth(&p.model, &p.growth, &p.grid, p.check_tol()).unwrap();
        let v: usize = r.inequalities.iter().map(|i| i.violations).sum();
        pass &= r.pass && v == 0;
        parts.push(format!("{id}: {v} violations"));
    }
    let mut spec = ProblemSpec::benchmark("A");
    spec.witness = WitnessSettings {
        m_scale: Some(0.5),
        ..Default::default()
    };
    let broken = build_problem(&spec).unwrap();
    let r = check_growth(&broken.model, &broken.growth, &broken.grid, broken.check_tol()).unwrap();
    let v: usize = r.inequalities.iter().map(|i| i.violations).sum();
    pass &= !r.pass && v > 0;
    parts.push(format!("halved M: {v} violations"));
    outcome(pass, parts.join(", "))
}

fn random_selector(p: &Problem, rng: &mut ChaCha8Rng) -> FeedbackSelector {
    let (m, grid) = (&*p.model, &*p.grid);
    let interior: Vec<usize> = grid.interior().iter().map(|x| rng.random_range(0..m.actions(x).len())).collect();
    let boundary: Vec<usize> = grid
        .boundary()
        .iter()
        .map(|z| rng.random_range(0..m.boundary_actions(z).len()))
        .collect();
    FeedbackSelector::from_indices(m, grid, &interior, &boundary)
}

fn cycle_inequality() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut checks = 0;
    for id in ["A", "B"] {
        let p = problem(id).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        for _ in 0..50 {
            let sel = random_selector(&p, &mut rng);
            for alpha in [-p.growth.c, 0.0, 0.5] {
                let r = check_growth_consequence(&p, &sel, alpha).unwrap();
                worst = worst.min(r.min_slack);
                checks += r.slacks.len();
            }
        }
    }
    outcome(worst >= -1e-6, format!("min slack {worst:.3e} over {checks} (selector, α, point) triples"))
}

/// Discounted solves on A at the cross-validation rates, with their MC comparisons.
fn discounted_cross_validation(p: &Problem) -> (Vec<DiscountedSolution>, Value) {
    let starts: Vec<usize> = (0..10)
        .map(|k| p.grid.nearest_interior(&Point::scalar(0.05 + 0.1 * k as f64)))
        .collect();
    let mut sols = Vec::new();
    let mut rows = Vec::new();
    for alpha in [0.25, 0.5, 1.0] {
        let sol = solve_discounted(p, alpha).unwrap();
        let sim = Simulator::for_problem(p, &sol.selector).unwrap();
        let cap = discounted_cost_cap(p, alpha);
        for &i in &starts {
            let x = p.grid.interior()[i];
            let e = sim.estimate_discounted_cost(&x, alpha, 10_000, SEED, cap).unwrap();
            rows.push(json!({
                "alpha": alpha,
                "x": x.x(),
                "value": sol.value.values[i],
                "mean": e.mean,
                "std_error": e.std_error,
                "horizon": e.horizon,
            }));
        }
        sols.push(sol);
    }
    (sols, Value::Array(rows))
}

fn judge_cross_validation(rows: &Value) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut at = String::new();
    for r in rows.as_array().unwrap() {
        let f = |k: &str| r[k].as_f64().unwrap();
        let slack = (f("value") - f("mean")).abs() - (3.0 * f("std_error") + 1e-3);
        if slack > worst {
            worst = slack;
            at = format!("α {} x {:.2}: J {:.5} MC {:.5} ± {:.5}", f("alpha"), f("x"), f("value"), f("mean"), f("std_error"));
        }
    }
    outcome(worst <= 0.0, format!("{} pairs, tightest {at} (excess {worst:.2e})", rows.as_array().unwrap().len()))
}

fn value_bounds(p: &Problem, solved: &[DiscountedSolution], avg: &AverageSolution) -> Outcome {
    let mut extra = Vec::new();
    for &(alpha, _) in &avg.rho_trace {
        extra.push(solve_discounted(p, alpha).unwrap());
    }
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for sol in solved.iter().chain(&extra) {
        let r = check_value_bounds(p, sol, None).unwrap();
        worst = worst.min(r.min_slack);
        violations += r.point_violations.len();
    }
    outcome(
        violations == 0,
        format!("{} rates, {violations} violations, min slack {worst:.4}", solved.len() + extra.len()),
    )
}

fn neumann(p: &Problem, sol: &DiscountedSolution) -> Outcome {
    let r = neumann_check(p, sol, 40).unwrap();
    let decreasing = r.errors.windows(2).all(|w| w[1] <= w[0]);
    let last = r.errors[40];
    outcome(
        decreasing && last <= 1e-3,
        format!("‖S_K − J‖_g from {:.3e} to {last:.3e} at K = 40, decreasing: {decreasing}", r.errors[0]),
    )
}

fn vanishing_discount(avg: &AverageSolution) -> Outcome {
    let n = avg.rho_trace.len();
    let (r11, r12) = (avg.rho_trace[n - 2].1, avg.rho_trace[n - 1].1);
    let step = (r12 - r11).abs();
    let cauchy = n >= 12 && step <= 1e-3 * avg.rho;
    let acoi = avg.acoi_residual >= -avg.acoi_tol;
    let pinned = avg.h.values[avg.x0] == 0.0 && avg.anchor_values.iter().all(|&v| v == 0.0);
    outcome(
        cauchy && acoi && pinned,
        format!(
            "ρ = {:.7}, |ρ_{n} − ρ_{}| = {step:.2e}, ACOI min residual {:.2e} (tol {:.2e}), h(x₀) = {}",
            avg.rho,
            n - 1,
            avg.acoi_residual,
            avg.acoi_tol,
            avg.h.values[avg.x0]
        ),
    )
}

/// MC of the solved policy and the oracle enumeration, both as JSON.
fn average_runs(p: &Problem, avg: &AverageSolution) -> (Value, Value) {
    let sim = Simulator::for_problem(p, &avg.selector).unwrap();
    let x = p.grid.interior()[avg.x0];
    let e = sim.estimate_average_cost(&x, 1000.0, 200, SEED).unwrap();
    let oracle = oracle_average(p, &DrainReset.coarse_axes(), 500.0, 8, SEED, 4096).unwrap();
    (serde_json::to_value(e).unwrap(), serde_json::to_value(&oracle).unwrap())
}

fn judge_average(avg: &AverageSolution, mc: &Value, oracle: &Value) -> Outcome {
    let est = &mc["estimate"];
    let (mean, se) = (est["mean"].as_f64().unwrap(), est["std_error"].as_f64().unwrap());
    let rho = avg.rho;
    let near = (mean - rho).abs() <= 3.0 * se + 0.02 * rho;
    let values = oracle["values"].as_array().unwrap();
    let mut beaten = 0;
    let mut margin = f64::INFINITY;
    for v in values {
        let (m, s) = (v["mean"].as_f64().unwrap(), v["std_error"].as_f64().unwrap());
        margin = margin.min(m + 3.0 * s - rho);
        beaten += usize::from(rho > m + 3.0 * s);
    }
    let best = &oracle["best"];
    outcome(
        near && beaten == 0 && values.len() == 4096,
        format!(
            "ρ {rho:.5}, policy MC {mean:.5} ± {se:.5}; oracle best {:.5} ± {:.5}, {beaten} of {} policies below ρ − 3σ (min margin {margin:.4})",
            best["mean"].as_f64().unwrap(),
            best["std_error"].as_f64().unwrap(),
            values.len()
        ),
    )
}

/// Explicit `‖G h − ν(h)‖_g / ‖h − ν(h)‖_g`, with `ν` the post-jump law read off the chain.
fn two_iterate_contraction(p: &Problem, chain: &EmbeddedChain, probes: &[GridFunction]) -> f64 {
    let n = p.grid.interior().len();
    let mut pi = vec![0.0; n];
    for (j, slot) in pi.iter_mut().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        *slot = chain.apply(&e)[0];
    }
    let total: f64 = pi.iter().sum();
    let g = &p.g.values;
    let dev = |v: &[f64], nu: f64| v.iter().zip(g).map(|(a, gx)| (a - nu).abs() / gx).fold(0.0f64, f64::max);
    probes
        .iter()
        .filter_map(|h| {
            let nu = pi.iter().zip(&h.values).map(|(w, v)| w * v).sum::<f64>() / total;
            let e0 = dev(&h.values, nu);
            (e0 > 0.0).then(|| dev(&chain.apply(&h.values), nu) / e0)
        })
        .fold(0.0, f64::max)
}

fn ergodicity(p: &Problem, avg: &AverageSolution) -> Outcome {
    let probes = default_probes(p);
    let est = estimate_ergodicity(p, &avg.selector, &probes, 30, 1e-3).unwrap();
    let chain = embedded_chain(p, &avg.selector, 0.0).unwrap();
    let explicit = two_iterate_contraction(p, &chain, &probes);
    let kappa = est.witness.kappa;
    let matches = (kappa - explicit).abs() <= 0.05 * explicit.max(1.0);
    outcome(
        matches && est.min_slack >= 0.0,
        format!(
            "κ̂ = {kappa:.3e}, explicit {explicit:.3e}, â = {:.3e}, min decay-bound slack {:.2e}",
            est.witness.a_const, est.min_slack
        ),
    )
}

fn pin() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/oracle_pins.json");
    let pins: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    pins["A-average"].clone()
}

fn main() {
    let mut suite = Suite { failed: 0 };
    let a = problem("A").unwrap();

    suite.run(1, "operator identity", sec(10), operator_identity);
    suite.run(2, "growth audit", sec(5), growth_audit);
    suite.run(3, "cycle growth inequality", sec(30), cycle_inequality);

    let mut solved = Vec::new();
    let mut cv = Value::Null;
    suite.run(4, "discounted cross-validation", sec(120), || {
        let (s, rows) = discounted_cross_validation(&a);
        solved = s;
        cv = rows;
        judge_cross_validation(&cv)
    });

    let avg = solve_average(&a, &AverageOptions::default()).expect("average solve on A");
    suite.run(5, "value bound", None, || value_bounds(&a, &solved, &avg));
    suite.run(6, "Neumann partial sums", None, || neumann(&a, &solved[1]));
    suite.run(7, "vanishing discount", None, || vanishing_discount(&avg));

    let mut runs = (Value::Null, Value::Null);
    suite.run(8, "average-cost optimality", sec(600), || {
        runs = average_runs(&a, &avg);
        judge_average(&avg, &runs.0, &runs.1)
    });
    suite.run(9, "ergodicity estimator", None, || ergodicity(&a, &avg));

    suite.run(10, "reproducibility", None, || {
        let first = serde_json::to_string(&(&cv, &runs.0, &runs.1)).unwrap();
        let (_, cv2) = discounted_cross_validation(&a);
        let again = average_runs(&a, &avg);
        let second = serde_json::to_string(&(&cv2, &again.0, &again.1)).unwrap();
        let pinned = pin();
        let hash_ok = pinned["config_hash"] == json!(Config::benchmark("A").hash());
        let best_ok = pinned["best"] == again.1["best"];
        outcome(
            first == second && hash_ok && best_ok,
            format!(
                "reruns byte-identical: {} ({} bytes); oracle best equals pin: {best_ok}; config hash matches pin: {hash_ok}",
                first == second,
                first.len()
            ),
        )
    });

    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
