//! Monte Carlo engine for the controlled process under a feedback selector.
//!
//! Sojourn times are drawn by inverting the integrated hazard along the
//! selector-induced path; each distinct starting state keeps its sampled path
//! in a cache, so a trajectory costs one hazard inversion and one kernel draw
//! per jump.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{PdmpError, Result};
use crate::grid::{StateGrid, csv_err};
use crate::model::ModelSpec;
use crate::onestage::FeedbackSelector;
use crate::operators::PathSamples;
use crate::point::Point;
use crate::problem::Problem;
use crate::quadrature::QuadratureConfig;

/// Cached paths beyond this count are rebuilt on demand instead of stored.
const CACHE_LIMIT: usize = 65_536;

/// Outcome of one sojourn draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sojourn {
    /// Random jump at the given time.
    Jump(f64),
    /// No jump before `t*`: forced jump from the boundary.
    Boundary(f64),
    /// No jump before the path horizon and no boundary in reach.
    Censored(f64),
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrajectoryRecord {
    pub jump_times: Vec<f64>,
    pub post_jump_states: Vec<Point>,
    pub boundary_hit_flags: Vec<bool>,
    /// Total cost accrued up to each jump.
    pub cumulative_costs: Vec<f64>,
    pub running_cost_integral: f64,
    pub boundary_cost_sum: f64,
    pub horizon: f64,
    pub jump_count: usize,
    /// Segments that reached the path horizon without a jump and were continued.
    pub censored_segments: usize,
}

impl TrajectoryRecord {
    pub fn boundary_hits(&self) -> usize {
        self.boundary_hit_flags.iter().filter(|b| **b).count()
    }

    /// Columns `T_i, boundary_flag, x0, …, cumulative_cost`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.post_jump_states.first().map_or(1, |p| p.dim());
        let mut header = vec!["T_i".to_string(), "boundary_flag".to_string()];
        header.extend((0..dim).map(|d| format!("x{d}")));
        header.push("cumulative_cost".into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.jump_times.len() {
            let mut row = vec![
                format!("{}", self.jump_times[i]),
                format!("{}", u8::from(self.boundary_hit_flags[i])),
            ];
            row.extend(self.post_jump_states[i].coords().iter().map(|c| format!("{c}")));
            row.push(format!("{}", self.cumulative_costs[i]));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    /// Simulated time per replication (the truncation point for discounted costs).
    pub horizon: f64,
    /// Certified bound on the discounted truncation bias; zero for average costs.
    pub truncation_bias: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AverageEstimate {
    pub estimate: CostEstimate,
    /// Mean of (second-half average − first-half average) and its standard error.
    pub drift: f64,
    pub drift_std_error: f64,
    pub mean_jumps: f64,
    pub censored_segments: usize,
}

struct Segment<'a> {
    s: PathSamples<'a>,
    f: Vec<f64>,
    cum_f: Vec<f64>,
    /// `e^{−αu} f` samples and their running integral, when discounting.
    disc: Option<(Vec<f64>, Vec<f64>)>,
}

impl Segment<'_> {
    fn end(&self) -> f64 {
        self.s.path().end_time()
    }

    fn boundary(&self) -> Option<(Point, f64)> {
        let p = self.s.path();
        if p.truncated() { None } else { p.boundary }
    }

    fn running(&self, tau: f64) -> Result<f64> {
        self.s.integral_at(&self.f, &self.cum_f, tau)
    }

    fn discounted_running(&self, tau: f64) -> Result<f64> {
        let (v, c) = self.disc.as_ref().expect("discounted segment");
        self.s.integral_at(v, c, tau)
    }

    /// Action in force at time `t` along the path.
    fn action_at(&self, t: f64) -> f64 {
        let p = self.s.path();
        let k = p.time_nodes.partition_point(|&n| n <= t).clamp(1, p.intervals()) - 1;
        p.actions[k]
    }

    /// Smallest `t` with `Λ(t) = eps`, by bisection inside the bracketing sample interval.
    fn invert_hazard(&self, eps: f64) -> Result<Sojourn> {
        let hz = &self.s.hazard;
        let total = *hz.last().unwrap();
        if eps >= total {
            let end = self.end();
            return Ok(match self.boundary() {
                Some(_) => Sojourn::Boundary(end),
                None => Sojourn::Censored(end),
            });
        }
        let i = hz.partition_point(|&h| h <= eps).max(1) - 1;
        let (mut lo, mut hi) = (self.s.times[i], self.s.times[(i + 1).min(hz.len() - 1)]);
        for _ in 0..200 {
            if hi - lo <= 1e-13 * hi.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.s.integrated_hazard(mid)? < eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Sojourn::Jump(0.5 * (lo + hi)))
    }
}

/// Simulation of one model under one feedback selector.
pub struct Simulator<'a> {
    model: &'a ModelSpec,
    grid: &'a StateGrid,
    selector: &'a FeedbackSelector,
    q: &'a QuadratureConfig,
    alpha: Option<f64>,
    pub explosion_guard: usize,
    cache: RwLock<HashMap<[u64; 4], Arc<Segment<'a>>>>,
}

struct RunTotals {
    cost: f64,
    half_cost: f64,
    jumps: usize,
    censored: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a ModelSpec,
        grid: &'a StateGrid,
        selector: &'a FeedbackSelector,
        q: &'a QuadratureConfig,
    ) -> Result<Self> {
        if selector.interior.len() != grid.len() || selector.boundary.len() != grid.boundary().len() {
            return Err(PdmpError::Contract("selector does not match the grid".into()));
        }
        Ok(Self {
            model,
            grid,
            selector,
            q,
            alpha: None,
            explosion_guard: 1_000_000,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn for_problem(problem: &'a Problem, selector: &'a FeedbackSelector) -> Result<Self> {
        let mut s = Self::new(&problem.model, &problem.grid, selector, problem.q())?;
        s.explosion_guard = problem.numerics.explosion_guard;
        Ok(s)
    }

    /// Same selector with discounting at rate `alpha` enabled; the path cache starts empty.
    fn discounted(&self, alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            cache: RwLock::new(HashMap::new()),
            ..*self
        }
    }

    fn segment(&self, y: &Point) -> Result<Arc<Segment<'a>>> {
        let key = y.key();
        if let Some(s) = self.cache.read().unwrap().get(&key) {
            return Ok(s.clone());
        }
        let path = self.selector.induced_path(self.model, self.grid, self.q, y)?;
        let s = PathSamples::owned(self.model, self.q, path)?;
        let f: Vec<f64> = s
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| self.model.running_cost(p, s.action_of(i)))
            .collect();
        let cum_f = s.cumulative(&f);
        let disc = self.alpha.map(|a| {
            let v: Vec<f64> = f.iter().zip(&s.times).map(|(f, t)| (-a * t).exp() * f).collect();
            let c = s.cumulative(&v);
            (v, c)
        });
        let seg = Arc::new(Segment { s, f, cum_f, disc });
        let mut cache = self.cache.write().unwrap();
        if cache.len() < CACHE_LIMIT {
            cache.insert(key, seg.clone());
        }
        Ok(seg)
    }

    /// One sojourn from `x` using an `Exp(1)` threshold drawn from `rng`.
    pub fn sample_sojourn(&self, x: &Point, rng: &mut impl Rng) -> Result<Sojourn> {
        if !self.model.is_interior(x) {
            return Err(PdmpError::Domain(format!("sojourn from non-interior state {x:?}")));
        }
        let eps: f64 = rng.sample(Exp1);
        self.segment(x)?.invert_hazard(eps)
    }

    fn run(
        &self,
        x: &Point,
        horizon: f64,
        rng: &mut impl Rng,
        mut rec: Option<&mut TrajectoryRecord>,
    ) -> Result<RunTotals> {
        if !(horizon > 0.0) {
            return Err(PdmpError::Contract(format!("horizon must be positive, got {horizon}")));
        }
        if !self.model.is_interior(x) {
            return Err(PdmpError::Domain(format!("trajectory from non-interior state {x:?}")));
        }
        let half = 0.5 * horizon;
        let mut t = 0.0;
        let mut y = *x;
        let mut tot = RunTotals {
            cost: 0.0,
            half_cost: f64::NAN,
            jumps: 0,
            censored: 0,
        };
        loop {
            let seg = self.segment(&y)?;
            let eps: f64 = rng.sample(Exp1);
            let soj = seg.invert_hazard(eps)?;
            let tau = match soj {
                Sojourn::Jump(s) | Sojourn::Boundary(s) | Sojourn::Censored(s) => s,
            };
            let disc = (-self.alpha.unwrap_or(0.0) * t).exp();
            let running = |s: f64| -> Result<f64> {
                Ok(match self.alpha {
                    Some(_) => disc * seg.discounted_running(s)?,
                    None => seg.running(s)?,
                })
            };
            if tot.half_cost.is_nan() && t + tau >= half {
                tot.half_cost = tot.cost + running(half - t)?;
            }
            if t + tau >= horizon {
                let r = running(horizon - t)?;
                tot.cost += r;
                if let Some(rec) = rec.as_deref_mut() {
                    rec.running_cost_integral += r;
                }
                break;
            }
            let r = running(tau)?;
            tot.cost += r;
            t += tau;
            let disc = (-self.alpha.unwrap_or(0.0) * t).exp();
            let (post, boundary, bcost) = match soj {
                Sojourn::Censored(_) => {
                    tot.censored += 1;
                    y = self.model.flow_at(&y, tau)?;
                    if let Some(rec) = rec.as_deref_mut() {
                        rec.running_cost_integral += r;
                        rec.censored_segments += 1;
                    }
                    continue;
                }
                Sojourn::Jump(_) => {
                    let pre = self.model.flow_at(&y, tau)?;
                    let a = seg.action_at(tau);
                    let k = self.model.kernel_at(&pre, a);
                    (k.support()[k.sample_index(rng.random())], false, 0.0)
                }
                Sojourn::Boundary(_) => {
                    let (z, a) = seg.boundary().expect("boundary sojourn has an exit point");
                    let k = self.model.kernel_at(&z, a);
                    let post = k.support()[k.sample_index(rng.random())];
                    (post, true, disc * self.model.boundary_cost(&z, a))
                }
            };
            tot.cost += bcost;
            tot.jumps += 1;
            if tot.jumps > self.explosion_guard {
                return Err(PdmpError::Explosion { jumps: tot.jumps, time: t });
            }
            if let Some(rec) = rec.as_deref_mut() {
                rec.running_cost_integral += r;
                rec.boundary_cost_sum += bcost;
                rec.jump_times.push(t);
                rec.post_jump_states.push(post);
                rec.boundary_hit_flags.push(boundary);
                rec.cumulative_costs.push(tot.cost);
            }
            y = post;
        }
        Ok(tot)
    }

    /// Full record of one trajectory up to `horizon` (undiscounted costs).
    pub fn simulate_trajectory(&self, x: &Point, horizon: f64, rng: &mut impl Rng) -> Result<TrajectoryRecord> {
        let mut rec = TrajectoryRecord {
            horizon,
            ..Default::default()
        };
        let tot = self.run(x, horizon, rng, Some(&mut rec))?;
        rec.jump_count = tot.jumps;
        Ok(rec)
    }

    /// Trajectory `index` of the stream family keyed by `seed`.
    pub fn rng(seed: u64, index: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(index);
        r
    }

    fn replicate(&self, x: &Point, horizon: f64, n: usize, seed: u64, first: u64) -> Result<Vec<RunTotals>> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| self.run(x, horizon, &mut Self::rng(seed, first + i), None))
            .collect()
    }

    /// `E ∫ e^{−αs} f ds + Σ e^{−αT_i} r` from `x`, truncated at a certified time.
    ///
    /// `cost_cap` bounds `α·𝒟^α(U,y)` over all states `y`; the truncation time
    /// `T` satisfies `e^{−αT}·cost_cap/α ≤ 0.1·σ̂`, with `σ̂` from a pilot run.
    pub fn estimate_discounted_cost(
        &self,
        x: &Point,
        alpha: f64,
        n: usize,
        seed: u64,
        cost_cap: f64,
    ) -> Result<CostEstimate> {
        if !(alpha > 0.0) || n == 0 {
            return Err(PdmpError::Contract("discounted estimate needs alpha > 0 and n > 0".into()));
        }
        let sim = self.discounted(alpha);
        let scale = cost_cap / alpha;
        if scale == 0.0 {
            return Ok(CostEstimate {
                mean: 0.0,
                std_error: 0.0,
                replications: n,
                horizon: 0.0,
                truncation_bias: 0.0,
                seed,
            });
        }
        let pilot_n = n.min(256);
        let pilot_t = 1000f64.ln() / alpha;
        // Pilot streams sit at the top of the stream space, away from the main ones.
        let pilot = sim.replicate(x, pilot_t, pilot_n, seed, u64::MAX - pilot_n as u64)?;
        let (_, sd) = mean_sd(pilot.iter().map(|r| r.cost));
        let target = (0.1 * sd / (n as f64).sqrt()).max(1e-12 * scale);
        let t_sim = (scale / target).ln().max(0.0) / alpha;
        let runs = sim.replicate(x, t_sim, n, seed, 0)?;
        let (mean, sd) = mean_sd(runs.iter().map(|r| r.cost));
        Ok(CostEstimate {
            mean,
            std_error: sd / (n as f64).sqrt(),
            replications: n,
            horizon: t_sim,
            truncation_bias: (-alpha * t_sim).exp() * scale,
            seed,
        })
    }

    /// Mean of `𝐉(U, horizon)/horizon` with a split-half drift statistic.
    pub fn estimate_average_cost(&self, x: &Point, horizon: f64, n: usize, seed: u64) -> Result<AverageEstimate> {
        if n == 0 {
            return Err(PdmpError::Contract("need at least one replication".into()));
        }
        let runs = self.replicate(x, horizon, n, seed, 0)?;
        let (mean, sd) = mean_sd(runs.iter().map(|r| r.cost / horizon));
        let half = 0.5 * horizon;
        let (drift, dsd) = mean_sd(runs.iter().map(|r| (r.cost - 2.0 * r.half_cost) / half));
        let sq = (n as f64).sqrt();
        Ok(AverageEstimate {
            estimate: CostEstimate {
                mean,
                std_error: sd / sq,
                replications: n,
                horizon,
                truncation_bias: 0.0,
                seed,
            },
            drift,
            drift_std_error: dsd / sq,
            mean_jumps: runs.iter().map(|r| r.jumps as f64).sum::<f64>() / n as f64,
            censored_segments: runs.iter().map(|r| r.censored).sum(),
        })
    }
}

/// Sequential Welford pass in input order, so results do not depend on scheduling.
pub fn mean_sd(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    let sd = if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// `α·sup_x (Mg(x)/(c+α) + Mb/(cα))` over grid and boundary points, a bound
/// on `α·𝒟^α(U,·)` for any `U`.
pub fn discounted_cost_cap(problem: &Problem, alpha: f64) -> f64 {
    problem
        .grid
        .interior()
        .iter()
        .chain(problem.grid.boundary())
        .map(|x| alpha * problem.growth.value_bound(x, alpha))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{Overrides, costs, rate, variant};
    use proptest::prelude::*;

    fn ks_stat(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Kolmogorov–Smirnov critical value at the 1% level.
    fn ks_crit(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    #[test]
    fn zero_rate_always_reaches_the_boundary() {
        let p = variant("A", rate(0.0), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 2);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let mut rng = Simulator::rng(3, 0);
        for x in [0.05, 0.3, 0.77] {
            for _ in 0..20 {
                match sim.sample_sojourn(&Point::scalar(x), &mut rng).unwrap() {
                    Sojourn::Boundary(t) => assert!((t - x).abs() < 1e-12),
                    s => panic!("expected a boundary hit, got {s:?}"),
                }
            }
        }
    }

    #[test]
    fn constant_rate_sojourns_are_exponential() {
        let c0 = 2.0;
        let p = variant("B", rate(c0), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 0);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let n = 10_000;
        let mut rng = Simulator::rng(11, 0);
        let times: Vec<f64> = (0..n)
            .map(|_| match sim.sample_sojourn(&Point::scalar(2.0), &mut rng).unwrap() {
                Sojourn::Jump(t) => t,
                s => panic!("unexpected {s:?}"),
            })
            .collect();
        let mean = times.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0 / c0).abs() < 3.0 * (1.0 / c0) / (n as f64).sqrt());
        let d = ks_stat(times, |t| 1.0 - (-c0 * t).exp());
        assert!(d < ks_crit(n), "KS statistic {d}");
    }

    #[test]
    fn state_dependent_hazard_matches_survival_function() {
        // λ = a(1 + x − t) from x = 0.9 with a = 1: Λ(t) = 1.9t − t²/2, atom at t* = 0.9.
        let p = variant("A", Overrides::default(), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 1);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let lam = |t: f64| 1.9 * t - 0.5 * t * t;
        let n = 10_000;
        let mut rng = Simulator::rng(5, 0);
        let mut jumps = Vec::new();
        let mut hits = 0usize;
        for _ in 0..n {
            match sim.sample_sojourn(&Point::scalar(0.9), &mut rng).unwrap() {
                Sojourn::Jump(t) => jumps.push(t),
                Sojourn::Boundary(t) => {
                    assert!((t - 0.9).abs() < 1e-12);
                    hits += 1;
                }
                s => panic!("unexpected {s:?}"),
            }
        }
        let p_hit = (-lam(0.9)).exp();
        let se = (p_hit * (1.0 - p_hit) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p_hit).abs() < 3.0 * se);
        // Conditional law of the jump time given a jump before t*.
        let m = jumps.len();
        let d = ks_stat(jumps, |t| (1.0 - (-lam(t)).exp()) / (1.0 - p_hit));
        assert!(d < ks_crit(m), "KS statistic {d}");
    }

    #[test]
    fn post_jump_states_follow_the_kernel() {
        let p = variant("A", Overrides::default(), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 3);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let rec = sim
            .simulate_trajectory(&Point::scalar(0.5), 2000.0, &mut Simulator::rng(9, 0))
            .unwrap();
        let n = rec.post_jump_states.len() as f64;
        assert!(n > 1000.0);
        for target in [0.5, 0.6, 0.7, 0.8] {
            let k = rec.post_jump_states.iter().filter(|y| (y.x() - target).abs() < 1e-12).count() as f64;
            let se = (0.25 * 0.75 / n).sqrt();
            assert!((k / n - 0.25).abs() < 3.0 * se, "{target}: {}", k / n);
        }
        assert_eq!(rec.jump_count, rec.jump_times.len());
        assert!(rec.jump_times.windows(2).all(|w| w[1] > w[0]));
        assert!(rec.cumulative_costs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn zero_rate_sawtooth_matches_the_closed_form() {
        let p = variant("A", rate(0.0), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 0);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let horizon = 10.0;
        let rec = sim
            .simulate_trajectory(&Point::scalar(0.5), horizon, &mut Simulator::rng(2, 0))
            .unwrap();
        assert!(rec.boundary_hit_flags.iter().all(|b| *b));
        assert_eq!(rec.boundary_cost_sum, rec.jump_count as f64);
        // Drain from y over s: ∫ (y − u + 0.05) du.
        let seg = |y: f64, s: f64| y * s - 0.5 * s * s + 0.05 * s;
        let mut expected = 0.0;
        let mut t = 0.0;
        let mut y = 0.5;
        for (ti, post) in rec.jump_times.iter().zip(&rec.post_jump_states) {
            assert!((ti - (t + y)).abs() < 1e-9);
            expected += seg(y, y);
            t = *ti;
            y = post.x();
        }
        expected += seg(y, horizon - t);
        assert!((rec.running_cost_integral - expected).abs() < 1e-8, "{} vs {expected}", rec.running_cost_integral);
    }

    #[test]
    fn zero_rate_without_boundary_is_pure_flow() {
        let p = variant("B", rate(0.0), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 1);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let horizon = 5.0;
        let rec = sim
            .simulate_trajectory(&Point::scalar(2.0), horizon, &mut Simulator::rng(1, 0))
            .unwrap();
        assert_eq!(rec.jump_count, 0);
        // Composite Simpson on f(2e^{−t}, 2) as the oracle.
        let f = |t: f64| {
            let x = 2.0 * (-t).exp();
            x * x / (1.0 + x) + 0.2
        };
        let m = 20_000;
        let h = horizon / m as f64;
        let simpson = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * f(i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!((rec.running_cost_integral - simpson).abs() < 1e-6, "{} vs {simpson}", rec.running_cost_integral);
    }

    #[test]
    fn constant_and_zero_costs_are_exact() {
        let c0 = 1.7;
        let p = variant("A", costs(c0, 0.0), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 1);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let x = Point::scalar(0.4);
        let avg = sim.estimate_average_cost(&x, 50.0, 16, 4).unwrap();
        assert!((avg.estimate.mean - c0).abs() < 1e-9);
        assert!(avg.estimate.std_error < 1e-9);
        let alpha = 0.5;
        let d = sim
            .estimate_discounted_cost(&x, alpha, 64, 4, discounted_cost_cap(&p, alpha))
            .unwrap();
        assert!((d.mean - c0 / alpha).abs() <= 3.0 * d.std_error + d.truncation_bias + 1e-9);

        let z = variant("A", costs(0.0, 0.0), None);
        let sel = FeedbackSelector::constant_index(&z.model, &z.grid, 1);
        let sim = Simulator::for_problem(&z, &sel).unwrap();
        let d = sim.estimate_discounted_cost(&x, alpha, 64, 4, discounted_cost_cap(&z, alpha)).unwrap();
        assert_eq!((d.mean, d.std_error), (0.0, 0.0));
        assert_eq!(sim.estimate_average_cost(&x, 20.0, 8, 4).unwrap().estimate.mean, 0.0);
    }

    #[test]
    fn zero_rate_cycle_average() {
        // Resets uniform on {0.5,…,0.8}, a = 0.5: (E[y²]/2 + 0.05·E[y] + 1)/E[y].
        let (ey, ey2) = (0.65, 0.435);
        let expected = (0.5 * ey2 + 0.05 * ey + 1.0) / ey;
        let p = variant("A", rate(0.0), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 0);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let e = sim.estimate_average_cost(&Point::scalar(0.5), 2000.0, 20, 8).unwrap();
        // The start-up transient contributes at most one cycle's worth of cost.
        let bias = 2.0 / 2000.0;
        assert!(
            (e.estimate.mean - expected).abs() < 3.0 * e.estimate.std_error + bias,
            "{} vs {expected}",
            e.estimate.mean
        );
    }

    #[test]
    fn explosion_guard_trips() {
        let p = variant("B", rate(1e4), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 0);
        let mut sim = Simulator::for_problem(&p, &sel).unwrap();
        sim.explosion_guard = 100;
        let r = sim.simulate_trajectory(&Point::scalar(1.0), 1.0, &mut Simulator::rng(0, 0));
        assert!(matches!(r, Err(PdmpError::Explosion { .. })));
    }

    #[test]
    fn non_interior_start_is_rejected() {
        let p = variant("A", Overrides::default(), None);
        let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 0);
        let sim = Simulator::for_problem(&p, &sel).unwrap();
        let mut rng = Simulator::rng(0, 0);
        assert!(matches!(sim.sample_sojourn(&Point::scalar(1.5), &mut rng), Err(PdmpError::Domain(_))));
        assert!(sim.simulate_trajectory(&Point::scalar(0.5), 0.0, &mut rng).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn welford_matches_two_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            let (m, sd) = mean_sd(xs.iter().copied());
            let n = xs.len() as f64;
            let m2 = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m2).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((m - m2).abs() < 1e-9 * (1.0 + m2.abs()));
            prop_assert!((sd - v.sqrt()).abs() < 1e-7 * (1.0 + v.sqrt()));
        }

        #[test]
        fn same_seed_same_estimate(seed in any::<u64>(), x in 0.05f64..0.95) {
            let p = variant("A", Overrides::default(), Some(vec![vec![0.1, 0.3, 0.5, 0.7, 0.9]]));
            let sel = FeedbackSelector::constant_index(&p.model, &p.grid, 1);
            let sim = Simulator::for_problem(&p, &sel).unwrap();
            let a = sim.estimate_average_cost(&Point::scalar(x), 20.0, 6, seed).unwrap();
            let b = sim.estimate_average_cost(&Point::scalar(x), 20.0, 6, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
