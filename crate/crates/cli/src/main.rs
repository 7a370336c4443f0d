#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, anyhow};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pdmp_core::archive::{SolutionArchive, SolveKind};
use pdmp_core::benchmarks::{benchmarks, build_problem, oracle_average, oracle_discounted};
use pdmp_core::config::Config;
use pdmp_core::diagnostics::{check_growth, check_hyp8a, default_probes, estimate_ergodicity};
use pdmp_core::error::PdmpError;
use pdmp_core::onestage::FeedbackSelector;
use pdmp_core::point::Point;
use pdmp_core::problem::Problem;
use pdmp_core::simulator::{Simulator, discounted_cost_cap};
use pdmp_core::solvers::{AverageOptions, solve_average, solve_discounted};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pdmp", version, about = "Optimal control of piecewise deterministic Markov processes")]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the growth condition and the integrability assumption.
    Check {
        #[command(flatten)]
        source: Source,
        /// Also estimate (a, κ) for the policy extracted by the average-cost solve.
        #[arg(long)]
        ergodicity: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the discounted or average-cost problem and write an archive.
    Solve {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value_t = Mode::Average)]
        mode: Mode,
        /// Discount rate for `--mode discounted`.
        #[arg(long)]
        alpha: Option<f64>,
        /// Normalization state for `--mode average`, as comma-separated coordinates.
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        /// Replaces the value-iteration tolerance (discounted) or the ρ tolerance (average).
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo cost estimate under a policy.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// A solution archive, or `const:<index>` for a constant action index.
        #[arg(long, default_value = "const:0")]
        policy: String,
        #[arg(long, default_value_t = 1000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Estimate the discounted cost at this rate instead of the average cost.
        #[arg(long)]
        alpha: Option<f64>,
        /// Start state; defaults to the grid point nearest the centroid.
        #[arg(long, value_delimiter = ',')]
        x: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive policy enumeration on the benchmark's coarse grid.
    Oracle {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value_t = Mode::Average)]
        mode: Mode,
        #[arg(long)]
        alpha: Option<f64>,
        /// Start state for `--mode discounted`.
        #[arg(long, value_delimiter = ',')]
        x: Option<Vec<f64>>,
        #[arg(long, default_value_t = 500.0)]
        horizon: f64,
        #[arg(long, default_value_t = 8)]
        reps: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Refuse enumerations with more policies than this.
        #[arg(long, default_value_t = 4096)]
        budget: usize,
        /// Record the best value in this pin file under `--pin-name`.
        #[arg(long, requires = "pin_name")]
        pin: Option<PathBuf>,
        #[arg(long)]
        pin_name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registered benchmark id with default settings.
    #[arg(long)]
    benchmark: Option<String>,
}

#[derive(Args)]
struct SeedArg {
    /// Base seed; the PDMP_SEED environment variable takes precedence.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Discounted,
    Average,
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn compute(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

/// Bad input is a usage error; anything raised by the numerics is a computational one.
fn classify(e: PdmpError) -> Failure {
    match e {
        PdmpError::Config(_) | PdmpError::UnknownName { .. } | PdmpError::Json(_) => usage(e),
        PdmpError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => usage(e),
        _ => compute(e),
    }
}

type Outcome = Result<bool, Failure>;

fn seed(arg: &SeedArg) -> Result<u64, Failure> {
    match std::env::var("PDMP_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| usage(anyhow!("PDMP_SEED must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(arg.seed),
    }
}

fn load(source: &Source) -> Result<(Config, Problem), Failure> {
    let config = match (&source.config, &source.benchmark) {
        (Some(path), _) => Config::load(path).map_err(|e| usage(anyhow!(e).context(format!("reading {}", path.display()))))?,
        (None, Some(id)) => {
            benchmarks().get(id).map_err(classify)?;
            Config::benchmark(id)
        }
        (None, None) => return Err(usage(anyhow!("one of --config or --benchmark is required"))),
    };
    let spec = config.problem_spec().map_err(classify)?;
    let problem = build_problem(&spec).map_err(classify)?;
    Ok((config, problem))
}

fn point(problem: &Problem, coords: Option<&Vec<f64>>) -> Result<Point, Failure> {
    match coords {
        None => Ok(problem.grid.interior()[problem.grid.centroid_index()]),
        Some(c) => {
            if c.len() != problem.grid.dim() {
                return Err(usage(anyhow!("{c:?} has the wrong dimension for `{}`", problem.name)));
            }
            let p = Point::new(c);
            if !problem.model.is_interior(&p) {
                return Err(usage(anyhow!("{c:?} is not an interior state of `{}`", problem.name)));
            }
            Ok(p)
        }
    }
}

struct Output(Option<PathBuf>);

impl Output {
    fn new(dir: Option<PathBuf>) -> Result<Self, Failure> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)
                .with_context(|| format!("creating {}", d.display()))
                .map_err(usage)?;
        }
        Ok(Self(dir))
    }

    fn file(&self, name: &str) -> Result<Option<BufWriter<File>>, Failure> {
        match &self.0 {
            None => Ok(None),
            Some(d) => {
                let path = d.join(name);
                let f = File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))
                    .map_err(compute)?;
                Ok(Some(BufWriter::new(f)))
            }
        }
    }

    fn json(&self, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(compute)? + "\n";
        if let Some(d) = &self.0 {
            std::fs::write(d.join(name), &text).map_err(compute)?;
        }
        Ok(())
    }

    fn csv(&self, name: &str, write: impl FnOnce(BufWriter<File>) -> pdmp_core::error::Result<()>) -> Result<(), Failure> {
        if let Some(f) = self.file(name)? {
            write(f).map_err(compute)?;
        }
        Ok(())
    }
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn cmd_check(source: &Source, ergodicity: bool, out: Option<PathBuf>) -> Outcome {
    let (config, p) = load(source)?;
    let out = Output::new(out)?;
    let growth = check_growth(&p.model, &p.growth, &p.grid, p.check_tol()).map_err(compute)?;
    let w = p.growth.clone();
    let hyp = check_hyp8a(&p.model, &p.hyp, &p.grid, p.q(), p.growth.c, &move |x| w.g(x)).map_err(compute)?;
    let ergo = if ergodicity {
        let avg = solve_average(&p, &AverageOptions::default()).map_err(compute)?;
        Some(estimate_ergodicity(&p, &avg.selector, &default_probes(&p), 30, 1e-3).map_err(compute)?)
    } else {
        None
    };
    let pass = growth.pass && hyp.pass;
    if !growth.pass {
        eprintln!("growth-condition violations (slack > {:.3e}):", growth.tolerance);
        eprintln!("{:<16} {:>24} {:>10} {:>14}", "inequality", "point", "action", "slack");
        for ineq in growth.inequalities.iter().filter(|i| !i.pass) {
            for v in &ineq.worst {
                eprintln!("{:<16} {:>24} {:>10} {:>14.6e}", ineq.name, format!("{:?}", v.point.coords()), v.action, v.slack);
            }
        }
    }
    for item in hyp.items.iter().filter(|i| !i.pass) {
        eprintln!("integrability item ({}) failed: {}", item.item, item.detail);
    }
    let report = json!({
        "model": p.name,
        "config_hash": config.hash(),
        "grid_hash": p.grid_hash(),
        "witness": { "b": p.growth.b, "c": p.growth.c, "delta": p.growth.delta, "m": p.growth.m },
        "k_lambda": p.hyp.k_lambda,
        "growth": growth,
        "integrability": hyp,
        "ergodicity": ergo,
        "pass": pass,
    });
    out.json("check.json", &report)?;
    print(&json!({ "model": p.name, "growth_pass": growth.pass, "integrability_pass": hyp.pass, "pass": pass }));
    Ok(pass)
}

fn cmd_solve(source: &Source, mode: Mode, alpha: Option<f64>, x0: Option<Vec<f64>>, tol: Option<f64>, out: Option<PathBuf>) -> Outcome {
    let (config, mut p) = load(source)?;
    let out = Output::new(out)?;
    let hash = config.hash();
    if let Some(t) = tol {
        if !(t > 0.0) {
            return Err(usage(anyhow!("--tol must be positive")));
        }
        match mode {
            Mode::Discounted => p.numerics.vi_tol = t,
            Mode::Average => p.numerics.rho_tol = t,
        }
    }
    let (archive, ok) = match mode {
        Mode::Discounted => {
            let alpha = alpha.ok_or_else(|| usage(anyhow!("--mode discounted needs --alpha")))?;
            if !(alpha > 0.0) {
                return Err(usage(anyhow!("--alpha must be positive")));
            }
            match solve_discounted(&p, alpha) {
                Ok(sol) => (SolutionArchive::discounted(&p, &hash, &sol), true),
                Err(e) => (SolutionArchive::failed(&p, &hash, SolveKind::Discounted, Some(alpha), &e), false),
            }
        }
        Mode::Average => {
            let x0 = x0.as_ref().map(|c| point(&p, Some(c))).transpose()?;
            let opts = AverageOptions {
                schedule: config.solver.schedule.clone().unwrap_or_default(),
                x0: x0.map(|x| p.grid.nearest_interior(&x)),
                ..Default::default()
            };
            match solve_average(&p, &opts) {
                Ok(sol) => (SolutionArchive::average(&p, &hash, &sol), true),
                Err(e) => (SolutionArchive::failed(&p, &hash, SolveKind::Average, None, &e), false),
            }
        }
    };
    out.json("archive.json", &serde_json::to_value(&archive).map_err(compute)?)?;
    if ok {
        out.csv("value.csv", |f| archive.write_value_csv(f))?;
        let sel = archive.selector(&p).map_err(compute)?;
        out.csv("selector.csv", |f| sel.write_csv(&p.grid, f))?;
        if matches!(mode, Mode::Average) {
            out.csv("rho_trace.csv", |f| archive.write_rho_trace_csv(f))?;
        }
    } else {
        eprintln!("solve failed: {}", archive.error.as_deref().unwrap_or("unknown error"));
    }
    print(&json!({
        "model": archive.model,
        "kind": archive.kind,
        "status": archive.status,
        "alpha": archive.alpha,
        "rho": archive.rho,
        "residual": archive.residual,
        "iterations": archive.iterations,
        "acoi_residual": archive.acoi_residual,
    }));
    Ok(ok)
}

fn policy(p: &Problem, spec: &str) -> Result<FeedbackSelector, Failure> {
    if let Some(idx) = spec.strip_prefix("const:") {
        let k: usize = idx.parse().map_err(|_| usage(anyhow!("bad policy `{spec}`")))?;
        let fits = p.grid.interior().iter().all(|x| k < p.model.actions(x).len())
            && p.grid.boundary().iter().all(|z| k < p.model.boundary_actions(z).len());
        if !fits {
            return Err(usage(anyhow!("action index {k} is not available everywhere")));
        }
        return Ok(FeedbackSelector::constant_index(&p.model, &p.grid, k));
    }
    let archive = SolutionArchive::read(Path::new(spec)).map_err(classify)?;
    archive.selector(p).map_err(classify)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    source: &Source,
    policy_spec: &str,
    horizon: f64,
    reps: usize,
    seed_arg: &SeedArg,
    alpha: Option<f64>,
    x: Option<Vec<f64>>,
    out: Option<PathBuf>,
) -> Outcome {
    let seed = seed(seed_arg)?;
    let (config, p) = load(source)?;
    let out = Output::new(out)?;
    if reps == 0 || !(horizon > 0.0) {
        return Err(usage(anyhow!("--reps and --horizon must be positive")));
    }
    let sel = policy(&p, policy_spec)?;
    let x = point(&p, x.as_ref())?;
    let sim = Simulator::for_problem(&p, &sel).map_err(classify)?;
    let estimate = match alpha {
        Some(a) if a > 0.0 => {
            let e = sim
                .estimate_discounted_cost(&x, a, reps, seed, discounted_cost_cap(&p, a))
                .map_err(compute)?;
            json!({ "kind": "discounted", "alpha": a, "estimate": e })
        }
        Some(_) => return Err(usage(anyhow!("--alpha must be positive"))),
        None => {
            let e = sim.estimate_average_cost(&x, horizon, reps, seed).map_err(compute)?;
            json!({ "kind": "average", "estimate": e })
        }
    };
    // Replication 0 of the same stream family, for plotting.
    let traj = sim
        .simulate_trajectory(&x, horizon, &mut Simulator::rng(seed, 0))
        .map_err(compute)?;
    out.csv("trajectory.csv", |f| traj.write_csv(f))?;
    out.csv("running_average.csv", |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["time", "running_average"]).map_err(csv_err)?;
        for (t, c) in traj.jump_times.iter().zip(&traj.cumulative_costs).filter(|(t, _)| **t > 0.0) {
            w.write_record([t.to_string(), (c / t).to_string()]).map_err(csv_err)?;
        }
        let total = traj.running_cost_integral + traj.boundary_cost_sum;
        w.write_record([traj.horizon.to_string(), (total / traj.horizon).to_string()])
            .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    })?;
    let report = json!({
        "model": p.name,
        "config_hash": config.hash(),
        "grid_hash": p.grid_hash(),
        "policy": policy_spec,
        "start": x,
        "seed": seed,
        "result": estimate,
        "trajectory": {
            "jumps": traj.jump_count,
            "boundary_hits": traj.boundary_hits(),
            "total_cost": traj.running_cost_integral + traj.boundary_cost_sum,
        },
    });
    out.json("estimate.json", &report)?;
    print(&report);
    Ok(true)
}

fn csv_err(e: csv::Error) -> PdmpError {
    PdmpError::Io(std::io::Error::other(e))
}

#[allow(clippy::too_many_arguments)]
fn cmd_oracle(
    source: &Source,
    mode: Mode,
    alpha: Option<f64>,
    x: Option<Vec<f64>>,
    horizon: f64,
    reps: usize,
    seed_arg: &SeedArg,
    budget: usize,
    pin: Option<(PathBuf, String)>,
    out: Option<PathBuf>,
) -> Outcome {
    let seed = seed(seed_arg)?;
    let (config, p) = load(source)?;
    let out = Output::new(out)?;
    let id = match &config.model.id {
        id if id == "custom" => return Err(usage(anyhow!("the oracle needs a registered benchmark"))),
        id => id.clone(),
    };
    let coarse = benchmarks().get(&id).map_err(classify)?.coarse_axes();
    let (result, alpha, start) = match mode {
        Mode::Discounted => {
            let a = alpha.ok_or_else(|| usage(anyhow!("--mode discounted needs --alpha")))?;
            let x = point(&p, x.as_ref())?;
            let r = oracle_discounted(&p, &coarse, &x, a, reps, seed, budget).map_err(classify)?;
            (r, Some(a), Some(x))
        }
        Mode::Average => (
            oracle_average(&p, &coarse, horizon, reps, seed, budget).map_err(classify)?,
            None,
            None,
        ),
    };
    let summary = json!({
        "model": p.name,
        "config_hash": config.hash(),
        "mode": match mode { Mode::Discounted => "discounted", Mode::Average => "average" },
        "alpha": alpha,
        "start": start,
        "seed": seed,
        "replications": result.replications,
        "horizon": result.horizon,
        "policies": result.values.len(),
        "best": result.best,
    });
    out.json("oracle.json", &json!({ "summary": summary, "values": result.values }))?;
    if let Some((path, name)) = pin {
        let mut pins: serde_json::Map<String, serde_json::Value> = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(usage)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => serde_json::Map::new(),
            Err(e) => return Err(compute(e)),
        };
        pins.insert(name, summary.clone());
        let text = serde_json::to_string_pretty(&pins).map_err(compute)? + "\n";
        std::fs::write(&path, text).map_err(compute)?;
    }
    print(&summary);
    Ok(true)
}

fn run(cli: Cli) -> Outcome {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(usage(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(compute)?;
    }
    match cli.command {
        Command::Check { source, ergodicity, out } => cmd_check(&source, ergodicity, out),
        Command::Solve {
            source,
            mode,
            alpha,
            x0,
            tol,
            out,
        } => cmd_solve(&source, mode, alpha, x0, tol, out),
        Command::Simulate {
            source,
            policy,
            horizon,
            reps,
            seed,
            alpha,
            x,
            out,
        } => cmd_simulate(&source, &policy, horizon, reps, &seed, alpha, x, out),
        Command::Oracle {
            source,
            mode,
            alpha,
            x,
            horizon,
            reps,
            seed,
            budget,
            pin,
            pin_name,
            out,
        } => cmd_oracle(
            &source,
            mode,
            alpha,
            x,
            horizon,
            reps,
            &seed,
            budget,
            pin.zip(pin_name),
            out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
