use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use scmpc::controller::{admissibility_check, Admissibility, ScenarioController};
use scmpc::program::SolveStatus;
use scmpc::simulator::{simulate, ClosedLoopRecord};

use crate::config::{self, Experiment};
use crate::CliError;

const DEFAULT_OUTPUT: &str = "scmpc-out";

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Override the number of closed-loop steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed_controller: Option<u64>,
    #[arg(long)]
    seed_plant: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run even if a sample-removal pair is not admissible.
    #[arg(long)]
    force: bool,
    /// Independent runs with seeds offset by the replication index.
    #[arg(long, default_value_t = 1)]
    replications: usize,
}

#[derive(Serialize)]
struct ConstraintStats {
    samples: usize,
    removals: usize,
    rho1: usize,
    epsilon: f64,
    expected_violation_bound: f64,
    admissible: bool,
    violation_rate: f64,
}

#[derive(Serialize)]
struct Seeds {
    controller: u64,
    plant: u64,
}

#[derive(Serialize)]
struct RunStats {
    steps: usize,
    completed_steps: usize,
    constraints: Vec<ConstraintStats>,
    cost_mean: f64,
    cost_std: f64,
    soft_activations: usize,
    seeds: Seeds,
    /// Step index of a hard-mode infeasibility.
    failed_at: Option<usize>,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct Summary {
    replications: usize,
    violation_rate_mean: Vec<f64>,
    cost_mean: f64,
    cost_std_mean: f64,
    soft_activations: usize,
    runs: Vec<RunStats>,
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::SoftActive => "soft",
    }
}

fn write_trajectory(path: &Path, rec: &ClosedLoopRecord<f64>) -> Result<(), CliError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let (n, m, c) = match rec.steps.first() {
        Some(s) => (s.state.len(), s.input.len(), s.violations.len()),
        None => (rec.final_state.len(), 0, 0),
    };
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=c).map(|j| format!("violation{j}")));
    header.push("stage_cost".into());
    header.push("solver_status".into());
    writeln!(out, "{}", header.join(","))?;
    for s in &rec.steps {
        write!(out, "{}", s.t)?;
        for v in s.state.iter().chain(s.input.iter()) {
            write!(out, ",{v}")?;
        }
        for &v in &s.violations {
            write!(out, ",{}", u8::from(v))?;
        }
        writeln!(out, ",{},{}", s.stage_cost, status_name(s.status))?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

struct RunResult {
    stats: RunStats,
    failure: Option<CliError>,
}

fn run_one(exp: &Experiment, adm: &[Admissibility], controller_seed: u64, plant_seed: u64, dir: &Path) -> Result<RunResult, CliError> {
    let start = Instant::now();
    let mut cfg = exp.controller.clone();
    cfg.seed = controller_seed;
    let controller = ScenarioController::new_unchecked(exp.model.clone(), cfg)?;
    info!("running {} steps with seeds ({controller_seed}, {plant_seed})", exp.steps);
    let rec = simulate(&controller, &exp.model, &exp.x0, exp.steps, plant_seed)?;
    let rates = rec.violation_rates();
    let stats = RunStats {
        steps: exp.steps,
        completed_steps: rec.len(),
        constraints: adm
            .iter()
            .zip(&rates)
            .map(|(a, &v)| ConstraintStats {
                samples: a.samples,
                removals: a.removals,
                rho1: a.rho1,
                epsilon: a.epsilon,
                expected_violation_bound: a.bound,
                admissible: a.admissible,
                violation_rate: v,
            })
            .collect(),
        cost_mean: rec.cost_mean(),
        cost_std: rec.cost_std(),
        soft_activations: rec.soft_activations(),
        seeds: Seeds {
            controller: controller_seed,
            plant: plant_seed,
        },
        failed_at: rec.failure.as_ref().map(|f| f.t),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::create_dir_all(dir)?;
    write_trajectory(&dir.join("trajectory.csv"), &rec)?;
    write_json(&dir.join("stats.json"), &stats)?;
    let failure = rec.failure.map(|f| CliError::Infeasible {
        step: Some(f.t),
        message: f.error.to_string(),
    });
    Ok(RunResult { stats, failure })
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = config::load(&args.config)?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(s) = args.seed_controller {
        cfg.seeds.controller = s;
    }
    if let Some(s) = args.seed_plant {
        cfg.seeds.plant = s;
    }
    if args.replications == 0 {
        return Err(CliError::Schema("--replications must be at least 1".into()));
    }
    let exp = cfg.build()?;
    let dir = args
        .output
        .clone()
        .or_else(|| exp.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));

    let adm = admissibility_check(&exp.controller)?;
    for a in adm.iter().filter(|a| !a.admissible) {
        let msg = format!(
            "constraint {}: (K={}, R={}) has bound {:.6} > epsilon {}",
            a.constraint, a.samples, a.removals, a.bound, a.epsilon
        );
        if !args.force {
            return Err(CliError::Schema(format!("{msg}; pass --force to run anyway")));
        }
        warn!("{msg}");
    }

    let (c0, p0) = (exp.controller.seed, exp.plant_seed);
    if args.replications == 1 {
        let r = run_one(&exp, &adm, c0, p0, &dir)?;
        return r.failure.map_or(Ok(()), Err);
    }

    let results: Vec<Result<RunResult, CliError>> = (0..args.replications)
        .into_par_iter()
        .map(|i| {
            let off = i as u64;
            run_one(&exp, &adm, c0.wrapping_add(off), p0.wrapping_add(off), &dir.join(format!("rep{i}")))
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut first_failure = None;
    for r in results {
        let r = r?;
        if first_failure.is_none() {
            first_failure = r.failure;
        }
        runs.push(r.stats);
    }
    let p = runs.len() as f64;
    let summary = Summary {
        replications: runs.len(),
        violation_rate_mean: (0..adm.len())
            .map(|j| runs.iter().map(|s| s.constraints[j].violation_rate).sum::<f64>() / p)
            .collect(),
        cost_mean: runs.iter().map(|s| s.cost_mean).sum::<f64>() / p,
        cost_std_mean: runs.iter().map(|s| s.cost_std).sum::<f64>() / p,
        soft_activations: runs.iter().map(|s| s.soft_activations).sum(),
        runs,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    first_failure.map_or(Ok(()), Err)
}
