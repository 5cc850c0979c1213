//! Benchmark grid: one CSV row per (instance, engine) run plus per-cell means.

use std::io::Write;
use std::time::Instant;

use nash_match::gen::{generate, GenSpec, ModelKind};
use nash_match::Termination;
use rayon::prelude::*;

use crate::commands::{check_limits, emit, resolve_k, solve_instance, value_mode};
use crate::{Algo, BenchArgs, CliError};

pub const HEADER: [&str; 11] = [
    "model",
    "n",
    "rho",
    "K",
    "value_mode",
    "algo",
    "time_seconds",
    "gap",
    "iterations",
    "objective",
    "seed",
];

pub const THREADS_ENV: &str = "NASH_MATCH_THREADS";

/// Objective column of a run that produced no usable objective.
pub const ERROR_CODE: &str = "error";

#[derive(Debug, Clone)]
struct Task {
    cell: usize,
    n: usize,
    rho: Option<f64>,
    seed: u64,
    algo: Algo,
}

#[derive(Debug, Clone)]
enum Outcome {
    Solved {
        time: f64,
        gap: f64,
        iterations: usize,
        objective: f64,
        termination: Termination,
    },
    Failed(String),
}

/// Worker count: `--jobs` capped by the environment.
pub fn worker_count(jobs: usize) -> Result<usize, CliError> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => usize::MAX,
    };
    Ok(jobs.min(cap))
}

fn default_algos(model: ModelKind) -> Vec<Algo> {
    if model.uses_k() {
        vec![Algo::Ccp]
    } else {
        vec![Algo::Ccp, Algo::Fw]
    }
}

fn run_task(a: &BenchArgs, k: usize, t: &Task) -> Outcome {
    let spec = GenSpec::new(a.model, t.n, t.rho.unwrap_or(1.0), value_mode(a.binary), k, t.seed);
    let instance = match generate(&spec) {
        Ok(m) => m,
        Err(e) => return Outcome::Failed(format!("generate: {e}")),
    };
    let start = Instant::now();
    match solve_instance(&instance, t.algo, &a.limits, &mut |_| {}) {
        Ok(r) => Outcome::Solved {
            time: start.elapsed().as_secs_f64(),
            gap: r.gap,
            iterations: r.iterations,
            objective: r.objective,
            termination: r.termination,
        },
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn text(v: Option<f64>) -> String {
    v.filter(|v| v.is_finite()).map(|v| v.to_string()).unwrap_or_default()
}

pub fn run(a: &BenchArgs) -> Result<i32, CliError> {
    let k = resolve_k(a.model, a.k)?;
    let algos = if a.algos.is_empty() { default_algos(a.model) } else { a.algos.clone() };
    if a.model.uses_k() && algos.contains(&Algo::Fw) {
        return Err(CliError::Usage(format!("fw does not support model {}", a.model)));
    }
    if a.reps == 0 || a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(CliError::Usage("--reps and every size must be at least 1".into()));
    }
    let rhos: Vec<Option<f64>> = if a.model.uses_k() {
        vec![None]
    } else {
        if a.rhos.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(CliError::Usage("every density must lie in (0, 1]".into()));
        }
        a.rhos.iter().map(|&r| Some(r)).collect()
    };
    check_limits(&a.limits)?;
    let workers = worker_count(a.jobs)?;

    let mut tasks = Vec::new();
    let mut instance_id = 0u64;
    let mut cells = Vec::new();
    for &n in &a.sizes {
        for &rho in &rhos {
            for _ in 0..a.reps {
                for &algo in &algos {
                    tasks.push(Task {
                        cell: cells.len(),
                        n,
                        rho,
                        seed: a.seed.wrapping_add(instance_id),
                        algo,
                    });
                }
                instance_id += 1;
            }
            cells.push((n, rho));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let outcomes: Vec<Outcome> = pool.install(|| tasks.par_iter().map(|t| run_task(a, k, t)).collect());

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(HEADER)?;
    let k_text = if a.model.uses_k() { k.to_string() } else { String::new() };
    let mode = value_mode(a.binary).as_str();
    let mut failures = 0;
    for (cell, &(n, rho)) in cells.iter().enumerate() {
        let prefix = |algo: Algo| {
            vec![
                a.model.as_str().to_string(),
                n.to_string(),
                text(rho),
                k_text.clone(),
                mode.to_string(),
                algo.as_str().to_string(),
            ]
        };
        let runs: Vec<(&Task, &Outcome)> = tasks.iter().zip(&outcomes).filter(|(t, _)| t.cell == cell).collect();
        for (t, o) in &runs {
            let mut row = prefix(t.algo);
            match o {
                Outcome::Solved {
                    time,
                    gap,
                    iterations,
                    objective,
                    termination,
                } => {
                    let objective = if *termination == Termination::Infeasible {
                        failures += 1;
                        termination.as_str().to_string()
                    } else {
                        text(Some(*objective))
                    };
                    row.extend([text(Some(*time)), text(Some(*gap)), iterations.to_string(), objective]);
                }
                Outcome::Failed(msg) => {
                    failures += 1;
                    eprintln!("{} n={n} seed={} {}: {msg}", a.model, t.seed, t.algo.as_str());
                    row.extend([String::new(), String::new(), String::new(), ERROR_CODE.to_string()]);
                }
            }
            row.push(t.seed.to_string());
            out.write_record(&row)?;
        }
        for &algo in &algos {
            let solved: Vec<_> = runs
                .iter()
                .filter(|(t, _)| t.algo == algo)
                .filter_map(|(_, o)| match o {
                    Outcome::Solved {
                        time,
                        gap,
                        iterations,
                        objective,
                        termination,
                    } if *termination != Termination::Infeasible => Some((*time, *gap, *iterations, *objective)),
                    _ => None,
                })
                .collect();
            let mut row = prefix(algo);
            row.extend([
                text(mean(solved.iter().map(|s| s.0))),
                text(mean(solved.iter().map(|s| s.1))),
                text(mean(solved.iter().map(|s| s.2 as f64))),
                text(mean(solved.iter().map(|s| s.3))),
                "mean".to_string(),
            ]);
            out.write_record(&row)?;
        }
    }
    let bytes = out.into_inner().map_err(|e| CliError::io("csv", e.into_error()))?;
    emit(a.out.as_deref(), std::str::from_utf8(&bytes).expect("CSV is UTF-8"))?;
    if failures > 0 {
        let _ = writeln!(std::io::stderr(), "{failures} runs failed");
    }
    Ok(0)
}
