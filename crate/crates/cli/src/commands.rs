use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nash_match::assignment::{bvn_decompose, expected_utility_of_lottery};
use nash_match::ccp::{ccp_solve_with_sink, CcpConfig, CcpRecord};
use nash_match::fw::{fw_solve_with_sink, FwConfig, FwRecord};
use nash_match::gen::{generate as generate_instance, GenSpec, ModelKind, ValueMode};
use nash_match::model::{utilities, Allocation, MarketInstance};
use nash_match::SolveResult;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::format::{exit_code, to_json, InstanceFile, LotteryFile, ResultFile, UtilityCheck, FORMAT_VERSION};
use crate::{Algo, CliError, GenerateArgs, Limits, RoundArgs, SolveArgs};

pub const DEFAULT_K: usize = 5;

/// Tolerance of the lottery utility check.
pub const LOTTERY_TOL: f64 = 1e-8;

pub fn value_mode(binary: bool) -> ValueMode {
    if binary {
        ValueMode::Binary
    } else {
        ValueMode::Nonbinary
    }
}

/// Validates the `--K`/`--rho` combination for `model`.
pub fn resolve_k(model: ModelKind, k: Option<usize>) -> Result<usize, CliError> {
    match (model.uses_k(), k) {
        (false, Some(_)) => Err(CliError::Usage(format!("--K does not apply to model {model}"))),
        (false, None) => Ok(1),
        (true, k) => Ok(k.unwrap_or(DEFAULT_K)),
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn read_instance(path: &Path) -> Result<MarketInstance, CliError> {
    let file: InstanceFile = serde_json::from_str(&read_text(path)?)?;
    file.decode()
}

/// Writes to `path`, or standard output if there is none.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p.display().to_string(), e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("stdout", e)),
    }
}

pub fn generate(a: &GenerateArgs) -> Result<i32, CliError> {
    let k = resolve_k(a.model, a.k)?;
    let rho = match (a.model.uses_k(), a.rho) {
        (_, Some(rho)) => rho,
        (true, None) => 1.0,
        (false, None) => return Err(CliError::Usage(format!("model {} requires --rho", a.model))),
    };
    let spec = GenSpec::new(a.model, a.n, rho, value_mode(a.binary), k, a.seed);
    spec.validate()?;
    let instance = generate_instance(&spec)?;
    let mut file = InstanceFile::encode(&instance, Some(a.seed));
    // 1lad draws may still come out with every c at zero
    file.model = a.model.as_str().to_string();
    if a.model == ModelKind::OneLad {
        file.c = Some(instance.disagreement());
    }
    emit(a.out.as_deref(), &to_json(&file))?;
    Ok(0)
}

pub fn ccp_config(l: &Limits) -> CcpConfig {
    CcpConfig {
        gap_tol: l.gap,
        max_iters: l.max_iter,
        time_limit: l.time_limit,
        ..CcpConfig::default()
    }
}

pub fn fw_config(l: &Limits) -> FwConfig {
    FwConfig {
        gap_tol: l.gap,
        max_iters: l.max_iter,
        time_limit: l.time_limit,
        ..FwConfig::default()
    }
}

pub fn check_limits(l: &Limits) -> Result<(), CliError> {
    if !(l.gap > 0.0) || l.max_iter == 0 || !(l.time_limit > 0.0) {
        return Err(CliError::Usage("--gap, --max-iter and --time-limit must be positive".into()));
    }
    Ok(())
}

fn ccp_line(r: &CcpRecord) -> String {
    to_json(&json!({
        "iteration": r.iteration,
        "sigma": r.sigma,
        "eta": r.eta,
        "f_lower": r.f_lower,
        "gap": r.gap,
        "time": r.wall_time,
        "cut_halvings": r.cut_halvings,
        "kelley_fallback": r.kelley_fallback,
        "pivots": r.pivots,
    }))
}

fn fw_line(r: &FwRecord) -> String {
    to_json(&json!({
        "iteration": r.iteration,
        "objective": r.objective,
        "gap": r.gap,
        "gap_numerator": r.gap_numerator,
        "step": r.step,
        "time": r.wall_time,
    }))
}

/// Solves with `algo`, passing each diagnostic record as a JSON line to `sink`.
pub fn solve_instance(
    instance: &MarketInstance,
    algo: Algo,
    limits: &Limits,
    sink: &mut dyn FnMut(String),
) -> Result<SolveResult, CliError> {
    check_limits(limits)?;
    Ok(match algo {
        Algo::Ccp => ccp_solve_with_sink(instance, &ccp_config(limits), &mut |r| sink(ccp_line(r)))?.result,
        Algo::Fw => fw_solve_with_sink(instance, &fw_config(limits), &mut |r| sink(fw_line(r)))?.result,
    })
}

pub fn solve(a: &SolveArgs) -> Result<i32, CliError> {
    let instance = read_instance(&a.input)?;
    let result = match &a.diag {
        None => solve_instance(&instance, a.algo, &a.limits, &mut |_| {})?,
        Some(path) => {
            let io = |e| CliError::io(path.display().to_string(), e);
            let mut out = BufWriter::new(File::create(path).map_err(io)?);
            let mut failed = None;
            let result = solve_instance(&instance, a.algo, &a.limits, &mut |line| {
                if failed.is_none() {
                    failed = out.write_all(line.as_bytes()).err();
                }
            })?;
            if let Some(e) = failed {
                return Err(io(e));
            }
            out.flush().map_err(io)?;
            result
        }
    };
    emit(None, &to_json(&ResultFile::encode(a.algo.as_str(), &result)))?;
    Ok(exit_code(result.termination))
}

pub fn round(a: &RoundArgs) -> Result<i32, CliError> {
    let result: ResultFile = serde_json::from_str(&read_text(&a.input)?)?;
    let x = result.allocation.aggregate()?;
    let lottery = bvn_decompose(&x, 1e-9)?;
    let samples = a.sample.map(|count| {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        lottery.sample(&mut rng, count).into_iter().map(|p| p.as_slice().to_vec()).collect()
    });
    let check = match &a.instance {
        None => None,
        Some(path) => {
            let instance = read_instance(path)?;
            if instance.n() != x.nrows() {
                return Err(CliError::Format(format!("instance has n = {}, allocation {}", instance.n(), x.nrows())));
            }
            match instance {
                MarketInstance::Linear(_) | MarketInstance::TwoSided(_) => {
                    let direct = utilities(&instance, &Allocation::Matrix(x.clone()))?;
                    let expected = expected_utility_of_lottery(&instance, &lottery)?;
                    let max_difference = direct.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    Some(UtilityCheck {
                        max_difference,
                        passed: max_difference <= LOTTERY_TOL,
                    })
                }
                _ => {
                    eprintln!("note: utilities are not linear for {} markets; skipping the check", instance.kind_name());
                    None
                }
            }
        }
    };
    let passed = check.as_ref().is_none_or(|c| c.passed);
    let file = LotteryFile {
        format_version: FORMAT_VERSION,
        permutations: lottery.entries().iter().map(|e| e.0.as_slice().to_vec()).collect(),
        weights: lottery.entries().iter().map(|e| e.1).collect(),
        samples,
        check,
    };
    emit(None, &to_json(&file))?;
    Ok(if passed { 0 } else { 1 })
}
