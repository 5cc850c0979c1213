//! Frank-Wolfe over the Birkhoff polytope with Hungarian atoms.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array2;

use crate::assignment::{bvn_decompose, max_weight_perfect_matching, AssignmentError, MatchingLottery, Permutation};
use crate::ccp::repair_point;
use crate::model::{gradient_at, objective_with, utilities, Allocation, MarketInstance, ModelError};
use crate::search::maximize_concave;
use crate::start::{integral_start, Interior, Start};
use crate::{SolveResult, Termination};

#[derive(Debug, Clone, PartialEq)]
pub struct FwConfig {
    pub gap_tol: f64,
    pub max_iters: usize,
    /// Seconds.
    pub time_limit: f64,
    pub line_search_tol: f64,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            gap_tol: 1e-7,
            max_iters: 1000,
            time_limit: 3600.0,
            line_search_tol: 1e-12,
        }
    }
}

fn check_supported(instance: &MarketInstance) -> Result<(), ModelError> {
    match instance {
        MarketInstance::Linear(_) | MarketInstance::TwoSided(_) => Ok(()),
        _ => Err(ModelError::Unsupported(instance.kind_name())),
    }
}

fn entry_matrix(x: &Allocation) -> Result<&Array2<f64>, ModelError> {
    x.as_matrix()
        .ok_or_else(|| ModelError::Dimension("expected an entry-level allocation".into()))
}

/// Best matching for the linearized objective at `x_t`, with its linear value.
pub fn fw_atom(instance: &MarketInstance, x_t: &Allocation) -> Result<(Permutation, f64), ModelError> {
    check_supported(instance)?;
    let v = utilities(instance, x_t)?;
    let g = gradient_at(instance, &v)?;
    Ok(max_weight_perfect_matching(&g))
}

/// Exact line search from utilities `v` toward `v_hat`.
fn line_search_v(v: &[f64], v_hat: &[f64], c: &[f64], tol: f64) -> f64 {
    let d: Vec<f64> = v_hat.iter().zip(v).map(|(a, b)| a - b).collect();
    let mut hi: f64 = 1.0;
    for i in 0..c.len() {
        if d[i] < 0.0 {
            hi = hi.min((v[i] - c[i] - 1e-12) / -d[i]);
        }
    }
    maximize_concave(
        |g| (0..c.len()).map(|i| d[i] / (v[i] + g * d[i] - c[i])).sum(),
        0.0,
        hi.max(0.0),
        tol,
    )
}

/// Step size in `[0, 1]` maximizing the objective along the segment to `atom`.
pub fn fw_line_search(
    instance: &MarketInstance,
    x_t: &Allocation,
    atom: &Permutation,
    tol: f64,
) -> Result<f64, ModelError> {
    check_supported(instance)?;
    let v = utilities(instance, x_t)?;
    let v_hat = utilities(instance, &Allocation::Matrix(atom.to_matrix()))?;
    Ok(line_search_v(&v, &v_hat, &instance.disagreement(), tol))
}

/// Duality-gap numerator `sum g (atom - x)`, clipped at zero.
pub fn fw_gap_numerator(g: &Array2<f64>, x_t: &Array2<f64>, atom_x: &Array2<f64>) -> f64 {
    let num: f64 = g.iter().zip(atom_x).zip(x_t).map(|((g, a), x)| g * (a - x)).sum();
    num.max(0.0)
}

/// Relative Frank-Wolfe gap; the numerator itself when `|f_t| < 1e-12`.
pub fn fw_gap(g: &Array2<f64>, x_t: &Array2<f64>, atom_x: &Array2<f64>, f_t: f64) -> f64 {
    let num = fw_gap_numerator(g, x_t, atom_x);
    if f_t.abs() < 1e-12 {
        num
    } else {
        num / f_t.abs()
    }
}

/// One record per atom computation.
#[derive(Debug, Clone, PartialEq)]
pub struct FwRecord {
    pub iteration: usize,
    /// Objective at the iterate the atom was computed for.
    pub objective: f64,
    pub gap: f64,
    pub gap_numerator: f64,
    /// Step taken toward the atom (0 on the final record).
    pub step: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct FwOutcome {
    pub result: SolveResult,
    pub records: Vec<FwRecord>,
    /// Permutations and their weights in the final iterate.
    pub atoms: Vec<(Permutation, f64)>,
    /// Surviving weight of a fractional starting point, if there was one.
    pub residual: Option<(Array2<f64>, f64)>,
    /// The initial matching left some agent at or below its disagreement point
    /// and was blended toward the interior point.
    pub initial_point_blended: bool,
}

impl FwOutcome {
    /// `sum atoms + residual`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let n = self.result.allocation.n();
        let mut x = Array2::zeros((n, n));
        for (p, w) in &self.atoms {
            for (i, &j) in p.as_slice().iter().enumerate() {
                x[[i, j]] += w;
            }
        }
        if let Some((r, w)) = &self.residual {
            x = x + r * *w;
        }
        x
    }

    /// The iterate as a lottery over perfect matchings; a fractional starting
    /// point is decomposed first.
    pub fn lottery(&self) -> Result<MatchingLottery, AssignmentError> {
        let mut weights: Vec<(Permutation, f64)> = self.atoms.iter().filter(|a| a.1 > 0.0).cloned().collect();
        if let Some((r, w)) = &self.residual {
            for (p, pw) in bvn_decompose(r, 1e-12)?.entries() {
                match weights.iter_mut().find(|e| &e.0 == p) {
                    Some(e) => e.1 += w * pw,
                    None => weights.push((p.clone(), w * pw)),
                }
            }
        }
        let total: f64 = weights.iter().map(|e| e.1).sum();
        MatchingLottery::new(weights.into_iter().map(|(p, w)| (p, w / total)).collect())
    }
}

pub fn fw_solve(instance: &MarketInstance, config: &FwConfig) -> Result<FwOutcome, ModelError> {
    fw_solve_with_sink(instance, config, &mut |_| {})
}

/// [`fw_solve`] that also hands every record to `sink`.
pub fn fw_solve_with_sink(
    instance: &MarketInstance,
    config: &FwConfig,
    sink: &mut dyn FnMut(&FwRecord),
) -> Result<FwOutcome, ModelError> {
    check_supported(instance)?;
    let started = Instant::now();
    let c = instance.disagreement();
    let all = |_: usize, _: usize| true;
    match integral_start(instance, 0.0, &all)? {
        Start::Integral(perm, x, _) => {
            let m = entry_matrix(&x)?.clone();
            iterate(instance, config, m, vec![(perm, 1.0)], None, false, started, sink)
        }
        Start::NeedsInterior(perm, x, v) => {
            let mut interior = Interior::new(instance, &all);
            let cert = interior.get()?.clone();
            if !(cert.t_star > 0.0) {
                return Ok(FwOutcome {
                    result: SolveResult {
                        v: cert.v_bar.clone(),
                        allocation: cert.x_bar.clone(),
                        objective: f64::NEG_INFINITY,
                        gap: f64::INFINITY,
                        iterations: 0,
                        wall_time: started.elapsed().as_secs_f64(),
                        termination: Termination::Infeasible,
                    },
                    records: Vec::new(),
                    atoms: Vec::new(),
                    residual: None,
                    initial_point_blended: false,
                });
            }
            let eps = (0.5 * cert.t_star).min(1e-6);
            let (_, x0, alpha) = repair_point(&v, &x, &cert.v_bar, &cert.x_bar, &c, eps)?;
            let m = entry_matrix(&x0)?.clone();
            let residual = entry_matrix(&cert.x_bar)?.clone();
            iterate(
                instance,
                config,
                m,
                vec![(perm, 1.0 - alpha)],
                Some((residual, alpha)),
                true,
                started,
                sink,
            )
        }
    }
}

/// Frank-Wolfe from an arbitrary feasible starting allocation, which is kept
/// as the residual term of the atom history.
pub fn fw_solve_from(instance: &MarketInstance, config: &FwConfig, start: &Allocation) -> Result<FwOutcome, ModelError> {
    check_supported(instance)?;
    let m = entry_matrix(start)?.clone();
    utilities(instance, start)?;
    iterate(instance, config, m.clone(), Vec::new(), Some((m, 1.0)), false, Instant::now(), &mut |_| {})
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    instance: &MarketInstance,
    config: &FwConfig,
    mut x: Array2<f64>,
    mut atoms: Vec<(Permutation, f64)>,
    mut residual: Option<(Array2<f64>, f64)>,
    blended: bool,
    started: Instant,
    sink: &mut dyn FnMut(&FwRecord),
) -> Result<FwOutcome, ModelError> {
    let c = instance.disagreement();
    let mut index: HashMap<Permutation, usize> = atoms.iter().enumerate().map(|(k, a)| (a.0.clone(), k)).collect();
    let mut records = Vec::new();
    let mut iterations = 0;
    let termination;
    let mut gap;
    loop {
        let xa = Allocation::Matrix(x);
        let v = utilities(instance, &xa)?;
        let Allocation::Matrix(xm) = xa else { unreachable!() };
        x = xm;
        let f = objective_with(&c, &v)?;
        let g = gradient_at(instance, &v)?;
        let (atom, _) = max_weight_perfect_matching(&g);
        iterations += 1;
        let atom_x = atom.to_matrix();
        let numerator = fw_gap_numerator(&g, &x, &atom_x);
        gap = fw_gap(&g, &x, &atom_x, f);
        let mut record = FwRecord {
            iteration: iterations,
            objective: f,
            gap,
            gap_numerator: numerator,
            step: 0.0,
            wall_time: started.elapsed().as_secs_f64(),
        };
        if gap <= config.gap_tol {
            termination = Termination::GapReached;
            sink(&record);
            records.push(record);
            break;
        }
        if iterations >= config.max_iters {
            termination = Termination::IterLimit;
            sink(&record);
            records.push(record);
            break;
        }
        if started.elapsed().as_secs_f64() >= config.time_limit {
            termination = Termination::TimeLimit;
            sink(&record);
            records.push(record);
            break;
        }
        let v_hat = utilities(instance, &Allocation::Matrix(atom_x.clone()))?;
        let step = line_search_v(&v, &v_hat, &c, config.line_search_tol);
        record.step = step;
        sink(&record);
        records.push(record);
        if step > 0.0 {
            x = x * (1.0 - step) + &atom_x * step;
            for a in atoms.iter_mut() {
                a.1 *= 1.0 - step;
            }
            if let Some(r) = residual.as_mut() {
                r.1 *= 1.0 - step;
            }
            match index.get(&atom) {
                Some(&k) => atoms[k].1 += step,
                None => {
                    index.insert(atom.clone(), atoms.len());
                    atoms.push((atom, step));
                }
            }
        }
    }
    let allocation = Allocation::Matrix(x);
    let v = utilities(instance, &allocation)?;
    let objective = objective_with(&c, &v)?;
    atoms.retain(|a| a.1 > 0.0);
    Ok(FwOutcome {
        result: SolveResult {
            allocation,
            v,
            objective,
            gap,
            iterations,
            wall_time: started.elapsed().as_secs_f64(),
            termination,
        },
        records,
        atoms,
        residual,
        initial_point_blended: blended,
    })
}
