//! Central cutting-plane engine.
//!
//! The hypograph of `f(v) = sum log(v_i - c_i)` is outer-approximated by
//! tangent cuts. Each master LP finds the center and radius `sigma` of the
//! largest ball inscribed in the approximation above the best known value;
//! the run stops when `sigma / |eta|` falls below the gap tolerance.

use std::time::Instant;

use nash_match_lp::{LinearProgram, LpError, LpSolution, LpStatus, Row, Simplex};
use thiserror::Error;

use crate::assignment::max_weight_perfect_matching;
use crate::model::{
    gradient_at, objective_with, utilities, Allocation, Certificate, FeasibilityBlock, MarketInstance, ModelError,
};
use crate::search::maximize_concave;
use crate::start::{integral_start, Interior, Start};
use crate::{SolveResult, Termination};

#[derive(Debug, Error)]
pub enum CcpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("master LP failed at iteration {iteration}: {source}")]
    Lp {
        iteration: usize,
        #[source]
        source: LpError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcpConfig {
    pub gap_tol: f64,
    pub max_iters: usize,
    /// Seconds.
    pub time_limit: f64,
    pub epsilon_interior: f64,
    pub alpha_halvings_max: usize,
}

impl Default for CcpConfig {
    fn default() -> Self {
        CcpConfig {
            gap_tol: 1e-7,
            max_iters: 1000,
            time_limit: 3600.0,
            epsilon_interior: 1e-6,
            alpha_halvings_max: 30,
        }
    }
}

impl CcpConfig {
    fn validate(&self) -> Result<(), CcpError> {
        if !(self.gap_tol > 0.0) || self.max_iters == 0 || !(self.time_limit > 0.0) || !(self.epsilon_interior > 0.0)
        {
            return Err(CcpError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `theta * gamma + sigma_coefficient * sigma <= rhs_constant + v_coefficients . v`
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub rhs_constant: f64,
    pub v_coefficients: Vec<f64>,
    pub sigma_coefficient: f64,
    pub source_point: Vec<f64>,
}

impl Cut {
    /// Value of the tangent plane at `v`.
    pub fn bound(&self, v: &[f64]) -> f64 {
        self.rhs_constant + self.v_coefficients.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Tangent cut of the objective at `v_hat`.
pub fn make_cut(v_hat: &[f64], instance: &MarketInstance, theta: f64) -> Result<Cut, ModelError> {
    make_cut_with(v_hat, &instance.disagreement(), theta)
}

fn make_cut_with(v_hat: &[f64], c: &[f64], theta: f64) -> Result<Cut, ModelError> {
    let f = objective_with(c, v_hat)?;
    let coef: Vec<f64> = v_hat.iter().zip(c).map(|(v, c)| 1.0 / (v - c)).collect();
    let shift: f64 = coef.iter().zip(c).map(|(a, c)| a * c).sum();
    let norm = (theta * theta + coef.iter().map(|a| a * a).sum::<f64>()).sqrt();
    Ok(Cut {
        rhs_constant: f - c.len() as f64 - shift,
        v_coefficients: coef,
        sigma_coefficient: norm,
        source_point: v_hat.to_vec(),
    })
}

/// `1 / min_i (v_i - c_i)`.
pub fn choose_theta(first_point: &[f64], instance: &MarketInstance) -> f64 {
    theta_with(first_point, &instance.disagreement())
}

fn theta_with(v: &[f64], c: &[f64]) -> f64 {
    1.0 / v.iter().zip(c).map(|(v, c)| v - c).fold(f64::INFINITY, f64::min)
}

/// `sigma / |eta|`, or `sigma` when `|eta| < 1e-12`.
pub fn ccp_gap(sigma: f64, eta: f64) -> f64 {
    if eta.abs() < 1e-12 {
        sigma
    } else {
        sigma / eta.abs()
    }
}

/// The central master LP over `(x, v, gamma, sigma)`.
pub struct MasterProgram {
    pub lp: LinearProgram,
    pub theta: f64,
    block: FeasibilityBlock,
    gamma: usize,
    sigma: usize,
}

/// Center read off an optimal master solution.
#[derive(Debug, Clone)]
pub struct Center {
    pub x: Allocation,
    pub v: Vec<f64>,
    pub eta: f64,
    pub sigma: f64,
}

impl MasterProgram {
    pub fn center(&self, primal: &[f64]) -> Center {
        Center {
            x: self.block.allocation(primal),
            v: self.block.v(primal),
            eta: self.theta * primal[self.gamma],
            sigma: primal[self.sigma].max(0.0),
        }
    }

    pub fn cut_row(&self, cut: &Cut) -> Row {
        let mut coeffs = vec![(self.gamma, self.theta), (self.sigma, cut.sigma_coefficient)];
        for (i, &a) in cut.v_coefficients.iter().enumerate() {
            coeffs.push((self.block.v_var(i), -a));
        }
        Row::le(coeffs, cut.rhs_constant)
    }

    /// Primal values placing the master at `(x, v)` on the lower bound.
    pub fn start_point(&self, x: &Allocation, v: &[f64], f_lower: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.lp.num_vars()];
        self.block.fill(x, v, &mut out);
        out[self.gamma] = f_lower / self.theta;
        out
    }

    pub fn lower_bound_row(&self, f_lower: f64) -> Row {
        Row::ge(vec![(self.gamma, self.theta), (self.sigma, -1.0)], f_lower)
    }
}

/// Master LP: maximize `sigma` subject to `theta*gamma >= f_lower + sigma`,
/// every cut, and the model's feasibility constraints.
pub fn build_master(
    instance: &MarketInstance,
    cuts: &[Cut],
    f_lower: f64,
    theta: f64,
) -> Result<MasterProgram, CcpError> {
    build_master_restricted(instance, cuts, f_lower, theta, &|_, _| true)
}

fn build_master_restricted(
    instance: &MarketInstance,
    cuts: &[Cut],
    f_lower: f64,
    theta: f64,
    keep: &dyn Fn(usize, usize) -> bool,
) -> Result<MasterProgram, CcpError> {
    if cuts.is_empty() {
        return Err(CcpError::Config("the master program needs at least one cut".into()));
    }
    let mut lp = LinearProgram::new();
    let block = FeasibilityBlock::add(&mut lp, instance, keep);
    let gamma = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    let sigma = lp.add_var(1.0, 0.0, f64::INFINITY);
    let mut master = MasterProgram {
        lp,
        theta,
        block,
        gamma,
        sigma,
    };
    let row = master.lower_bound_row(f_lower);
    master.lp.add_row(row);
    for cut in cuts {
        let row = master.cut_row(cut);
        master.lp.add_row(row);
    }
    Ok(master)
}

/// Moves `(v_hat, x_hat)` toward the interior point just far enough that
/// every gain is at least `epsilon`. Returns the point and the step `alpha`.
pub fn repair_point(
    v_hat: &[f64],
    x_hat: &Allocation,
    v_bar: &[f64],
    x_bar: &Allocation,
    c: &[f64],
    epsilon: f64,
) -> Result<(Vec<f64>, Allocation, f64), ModelError> {
    let mut alpha: f64 = 0.0;
    for i in 0..c.len() {
        if !(v_bar[i] > c[i] + epsilon) {
            return Err(ModelError::InvalidArgument(format!(
                "interior point gives agent {i} a gain of {} <= {epsilon}",
                v_bar[i] - c[i]
            )));
        }
        if v_hat[i] < c[i] + epsilon {
            alpha = alpha.max((c[i] + epsilon - v_hat[i]) / (v_bar[i] - v_hat[i]));
        }
    }
    if alpha == 0.0 {
        return Ok((v_hat.to_vec(), x_hat.clone(), 0.0));
    }
    let alpha = alpha.min(1.0);
    let v = v_hat.iter().zip(v_bar).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect();
    Ok((v, x_hat.blend(x_bar, alpha), alpha))
}

/// Cut point chosen between the center and the incumbent.
#[derive(Debug, Clone)]
pub struct CutPoint {
    pub v: Vec<f64>,
    pub x: Allocation,
    /// Weight of the center in the blend.
    pub alpha: f64,
    pub halvings: usize,
    /// The cut-off condition never held; the cut is a plain Kelley cut at the
    /// repaired center.
    pub fallback: bool,
}

/// Everything [`choose_cut_point`] needs besides the two endpoints.
pub struct CutPointContext<'a> {
    pub c: &'a [f64],
    pub eta: f64,
    pub epsilon: f64,
    pub halvings_max: usize,
    /// Interior point used to repair blends that leave the domain.
    pub interior: Option<(&'a [f64], &'a Allocation)>,
}

/// Line search between the center `(v_t, x_t)` and the incumbent, then
/// halving toward the center until the cut at the point cuts off the center.
pub fn choose_cut_point(
    v_t: &[f64],
    x_t: &Allocation,
    v_star: &[f64],
    x_star: &Allocation,
    ctx: &CutPointContext<'_>,
) -> Result<CutPoint, ModelError> {
    let c = ctx.c;
    let d: Vec<f64> = v_t.iter().zip(v_star).map(|(a, b)| a - b).collect();
    let mut hi: f64 = 1.0;
    for i in 0..c.len() {
        if d[i] < 0.0 {
            hi = hi.min((v_star[i] - c[i] - 1e-12) / -d[i]);
        }
    }
    let mut alpha = maximize_concave(
        |a| (0..c.len()).map(|i| d[i] / (v_star[i] + a * d[i] - c[i])).sum(),
        0.0,
        hi.max(0.0),
        1e-10,
    );
    let dim = c.len() as f64;
    for h in 0..=ctx.halvings_max {
        let v: Vec<f64> = v_star.iter().zip(&d).map(|(s, di)| s + alpha * di).collect();
        let (v, repair) = repaired_v(v, ctx);
        if let Ok(f) = objective_with(c, &v) {
            let bound = f - dim + (0..c.len()).map(|i| (v_t[i] - c[i]) / (v[i] - c[i])).sum::<f64>();
            if ctx.eta > bound {
                let x = repaired_x(x_star.blend(x_t, alpha), repair, ctx);
                return Ok(CutPoint {
                    v,
                    x,
                    alpha,
                    halvings: h,
                    fallback: false,
                });
            }
        }
        alpha = 0.5 * (alpha + 1.0);
    }
    let (v, repair) = repaired_v(v_t.to_vec(), ctx);
    Ok(CutPoint {
        v,
        x: repaired_x(x_t.clone(), repair, ctx),
        alpha: 1.0,
        halvings: ctx.halvings_max,
        fallback: true,
    })
}

/// Repairs `v` toward the interior point; returns the repair step too.
fn repaired_v(v: Vec<f64>, ctx: &CutPointContext<'_>) -> (Vec<f64>, f64) {
    let Some((v_bar, _)) = ctx.interior else {
        return (v, 0.0);
    };
    let mut step: f64 = 0.0;
    for i in 0..v.len() {
        let target = ctx.c[i] + ctx.epsilon;
        if v[i] < target && v_bar[i] > target {
            step = step.max((target - v[i]) / (v_bar[i] - v[i]));
        }
    }
    if step == 0.0 {
        return (v, 0.0);
    }
    let step = step.min(1.0);
    let v = v.iter().zip(v_bar).map(|(a, b)| (1.0 - step) * a + step * b).collect();
    (v, step)
}

fn repaired_x(x: Allocation, step: f64, ctx: &CutPointContext<'_>) -> Allocation {
    match ctx.interior {
        Some((_, x_bar)) if step > 0.0 => x.blend(x_bar, step),
        _ => x,
    }
}

/// One record per master solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CcpRecord {
    pub iteration: usize,
    pub sigma: f64,
    pub eta: f64,
    pub f_lower: f64,
    pub gap: f64,
    /// Seconds since the start of the run.
    pub wall_time: f64,
    pub cut_halvings: usize,
    pub kelley_fallback: bool,
    pub gap_safeguard: bool,
    /// Simplex pivots spent on this master.
    pub pivots: usize,
}

/// Run-level notes on choices the engine made.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CcpFlags {
    /// The initial matching left some agent at or below its disagreement point
    /// and was blended toward the interior point.
    pub initial_point_blended: bool,
    /// Pairs removed from a two-sided master because neither side values them.
    pub eliminated_pairs: usize,
    /// The eliminated master's answer failed the full optimality check and
    /// the instance was re-solved without elimination.
    pub elimination_reverted: bool,
    /// The interior margin was shrunk below the configured epsilon because the
    /// instance's best guaranteed gain is smaller.
    pub epsilon_shrunk: bool,
    /// A master became infeasible through rounding after the bound caught up
    /// with the cuts; treated as a zero radius.
    pub master_infeasible: bool,
}

#[derive(Debug, Clone)]
pub struct CcpOutcome {
    pub result: SolveResult,
    pub records: Vec<CcpRecord>,
    pub cuts: Vec<Cut>,
    pub theta: f64,
    pub flags: CcpFlags,
}

pub fn ccp_solve(instance: &MarketInstance, config: &CcpConfig) -> Result<CcpOutcome, CcpError> {
    ccp_solve_with_sink(instance, config, &mut |_| {})
}

/// [`ccp_solve`] that also hands every record to `sink` as it is produced.
pub fn ccp_solve_with_sink(
    instance: &MarketInstance,
    config: &CcpConfig,
    sink: &mut dyn FnMut(&CcpRecord),
) -> Result<CcpOutcome, CcpError> {
    config.validate()?;
    let started = Instant::now();
    if let MarketInstance::TwoSided(m) = instance {
        let keep = |i: usize, j: usize| m.u()[[i, j]] > 0.0 || m.w()[[i, j]] > 0.0;
        let eliminated = (0..m.n()).flat_map(|i| (0..m.n()).map(move |j| (i, j))).filter(|&(i, j)| !keep(i, j)).count();
        if eliminated > 0 {
            if let Some(mut out) = run(instance, config, &keep, started, sink)? {
                out.flags.eliminated_pairs = eliminated;
                if out.result.termination == Termination::Infeasible || !first_order_holds(instance, &out.result) {
                    let mut full = run(instance, config, &|_, _| true, started, sink)?.expect("unrestricted run");
                    full.flags.elimination_reverted = true;
                    return Ok(full);
                }
                return Ok(out);
            }
        }
    }
    Ok(run(instance, config, &|_, _| true, started, sink)?.expect("unrestricted run"))
}

/// The best matching under the full gradient is no better than the best one
/// over the kept pairs, so the restricted optimum is optimal for the full set.
fn first_order_holds(instance: &MarketInstance, result: &SolveResult) -> bool {
    let Ok(g) = gradient_at(instance, &result.v) else {
        return false;
    };
    let MarketInstance::TwoSided(m) = instance else {
        return true;
    };
    let (_, full) = max_weight_perfect_matching(&g);
    let restricted = g.clone()
        + ndarray::Array2::from_shape_fn(g.dim(), |(i, j)| {
            if m.u()[[i, j]] > 0.0 || m.w()[[i, j]] > 0.0 {
                0.0
            } else {
                -1e9
            }
        });
    let (_, best) = max_weight_perfect_matching(&restricted);
    full <= best + 1e-9 * (1.0 + best.abs())
}

/// Returns `None` when a restricted run finds its restriction infeasible.
fn run(
    instance: &MarketInstance,
    config: &CcpConfig,
    keep: &dyn Fn(usize, usize) -> bool,
    started: Instant,
    sink: &mut dyn FnMut(&CcpRecord),
) -> Result<Option<CcpOutcome>, CcpError> {
    let c = instance.disagreement();
    let mut flags = CcpFlags::default();
    let mut eps = config.epsilon_interior;
    let mut interior = Interior::new(instance, keep);
    let restricted = !(0..instance.n()).all(|i| (0..instance.n()).all(|j| keep(i, j)));

    let infeasible = |cert: &Certificate, started: Instant| -> Result<CcpOutcome, CcpError> {
        let v = cert.v_bar.clone();
        Ok(CcpOutcome {
            result: SolveResult {
                allocation: cert.x_bar.clone(),
                v,
                objective: f64::NEG_INFINITY,
                gap: f64::INFINITY,
                iterations: 0,
                wall_time: started.elapsed().as_secs_f64(),
                termination: Termination::Infeasible,
            },
            records: Vec::new(),
            cuts: Vec::new(),
            theta: f64::NAN,
            flags: CcpFlags::default(),
        })
    };

    let (x0, v0) = match integral_start(instance, eps, keep)? {
        Start::Integral(_, x, v) => (x, v),
        Start::NeedsInterior(_, x, v) => {
            let cert = interior.get()?.clone();
            if !(cert.t_star > 0.0) {
                if restricted {
                    return Ok(None);
                }
                return infeasible(&cert, started).map(Some);
            }
            if cert.t_star <= eps {
                eps = 0.5 * cert.t_star;
                flags.epsilon_shrunk = true;
            }
            flags.initial_point_blended = true;
            let margin = eps.max(0.5 * cert.t_star);
            let (v, x, _) = repair_point(&v, &x, &cert.v_bar, &cert.x_bar, &c, margin)?;
            (x, v)
        }
    };

    let theta = theta_with(&v0, &c);
    let mut f_lower = objective_with(&c, &v0)?;
    let mut f_row = f_lower;
    let mut best_x = x0;
    let mut best_v = v0.clone();
    let mut cuts = vec![make_cut_with(&v0, &c, theta)?];
    let master = build_master_restricted(instance, &cuts, f_lower, theta, keep)?;
    let start = master.start_point(&best_x, &best_v, f_lower);
    let mut ctx = Simplex::with_start(&master.lp, &start).map_err(|source| CcpError::Lp { iteration: 1, source })?;
    let mut sol: LpSolution = ctx.solve().map_err(|source| CcpError::Lp { iteration: 1, source })?;
    let mut records = Vec::new();
    let mut iteration = 0;
    let mut gap;
    let termination;
    loop {
        iteration += 1;
        let pivots = sol.pivots;
        let center = match sol.status {
            LpStatus::Optimal => master.center(&sol.primal),
            LpStatus::Infeasible => {
                flags.master_infeasible = true;
                gap = 0.0;
                termination = Termination::GapReached;
                break;
            }
            LpStatus::Unbounded => {
                return Err(CcpError::Lp {
                    iteration,
                    source: LpError::NotOptimal(LpStatus::Unbounded),
                })
            }
        };
        gap = ccp_gap(center.sigma, center.eta);

        // the center is feasible; it may improve the incumbent
        let v_true = utilities(instance, &center.x)?;
        if let Ok(f) = objective_with(&c, &v_true) {
            if f > f_lower {
                f_lower = f;
                best_x = center.x.clone();
                best_v = v_true;
            }
        }

        let mut record = CcpRecord {
            iteration,
            sigma: center.sigma,
            eta: center.eta,
            f_lower,
            gap,
            wall_time: started.elapsed().as_secs_f64(),
            cut_halvings: 0,
            kelley_fallback: false,
            gap_safeguard: center.eta.abs() < 1e-12,
            pivots,
        };
        if gap <= config.gap_tol {
            sink(&record);
            records.push(record);
            termination = Termination::GapReached;
            break;
        }
        if iteration >= config.max_iters {
            sink(&record);
            records.push(record);
            termination = Termination::IterLimit;
            break;
        }
        if started.elapsed().as_secs_f64() >= config.time_limit {
            sink(&record);
            records.push(record);
            termination = Termination::TimeLimit;
            break;
        }

        let needs_interior = center.v.iter().zip(&c).any(|(v, c)| v - c < eps);
        if needs_interior && !interior.computed() {
            let cert = interior.get()?;
            if cert.t_star <= eps {
                eps = 0.5 * cert.t_star;
                flags.epsilon_shrunk = true;
            }
        }
        let cert = if interior.computed() { Some(interior.get()?.clone()) } else { None };
        let point = choose_cut_point(
            &center.v,
            &center.x,
            &best_v,
            &best_x,
            &CutPointContext {
                c: &c,
                eta: center.eta,
                epsilon: eps,
                halvings_max: config.alpha_halvings_max,
                interior: cert.as_ref().map(|c| (c.v_bar.as_slice(), &c.x_bar)),
            },
        )?;
        record.cut_halvings = point.halvings;
        record.kelley_fallback = point.fallback;
        sink(&record);
        records.push(record);

        let v_point = utilities(instance, &point.x)?;
        if let Ok(f) = objective_with(&c, &v_point) {
            if f > f_lower {
                f_lower = f;
                best_x = point.x.clone();
                best_v = v_point;
            }
        }
        let cut = make_cut_with(&point.v, &c, theta)?;
        let step = iteration + 1;
        if f_lower > f_row {
            f_row = f_lower;
            sol = ctx
                .add_row(master.lower_bound_row(f_lower))
                .map_err(|source| CcpError::Lp { iteration: step, source })?;
            if sol.status != LpStatus::Optimal {
                continue;
            }
        }
        sol = ctx
            .add_row(master.cut_row(&cut))
            .map_err(|source| CcpError::Lp { iteration: step, source })?;
        cuts.push(cut);
    }

    let objective = objective_with(&c, &best_v)?;
    Ok(Some(CcpOutcome {
        result: SolveResult {
            allocation: best_x,
            v: best_v,
            objective,
            gap,
            iterations: iteration,
            wall_time: started.elapsed().as_secs_f64(),
            termination,
        },
        records,
        cuts,
        theta,
        flags,
    }))
}
