//! Self-checks on small random markets: Nash axioms, agreement with brute
//! force, and validity of the cutting planes.

use nash_match::ccp::{ccp_solve, CcpConfig};
use nash_match::fw::{fw_solve, FwConfig};
use nash_match::gen::{generate, GenSpec, ModelKind, ValueMode};
use nash_match::model::{brute_force_solve, objective, pareto_check, utilities, Allocation, MarketInstance};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CliError, Suite, VerifyArgs};

const LINEAR: [ModelKind; 3] = [ModelKind::OneLf, ModelKind::OneLad, ModelKind::TwoLf];
const ONE_SIDED: [ModelKind; 4] = [ModelKind::OneLf, ModelKind::OneLad, ModelKind::OneSad, ModelKind::OneNad];

const GRID: f64 = 0.02;

pub struct Report {
    pub suite: &'static str,
    pub checks: usize,
    pub failures: Vec<String>,
    pub summary: String,
}

impl Report {
    fn new(suite: &'static str) -> Self {
        Report {
            suite,
            checks: 0,
            failures: Vec::new(),
            summary: String::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn market(model: ModelKind, n: usize, seed: u64) -> Result<MarketInstance, CliError> {
    Ok(generate(&GenSpec::new(model, n, 0.5, ValueMode::Nonbinary, 3, seed))?)
}

fn precise() -> CcpConfig {
    CcpConfig {
        gap_tol: 1e-10,
        ..CcpConfig::default()
    }
}

pub fn oracle(seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("oracle");
    let tol = f64::max(1e-4, 2.0 * GRID);
    let mut worst = 0.0f64;
    let mut k = 0;
    for model in LINEAR {
        for n in [2, 3] {
            for _ in 0..3 {
                let s = seed.wrapping_add(k);
                k += 1;
                let m = market(model, n, s)?;
                let f_star = brute_force_solve(&m, GRID)?.f_star;
                let ccp = ccp_solve(&m, &CcpConfig::default())?.result.objective;
                let fw = fw_solve(&m, &FwConfig::default())?.result.objective;
                for (engine, f) in [("ccp", ccp), ("fw", fw)] {
                    let d = (f - f_star).abs();
                    worst = worst.max(d);
                    r.check(d <= tol, || format!("{model} n={n} seed={s}: {engine} {f} vs brute force {f_star}"));
                }
            }
        }
    }
    r.summary = format!("{k} markets, worst deviation {worst:.2e} <= {tol}");
    Ok(r)
}

fn pick(rng: &mut ChaCha8Rng, k: usize) -> usize {
    (rng.next_u64() % k as u64) as usize
}

pub fn axioms(seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("axioms");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = 12u64;
    for k in 0..count {
        let model = ONE_SIDED[k as usize % ONE_SIDED.len()];
        let n = 2 + (k as usize * 3) % 5;
        let s = seed.wrapping_add(k);
        let label = format!("{model} n={n} seed={s}");
        let m = market(model, n, s)?;
        let base = ccp_solve(&m, &precise())?.result;

        let lambda: Vec<f64> = (0..n).map(|_| [0.1, 3.0, 10.0][pick(&mut rng, 3)]).collect();
        let scaled = ccp_solve(&m.scale_agents(&lambda)?, &precise())?.result;
        let shift: f64 = lambda.iter().map(|l| l.ln()).sum();
        let d = scaled.objective - base.objective - shift;
        r.check(d.abs() <= 1e-5, || format!("{label}: scaling moved the objective by {d:.2e} beyond the shift"));
        let back = objective(&m, &utilities(&m, &scaled.allocation)?)?;
        let d = back - base.objective;
        r.check(d.abs() <= 1e-5, || format!("{label}: scaled optimum is {d:.2e} off in the original market"));

        let mut order: Vec<usize> = (0..n).collect();
        let keys: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
        order.sort_by_key(|&i| keys[i]);
        let permuted = ccp_solve(&m.permute_agents(&order)?, &precise())?.result;
        let d = permuted.objective - base.objective;
        r.check(d.abs() <= 1e-8, || format!("{label}: permutation changed the objective by {d:.2e}"));

        r.check(pareto_check(&m, &base.v)?, || format!("{label}: optimum is not Pareto optimal"));
    }
    r.summary = format!("{count} markets: scaling, permutation and Pareto optimality");
    Ok(r)
}

pub fn cuts(seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("cuts");
    let mut worst = f64::INFINITY;
    let count = 12u64;
    for k in 0..count {
        let model = LINEAR[k as usize % LINEAR.len()];
        let n = 1 + (k as usize / 3) % 4;
        let s = seed.wrapping_add(k);
        let m = market(model, n, s)?;
        let bf = brute_force_solve(&m, GRID)?;
        let v = utilities(&m, &Allocation::Matrix(bf.x_star))?;
        let f = objective(&m, &v)?;
        for cut in &ccp_solve(&m, &CcpConfig::default())?.cuts {
            let slack = cut.bound(&v) - f;
            worst = worst.min(slack);
            r.check(slack >= -1e-7, || format!("{model} n={n} seed={s}: cut slack {slack:.2e}"));
        }
    }
    r.summary = format!("{} cuts on {count} markets, smallest slack {worst:.2e}", r.checks);
    Ok(r)
}

pub fn run(a: &VerifyArgs) -> Result<i32, CliError> {
    let suites: Vec<fn(u64) -> Result<Report, CliError>> = match a.suite {
        Suite::Axioms => vec![axioms],
        Suite::Oracle => vec![oracle],
        Suite::Cuts => vec![cuts],
        Suite::All => vec![axioms, oracle, cuts],
    };
    let mut all = true;
    for suite in suites {
        let report = suite(a.seed)?;
        all &= report.passed();
        if report.passed() {
            println!("PASS {}: {}", report.suite, report.summary);
        } else {
            println!(
                "FAIL {}: {} of {} checks failed",
                report.suite,
                report.failures.len(),
                report.checks
            );
            for f in &report.failures {
                println!("  {f}");
            }
        }
    }
    Ok(if all { 0 } else { 1 })
}
