//! Seeded random instance families.
//!
//! Every draw comes from a ChaCha8 stream whose 256-bit key is expanded from
//! `(seed, attempt)` by SplitMix64; each component of an instance (utility
//! matrix, second-side matrix, disagreement point, segments, hyperplanes) reads
//! its own stream id. Integers are drawn by rejection from whole 64-bit words,
//! and a Bernoulli(rho) draw compares the top 53 bits, as a fraction of 2^53,
//! against rho. The exact streams are part of the instance-file contract.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use thiserror::Error;

use crate::model::{
    feasibility_certificate, Hyperplane, LinearInstance, MarketInstance, ModelError, NplcInstance, Segment,
    SplcInstance, TwoSidedInstance,
};

const STREAM_U: u64 = 1;
const STREAM_W: u64 = 2;
const STREAM_C: u64 = 3;
const STREAM_SEGMENTS: u64 = 4;
const STREAM_HYPERPLANES: u64 = 5;

/// Redraws allowed before an infeasible family gives up.
const MAX_ATTEMPTS: u64 = 1000;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("no feasible instance after {0} redraws")]
    Exhausted(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    OneLf,
    OneLad,
    OneSad,
    OneNad,
    TwoLf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::OneLf,
        ModelKind::OneLad,
        ModelKind::OneSad,
        ModelKind::OneNad,
        ModelKind::TwoLf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::OneLf => "1lf",
            ModelKind::OneLad => "1lad",
            ModelKind::OneSad => "1sad",
            ModelKind::OneNad => "1nad",
            ModelKind::TwoLf => "2lf",
        }
    }

    /// Whether the family is parameterized by a segment/hyperplane count.
    pub fn uses_k(self) -> bool {
        matches!(self, ModelKind::OneSad | ModelKind::OneNad)
    }

    /// Model of an existing instance (linear ones split on the disagreement point).
    pub fn of(instance: &MarketInstance) -> ModelKind {
        match instance {
            MarketInstance::Linear(m) if m.c().iter().all(|&c| c == 0.0) => ModelKind::OneLf,
            MarketInstance::Linear(_) => ModelKind::OneLad,
            MarketInstance::TwoSided(_) => ModelKind::TwoLf,
            MarketInstance::Splc(_) => ModelKind::OneSad,
            MarketInstance::Nplc(_) => ModelKind::OneNad,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| GenError::InvalidSpec(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueMode {
    Binary,
    Nonbinary,
}

impl ValueMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueMode::Binary => "binary",
            ValueMode::Nonbinary => "nonbinary",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub model: ModelKind,
    pub n: usize,
    /// Density of the utility matrices (linear families).
    pub rho: f64,
    pub value_mode: ValueMode,
    /// Segments (1SAD) or hyperplanes (1NAD) per agent-good pair or agent.
    pub k: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(model: ModelKind, n: usize, rho: f64, value_mode: ValueMode, k: usize, seed: u64) -> Self {
        GenSpec {
            model,
            n,
            rho,
            value_mode,
            k,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.n == 0 {
            return Err(GenError::InvalidSpec("n must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(GenError::InvalidSpec(format!("density {} outside (0, 1]", self.rho)));
        }
        if self.k == 0 {
            return Err(GenError::InvalidSpec("K must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deterministic draws for one component of one attempt.
pub struct Draws {
    rng: ChaCha8Rng,
}

impl Draws {
    pub fn new(seed: u64, attempt: u64, stream: u64) -> Self {
        let mut sm = SplitMix64::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&sm.next_u64().to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        Draws { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: u64, hi: u64) -> u64 {
        let range = (hi - lo).wrapping_add(1);
        if range == 0 {
            return self.rng.next_u64();
        }
        // largest multiple of `range` representable, so `x % range` is unbiased below it
        let zone = u64::MAX - (u64::MAX % range + 1) % range;
        loop {
            let x = self.rng.next_u64();
            if x <= zone {
                return lo + x % range;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    fn value(&mut self, rho: f64, mode: ValueMode) -> f64 {
        if !self.bernoulli(rho) {
            return 0.0;
        }
        match mode {
            ValueMode::Binary => 1.0,
            ValueMode::Nonbinary => self.int(1, 20) as f64,
        }
    }
}

/// Sparse random matrix before any repair, row-major draws.
pub fn raw_utility_matrix(draws: &mut Draws, n: usize, rho: f64, mode: ValueMode) -> Array2<f64> {
    let mut u = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            u[[i, j]] = draws.value(rho, mode);
        }
    }
    u
}

/// Redraws zero rows, then zero columns, until every one has a positive entry.
fn repair(u: &mut Array2<f64>, draws: &mut Draws, rho: f64, mode: ValueMode, rows: bool, cols: bool) {
    let n = u.nrows();
    if rows {
        for i in 0..n {
            while u.row(i).iter().all(|&v| v == 0.0) {
                for j in 0..n {
                    u[[i, j]] = draws.value(rho, mode);
                }
            }
        }
    }
    if cols {
        for j in 0..n {
            while u.column(j).iter().all(|&v| v == 0.0) {
                for i in 0..n {
                    u[[i, j]] = draws.value(rho, mode);
                }
            }
        }
    }
}

fn utility_matrix(seed: u64, attempt: u64, stream: u64, spec: &GenSpec, rows: bool, cols: bool) -> Array2<f64> {
    let mut draws = Draws::new(seed, attempt, stream);
    let mut u = raw_utility_matrix(&mut draws, spec.n, spec.rho, spec.value_mode);
    repair(&mut u, &mut draws, spec.rho, spec.value_mode, rows, cols);
    u
}

/// `c_i` uniform over `{ubar/3, ubar/4, 0}`.
fn disagreement(draws: &mut Draws, ubar: f64) -> f64 {
    match draws.int(0, 2) {
        0 => ubar / 3.0,
        1 => ubar / 4.0,
        _ => 0.0,
    }
}

/// Whether some agent-good matching gives every agent more than `c`; a cheap
/// sufficient condition for feasibility.
fn integral_feasible(instance: &MarketInstance) -> bool {
    let n = instance.n();
    let c = instance.disagreement();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| instance.matched_value(i, j) > c[i]).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    fn try_row(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].map_or(true, |k| try_row(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    (0..n).all(|i| {
        let mut seen = vec![false; n];
        try_row(i, &adj, &mut seen, &mut owner)
    })
}

fn feasible(instance: &MarketInstance) -> Result<bool, GenError> {
    if integral_feasible(instance) {
        return Ok(true);
    }
    Ok(feasibility_certificate(instance)?.t_star > 0.0)
}

/// Draws attempts `0, 1, ...` until `make` yields a feasible instance.
fn redraw<T: Into<MarketInstance> + Clone>(
    mut make: impl FnMut(u64) -> Result<T, GenError>,
) -> Result<T, GenError> {
    for attempt in 0..MAX_ATTEMPTS {
        let inst = make(attempt)?;
        if feasible(&inst.clone().into())? {
            return Ok(inst);
        }
    }
    Err(GenError::Exhausted(MAX_ATTEMPTS))
}

/// 1LF (`c = 0`) or 1LAD instance.
pub fn gen_linear(spec: &GenSpec) -> Result<LinearInstance, GenError> {
    spec.validate()?;
    let lad = match spec.model {
        ModelKind::OneLf => false,
        ModelKind::OneLad => true,
        m => return Err(GenError::InvalidSpec(format!("gen_linear cannot build {m}"))),
    };
    redraw(|attempt| {
        let u = utility_matrix(spec.seed, attempt, STREAM_U, spec, true, true);
        let c = if lad {
            let ubar = 0.25 * u.iter().fold(0.0f64, |m, &v| m.max(v));
            let mut draws = Draws::new(spec.seed, attempt, STREAM_C);
            (0..spec.n).map(|_| disagreement(&mut draws, ubar)).collect()
        } else {
            vec![0.0; spec.n]
        };
        Ok(LinearInstance::new(u, c)?)
    })
}

pub fn gen_two_sided(spec: &GenSpec) -> Result<TwoSidedInstance, GenError> {
    spec.validate()?;
    if spec.model != ModelKind::TwoLf {
        return Err(GenError::InvalidSpec(format!("gen_two_sided cannot build {}", spec.model)));
    }
    // rows of u and columns of w carry the positivity requirement
    let u = utility_matrix(spec.seed, 0, STREAM_U, spec, true, true);
    let w = utility_matrix(spec.seed, 0, STREAM_W, spec, true, true);
    Ok(TwoSidedInstance::new(u, w)?)
}

pub fn gen_splc(spec: &GenSpec) -> Result<SplcInstance, GenError> {
    spec.validate()?;
    if spec.model != ModelKind::OneSad {
        return Err(GenError::InvalidSpec(format!("gen_splc cannot build {}", spec.model)));
    }
    let (n, k) = (spec.n, spec.k);
    redraw(|attempt| {
        let mut draws = Draws::new(spec.seed, attempt, STREAM_SEGMENTS);
        let mut segments = Vec::with_capacity(n * n);
        let mut max_slope = 0.0f64;
        for _ in 0..n * n {
            let sigma: Vec<f64> = (0..k).map(|_| draws.int(1, 20) as f64).collect();
            let mut slopes = vec![0.0; k];
            let mut acc = 0.0;
            for l in (0..k).rev() {
                acc += sigma[l];
                slopes[l] = acc;
            }
            let v_tilde = draws.int(1, 20) as f64;
            let area: f64 = slopes.iter().sum::<f64>() / k as f64;
            let scale = 0.5 * v_tilde / area;
            let segs: Vec<Segment> = slopes
                .iter()
                .map(|s| Segment {
                    slope: s * scale,
                    length: 1.0 / k as f64,
                })
                .collect();
            max_slope = max_slope.max(segs[0].slope);
            segments.push(segs);
        }
        let ubar = 0.25 * max_slope;
        let mut cd = Draws::new(spec.seed, attempt, STREAM_C);
        let c = (0..n).map(|_| disagreement(&mut cd, ubar)).collect();
        Ok(SplcInstance::new(n, segments, c)?)
    })
}

pub fn gen_nplc(spec: &GenSpec) -> Result<NplcInstance, GenError> {
    spec.validate()?;
    if spec.model != ModelKind::OneNad {
        return Err(GenError::InvalidSpec(format!("gen_nplc cannot build {}", spec.model)));
    }
    let (n, k) = (spec.n, spec.k);
    redraw(|attempt| {
        let mut draws = Draws::new(spec.seed, attempt, STREAM_HYPERPLANES);
        let mut all = Vec::with_capacity(n);
        for _ in 0..n {
            let mut hs: Vec<Hyperplane> = (0..k)
                .map(|_| {
                    let a = (0..n).map(|_| 2.0 / 3.0 * draws.int(0, 20) as f64).collect();
                    let b = draws.int(0, 20) as f64 / 3.0;
                    Hyperplane { a, b }
                })
                .collect();
            if hs.iter().all(|h| h.b > 0.0) {
                let pick = draws.int(0, k as u64 - 1) as usize;
                hs[pick].b = 0.0;
            }
            all.push(hs);
        }
        let mut cd = Draws::new(spec.seed, attempt, STREAM_C);
        let c = all
            .iter()
            .map(|hs| {
                let ubar = 0.25
                    * hs.iter()
                        .map(|h| h.a.iter().sum::<f64>() / n as f64 + h.b)
                        .fold(0.0f64, f64::max);
                disagreement(&mut cd, ubar)
            })
            .collect();
        Ok(NplcInstance::new(n, all, c)?)
    })
}

/// Any family as a [`MarketInstance`].
pub fn generate(spec: &GenSpec) -> Result<MarketInstance, GenError> {
    Ok(match spec.model {
        ModelKind::OneLf | ModelKind::OneLad => gen_linear(spec)?.into(),
        ModelKind::TwoLf => gen_two_sided(spec)?.into(),
        ModelKind::OneSad => gen_splc(spec)?.into(),
        ModelKind::OneNad => gen_nplc(spec)?.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_before_repair() {
        for (rho, seed) in [(0.05, 1), (1.0 / 3.0, 2), (2.0 / 3.0, 3)] {
            let mut d = Draws::new(seed, 0, STREAM_U);
            let u = raw_utility_matrix(&mut d, 150, rho, ValueMode::Nonbinary);
            let density = u.iter().filter(|&&v| v > 0.0).count() as f64 / (150.0 * 150.0);
            assert!((density - rho).abs() <= 0.05, "rho {rho}: {density}");
            assert!(u.iter().all(|&v| v == 0.0 || (v.fract() == 0.0 && (1.0..=20.0).contains(&v))));
        }
    }

    #[test]
    fn integer_draws_cover_range_uniformly() {
        let mut d = Draws::new(9, 0, 0);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[d.int(0, 2) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (9_500..10_500).contains(&c)), "{counts:?}");
        let mut d = Draws::new(9, 0, 0);
        assert!((0..1000).all(|_| d.int(5, 5) == 5));
        assert!((0..1000).map(|_| d.int(0, u64::MAX)).any(|x| x > u64::MAX / 2));
    }

    #[test]
    fn streams_and_attempts_differ() {
        let a = Draws::new(1, 0, 1).next_u64();
        assert_ne!(a, Draws::new(1, 0, 2).next_u64());
        assert_ne!(a, Draws::new(1, 1, 1).next_u64());
        assert_ne!(a, Draws::new(2, 0, 1).next_u64());
        assert_eq!(a, Draws::new(1, 0, 1).next_u64());
    }
}
