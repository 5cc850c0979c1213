//! Market instances, allocations, and the Nash bargaining objective.

use ndarray::Array2;
use nash_match_lp::{LinearProgram, LpError, LpSolution, LpStatus, Row};
use thiserror::Error;

use crate::assignment::{bvn_decompose, Permutation};
use crate::search::maximize_concave;

/// Default feasibility tolerance for allocations.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("agent {agent} has utility {value} not above its disagreement point {disagreement}")]
    Domain {
        agent: usize,
        value: f64,
        disagreement: f64,
    },
    #[error("operation not supported for {0} instances")]
    Unsupported(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("brute force is limited to n <= 4, got n = {0}")]
    TooLarge(usize),
    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),
}

fn check_matrix(name: &str, m: &Array2<f64>, n: usize) -> Result<(), ModelError> {
    if m.dim() != (n, n) {
        return Err(ModelError::InvalidInstance(format!(
            "{name} is {:?}, expected {n}x{n}",
            m.dim()
        )));
    }
    if let Some(((i, j), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(ModelError::InvalidInstance(format!(
            "{name}[{i},{j}] = {v} is not a finite non-negative number"
        )));
    }
    Ok(())
}

fn check_disagreement(c: &[f64], n: usize) -> Result<(), ModelError> {
    if c.len() != n {
        return Err(ModelError::InvalidInstance(format!(
            "disagreement vector has length {}, expected {n}",
            c.len()
        )));
    }
    if let Some((i, v)) = c.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(ModelError::InvalidInstance(format!(
            "c[{i}] = {v} is not a finite non-negative number"
        )));
    }
    Ok(())
}

fn check_rows_positive(name: &str, m: &Array2<f64>) -> Result<(), ModelError> {
    for (i, row) in m.rows().into_iter().enumerate() {
        if !row.iter().any(|&v| v > 0.0) {
            return Err(ModelError::InvalidInstance(format!("row {i} of {name} has no positive entry")));
        }
    }
    Ok(())
}

fn check_cols_positive(name: &str, m: &Array2<f64>) -> Result<(), ModelError> {
    for (j, col) in m.columns().into_iter().enumerate() {
        if !col.iter().any(|&v| v > 0.0) {
            return Err(ModelError::InvalidInstance(format!(
                "column {j} of {name} has no positive entry"
            )));
        }
    }
    Ok(())
}

/// Linear utilities with a disagreement point (1LF when `c = 0`, else 1LAD).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInstance {
    u: Array2<f64>,
    c: Vec<f64>,
}

impl LinearInstance {
    pub fn new(u: Array2<f64>, c: Vec<f64>) -> Result<Self, ModelError> {
        let n = u.nrows();
        if n == 0 {
            return Err(ModelError::InvalidInstance("n must be at least 1".into()));
        }
        check_matrix("u", &u, n)?;
        check_disagreement(&c, n)?;
        check_rows_positive("u", &u)?;
        check_cols_positive("u", &u)?;
        Ok(LinearInstance { u, c })
    }

    /// Instance with a zero disagreement point.
    pub fn fisher(u: Array2<f64>) -> Result<Self, ModelError> {
        let n = u.nrows();
        Self::new(u, vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
}

/// Two-sided linear market: workers value firms by `u`, firms value workers by `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSidedInstance {
    u: Array2<f64>,
    w: Array2<f64>,
}

impl TwoSidedInstance {
    pub fn new(u: Array2<f64>, w: Array2<f64>) -> Result<Self, ModelError> {
        let n = u.nrows();
        if n == 0 {
            return Err(ModelError::InvalidInstance("n must be at least 1".into()));
        }
        check_matrix("u", &u, n)?;
        check_matrix("w", &w, n)?;
        check_rows_positive("u", &u)?;
        check_cols_positive("w", &w)?;
        Ok(TwoSidedInstance { u, w })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub slope: f64,
    pub length: f64,
}

/// Separable piecewise-linear concave utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SplcInstance {
    n: usize,
    segments: Vec<Vec<Segment>>,
    c: Vec<f64>,
}

impl SplcInstance {
    /// `segments[i * n + j]` lists the pieces of agent `i`'s utility for good `j`
    /// in order of decreasing slope.
    pub fn new(n: usize, segments: Vec<Vec<Segment>>, c: Vec<f64>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::InvalidInstance("n must be at least 1".into()));
        }
        if segments.len() != n * n {
            return Err(ModelError::InvalidInstance(format!(
                "expected {} segment lists, got {}",
                n * n,
                segments.len()
            )));
        }
        check_disagreement(&c, n)?;
        let mut row_pos = vec![false; n];
        let mut col_pos = vec![false; n];
        for (idx, segs) in segments.iter().enumerate() {
            let (i, j) = (idx / n, idx % n);
            if segs.is_empty() {
                return Err(ModelError::InvalidInstance(format!("pair ({i},{j}) has no segments")));
            }
            let mut total = 0.0;
            for (k, s) in segs.iter().enumerate() {
                if !(s.slope.is_finite() && s.slope >= 0.0) {
                    return Err(ModelError::InvalidInstance(format!(
                        "segment ({i},{j},{k}) has slope {}",
                        s.slope
                    )));
                }
                if !(s.length > 0.0 && s.length <= 1.0) {
                    return Err(ModelError::InvalidInstance(format!(
                        "segment ({i},{j},{k}) has length {} outside (0, 1]",
                        s.length
                    )));
                }
                if k > 0 && s.slope >= segs[k - 1].slope {
                    return Err(ModelError::InvalidInstance(format!(
                        "slopes of pair ({i},{j}) are not strictly decreasing"
                    )));
                }
                total += s.length;
            }
            if total < 1.0 - 1e-12 {
                return Err(ModelError::InvalidInstance(format!(
                    "segment lengths of pair ({i},{j}) sum to {total} < 1"
                )));
            }
            if segs[0].slope > 0.0 {
                row_pos[i] = true;
                col_pos[j] = true;
            }
        }
        if let Some(i) = row_pos.iter().position(|p| !p) {
            return Err(ModelError::InvalidInstance(format!("agent {i} values no good")));
        }
        if let Some(j) = col_pos.iter().position(|p| !p) {
            return Err(ModelError::InvalidInstance(format!("good {j} is valued by no agent")));
        }
        Ok(SplcInstance { n, segments, c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn segments(&self, i: usize, j: usize) -> &[Segment] {
        &self.segments[i * self.n + j]
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Utility agent `i` draws from `amount` units of good `j`, filling
    /// segments in order.
    pub fn value(&self, i: usize, j: usize, amount: f64) -> f64 {
        let mut left = amount;
        let mut total = 0.0;
        for s in self.segments(i, j) {
            let take = left.min(s.length);
            if take <= 0.0 {
                break;
            }
            total += s.slope * take;
            left -= take;
        }
        total
    }

    /// Segment-level allocation with `x[i][j]` units of each good poured into
    /// the segments in order of decreasing slope.
    pub fn fill_segments(&self, x: &Array2<f64>) -> Allocation {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut left = x[[i, j]];
                let parts = self
                    .segments(i, j)
                    .iter()
                    .map(|s| {
                        let take = left.clamp(0.0, s.length);
                        left -= take;
                        take
                    })
                    .collect();
                out.push(parts);
            }
        }
        Allocation::Segments { n, x: out }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Non-separable piecewise-linear concave utilities: `v_i = min_k (a_i^k . x_i + b_i^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NplcInstance {
    n: usize,
    hyperplanes: Vec<Vec<Hyperplane>>,
    c: Vec<f64>,
}

impl NplcInstance {
    pub fn new(n: usize, hyperplanes: Vec<Vec<Hyperplane>>, c: Vec<f64>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::InvalidInstance("n must be at least 1".into()));
        }
        if hyperplanes.len() != n {
            return Err(ModelError::InvalidInstance(format!(
                "expected hyperplanes for {n} agents, got {}",
                hyperplanes.len()
            )));
        }
        check_disagreement(&c, n)?;
        for (i, hs) in hyperplanes.iter().enumerate() {
            if hs.is_empty() {
                return Err(ModelError::InvalidInstance(format!("agent {i} has no hyperplanes")));
            }
            for (k, h) in hs.iter().enumerate() {
                if h.a.len() != n {
                    return Err(ModelError::InvalidInstance(format!(
                        "hyperplane ({i},{k}) has {} coefficients, expected {n}",
                        h.a.len()
                    )));
                }
                if !h.a.iter().chain(std::iter::once(&h.b)).all(|v| v.is_finite() && *v >= 0.0) {
                    return Err(ModelError::InvalidInstance(format!(
                        "hyperplane ({i},{k}) has a negative or non-finite coefficient"
                    )));
                }
            }
            if !hs.iter().any(|h| h.b == 0.0) {
                return Err(ModelError::InvalidInstance(format!(
                    "agent {i} has no hyperplane with zero intercept"
                )));
            }
        }
        Ok(NplcInstance { n, hyperplanes, c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hyperplanes(&self, i: usize) -> &[Hyperplane] {
        &self.hyperplanes[i]
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
}

/// Leontief utilities `min_{j in S_i} x_ij / a_ij` as hyperplanes. `sets[i]`
/// lists `(j, a_ij)` for agent `i`.
pub fn leontief_to_nplc(sets: &[Vec<(usize, f64)>], c: Vec<f64>) -> Result<NplcInstance, ModelError> {
    let n = sets.len();
    let mut all = Vec::with_capacity(n);
    for (i, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(ModelError::InvalidArgument(format!("agent {i} has an empty set")));
        }
        let mut hs = Vec::with_capacity(set.len());
        for &(j, a) in set {
            if j >= n {
                return Err(ModelError::InvalidArgument(format!("good {j} out of range for agent {i}")));
            }
            if !(a > 0.0 && a.is_finite()) {
                return Err(ModelError::InvalidArgument(format!(
                    "a[{i},{j}] = {a} must be positive"
                )));
            }
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0 / a;
            hs.push(Hyperplane { a: coeffs, b: 0.0 });
        }
        all.push(hs);
    }
    NplcInstance::new(n, all, c)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarketInstance {
    Linear(LinearInstance),
    TwoSided(TwoSidedInstance),
    Splc(SplcInstance),
    Nplc(NplcInstance),
}

impl From<LinearInstance> for MarketInstance {
    fn from(v: LinearInstance) -> Self {
        MarketInstance::Linear(v)
    }
}

impl From<TwoSidedInstance> for MarketInstance {
    fn from(v: TwoSidedInstance) -> Self {
        MarketInstance::TwoSided(v)
    }
}

impl From<SplcInstance> for MarketInstance {
    fn from(v: SplcInstance) -> Self {
        MarketInstance::Splc(v)
    }
}

impl From<NplcInstance> for MarketInstance {
    fn from(v: NplcInstance) -> Self {
        MarketInstance::Nplc(v)
    }
}

impl MarketInstance {
    pub fn n(&self) -> usize {
        match self {
            MarketInstance::Linear(m) => m.n(),
            MarketInstance::TwoSided(m) => m.n(),
            MarketInstance::Splc(m) => m.n(),
            MarketInstance::Nplc(m) => m.n(),
        }
    }

    /// Length of the utility vector: `2n` for two-sided markets, else `n`.
    pub fn dim(&self) -> usize {
        match self {
            MarketInstance::TwoSided(m) => 2 * m.n(),
            _ => self.n(),
        }
    }

    /// Disagreement point, padded to `dim()`.
    pub fn disagreement(&self) -> Vec<f64> {
        match self {
            MarketInstance::Linear(m) => m.c.clone(),
            MarketInstance::TwoSided(m) => vec![0.0; 2 * m.n()],
            MarketInstance::Splc(m) => m.c.clone(),
            MarketInstance::Nplc(m) => m.c.clone(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MarketInstance::Linear(_) => "linear",
            MarketInstance::TwoSided(_) => "two-sided",
            MarketInstance::Splc(_) => "SPLC",
            MarketInstance::Nplc(_) => "NPLC",
        }
    }

    /// Utility agent (or firm, for indices `>= n` of a two-sided market)
    /// `agent` receives when matched integrally to `partner`.
    pub fn matched_value(&self, agent: usize, partner: usize) -> f64 {
        match self {
            MarketInstance::Linear(m) => m.u[[agent, partner]],
            MarketInstance::TwoSided(m) => {
                let n = m.n();
                if agent < n {
                    m.u[[agent, partner]]
                } else {
                    m.w[[partner, agent - n]]
                }
            }
            MarketInstance::Splc(m) => m.value(agent, partner, 1.0),
            MarketInstance::Nplc(m) => m
                .hyperplanes(agent)
                .iter()
                .map(|h| h.a[partner] + h.b)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Market with agent `i`'s utility and disagreement point multiplied by `lambda[i]`.
    pub fn scale_agents(&self, lambda: &[f64]) -> Result<MarketInstance, ModelError> {
        let n = self.n();
        if lambda.len() != n {
            return Err(ModelError::Dimension(format!("{} factors for {n} agents", lambda.len())));
        }
        if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(ModelError::InvalidArgument("scale factors must be positive".into()));
        }
        let c: Vec<f64> = self.disagreement().iter().zip(lambda).map(|(c, l)| c * l).collect();
        Ok(match self {
            MarketInstance::Linear(m) => {
                LinearInstance::new(Array2::from_shape_fn((n, n), |(i, j)| m.u[[i, j]] * lambda[i]), c)?.into()
            }
            MarketInstance::Splc(m) => {
                let segs = (0..n * n)
                    .map(|p| {
                        m.segments(p / n, p % n)
                            .iter()
                            .map(|s| Segment {
                                slope: s.slope * lambda[p / n],
                                length: s.length,
                            })
                            .collect()
                    })
                    .collect();
                SplcInstance::new(n, segs, c)?.into()
            }
            MarketInstance::Nplc(m) => {
                let hs = (0..n)
                    .map(|i| {
                        m.hyperplanes(i)
                            .iter()
                            .map(|h| Hyperplane {
                                a: h.a.iter().map(|a| a * lambda[i]).collect(),
                                b: h.b * lambda[i],
                            })
                            .collect()
                    })
                    .collect();
                NplcInstance::new(n, hs, c)?.into()
            }
            MarketInstance::TwoSided(_) => return Err(ModelError::Unsupported(self.kind_name())),
        })
    }

    /// Market in which agent `i` takes the place of agent `order[i]`.
    pub fn permute_agents(&self, order: &[usize]) -> Result<MarketInstance, ModelError> {
        let n = self.n();
        let mut seen = vec![false; n];
        if order.len() != n || !order.iter().all(|&k| k < n && !std::mem::replace(&mut seen[k], true)) {
            return Err(ModelError::InvalidArgument(format!("{order:?} is not a permutation of {n} agents")));
        }
        let c: Vec<f64> = order.iter().map(|&k| self.disagreement()[k]).collect();
        Ok(match self {
            MarketInstance::Linear(m) => {
                LinearInstance::new(Array2::from_shape_fn((n, n), |(i, j)| m.u[[order[i], j]]), c)?.into()
            }
            MarketInstance::Splc(m) => {
                let segs = (0..n * n).map(|p| m.segments(order[p / n], p % n).to_vec()).collect();
                SplcInstance::new(n, segs, c)?.into()
            }
            MarketInstance::Nplc(m) => {
                NplcInstance::new(n, order.iter().map(|&k| m.hyperplanes(k).to_vec()).collect(), c)?.into()
            }
            MarketInstance::TwoSided(_) => return Err(ModelError::Unsupported(self.kind_name())),
        })
    }
}

/// A fractional perfect matching.
#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    Matrix(Array2<f64>),
    /// `x[i * n + j][k]` is the amount of segment `k` of pair `(i, j)`.
    Segments { n: usize, x: Vec<Vec<f64>> },
}

impl Allocation {
    pub fn n(&self) -> usize {
        match self {
            Allocation::Matrix(x) => x.nrows(),
            Allocation::Segments { n, .. } => *n,
        }
    }

    /// Entry-level matrix; segment allocations are summed over `k`.
    pub fn aggregate(&self) -> Array2<f64> {
        match self {
            Allocation::Matrix(x) => x.clone(),
            Allocation::Segments { n, x } => {
                Array2::from_shape_fn((*n, *n), |(i, j)| x[i * n + j].iter().sum())
            }
        }
    }

    pub fn as_matrix(&self) -> Option<&Array2<f64>> {
        match self {
            Allocation::Matrix(x) => Some(x),
            Allocation::Segments { .. } => None,
        }
    }

    /// The permutation matrix of `perm` in the shape `instance` expects.
    pub fn from_permutation(instance: &MarketInstance, perm: &Permutation) -> Allocation {
        let m = perm.to_matrix();
        match instance {
            MarketInstance::Splc(s) => s.fill_segments(&m),
            _ => Allocation::Matrix(m),
        }
    }

    /// `(1 - t) * self + t * other`; both must have the same shape.
    pub fn blend(&self, other: &Allocation, t: f64) -> Allocation {
        match (self, other) {
            (Allocation::Matrix(a), Allocation::Matrix(b)) => Allocation::Matrix(a * (1.0 - t) + b * t),
            (Allocation::Segments { n, x: a }, Allocation::Segments { x: b, .. }) => Allocation::Segments {
                n: *n,
                x: a
                    .iter()
                    .zip(b)
                    .map(|(p, q)| p.iter().zip(q).map(|(s, r)| (1.0 - t) * s + t * r).collect())
                    .collect(),
            },
            _ => panic!("blend of allocations with different shapes"),
        }
    }
}

fn shape_error(instance: &MarketInstance, x: &Allocation) -> Option<ModelError> {
    let n = instance.n();
    let ok = match (instance, x) {
        (MarketInstance::Splc(s), Allocation::Segments { n: m, x }) => {
            *m == n && x.len() == n * n && x.iter().enumerate().all(|(p, v)| v.len() == s.segments[p].len())
        }
        (MarketInstance::Splc(_), _) => false,
        (_, Allocation::Matrix(x)) => x.dim() == (n, n),
        _ => false,
    };
    if ok {
        None
    } else {
        Some(ModelError::Dimension(format!(
            "allocation does not have the shape of an n = {n} {} instance",
            instance.kind_name()
        )))
    }
}

/// Utility vector at `x`; two-sided markets return agents then firms.
pub fn utilities(instance: &MarketInstance, x: &Allocation) -> Result<Vec<f64>, ModelError> {
    if let Some(e) = shape_error(instance, x) {
        return Err(e);
    }
    let n = instance.n();
    Ok(match (instance, x) {
        (MarketInstance::Linear(m), Allocation::Matrix(x)) => {
            (0..n).map(|i| m.u.row(i).dot(&x.row(i))).collect()
        }
        (MarketInstance::TwoSided(m), Allocation::Matrix(x)) => {
            let mut v: Vec<f64> = (0..n).map(|i| m.u.row(i).dot(&x.row(i))).collect();
            v.extend((0..n).map(|j| m.w.column(j).dot(&x.column(j))));
            v
        }
        (MarketInstance::Splc(m), Allocation::Segments { x, .. }) => (0..n)
            .map(|i| {
                let mut total = 0.0;
                for j in 0..n {
                    for (s, amt) in m.segments(i, j).iter().zip(&x[i * n + j]) {
                        total += s.slope * amt;
                    }
                }
                total
            })
            .collect(),
        (MarketInstance::Nplc(m), Allocation::Matrix(x)) => (0..n)
            .map(|i| {
                m.hyperplanes(i)
                    .iter()
                    .map(|h| h.b + h.a.iter().zip(x.row(i)).map(|(a, xv)| a * xv).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect(),
        _ => unreachable!(),
    })
}

/// `sum log(v_i - c_i)` in nats.
pub fn objective(instance: &MarketInstance, v: &[f64]) -> Result<f64, ModelError> {
    let c = instance.disagreement();
    objective_with(&c, v)
}

pub(crate) fn objective_with(c: &[f64], v: &[f64]) -> Result<f64, ModelError> {
    if v.len() != c.len() {
        return Err(ModelError::Dimension(format!(
            "utility vector has length {}, expected {}",
            v.len(),
            c.len()
        )));
    }
    let mut f = 0.0;
    for (i, (&vi, &ci)) in v.iter().zip(c).enumerate() {
        let s = vi - ci;
        if !(s > 0.0) {
            return Err(ModelError::Domain {
                agent: i,
                value: vi,
                disagreement: ci,
            });
        }
        f += s.ln();
    }
    Ok(f)
}

/// Partial derivatives of the objective with respect to `x_ij` (linear and
/// two-sided markets only).
pub fn gradient(instance: &MarketInstance, x: &Allocation) -> Result<Array2<f64>, ModelError> {
    match instance {
        MarketInstance::Splc(_) | MarketInstance::Nplc(_) => return Err(ModelError::Unsupported(instance.kind_name())),
        _ => {}
    }
    let v = utilities(instance, x)?;
    gradient_at(instance, &v)
}

pub(crate) fn gradient_at(instance: &MarketInstance, v: &[f64]) -> Result<Array2<f64>, ModelError> {
    let c = instance.disagreement();
    let inv: Vec<f64> = v
        .iter()
        .zip(&c)
        .enumerate()
        .map(|(i, (&vi, &ci))| {
            if vi - ci > 0.0 {
                Ok(1.0 / (vi - ci))
            } else {
                Err(ModelError::Domain {
                    agent: i,
                    value: vi,
                    disagreement: ci,
                })
            }
        })
        .collect::<Result<_, _>>()?;
    match instance {
        MarketInstance::Linear(m) => {
            let n = m.n();
            Ok(Array2::from_shape_fn((n, n), |(i, j)| m.u[[i, j]] * inv[i]))
        }
        MarketInstance::TwoSided(m) => {
            let n = m.n();
            Ok(Array2::from_shape_fn((n, n), |(i, j)| {
                m.u[[i, j]] * inv[i] + m.w[[i, j]] * inv[n + j]
            }))
        }
        _ => Err(ModelError::Unsupported(instance.kind_name())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    RowSum { row: usize, sum: f64 },
    ColumnSum { column: usize, sum: f64 },
    Negative { row: usize, column: usize, segment: Option<usize>, value: f64 },
    SegmentBound { row: usize, column: usize, segment: usize, value: f64, length: f64 },
}

/// Row-sum, column-sum and sign violations of a square matrix.
pub fn doubly_stochastic_violations(x: &Array2<f64>, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    if x.nrows() != x.ncols() {
        out.push(Violation::Shape(format!("matrix is {:?}", x.dim())));
        return out;
    }
    for (i, row) in x.rows().into_iter().enumerate() {
        let sum = row.sum();
        if !((sum - 1.0).abs() <= tol) {
            out.push(Violation::RowSum { row: i, sum });
        }
    }
    for (j, col) in x.columns().into_iter().enumerate() {
        let sum = col.sum();
        if !((sum - 1.0).abs() <= tol) {
            out.push(Violation::ColumnSum { column: j, sum });
        }
    }
    for ((i, j), &v) in x.indexed_iter() {
        if !(v >= -tol) {
            out.push(Violation::Negative {
                row: i,
                column: j,
                segment: None,
                value: v,
            });
        }
    }
    out
}

/// Empty iff `x` is a fractional perfect matching for `instance` within `tol`.
pub fn validate_allocation(instance: &MarketInstance, x: &Allocation, tol: f64) -> Vec<Violation> {
    if let Some(e) = shape_error(instance, x) {
        return vec![Violation::Shape(e.to_string())];
    }
    match (instance, x) {
        (MarketInstance::Splc(s), Allocation::Segments { n, x: segs }) => {
            let n = *n;
            let mut out: Vec<Violation> = doubly_stochastic_violations(&x.aggregate(), tol)
                .into_iter()
                .filter(|v| !matches!(v, Violation::Negative { .. }))
                .collect();
            for i in 0..n {
                for j in 0..n {
                    for (k, (&amt, seg)) in segs[i * n + j].iter().zip(s.segments(i, j)).enumerate() {
                        if !(amt >= -tol) {
                            out.push(Violation::Negative {
                                row: i,
                                column: j,
                                segment: Some(k),
                                value: amt,
                            });
                        }
                        if amt > seg.length + tol {
                            out.push(Violation::SegmentBound {
                                row: i,
                                column: j,
                                segment: k,
                                value: amt,
                                length: seg.length,
                            });
                        }
                    }
                }
            }
            out
        }
        (_, Allocation::Matrix(m)) => doubly_stochastic_violations(m, tol),
        _ => unreachable!(),
    }
}

/// Variables of the feasible set `S` embedded in a linear program.
pub(crate) struct FeasibilityBlock {
    n: usize,
    /// `(i, j, k, var)` for every allocation variable.
    pub x_vars: Vec<(usize, usize, usize, usize)>,
    pub v_start: usize,
    pub dim: usize,
    segment_counts: Option<Vec<usize>>,
}

impl FeasibilityBlock {
    /// Adds allocation and utility variables and the rows tying them together.
    /// Pairs with `keep(i, j) == false` are fixed at zero by omission.
    pub fn add(lp: &mut LinearProgram, instance: &MarketInstance, keep: &dyn Fn(usize, usize) -> bool) -> Self {
        let n = instance.n();
        let dim = instance.dim();
        let mut x_vars = Vec::new();
        let mut segment_counts = None;
        match instance {
            MarketInstance::Splc(s) => {
                let mut counts = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let segs = s.segments(i, j);
                        counts.push(segs.len());
                        if !keep(i, j) {
                            continue;
                        }
                        for (k, seg) in segs.iter().enumerate() {
                            let var = lp.add_var(0.0, 0.0, seg.length.min(1.0));
                            x_vars.push((i, j, k, var));
                        }
                    }
                }
                segment_counts = Some(counts);
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        if keep(i, j) {
                            let var = lp.add_var(0.0, 0.0, 1.0);
                            x_vars.push((i, j, 0, var));
                        }
                    }
                }
            }
        }
        let v_start = lp.num_vars();
        for _ in 0..dim {
            lp.add_var(0.0, 0.0, f64::INFINITY);
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 2 * n];
        for &(i, j, _, var) in &x_vars {
            rows[i].push((var, 1.0));
            rows[n + j].push((var, 1.0));
        }
        for coeffs in rows {
            lp.add_row(Row::eq(coeffs, 1.0));
        }
        match instance {
            MarketInstance::Linear(m) => {
                let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(v_start + i, 1.0)]).collect();
                for &(i, j, _, var) in &x_vars {
                    if m.u[[i, j]] != 0.0 {
                        rows[i].push((var, -m.u[[i, j]]));
                    }
                }
                for coeffs in rows {
                    lp.add_row(Row::eq(coeffs, 0.0));
                }
            }
            MarketInstance::TwoSided(m) => {
                let mut rows: Vec<Vec<(usize, f64)>> = (0..2 * n).map(|i| vec![(v_start + i, 1.0)]).collect();
                for &(i, j, _, var) in &x_vars {
                    if m.u[[i, j]] != 0.0 {
                        rows[i].push((var, -m.u[[i, j]]));
                    }
                    if m.w[[i, j]] != 0.0 {
                        rows[n + j].push((var, -m.w[[i, j]]));
                    }
                }
                for coeffs in rows {
                    lp.add_row(Row::eq(coeffs, 0.0));
                }
            }
            MarketInstance::Splc(s) => {
                let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(v_start + i, 1.0)]).collect();
                for &(i, j, k, var) in &x_vars {
                    let slope = s.segments(i, j)[k].slope;
                    if slope != 0.0 {
                        rows[i].push((var, -slope));
                    }
                }
                for coeffs in rows {
                    lp.add_row(Row::eq(coeffs, 0.0));
                }
            }
            MarketInstance::Nplc(m) => {
                let mut var_of = vec![usize::MAX; n * n];
                for &(i, j, _, var) in &x_vars {
                    var_of[i * n + j] = var;
                }
                for i in 0..n {
                    for h in m.hyperplanes(i) {
                        let mut coeffs = vec![(v_start + i, 1.0)];
                        for j in 0..n {
                            if h.a[j] != 0.0 && var_of[i * n + j] != usize::MAX {
                                coeffs.push((var_of[i * n + j], -h.a[j]));
                            }
                        }
                        lp.add_row(Row::le(coeffs, h.b));
                    }
                }
            }
        }
        FeasibilityBlock {
            n,
            x_vars,
            v_start,
            dim,
            segment_counts,
        }
    }

    pub fn v_var(&self, i: usize) -> usize {
        self.v_start + i
    }

    pub fn allocation(&self, primal: &[f64]) -> Allocation {
        let n = self.n;
        match &self.segment_counts {
            Some(counts) => {
                let mut x: Vec<Vec<f64>> = counts.iter().map(|&k| vec![0.0; k]).collect();
                for &(i, j, k, var) in &self.x_vars {
                    x[i * n + j][k] = primal[var].max(0.0);
                }
                Allocation::Segments { n, x }
            }
            None => {
                let mut x = Array2::zeros((n, n));
                for &(i, j, _, var) in &self.x_vars {
                    x[[i, j]] = primal[var].max(0.0);
                }
                Allocation::Matrix(x)
            }
        }
    }

    pub fn v(&self, primal: &[f64]) -> Vec<f64> {
        primal[self.v_start..self.v_start + self.dim].to_vec()
    }

    /// Writes `x` and `v` into a vector of primal values.
    pub fn fill(&self, x: &Allocation, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for &(i, j, k, var) in &self.x_vars {
            out[var] = match x {
                Allocation::Segments { x, .. } => x[i * n + j].get(k).copied().unwrap_or(0.0),
                Allocation::Matrix(m) if self.segment_counts.is_none() => m[[i, j]],
                Allocation::Matrix(_) => 0.0,
            };
        }
        out[self.v_start..self.v_start + self.dim].copy_from_slice(v);
    }
}

/// Interior point maximizing the smallest gain over the disagreement point.
#[derive(Debug, Clone)]
pub struct Certificate {
    /// `max_x min_i (v_i(x) - c_i)`; positive iff the instance is feasible.
    pub t_star: f64,
    pub x_bar: Allocation,
    pub v_bar: Vec<f64>,
}

pub fn feasibility_certificate(instance: &MarketInstance) -> Result<Certificate, ModelError> {
    feasibility_certificate_restricted(instance, &|_, _| true)
}

pub(crate) fn feasibility_certificate_restricted(
    instance: &MarketInstance,
    keep: &dyn Fn(usize, usize) -> bool,
) -> Result<Certificate, ModelError> {
    let mut lp = LinearProgram::new();
    let block = FeasibilityBlock::add(&mut lp, instance, keep);
    let t = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
    let c = instance.disagreement();
    for (i, &ci) in c.iter().enumerate() {
        lp.add_row(Row::ge(vec![(block.v_var(i), 1.0), (t, -1.0)], ci));
    }
    let sol = nash_match_lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        // pairs removed by `keep` can make the assignment rows unsatisfiable
        LpStatus::Infeasible => {
            let n = instance.n();
            let x_bar = match instance {
                MarketInstance::Splc(s) => s.fill_segments(&Array2::eye(n)),
                _ => Allocation::Matrix(Array2::eye(n)),
            };
            return Ok(Certificate {
                t_star: f64::NEG_INFINITY,
                v_bar: utilities(instance, &x_bar)?,
                x_bar,
            });
        }
        LpStatus::Unbounded => {
            return Err(ModelError::InvalidInstance("feasibility program is unbounded".into()));
        }
    }
    let x_bar = block.allocation(&sol.primal);
    let v_bar = utilities(instance, &x_bar)?;
    let t_star = v_bar
        .iter()
        .zip(&c)
        .map(|(v, c)| v - c)
        .fold(f64::INFINITY, f64::min);
    Ok(Certificate { t_star, x_bar, v_bar })
}

/// True iff no feasible utility vector weakly dominates `v_star` with a
/// larger total (checked by an LP to within `1e-6` relative to the total).
pub fn pareto_check(instance: &MarketInstance, v_star: &[f64]) -> Result<bool, ModelError> {
    if v_star.len() != instance.dim() {
        return Err(ModelError::Dimension(format!(
            "utility vector has length {}, expected {}",
            v_star.len(),
            instance.dim()
        )));
    }
    let mut lp = LinearProgram::new();
    let block = FeasibilityBlock::add(&mut lp, instance, &|_, _| true);
    for (i, &vs) in v_star.iter().enumerate() {
        lp.set_objective(block.v_var(i), 1.0);
        lp.add_row(Row::ge(vec![(block.v_var(i), 1.0)], vs));
    }
    let sol: LpSolution = nash_match_lp::solve(&lp)?;
    let total: f64 = v_star.iter().sum();
    match sol.status {
        // v_star is slightly outside the feasible set: nothing can dominate it
        LpStatus::Infeasible => Ok(true),
        LpStatus::Unbounded => Ok(false),
        LpStatus::Optimal => Ok(sol.objective - total <= 1e-6 * (1.0 + total.abs())),
    }
}

/// `max over feasible v of grad f(v_star) . (v - v_star)`, an upper bound on
/// `f* - f(v_star)` by concavity. Solved exactly as an LP for every model.
pub fn optimality_bound(instance: &MarketInstance, v_star: &[f64]) -> Result<f64, ModelError> {
    let c = instance.disagreement();
    objective_with(&c, v_star)?;
    let mut lp = LinearProgram::new();
    let block = FeasibilityBlock::add(&mut lp, instance, &|_, _| true);
    let mut base = 0.0;
    for (i, (&vs, &ci)) in v_star.iter().zip(&c).enumerate() {
        let g = 1.0 / (vs - ci);
        lp.set_objective(block.v_var(i), g);
        base += g * vs;
    }
    let sol: LpSolution = nash_match_lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective - base),
        status => Err(ModelError::Lp(LpError::NotOptimal(status))),
    }
}

/// Result of the brute-force oracle.
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub f_star: f64,
    pub x_star: Array2<f64>,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn rec(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == p.len() {
            out.push(p.clone());
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, out);
            p.swap(k, i);
        }
    }
    rec(0, &mut p, &mut out);
    out.sort();
    out
}

/// Calls `visit` with every composition of `total` into `parts` non-negative parts.
fn compositions(total: usize, parts: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(left: usize, idx: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if idx + 1 == cur.len() {
            cur[idx] = left;
            visit(cur);
            return;
        }
        for a in 0..=left {
            cur[idx] = a;
            rec(left - a, idx + 1, cur, visit);
        }
    }
    let mut cur = vec![0; parts];
    rec(total, 0, &mut cur, visit);
}

/// Grid search over convex combinations of permutation matrices followed by
/// pairwise weight-transfer line searches. Linear and two-sided, `n <= 4`.
pub fn brute_force_solve(instance: &MarketInstance, resolution: f64) -> Result<BruteForce, ModelError> {
    match instance {
        MarketInstance::Linear(_) | MarketInstance::TwoSided(_) => {}
        _ => return Err(ModelError::Unsupported(instance.kind_name())),
    }
    let n = instance.n();
    if n > 4 {
        return Err(ModelError::TooLarge(n));
    }
    if !(resolution > 0.0 && resolution <= 0.5) {
        return Err(ModelError::InvalidArgument(format!("resolution {resolution} outside (0, 0.5]")));
    }
    let c = instance.disagreement();
    let dim = c.len();
    let perms = permutations(n);
    let pv: Vec<Vec<f64>> = perms
        .iter()
        .map(|p| {
            let m = Allocation::Matrix(Permutation::from_vec_unchecked(p.clone()).to_matrix());
            utilities(instance, &m).expect("permutation matrix has the right shape")
        })
        .collect();
    let eval = |w: &[f64]| -> f64 {
        let mut f = 0.0;
        for i in 0..dim {
            let vi: f64 = w.iter().zip(&pv).map(|(wk, v)| wk * v[i]).sum();
            let s = vi - c[i];
            if !(s > 0.0) {
                return f64::NEG_INFINITY;
            }
            f += s.ln();
        }
        f
    };
    let steps = (1.0 / resolution).round() as usize;
    let np = perms.len();
    let mut best_w = vec![0.0; np];
    let mut best_f = f64::NEG_INFINITY;
    let consider = |w: &[f64], best_w: &mut Vec<f64>, best_f: &mut f64| {
        let f = eval(w);
        if f > *best_f {
            *best_f = f;
            best_w.copy_from_slice(w);
        }
    };
    if n <= 3 {
        let mut w = vec![0.0; np];
        compositions(steps, np, &mut |comp| {
            for (wk, &a) in w.iter_mut().zip(comp) {
                *wk = a as f64 / steps as f64;
            }
            consider(&w, &mut best_w, &mut best_f);
        });
    } else {
        let mut w = vec![0.0; np];
        for p in 0..np {
            for q in p + 1..np {
                for a in 0..=steps {
                    w.iter_mut().for_each(|x| *x = 0.0);
                    w[p] = a as f64 / steps as f64;
                    w[q] = 1.0 - w[p];
                    consider(&w, &mut best_w, &mut best_f);
                }
            }
        }
    }
    if best_f == f64::NEG_INFINITY {
        // no grid point is in the domain; start from the interior point
        let cert = feasibility_certificate(instance)?;
        if !(cert.t_star > 0.0) {
            return Err(ModelError::InvalidInstance("instance is infeasible".into()));
        }
        let lottery = bvn_decompose(cert.x_bar.as_matrix().expect("entry-level allocation"), 1e-12)
            .map_err(|e| ModelError::InvalidInstance(e.to_string()))?;
        best_w.iter_mut().for_each(|x| *x = 0.0);
        for (perm, weight) in lottery.entries() {
            let idx = perms.binary_search(&perm.as_slice().to_vec()).expect("every permutation is listed");
            best_w[idx] += weight;
        }
        best_f = eval(&best_w);
    }
    // pairwise transfers: w_p += d, w_q -= d
    let mut v: Vec<f64> = (0..dim)
        .map(|i| best_w.iter().zip(&pv).map(|(wk, pk)| wk * pk[i]).sum())
        .collect();
    for _sweep in 0..10_000 {
        let start = best_f;
        for p in 0..np {
            for q in 0..np {
                if p == q || best_w[q] <= 0.0 {
                    continue;
                }
                let dv: Vec<f64> = (0..dim).map(|i| pv[p][i] - pv[q][i]).collect();
                let slope0: f64 = (0..dim).map(|i| dv[i] / (v[i] - c[i])).sum();
                if slope0 <= 1e-15 {
                    continue;
                }
                let mut hi = best_w[q];
                for i in 0..dim {
                    if dv[i] < 0.0 {
                        hi = hi.min((v[i] - c[i]) / -dv[i] * (1.0 - 1e-12));
                    }
                }
                let d = maximize_concave(
                    |d| (0..dim).map(|i| dv[i] / (v[i] + d * dv[i] - c[i])).sum(),
                    0.0,
                    hi,
                    1e-15,
                );
                if d <= 0.0 {
                    continue;
                }
                let mut trial = best_w.clone();
                trial[p] += d;
                trial[q] -= d;
                let f = eval(&trial);
                if f > best_f {
                    best_f = f;
                    best_w = trial;
                    for i in 0..dim {
                        v[i] += d * dv[i];
                    }
                }
            }
        }
        if best_f - start <= 1e-14 * (1.0 + best_f.abs()) {
            break;
        }
    }
    let mut x_star = Array2::zeros((n, n));
    for (wk, p) in best_w.iter().zip(&perms) {
        for (i, &j) in p.iter().enumerate() {
            x_star[[i, j]] += wk;
        }
    }
    Ok(BruteForce { f_star: best_f, x_star })
}
