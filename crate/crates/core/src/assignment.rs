//! Perfect matchings: Hungarian atoms and Birkhoff-von Neumann lotteries.

use std::collections::VecDeque;

use ndarray::Array2;
use rand_core::RngCore;
use thiserror::Error;

use crate::model::{utilities, Allocation, MarketInstance, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("not a permutation: {0:?}")]
    NotBijective(Vec<usize>),
    #[error("matrix is {0}x{1}, expected a square matrix")]
    NotSquare(usize, usize),
    #[error("support has no perfect matching with residual mass {residual}")]
    Degenerate { residual: f64 },
    #[error("lottery weights sum to {0}, expected 1")]
    Weights(f64),
}

/// A bijection `i -> perm[i]` from agents to goods.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self, AssignmentError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &j in &map {
            if j >= n || seen[j] {
                return Err(AssignmentError::NotBijective(map));
            }
            seen[j] = true;
        }
        Ok(Permutation(map))
    }

    pub(crate) fn from_vec_unchecked(map: Vec<usize>) -> Self {
        Permutation(map)
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.0.len();
        let mut m = Array2::zeros((n, n));
        for (i, &j) in self.0.iter().enumerate() {
            m[[i, j]] = 1.0;
        }
        m
    }

    /// `sum_i w[i, perm[i]]`.
    pub fn weight(&self, w: &Array2<f64>) -> f64 {
        self.0.iter().enumerate().map(|(i, &j)| w[[i, j]]).sum()
    }
}

/// Maximum-weight perfect matching (Hungarian algorithm, O(n^3)). Among
/// optimal matchings the lexicographically smallest is returned.
pub fn max_weight_perfect_matching(w: &Array2<f64>) -> (Permutation, f64) {
    let n = w.nrows();
    assert_eq!(n, w.ncols(), "weight matrix must be square");
    if n == 0 {
        return (Permutation(Vec::new()), 0.0);
    }
    debug_assert!(w.iter().all(|v| v.is_finite()));
    // shortest augmenting paths on cost = -w, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut pu = vec![0.0; n + 1];
    let mut pv = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = -w[[i0 - 1, j - 1]] - pu[i0] - pv[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    pu[owner[j]] += delta;
                    pv[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    // edges with zero reduced cost carry every optimal matching
    let scale = w.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale * n as f64;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| -w[[i, j]] - pu[i + 1] - pv[j + 1] <= tol || row_to_col[i] == j)
                .collect()
        })
        .collect();
    let perm = lexicographic_smallest(&tight, row_to_col);
    let value = perm.iter().enumerate().map(|(i, &j)| w[[i, j]]).sum();
    (Permutation(perm), value)
}

/// Lexicographically smallest perfect matching of the bipartite graph `adj`
/// (rows to sorted column lists), starting from the perfect matching `m`.
fn lexicographic_smallest(adj: &[Vec<usize>], mut m: Vec<usize>) -> Vec<usize> {
    let n = m.len();
    let mut owner = vec![0usize; n];
    for (i, &j) in m.iter().enumerate() {
        owner[j] = i;
    }
    let mut fixed_col = vec![false; n];
    let mut prev_row = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    for i in 0..n {
        for &j in &adj[i] {
            if j >= m[i] {
                break;
            }
            if fixed_col[j] {
                continue;
            }
            // row r = owner[j] must move to a free path ending at column m[i]
            let target = m[i];
            let r = owner[j];
            seen.iter_mut().for_each(|s| *s = false);
            seen[j] = true;
            let mut queue = VecDeque::from([r]);
            let mut found = None;
            'bfs: while let Some(row) = queue.pop_front() {
                for &col in &adj[row] {
                    if seen[col] || fixed_col[col] {
                        continue;
                    }
                    seen[col] = true;
                    prev_row[col] = row;
                    if col == target {
                        found = Some(col);
                        break 'bfs;
                    }
                    queue.push_back(owner[col]);
                }
            }
            if let Some(mut col) = found {
                // shift along the alternating path
                loop {
                    let row = prev_row[col];
                    let next = m[row];
                    m[row] = col;
                    owner[col] = row;
                    if row == r {
                        break;
                    }
                    col = next;
                }
                m[i] = j;
                owner[j] = i;
                break;
            }
        }
        fixed_col[m[i]] = true;
    }
    m
}

/// A probability distribution over perfect matchings.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingLottery {
    entries: Vec<(Permutation, f64)>,
}

impl MatchingLottery {
    pub fn new(entries: Vec<(Permutation, f64)>) -> Result<Self, AssignmentError> {
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if !((total - 1.0).abs() <= 1e-9) || entries.iter().any(|e| !(e.1 > 0.0 && e.1 <= 1.0 + 1e-12)) {
            return Err(AssignmentError::Weights(total));
        }
        Ok(MatchingLottery { entries })
    }

    pub fn entries(&self) -> &[(Permutation, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `sum_k weight_k * P_k`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let n = self.entries.first().map_or(0, |e| e.0.len());
        let mut x = Array2::zeros((n, n));
        for (p, w) in &self.entries {
            for (i, &j) in p.0.iter().enumerate() {
                x[[i, j]] += w;
            }
        }
        x
    }

    /// One multinomial draw per sample from `rng`.
    pub fn sample(&self, rng: &mut impl RngCore, count: usize) -> Vec<Permutation> {
        (0..count)
            .map(|_| {
                let r = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                let mut acc = 0.0;
                for (p, w) in &self.entries {
                    acc += w;
                    if r < acc {
                        return p.clone();
                    }
                }
                self.entries.last().expect("lottery is not empty").0.clone()
            })
            .collect()
    }
}

/// Support threshold of the second peeling pass.
const FINE_TOL: f64 = 16.0 * f64::EPSILON;

/// Birkhoff-von Neumann decomposition: repeatedly peel the permutation found
/// on the support `{x_ij > tol}` with weight equal to its smallest entry.
/// Once no such permutation exists, peeling continues on `{x_ij > 16 eps}`
/// so that mass below `tol` is kept when it still forms matchings.
pub fn bvn_decompose(x: &Array2<f64>, tol: f64) -> Result<MatchingLottery, AssignmentError> {
    let (n, m) = x.dim();
    if n != m {
        return Err(AssignmentError::NotSquare(n, m));
    }
    if n == 0 {
        return Ok(MatchingLottery { entries: Vec::new() });
    }
    let mut r = x.clone();
    let mut matching: Vec<Option<usize>> = vec![None; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut entries: Vec<(Permutation, f64)> = Vec::new();
    let mut support = tol;
    loop {
        for i in 0..n {
            if let Some(j) = matching[i] {
                if r[[i, j]] <= support {
                    matching[i] = None;
                    owner[j] = None;
                }
            }
        }
        let mut complete = true;
        for i in 0..n {
            if matching[i].is_none() && !augment(&r, support, i, &mut matching, &mut owner) {
                complete = false;
                break;
            }
        }
        if !complete && support > FINE_TOL && !entries.is_empty() {
            support = FINE_TOL;
            continue;
        }
        if !complete {
            let residual = r
                .rows()
                .into_iter()
                .map(|row| row.iter().map(|v| v.max(0.0)).sum::<f64>())
                .chain(r.columns().into_iter().map(|c| c.iter().map(|v| v.max(0.0)).sum::<f64>()))
                .fold(0.0, f64::max);
            if residual <= n as f64 * tol.max(1e-12) || !entries.is_empty() && residual <= 1e-7 {
                break;
            }
            return Err(AssignmentError::Degenerate { residual });
        }
        let perm: Vec<usize> = matching.iter().map(|j| j.expect("complete matching")).collect();
        let weight = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| r[[i, j]])
            .fold(f64::INFINITY, f64::min);
        for (i, &j) in perm.iter().enumerate() {
            r[[i, j]] -= weight;
        }
        entries.push((Permutation(perm), weight));
    }
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if !(total > 0.0) {
        return Err(AssignmentError::Degenerate { residual: 1.0 });
    }
    for e in &mut entries {
        e.1 /= total;
    }
    Ok(MatchingLottery { entries })
}

/// Augmenting path from row `start` on the support of `r` (BFS, columns in
/// ascending order).
fn augment(
    r: &Array2<f64>,
    tol: f64,
    start: usize,
    matching: &mut [Option<usize>],
    owner: &mut [Option<usize>],
) -> bool {
    let n = matching.len();
    let mut prev = vec![usize::MAX; n];
    let mut queue = VecDeque::from([start]);
    while let Some(row) = queue.pop_front() {
        for col in 0..n {
            if prev[col] != usize::MAX || r[[row, col]] <= tol {
                continue;
            }
            prev[col] = row;
            match owner[col] {
                Some(next) => queue.push_back(next),
                None => {
                    let mut c = col;
                    loop {
                        let row = prev[c];
                        let old = matching[row];
                        matching[row] = Some(c);
                        owner[c] = Some(row);
                        match old {
                            Some(o) if row != start => c = o,
                            _ => return true,
                        }
                    }
                }
            }
        }
    }
    false
}

/// Expected utility vector under a lottery.
pub fn expected_utility_of_lottery(
    instance: &MarketInstance,
    lottery: &MatchingLottery,
) -> Result<Vec<f64>, ModelError> {
    let mut out = vec![0.0; instance.dim()];
    for (p, w) in lottery.entries() {
        let v = utilities(instance, &Allocation::from_permutation(instance, p))?;
        for (o, vi) in out.iter_mut().zip(v) {
            *o += w * vi;
        }
    }
    Ok(out)
}
