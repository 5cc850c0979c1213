use std::collections::VecDeque;

use crate::lu::{BasisFactor, LuFactors};
use crate::{
    validate_row, Basis, LinearProgram, LpError, LpSolution, LpStatus, Phase, PivotRecord, Row,
    VarState, DUAL_TOL, PIVOT_TOL, PRIMAL_TOL, RATIO_TOL,
};

const REFACTOR_EVERY: usize = 100;
const TRACE_LEN: usize = 32;
const DEGENERATE_STEP: f64 = 1e-12;

/// Outcome of one simplex phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseEnd {
    Optimal,
    Infeasible,
    Unbounded,
    /// Dual simplex lost dual feasibility to round-off.
    DualLost,
}

enum Step {
    Flip,
    Pivot { pos: usize, to_upper: bool, t: f64 },
    Unbounded,
}

/// A simplex solver context. Owns a copy of the program and the current
/// basis; rows can be appended and the program reoptimized from the last
/// basis. Not shareable during a solve.
#[derive(Debug, Clone)]
pub struct Simplex {
    n: usize,
    m: usize,
    obj: Vec<f64>,
    rows: Vec<Row>,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    head: Vec<usize>,
    factor: BasisFactor,
    d: Vec<f64>,
    y: Vec<f64>,
    prow: Vec<f64>,
    price_cursor: usize,
    touched: Vec<usize>,
    pivots: usize,
    degenerate_run: usize,
    bland: bool,
    trace: VecDeque<PivotRecord>,
}

impl Simplex {
    /// Builds a context with the all-logical starting basis.
    pub fn new(lp: &LinearProgram) -> Result<Self, LpError> {
        lp.validate()?;
        let n = lp.num_vars();
        let m = lp.num_rows();
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for j in 0..n {
            let (lo, hi) = lp.bounds(j);
            lower.push(lo);
            upper.push(hi);
        }
        for row in lp.rows() {
            let (lo, hi) = row.activity_bounds();
            lower.push(lo);
            upper.push(hi);
        }
        let mut cost: Vec<f64> = lp.objective().iter().map(|c| -c).collect();
        cost.resize(n + m, 0.0);

        let mut s = Simplex {
            n,
            m,
            obj: lp.objective().to_vec(),
            rows: lp.rows().to_vec(),
            col_start: Vec::new(),
            col_row: Vec::new(),
            col_val: Vec::new(),
            cost,
            lower,
            upper,
            x: vec![0.0; n + m],
            state: vec![VarState::Basic; n + m],
            head: (n..n + m).collect(),
            factor: BasisFactor::default(),
            d: vec![0.0; n + m],
            y: Vec::new(),
            prow: Vec::new(),
            price_cursor: 0,
            touched: Vec::new(),
            pivots: 0,
            degenerate_run: 0,
            bland: false,
            trace: VecDeque::new(),
        };
        s.build_columns();
        for j in 0..n {
            s.place_nonbasic(j, 0.0);
        }
        s.refactor()?;
        Ok(s)
    }

    /// Builds a context for `lp` and installs `basis` (from an earlier solve
    /// of the same program).
    pub fn with_basis(lp: &LinearProgram, basis: &Basis) -> Result<Self, LpError> {
        let mut s = Simplex::new(lp)?;
        if basis.head.len() != s.m || basis.state.len() != s.n + s.m {
            return Err(LpError::BasisMismatch(format!(
                "basis has {} rows and {} variables, program has {} rows and {} variables",
                basis.head.len(),
                basis.state.len() - basis.head.len(),
                s.m,
                s.n
            )));
        }
        let basic = basis
            .state
            .iter()
            .filter(|&&st| st == VarState::Basic)
            .count();
        if basic != s.m
            || basis
                .head
                .iter()
                .any(|&j| basis.state[j] != VarState::Basic)
        {
            return Err(LpError::BasisMismatch(
                "basis head and states disagree".into(),
            ));
        }
        s.head = basis.head.clone();
        for j in 0..s.n + s.m {
            match basis.state[j] {
                VarState::Basic => s.state[j] = VarState::Basic,
                st => {
                    s.state[j] = st;
                    s.x[j] = s.nonbasic_value(j);
                    if !s.x[j].is_finite() {
                        s.place_nonbasic(j, 0.0);
                    }
                }
            }
        }
        s.refactor()?;
        Ok(s)
    }

    /// Builds a context whose starting basis is crashed from `start`, a guess
    /// at the primal values of the structural variables. Variables strictly
    /// inside their bounds are made basic in the row where they sit tightest;
    /// the rest start at their nearest bound.
    pub fn with_start(lp: &LinearProgram, start: &[f64]) -> Result<Self, LpError> {
        let mut s = Simplex::new(lp)?;
        if start.len() != s.n {
            return Err(LpError::BasisMismatch(format!(
                "start has {} values, program has {} variables",
                start.len(),
                s.n
            )));
        }
        let slack: Vec<f64> = s
            .rows
            .iter()
            .map(|row| {
                let act = row.activity(start);
                let (lo, hi) = row.activity_bounds();
                (act - lo).abs().min((hi - act).abs())
            })
            .collect();
        let mut taken = vec![false; s.m];
        let mut basic = Vec::new();
        for j in 0..s.n {
            let (lo, hi) = (s.lower[j], s.upper[j]);
            let v = start[j];
            if !v.is_finite() {
                continue;
            }
            let inside = v > lo + PRIMAL_TOL && v < hi - PRIMAL_TOL;
            if !inside {
                s.place_nonbasic(j, v);
                continue;
            }
            let mut pick: Option<(usize, f64, f64)> = None;
            for e in s.col_start[j]..s.col_start[j + 1] {
                let (r, a) = (s.col_row[e], s.col_val[e]);
                if taken[r] || a.abs() <= PIVOT_TOL {
                    continue;
                }
                let better = match pick {
                    None => true,
                    Some((_, sl, mag)) => {
                        slack[r] < sl - PRIMAL_TOL || (slack[r] <= sl + PRIMAL_TOL && a.abs() > mag)
                    }
                };
                if better {
                    pick = Some((r, slack[r], a.abs()));
                }
            }
            match pick {
                Some((r, _, _)) => {
                    taken[r] = true;
                    basic.push(j);
                    s.x[j] = v;
                }
                None => s.place_nonbasic(j, v),
            }
        }
        let mut head = basic.clone();
        for r in 0..s.m {
            let logical = s.n + r;
            if taken[r] {
                let near = s.rows[r].activity(start);
                s.place_nonbasic(logical, near);
            } else {
                head.push(logical);
            }
        }
        for &j in &basic {
            s.state[j] = VarState::Basic;
        }
        for &j in &head[basic.len()..] {
            s.state[j] = VarState::Basic;
        }
        s.head = head;
        s.refactor()?;
        Ok(s)
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    /// Solves the current program starting from the current basis.
    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        self.pivots = 0;
        self.trace.clear();
        let status = self.run()?;
        Ok(self.solution(status))
    }

    /// Appends `row` and reoptimizes. If the current basis is optimal the new
    /// logical enters the basis and the dual simplex restores feasibility.
    pub fn add_row(&mut self, row: Row) -> Result<LpSolution, LpError> {
        validate_row(&row, self.n)?;
        let (lo, hi) = row.activity_bounds();
        let logical = self.n + self.m;
        self.rows.push(row);
        self.m += 1;
        self.cost.push(0.0);
        self.lower.push(lo);
        self.upper.push(hi);
        self.x.push(0.0);
        self.state.push(VarState::Basic);
        self.d.push(0.0);
        self.head.push(logical);
        self.build_columns();
        self.refactor()?;
        self.solve()
    }

    fn run(&mut self) -> Result<LpStatus, LpError> {
        for _ in 0..8 {
            let primal_ok = self.max_primal_infeasibility() <= PRIMAL_TOL;
            if primal_ok {
                match self.primal(false)? {
                    PhaseEnd::Optimal => return Ok(LpStatus::Optimal),
                    PhaseEnd::Unbounded => return Ok(LpStatus::Unbounded),
                    _ => continue,
                }
            }
            self.compute_duals();
            if self.max_dual_infeasibility() <= DUAL_TOL {
                match self.dual()? {
                    PhaseEnd::Infeasible => return Ok(LpStatus::Infeasible),
                    // re-verify optimality with fresh duals through primal phase 2
                    PhaseEnd::Optimal | PhaseEnd::DualLost => continue,
                    PhaseEnd::Unbounded => unreachable!("dual simplex cannot detect unboundedness"),
                }
            }
            match self.primal(true)? {
                PhaseEnd::Infeasible => return Ok(LpStatus::Infeasible),
                _ => continue,
            }
        }
        Err(self.failure("phases did not settle"))
    }

    fn solution(&mut self, status: LpStatus) -> LpSolution {
        let primal = self.x[..self.n].to_vec();
        let (duals, reduced_costs) = if status == LpStatus::Optimal {
            self.compute_duals();
            (
                self.y.iter().map(|v| -v).collect(),
                self.d[..self.n].iter().map(|v| -v).collect(),
            )
        } else {
            (vec![0.0; self.m], vec![0.0; self.n])
        };
        LpSolution {
            status,
            objective: self.obj.iter().zip(&primal).map(|(c, v)| c * v).sum(),
            primal,
            duals,
            reduced_costs,
            basis: Basis {
                head: self.head.clone(),
                state: self.state.clone(),
            },
            pivots: self.pivots,
        }
    }

    // ---- matrix access -------------------------------------------------

    fn build_columns(&mut self) {
        let n = self.n;
        let mut count = vec![0usize; n + 1];
        for row in &self.rows {
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    count[j + 1] += 1;
                }
            }
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let nnz = count[n];
        let mut fill = count.clone();
        let mut col_row = vec![0usize; nnz];
        let mut col_val = vec![0.0; nnz];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    col_row[fill[j]] = i;
                    col_val[fill[j]] = a;
                    fill[j] += 1;
                }
            }
        }
        self.col_start = count;
        self.col_row = col_row;
        self.col_val = col_val;
    }

    fn column_entries(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            (self.col_start[j]..self.col_start[j + 1])
                .map(|e| (self.col_row[e], self.col_val[e]))
                .collect()
        } else {
            vec![(j - self.n, -1.0)]
        }
    }

    fn load_column(&self, j: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.m, 0.0);
        if j < self.n {
            for e in self.col_start[j]..self.col_start[j + 1] {
                out[self.col_row[e]] += self.col_val[e];
            }
        } else {
            out[j - self.n] = -1.0;
        }
    }

    #[inline]
    fn col_dot(&self, v: &[f64], j: usize) -> f64 {
        if j < self.n {
            let mut s = 0.0;
            for e in self.col_start[j]..self.col_start[j + 1] {
                s += v[self.col_row[e]] * self.col_val[e];
            }
            s
        } else {
            -v[j - self.n]
        }
    }

    // ---- basis bookkeeping ---------------------------------------------

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtLower => self.lower[j],
            VarState::AtUpper => self.upper[j],
            VarState::Free => 0.0,
            VarState::Basic => self.x[j],
        }
    }

    /// Makes `j` nonbasic at the finite bound nearest to `near`.
    fn place_nonbasic(&mut self, j: usize, near: f64) {
        let (lo, hi) = (self.lower[j], self.upper[j]);
        let st = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => {
                if (near - lo).abs() <= (hi - near).abs() {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                }
            }
            (true, false) => VarState::AtLower,
            (false, true) => VarState::AtUpper,
            (false, false) => VarState::Free,
        };
        self.state[j] = st;
        self.x[j] = self.nonbasic_value(j);
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        for _ in 0..=self.m.max(1) {
            let columns: Vec<Vec<(usize, f64)>> =
                self.head.iter().map(|&j| self.column_entries(j)).collect();
            match LuFactors::factorize(self.m, &columns) {
                Ok(lu) => {
                    self.factor = BasisFactor::new(lu);
                    self.compute_basic_values();
                    return Ok(());
                }
                Err(singular) => {
                    // swap the dependent columns for logicals of uncovered rows
                    for (&pos, &row) in singular.positions.iter().zip(&singular.rows) {
                        let old = self.head[pos];
                        let logical = self.n + row;
                        self.head[pos] = logical;
                        self.state[logical] = VarState::Basic;
                        let near = self.x[old];
                        self.place_nonbasic(old, near);
                    }
                }
            }
        }
        Err(self.failure("basis stayed singular after logical repair"))
    }

    fn compute_basic_values(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n + self.m {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let v = self.x[j];
            if v == 0.0 {
                continue;
            }
            if j < self.n {
                for e in self.col_start[j]..self.col_start[j + 1] {
                    rhs[self.col_row[e]] -= self.col_val[e] * v;
                }
            } else {
                rhs[j - self.n] += v;
            }
        }
        self.factor.ftran(&mut rhs);
        for (p, &j) in self.head.iter().enumerate() {
            self.x[j] = rhs[p];
        }
    }

    /// Fresh duals `y` and reduced costs `d` for the phase-2 costs.
    fn compute_duals(&mut self) {
        let mut cb: Vec<f64> = self.head.iter().map(|&j| self.cost[j]).collect();
        self.factor.btran(&mut cb);
        self.y = cb;
        self.fill_reduced_costs(false);
    }

    fn fill_reduced_costs(&mut self, phase_one: bool) {
        let total = self.n + self.m;
        let mut d = std::mem::take(&mut self.d);
        d.resize(total, 0.0);
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = if self.state[j] == VarState::Basic {
                0.0
            } else {
                let c = if phase_one { 0.0 } else { self.cost[j] };
                c - self.col_dot(&self.y, j)
            };
        }
        self.d = d;
    }

    fn infeasibility(&self, j: usize) -> f64 {
        (self.lower[j] - self.x[j])
            .max(self.x[j] - self.upper[j])
            .max(0.0)
    }

    fn max_primal_infeasibility(&self) -> f64 {
        self.head
            .iter()
            .map(|&j| self.infeasibility(j))
            .fold(0.0, f64::max)
    }

    fn dual_infeasibility(&self, j: usize) -> f64 {
        let dj = self.d[j];
        match self.state[j] {
            VarState::Basic => 0.0,
            _ if self.lower[j] == self.upper[j] => 0.0,
            VarState::AtLower => (-dj).max(0.0),
            VarState::AtUpper => dj.max(0.0),
            VarState::Free => dj.abs(),
        }
    }

    fn max_dual_infeasibility(&self) -> f64 {
        (0..self.n + self.m)
            .map(|j| self.dual_infeasibility(j))
            .fold(0.0, f64::max)
    }

    fn record(&mut self, phase: Phase, entering: Option<usize>, leaving: Option<usize>, step: f64) {
        if self.trace.len() == TRACE_LEN {
            self.trace.pop_front();
        }
        self.trace.push_back(PivotRecord {
            iteration: self.pivots,
            phase,
            entering,
            leaving,
            step,
            bland: self.bland,
        });
    }

    fn failure(&self, reason: &str) -> LpError {
        LpError::SolverFailure {
            reason: reason.to_string(),
            trace: self.trace.iter().cloned().collect(),
        }
    }

    fn pivot_limit(&self) -> usize {
        50 * (self.n + self.m) + 10_000
    }

    fn note_step(&mut self, t: f64) {
        if t <= DEGENERATE_STEP {
            self.degenerate_run += 1;
            if self.degenerate_run > 10 * (self.n + self.m) {
                self.bland = true;
            }
        } else {
            self.degenerate_run = 0;
            self.bland = false;
        }
    }

    fn pivot(&mut self, pos: usize, entering: usize, alpha: &[f64]) {
        self.head[pos] = entering;
        self.state[entering] = VarState::Basic;
        self.factor.update(pos, alpha);
    }

    // ---- primal simplex ------------------------------------------------

    fn primal(&mut self, phase_one: bool) -> Result<PhaseEnd, LpError> {
        let phase = if phase_one {
            Phase::PrimalOne
        } else {
            Phase::PrimalTwo
        };
        let mut alpha = Vec::new();
        loop {
            if self.pivots > self.pivot_limit() {
                return Err(self.failure("pivot limit exceeded in primal simplex"));
            }
            if self.factor.num_updates() >= REFACTOR_EVERY {
                self.refactor()?;
            }

            if phase_one {
                let mut cb = vec![0.0; self.m];
                let mut any = false;
                for (p, &j) in self.head.iter().enumerate() {
                    if self.x[j] < self.lower[j] - PRIMAL_TOL {
                        cb[p] = -1.0;
                        any = true;
                    } else if self.x[j] > self.upper[j] + PRIMAL_TOL {
                        cb[p] = 1.0;
                        any = true;
                    }
                }
                if !any {
                    return Ok(PhaseEnd::Optimal);
                }
                self.factor.btran(&mut cb);
                self.y = cb;
            } else {
                let mut cb: Vec<f64> = self.head.iter().map(|&j| self.cost[j]).collect();
                self.factor.btran(&mut cb);
                self.y = cb;
            }

            let Some(q) = self.choose_entering(phase_one) else {
                return Ok(if phase_one {
                    PhaseEnd::Infeasible
                } else {
                    PhaseEnd::Optimal
                });
            };
            let dir = if self.d[q] < 0.0 { 1.0 } else { -1.0 };

            self.load_column(q, &mut alpha);
            self.factor.ftran(&mut alpha);

            let step = if phase_one {
                self.ratio_test_phase_one(&alpha, dir, q)
            } else {
                self.ratio_test_harris(&alpha, dir, q)
            };
            self.pivots += 1;
            match step {
                Step::Unbounded => {
                    if phase_one {
                        return Err(self.failure("unbounded ray while minimizing infeasibility"));
                    }
                    self.record(phase, Some(q), None, f64::INFINITY);
                    return Ok(PhaseEnd::Unbounded);
                }
                Step::Flip => {
                    let t = self.upper[q] - self.lower[q];
                    self.apply_primal_step(&alpha, q, dir * t);
                    self.state[q] = if dir > 0.0 {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.x[q] = self.nonbasic_value(q);
                    self.note_step(t);
                    self.record(phase, Some(q), None, t);
                }
                Step::Pivot { pos, to_upper, t } => {
                    self.apply_primal_step(&alpha, q, dir * t);
                    let leaving = self.head[pos];
                    self.state[leaving] = if to_upper && self.lower[leaving] != self.upper[leaving]
                    {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.x[leaving] = self.nonbasic_value(leaving);
                    self.pivot(pos, q, &alpha);
                    self.note_step(t);
                    self.record(phase, Some(q), Some(leaving), t);
                }
            }
        }
    }

    fn apply_primal_step(&mut self, alpha: &[f64], q: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        self.x[q] += delta;
        for (p, &j) in self.head.iter().enumerate() {
            let a = alpha[p];
            if a != 0.0 {
                self.x[j] -= delta * a;
            }
        }
    }

    /// Partial Dantzig pricing: scans blocks of columns from a rotating
    /// cursor and stops after the first block holding a candidate. Under
    /// Bland's rule the smallest eligible index is taken.
    fn choose_entering(&mut self, phase_one: bool) -> Option<usize> {
        let total = self.n + self.m;
        let block = if total <= 2000 {
            total
        } else {
            (total / 64).max(2000)
        };
        let price = |s: &mut Self, j: usize| -> f64 {
            if s.state[j] == VarState::Basic {
                return 0.0;
            }
            let c = if phase_one { 0.0 } else { s.cost[j] };
            s.d[j] = c - s.col_dot(&s.y, j);
            s.dual_infeasibility(j)
        };
        if self.bland {
            return (0..total).find(|&j| price(self, j) > DUAL_TOL);
        }
        let mut best = None;
        let mut best_score = DUAL_TOL;
        let mut j = self.price_cursor % total;
        let mut scanned = 0;
        while scanned < total {
            let end = (scanned + block).min(total);
            for _ in scanned..end {
                let score = price(self, j);
                if score > best_score {
                    best_score = score;
                    best = Some(j);
                }
                j += 1;
                if j == total {
                    j = 0;
                }
            }
            scanned = end;
            if best.is_some() {
                break;
            }
        }
        self.price_cursor = j;
        best
    }

    /// Two-pass (Harris) ratio test for a feasible basis.
    fn ratio_test_harris(&self, alpha: &[f64], dir: f64, q: usize) -> Step {
        let flip = self.upper[q] - self.lower[q];
        let mut t_max = f64::INFINITY;
        for (p, &j) in self.head.iter().enumerate() {
            let a = alpha[p];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let delta = -dir * a;
            if delta < 0.0 && self.lower[j].is_finite() {
                t_max = t_max.min((self.x[j] - self.lower[j] + PRIMAL_TOL) / -delta);
            } else if delta > 0.0 && self.upper[j].is_finite() {
                t_max = t_max.min((self.upper[j] - self.x[j] + PRIMAL_TOL) / delta);
            }
        }
        if flip <= t_max && flip.is_finite() {
            return Step::Flip;
        }
        if t_max == f64::INFINITY {
            return Step::Unbounded;
        }

        let mut best: Option<(usize, bool, f64)> = None;
        let mut best_mag = 0.0;
        let mut best_ratio = f64::INFINITY;
        for (p, &j) in self.head.iter().enumerate() {
            let a = alpha[p];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let delta = -dir * a;
            let (ratio, to_upper) = if delta < 0.0 && self.lower[j].is_finite() {
                (((self.x[j] - self.lower[j]) / -delta).max(0.0), false)
            } else if delta > 0.0 && self.upper[j].is_finite() {
                (((self.upper[j] - self.x[j]) / delta).max(0.0), true)
            } else {
                continue;
            };
            let take = if self.bland {
                ratio < best_ratio - RATIO_TOL
                    || (ratio <= best_ratio + RATIO_TOL
                        && best.is_some_and(|(bp, _, _)| j < self.head[bp]))
            } else {
                ratio <= t_max && a.abs() > best_mag
            };
            if take {
                best = Some((p, to_upper, ratio));
                best_mag = a.abs();
                best_ratio = ratio;
            }
        }
        match best {
            Some((pos, to_upper, t)) => {
                if flip.is_finite() && flip <= t {
                    Step::Flip
                } else {
                    Step::Pivot { pos, to_upper, t }
                }
            }
            None => Step::Unbounded,
        }
    }

    /// Ratio test while minimizing the sum of infeasibilities: infeasible
    /// basics block where they reach the bound they violate.
    fn ratio_test_phase_one(&self, alpha: &[f64], dir: f64, q: usize) -> Step {
        let flip = self.upper[q] - self.lower[q];
        let mut best: Option<(usize, bool, f64)> = None;
        let mut best_ratio = f64::INFINITY;
        let mut best_mag = 0.0;
        for (p, &j) in self.head.iter().enumerate() {
            let a = alpha[p];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let delta = -dir * a;
            let (lo, hi, xv) = (self.lower[j], self.upper[j], self.x[j]);
            let candidate = if xv < lo - PRIMAL_TOL {
                (delta > 0.0).then(|| ((lo - xv) / delta, false))
            } else if xv > hi + PRIMAL_TOL {
                (delta < 0.0).then(|| ((xv - hi) / -delta, true))
            } else if delta < 0.0 && lo.is_finite() {
                Some((((xv - lo) / -delta).max(0.0), false))
            } else if delta > 0.0 && hi.is_finite() {
                Some((((hi - xv) / delta).max(0.0), true))
            } else {
                None
            };
            let Some((ratio, to_upper)) = candidate else {
                continue;
            };
            let tie = (ratio - best_ratio).abs() <= RATIO_TOL * (1.0 + best_ratio.abs().min(1e12));
            let take = if ratio < best_ratio && !tie {
                true
            } else if tie {
                if self.bland {
                    best.is_some_and(|(bp, _, _)| j < self.head[bp])
                } else {
                    a.abs() > best_mag
                }
            } else {
                false
            };
            if take {
                best = Some((p, to_upper, ratio));
                best_ratio = ratio;
                best_mag = a.abs();
            }
        }
        match best {
            Some((pos, to_upper, t)) => {
                if flip.is_finite() && flip <= t {
                    Step::Flip
                } else {
                    Step::Pivot { pos, to_upper, t }
                }
            }
            None if flip.is_finite() => Step::Flip,
            None => Step::Unbounded,
        }
    }

    // ---- dual simplex --------------------------------------------------

    fn dual(&mut self) -> Result<PhaseEnd, LpError> {
        let total = self.n + self.m;
        let mut alpha = Vec::new();
        let mut rho = Vec::new();
        loop {
            if self.pivots > self.pivot_limit() {
                return Err(self.failure("pivot limit exceeded in dual simplex"));
            }
            if self.factor.num_updates() >= REFACTOR_EVERY {
                self.refactor()?;
                self.compute_duals();
                if self.max_dual_infeasibility() > DUAL_TOL {
                    return Ok(PhaseEnd::DualLost);
                }
            }

            // leaving row
            let mut leave: Option<usize> = None;
            let mut worst = PRIMAL_TOL;
            for (p, &j) in self.head.iter().enumerate() {
                let inf = self.infeasibility(j);
                if inf <= PRIMAL_TOL {
                    continue;
                }
                if self.bland {
                    if leave.is_none_or(|lp| j < self.head[lp]) {
                        leave = Some(p);
                    }
                } else if inf > worst {
                    worst = inf;
                    leave = Some(p);
                }
            }
            let Some(p) = leave else {
                return Ok(PhaseEnd::Optimal);
            };
            let leaving = self.head[p];
            let below = self.x[leaving] < self.lower[leaving];
            let target = if below {
                self.lower[leaving]
            } else {
                self.upper[leaving]
            };

            rho.clear();
            rho.resize(self.m, 0.0);
            rho[p] = 1.0;
            self.factor.btran(&mut rho);
            let mut prow = std::mem::take(&mut self.prow);
            let mut touched = std::mem::take(&mut self.touched);
            if prow.len() != total {
                prow.clear();
                prow.resize(total, 0.0);
            } else {
                for &j in &touched {
                    prow[j] = 0.0;
                }
            }
            let row_work: usize = rho
                .iter()
                .zip(&self.rows)
                .filter(|(r, _)| **r != 0.0)
                .map(|(_, row)| row.coeffs.len())
                .sum();
            touched.clear();
            if row_work < self.col_row.len() / 2 {
                for (i, &r) in rho.iter().enumerate() {
                    if r == 0.0 {
                        continue;
                    }
                    for &(j, a) in &self.rows[i].coeffs {
                        if prow[j] == 0.0 {
                            touched.push(j);
                        }
                        prow[j] += r * a;
                    }
                    prow[self.n + i] = -r;
                    touched.push(self.n + i);
                }
                for &j in &self.head {
                    prow[j] = 0.0;
                }
            } else {
                for (j, pj) in prow.iter_mut().enumerate() {
                    if self.state[j] != VarState::Basic {
                        *pj = self.col_dot(&rho, j);
                        if *pj != 0.0 {
                            touched.push(j);
                        }
                    }
                }
            }
            touched.sort_unstable();
            touched.dedup();

            // entering column: Harris two-pass on the dual ratios
            let eligible = |s: &Self, j: usize, a: f64| -> Option<f64> {
                if s.state[j] == VarState::Basic || s.lower[j] == s.upper[j] || a.abs() <= PIVOT_TOL
                {
                    return None;
                }
                let dj = s.d[j];
                match s.state[j] {
                    VarState::AtLower if (below && a < 0.0) || (!below && a > 0.0) => {
                        Some(dj.max(0.0))
                    }
                    VarState::AtUpper if (below && a > 0.0) || (!below && a < 0.0) => {
                        Some((-dj).max(0.0))
                    }
                    VarState::Free => Some(dj.abs()),
                    _ => None,
                }
            };
            let mut theta_max = f64::INFINITY;
            for &j in &touched {
                let a = prow[j];
                if let Some(dj) = eligible(self, j, a) {
                    theta_max = theta_max.min((dj + DUAL_TOL) / a.abs());
                }
            }
            if theta_max == f64::INFINITY {
                self.prow = prow;
                self.touched = std::mem::take(&mut touched);
                self.record(Phase::Dual, None, Some(leaving), 0.0);
                return Ok(PhaseEnd::Infeasible);
            }
            let mut enter: Option<usize> = None;
            let mut best_mag = 0.0;
            let mut best_ratio = f64::INFINITY;
            for &j in &touched {
                let a = prow[j];
                let Some(dj) = eligible(self, j, a) else {
                    continue;
                };
                let ratio = dj / a.abs();
                let take = if self.bland {
                    ratio < best_ratio - RATIO_TOL
                        || (ratio <= best_ratio + RATIO_TOL && enter.is_none())
                } else {
                    ratio <= theta_max && a.abs() > best_mag
                };
                if take {
                    enter = Some(j);
                    best_mag = a.abs();
                    best_ratio = ratio;
                }
            }
            let q = enter.expect("theta_max finite implies a candidate");

            self.load_column(q, &mut alpha);
            self.factor.ftran(&mut alpha);
            let apq = prow[q];
            if (alpha[p] - apq).abs() > 1e-7 * (1.0 + apq.abs()) {
                // row and column disagree: the factorization has drifted
                self.prow = prow;
                self.touched = std::mem::take(&mut touched);
                if self.factor.num_updates() == 0 {
                    return Err(self.failure("pivot row and column disagree after refactorization"));
                }
                self.refactor()?;
                self.compute_duals();
                if self.max_dual_infeasibility() > DUAL_TOL {
                    return Ok(PhaseEnd::DualLost);
                }
                continue;
            }

            let delta_q = (self.x[leaving] - target) / alpha[p];
            self.apply_primal_step(&alpha, q, delta_q);
            self.x[leaving] = target;
            self.state[leaving] = if below || self.lower[leaving] == self.upper[leaving] {
                VarState::AtLower
            } else {
                VarState::AtUpper
            };

            let theta = self.d[q] / apq;
            if theta != 0.0 {
                for &j in &touched {
                    let a = prow[j];
                    if a != 0.0 && self.state[j] != VarState::Basic {
                        self.d[j] -= theta * a;
                    }
                }
            }
            self.d[q] = 0.0;
            self.d[leaving] = -theta;
            self.prow = prow;
            self.touched = std::mem::take(&mut touched);

            self.pivot(p, q, &alpha);
            self.pivots += 1;
            self.note_step(theta.abs());
            self.record(Phase::Dual, Some(q), Some(leaving), theta);
        }
    }
}
