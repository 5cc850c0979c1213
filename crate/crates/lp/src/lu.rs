//! Sparse LU factorization of a simplex basis, plus a product-form eta file
//! for the updates between refactorizations.
//!
//! Columns of the basis are addressed by basis position, rows by constraint
//! index. Pivots are chosen with a Markowitz search under threshold partial
//! pivoting; singletons are taken first, which keeps network-like bases
//! (assignment rows, unit logicals) almost fill-free.

const DROP_TOL: f64 = 1e-14;
const SINGULAR_TOL: f64 = 1e-11;
const MARKOWITZ_THRESHOLD: f64 = 0.1;
const MARKOWITZ_COLUMNS: usize = 4;

/// Basis positions that could not be pivoted, paired with rows left over.
#[derive(Debug, Clone)]
pub(crate) struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LuFactors {
    m: usize,
    prow: Vec<usize>,
    pcol: Vec<usize>,
    pivot: Vec<f64>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
}

impl LuFactors {
    /// Factorizes the `m x m` matrix whose column `p` is `columns[p]`.
    pub fn factorize(m: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self, Singular> {
        debug_assert_eq!(columns.len(), m);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (c, col) in columns.iter().enumerate() {
            for &(r, v) in col {
                if v.abs() > DROP_TOL {
                    rows[r].push((c, v));
                    cols[c].push(r);
                }
            }
        }

        let mut row_done = vec![false; m];
        let mut col_done = vec![false; m];
        let mut pos_in_row = vec![usize::MAX; m];
        let mut f = LuFactors {
            m,
            l_start: vec![0],
            u_start: vec![0],
            ..Default::default()
        };

        let mut col_singletons: Vec<usize> = (0..m).filter(|&c| cols[c].len() == 1).collect();
        let mut row_singletons: Vec<usize> = (0..m).filter(|&r| rows[r].len() == 1).collect();

        for _step in 0..m {
            let mut choice: Option<(usize, usize)> = None;

            while let Some(c) = col_singletons.pop() {
                if col_done[c] || cols[c].len() != 1 {
                    continue;
                }
                let r = cols[c][0];
                let v = entry(&rows[r], c);
                if v.abs() > SINGULAR_TOL {
                    choice = Some((r, c));
                    break;
                }
            }
            if choice.is_none() {
                while let Some(r) = row_singletons.pop() {
                    if row_done[r] || rows[r].len() != 1 {
                        continue;
                    }
                    let (c, v) = rows[r][0];
                    let colmax = column_max(&rows, &cols[c], c);
                    if v.abs() > SINGULAR_TOL && v.abs() >= MARKOWITZ_THRESHOLD * colmax {
                        choice = Some((r, c));
                        break;
                    }
                }
            }
            if choice.is_none() {
                choice = markowitz_search(&rows, &cols, &col_done);
            }
            let Some((r, c)) = choice else {
                break;
            };

            let piv = entry(&rows[r], c);
            // U row: everything in the pivot row except the pivot itself.
            let prow_entries = std::mem::take(&mut rows[r]);
            for &(j, v) in &prow_entries {
                if j != c {
                    f.u_idx.push(j);
                    f.u_val.push(v);
                }
                // row r leaves the active submatrix
                let list = &mut cols[j];
                if let Some(k) = list.iter().position(|&x| x == r) {
                    list.swap_remove(k);
                }
                if j != c && !col_done[j] && list.len() == 1 {
                    col_singletons.push(j);
                }
            }
            f.u_start.push(f.u_idx.len());

            let elim_rows = std::mem::take(&mut cols[c]);
            for &k in &elim_rows {
                if k == r || row_done[k] {
                    continue;
                }
                let row_k = &mut rows[k];
                let Some(ic) = row_k.iter().position(|&(j, _)| j == c) else {
                    continue;
                };
                let l = row_k[ic].1 / piv;
                row_k.swap_remove(ic);
                f.l_idx.push(k);
                f.l_val.push(l);
                for (idx, &(j, _)) in row_k.iter().enumerate() {
                    pos_in_row[j] = idx;
                }
                for &(j, v) in &prow_entries {
                    if j == c {
                        continue;
                    }
                    let p = pos_in_row[j];
                    if p != usize::MAX {
                        row_k[p].1 -= l * v;
                    } else {
                        row_k.push((j, -l * v));
                        cols[j].push(k);
                    }
                }
                for &(j, _) in row_k.iter() {
                    pos_in_row[j] = usize::MAX;
                }
                if row_k.len() == 1 {
                    row_singletons.push(k);
                }
            }
            f.l_start.push(f.l_idx.len());

            row_done[r] = true;
            col_done[c] = true;
            f.prow.push(r);
            f.pcol.push(c);
            f.pivot.push(piv);
        }

        if f.prow.len() < m {
            return Err(Singular {
                positions: (0..m).filter(|&c| !col_done[c]).collect(),
                rows: (0..m).filter(|&r| !row_done[r]).collect(),
            });
        }
        Ok(f)
    }

    /// Solves `B x = b` in place: `b` is indexed by row on entry, by basis
    /// position on exit.
    pub fn ftran(&self, b: &mut [f64], work: &mut Vec<f64>) {
        let m = self.m;
        for k in 0..m {
            let t = b[self.prow[k]];
            if t != 0.0 {
                for e in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_idx[e]] -= self.l_val[e] * t;
                }
            }
        }
        work.clear();
        work.resize(m, 0.0);
        for k in (0..m).rev() {
            let mut s = b[self.prow[k]];
            for e in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[e] * work[self.u_idx[e]];
            }
            work[self.pcol[k]] = s / self.pivot[k];
        }
        b.copy_from_slice(work);
    }

    /// Solves `y^T B = c^T` in place: `c` is indexed by basis position on
    /// entry, by row on exit.
    pub fn btran(&self, c: &mut [f64], work: &mut Vec<f64>) {
        let m = self.m;
        work.clear();
        work.resize(m, 0.0);
        for k in 0..m {
            let zk = c[self.pcol[k]] / self.pivot[k];
            work[self.prow[k]] = zk;
            if zk != 0.0 {
                for e in self.u_start[k]..self.u_start[k + 1] {
                    c[self.u_idx[e]] -= self.u_val[e] * zk;
                }
            }
        }
        for k in (0..m).rev() {
            let mut s = 0.0;
            for e in self.l_start[k]..self.l_start[k + 1] {
                s += self.l_val[e] * work[self.l_idx[e]];
            }
            work[self.prow[k]] -= s;
        }
        c.copy_from_slice(work);
    }

    #[cfg(test)]
    pub fn nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len() + self.m
    }
}

fn entry(row: &[(usize, f64)], c: usize) -> f64 {
    row.iter().find(|&&(j, _)| j == c).map_or(0.0, |&(_, v)| v)
}

fn column_max(rows: &[Vec<(usize, f64)>], pattern: &[usize], c: usize) -> f64 {
    pattern
        .iter()
        .map(|&r| entry(&rows[r], c).abs())
        .fold(0.0, f64::max)
}

fn markowitz_search(
    rows: &[Vec<(usize, f64)>],
    cols: &[Vec<usize>],
    col_done: &[bool],
) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..cols.len())
        .filter(|&c| !col_done[c] && !cols[c].is_empty())
        .collect();
    order.sort_by_key(|&c| (cols[c].len(), c));

    let mut best: Option<(usize, usize)> = None;
    let mut best_cost = usize::MAX;
    let mut best_mag = 0.0;
    let mut examined = 0;
    for &c in &order {
        let colmax = column_max(rows, &cols[c], c);
        if colmax <= SINGULAR_TOL {
            continue;
        }
        let cc = cols[c].len() - 1;
        for &r in &cols[c] {
            let v = entry(&rows[r], c).abs();
            if v < MARKOWITZ_THRESHOLD * colmax || v <= SINGULAR_TOL {
                continue;
            }
            let cost = (rows[r].len() - 1) * cc;
            if cost < best_cost || (cost == best_cost && v > best_mag) {
                best = Some((r, c));
                best_cost = cost;
                best_mag = v;
            }
        }
        examined += 1;
        if examined >= MARKOWITZ_COLUMNS && best.is_some() {
            break;
        }
    }
    best
}

/// One product-form update: column `pos` of the basis was replaced by a
/// column whose FTRAN image is `alpha`.
#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

/// LU factors of the last refactorized basis and the etas applied since.
#[derive(Debug, Clone, Default)]
pub(crate) struct BasisFactor {
    lu: LuFactors,
    etas: Vec<Eta>,
    work: Vec<f64>,
}

impl BasisFactor {
    pub fn new(lu: LuFactors) -> Self {
        BasisFactor {
            lu,
            etas: Vec::new(),
            work: Vec::new(),
        }
    }

    pub fn num_updates(&self) -> usize {
        self.etas.len()
    }

    pub fn ftran(&mut self, b: &mut [f64]) {
        self.lu.ftran(b, &mut self.work);
        for eta in &self.etas {
            let xp = b[eta.pos] / eta.pivot;
            b[eta.pos] = xp;
            if xp != 0.0 {
                for &(i, a) in &eta.entries {
                    b[i] -= a * xp;
                }
            }
        }
    }

    pub fn btran(&mut self, c: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut s = c[eta.pos];
            for &(i, a) in &eta.entries {
                s -= a * c[i];
            }
            c[eta.pos] = s / eta.pivot;
        }
        self.lu.btran(c, &mut self.work);
    }

    /// Records that the column at `pos` was replaced; `alpha` is the FTRAN
    /// of the entering column against the basis before the replacement.
    pub fn update(&mut self, pos: usize, alpha: &[f64]) {
        let entries = alpha
            .iter()
            .enumerate()
            .filter(|&(i, a)| i != pos && a.abs() > DROP_TOL)
            .map(|(i, &a)| (i, a))
            .collect();
        self.etas.push(Eta {
            pos,
            pivot: alpha[pos],
            entries,
        });
    }
}
