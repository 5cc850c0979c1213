use nash_match_lp::{
    add_row_resolve, solve, LinearProgram, LpSolution, LpStatus, Relation, Row, Simplex,
};
use rand::{rngs::StdRng, Rng, SeedableRng};

const INF: f64 = f64::INFINITY;

fn two_var_program() -> LinearProgram {
    let mut lp = LinearProgram::new();
    lp.add_var(1.0, 0.0, INF);
    lp.add_var(1.0, 0.0, INF);
    lp.add_row(Row::le(vec![(0, 1.0), (1, 1.0)], 1.0));
    lp
}

#[test]
fn single_constraint_optimum() {
    let sol = solve(&two_var_program()).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective - 1.0).abs() < 1e-12);
}

#[test]
fn contradictory_rows_are_infeasible() {
    let mut lp = LinearProgram::new();
    lp.add_var(1.0, f64::NEG_INFINITY, INF);
    lp.add_row(Row::ge(vec![(0, 1.0)], 2.0));
    lp.add_row(Row::le(vec![(0, 1.0)], 1.0));
    assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);
}

#[test]
fn unbounded_ray_is_detected() {
    let mut lp = LinearProgram::new();
    lp.add_var(1.0, f64::NEG_INFINITY, INF);
    lp.add_row(Row::ge(vec![(0, 1.0)], 0.0));
    assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn warm_restart_examples() {
    let lp = two_var_program();
    let base = solve(&lp).unwrap();

    let s = add_row_resolve(&lp, &base, Row::le(vec![(0, 1.0)], 0.3)).unwrap();
    assert_eq!(s.status, LpStatus::Optimal);
    assert!((s.objective - 1.0).abs() < 1e-12);
    assert!(s.primal[0] <= 0.3 + 1e-12);

    let s = add_row_resolve(&lp, &base, Row::le(vec![(0, 1.0), (1, 1.0)], 2.0)).unwrap();
    assert_eq!(s.pivots, 0);
    assert_eq!(s.primal, base.primal);

    let s = add_row_resolve(&lp, &base, Row::le(vec![(0, 1.0), (1, 1.0)], 0.5)).unwrap();
    assert!((s.objective - 0.5).abs() < 1e-12);
}

#[test]
fn infeasible_augmentation_is_a_status() {
    let lp = two_var_program();
    let base = solve(&lp).unwrap();
    let s = add_row_resolve(&lp, &base, Row::ge(vec![(0, 1.0), (1, 1.0)], 3.0)).unwrap();
    assert_eq!(s.status, LpStatus::Infeasible);
}

#[test]
fn warm_restart_requires_optimal_basis() {
    let mut lp = LinearProgram::new();
    lp.add_var(1.0, 0.0, INF);
    let sol = solve(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Unbounded);
    assert!(add_row_resolve(&lp, &sol, Row::le(vec![(0, 1.0)], 1.0)).is_err());
}

#[test]
fn invalid_programs_are_rejected() {
    let mut lp = LinearProgram::new();
    lp.add_var(1.0, 1.0, 0.0);
    assert!(solve(&lp).is_err());
    let mut lp = LinearProgram::new();
    lp.add_var(1.0, 0.0, 1.0);
    lp.add_row(Row::le(vec![(3, 1.0)], 1.0));
    assert!(solve(&lp).is_err());
    let mut lp = LinearProgram::new();
    lp.add_var(f64::NAN, 0.0, 1.0);
    assert!(solve(&lp).is_err());
}

// ---- oracle: enumerate vertices of small boxed programs ------------------

/// Every (n-subset of active constraints) solved as a square system; the best
/// feasible point is the optimum of a boxed LP, or `None` when infeasible.
fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in lp.rows() {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.coeffs {
            a[j] += v;
        }
        planes.push((a, row.rhs));
    }
    for j in 0..n {
        let (lo, hi) = lp.bounds(j);
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lo));
        planes.push((e, hi));
    }
    let mut best: Option<f64> = None;
    let k = planes.len();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        if let Some(x) = solve_square(&idx.iter().map(|&i| planes[i].clone()).collect::<Vec<_>>()) {
            if lp.max_violation(&x) <= 1e-7 {
                let f = lp.objective_value(&x);
                best = Some(best.map_or(f, |b: f64| b.max(f)));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] != i + k - n {
                break;
            }
            if i == 0 && idx[0] == k - n {
                return best;
            }
        }
        idx[i] += 1;
        for t in i + 1..n {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

fn solve_square(rows: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .map(|(r, b)| {
            let mut v = r.clone();
            v.push(*b);
            v
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

fn random_boxed_lp(rng: &mut StdRng, n: usize, m: usize) -> LinearProgram {
    let mut lp = LinearProgram::new();
    for _ in 0..n {
        let lo = rng.gen_range(-2.0..1.0);
        let hi = lo + rng.gen_range(0.0..3.0);
        lp.add_var(rng.gen_range(-2.0..2.0), lo, hi);
    }
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = sparse_coeffs(rng, n, 0.8, -3.0, 3.0);
        let rel = match rng.gen_range(0..5) {
            0 => Relation::Eq,
            1 | 2 => Relation::Le,
            _ => Relation::Ge,
        };
        lp.add_row(Row::new(coeffs, rel, rng.gen_range(-2.0..2.0)));
    }
    lp
}

fn sparse_coeffs(rng: &mut StdRng, n: usize, p: f64, lo: f64, hi: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for j in 0..n {
        if rng.gen_bool(p) {
            out.push((j, rng.gen_range(lo..hi)));
        }
    }
    out
}

fn check_certificate(lp: &LinearProgram, sol: &LpSolution) {
    assert!(lp.max_violation(&sol.primal) <= 1e-9 * (1.0 + rhs_norm(lp)));
    // complementary slackness on rows and bounds
    for (i, row) in lp.rows().iter().enumerate() {
        let slack = row.rhs - row.activity(&sol.primal);
        assert!(
            (sol.duals[i] * slack).abs() <= 1e-8,
            "row {i}: dual {} slack {slack}",
            sol.duals[i]
        );
        match row.relation {
            Relation::Le => assert!(sol.duals[i] >= -1e-9),
            Relation::Ge => assert!(sol.duals[i] <= 1e-9),
            Relation::Eq => {}
        }
    }
    for j in 0..lp.num_vars() {
        let (lo, hi) = lp.bounds(j);
        let d = sol.reduced_costs[j];
        let x = sol.primal[j];
        if d > 1e-9 {
            assert!((hi - x).abs() <= 1e-8, "var {j}: d={d} but x={x} < hi={hi}");
        }
        if d < -1e-9 {
            assert!((x - lo).abs() <= 1e-8, "var {j}: d={d} but x={x} > lo={lo}");
        }
    }
    // dual objective from the bounds the certificate prices
    let mut dual_obj = 0.0;
    for (i, row) in lp.rows().iter().enumerate() {
        dual_obj += sol.duals[i] * row.rhs;
    }
    for j in 0..lp.num_vars() {
        let (lo, hi) = lp.bounds(j);
        let d = sol.reduced_costs[j];
        if d > 1e-12 {
            dual_obj += d * hi;
        } else if d < -1e-12 {
            dual_obj += d * lo;
        }
    }
    let gap = (dual_obj - sol.objective).abs() / (1.0 + sol.objective.abs());
    assert!(gap <= 1e-9, "duality gap {gap}");
}

fn rhs_norm(lp: &LinearProgram) -> f64 {
    lp.rows().iter().map(|r| r.rhs.abs()).fold(0.0, f64::max)
}

#[test]
fn matches_vertex_enumeration_on_small_programs() {
    let mut rng = StdRng::seed_from_u64(11);
    let (mut optimal, mut infeasible) = (0, 0);
    for _ in 0..400 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(0..=4);
        let lp = random_boxed_lp(&mut rng, n, m);
        let sol = solve(&lp).unwrap();
        match vertex_oracle(&lp) {
            Some(best) => {
                assert_eq!(sol.status, LpStatus::Optimal, "oracle found {best}");
                assert!((sol.objective - best).abs() <= 1e-7 * (1.0 + best.abs()));
                check_certificate(&lp, &sol);
                optimal += 1;
            }
            None => {
                assert_eq!(sol.status, LpStatus::Infeasible);
                infeasible += 1;
            }
        }
    }
    assert!(
        optimal > 100 && infeasible > 10,
        "{optimal} optimal, {infeasible} infeasible"
    );
}

/// Random program with a known feasible point; some variables free or
/// one-sided so both phases and all bound kinds are exercised.
fn random_feasible_lp(rng: &mut StdRng, n: usize, m: usize) -> LinearProgram {
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut lp = LinearProgram::new();
    for _ in 0..n {
        let (lo, hi) = match rng.gen_range(0..6) {
            0 => (f64::NEG_INFINITY, INF),
            1 => (0.0, INF),
            2 => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 1.0),
        };
        lp.add_var(rng.gen_range(-1.0..1.0), lo, hi);
    }
    // a box on the sum of absolute values keeps free directions bounded
    for j in 0..n {
        lp.add_row(Row::le(vec![(j, 1.0)], 5.0));
        lp.add_row(Row::ge(vec![(j, 1.0)], -5.0));
    }
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = sparse_coeffs(rng, n, 0.3, -2.0, 2.0);
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let row = match rng.gen_range(0..4) {
            0 => Row::eq(coeffs, act),
            1 => Row::ge(coeffs, act - rng.gen_range(0.0..0.5)),
            _ => Row::le(coeffs, act + rng.gen_range(0.0..0.5)),
        };
        lp.add_row(row);
    }
    lp
}

#[test]
fn certificates_hold_on_larger_programs() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..60 {
        let n = rng.gen_range(5..=50);
        let m = rng.gen_range(1..=30);
        let lp = random_feasible_lp(&mut rng, n, m);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        check_certificate(&lp, &sol);
    }
}

#[test]
fn add_row_resolve_matches_cold_solve() {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut checked = 0;
    let mut programs = 0;
    while checked < 1000 {
        programs += 1;
        let n = rng.gen_range(2..=50);
        let m = rng.gen_range(1..=20);
        let mut lp = random_feasible_lp(&mut rng, n, m);
        let mut prev = solve(&lp).unwrap();
        assert_eq!(prev.status, LpStatus::Optimal);
        for _ in 0..10 {
            // cut through the current optimum so most additions bind
            let coeffs: Vec<(usize, f64)> = sparse_coeffs(&mut rng, n, 0.4, -2.0, 2.0);
            let act: f64 = coeffs.iter().map(|&(j, a)| a * prev.primal[j]).sum();
            let row = if rng.gen_bool(0.5) {
                Row::le(coeffs, act - rng.gen_range(-0.2..0.5))
            } else {
                Row::ge(coeffs, act + rng.gen_range(-0.2..0.5))
            };
            let warm = add_row_resolve(&lp, &prev, row.clone()).unwrap();
            lp.add_row(row);
            let cold = solve(&lp).unwrap();
            assert_eq!(warm.status, cold.status, "program {programs}");
            checked += 1;
            if cold.status != LpStatus::Optimal {
                break;
            }
            assert!(
                (warm.objective - cold.objective).abs() <= 1e-9 * (1.0 + cold.objective.abs()),
                "warm {} vs cold {}",
                warm.objective,
                cold.objective
            );
            check_certificate(&lp, &warm);
            prev = warm;
        }
    }
}

#[test]
fn context_add_row_matches_free_function() {
    let mut rng = StdRng::seed_from_u64(77);
    let lp = random_feasible_lp(&mut rng, 20, 10);
    let mut ctx = Simplex::new(&lp).unwrap();
    let first = ctx.solve().unwrap();
    let row = Row::le(vec![(0, 1.0), (3, 1.0), (7, -1.0)], 0.1);
    let via_ctx = ctx.add_row(row.clone()).unwrap();
    let via_fn = add_row_resolve(&lp, &first, row).unwrap();
    assert_eq!(via_ctx.status, via_fn.status);
    assert!((via_ctx.objective - via_fn.objective).abs() < 1e-9);
}

#[test]
fn identical_input_gives_identical_pivots() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..10 {
        let lp = random_feasible_lp(&mut rng, 30, 20);
        let a = solve(&lp).unwrap();
        let b = solve(&lp).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn assignment_polytope_degeneracy() {
    // max sum w_ij x_ij over doubly stochastic x: heavily degenerate
    let n = 30;
    let mut rng = StdRng::seed_from_u64(9);
    let mut lp = LinearProgram::new();
    let w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0..5) as f64).collect();
    for &wij in &w {
        lp.add_var(wij, 0.0, 1.0);
    }
    for i in 0..n {
        lp.add_row(Row::eq((0..n).map(|j| (i * n + j, 1.0)).collect(), 1.0));
        lp.add_row(Row::eq((0..n).map(|j| (j * n + i, 1.0)).collect(), 1.0));
    }
    let sol = solve(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    check_certificate(&lp, &sol);
}

#[test]
fn crashed_start_matches_cold_solve() {
    let mut rng = StdRng::seed_from_u64(17);
    for case in 0..200 {
        let n = rng.gen_range(3..=40);
        let m = rng.gen_range(1..=25);
        let lp = random_feasible_lp(&mut rng, n, m);
        let cold = solve(&lp).unwrap();
        let hint: Vec<f64> = match case % 3 {
            0 => cold.primal.clone(),
            1 => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            _ => vec![0.5; n],
        };
        let warm = Simplex::with_start(&lp, &hint).unwrap().solve().unwrap();
        assert_eq!(warm.status, LpStatus::Optimal);
        check_certificate(&lp, &warm);
        assert!((warm.objective - cold.objective).abs() <= 1e-8 * (1.0 + cold.objective.abs()));
    }
}

#[test]
fn crashed_start_at_the_optimum_needs_few_pivots() {
    let n = 12;
    let mut lp = LinearProgram::new();
    for i in 0..n {
        for j in 0..n {
            lp.add_var(((i * 7 + j * 3) % 5) as f64, 0.0, 1.0);
        }
    }
    for i in 0..n {
        lp.add_row(Row::eq((0..n).map(|j| (i * n + j, 1.0)).collect(), 1.0));
        lp.add_row(Row::eq((0..n).map(|j| (j * n + i, 1.0)).collect(), 1.0));
    }
    let cold = solve(&lp).unwrap();
    let warm = Simplex::with_start(&lp, &cold.primal).unwrap().solve().unwrap();
    assert!((warm.objective - cold.objective).abs() < 1e-9);
    assert!(warm.pivots < cold.pivots);
}

#[test]
fn crashed_start_rejects_wrong_length() {
    assert!(Simplex::with_start(&two_var_program(), &[0.0]).is_err());
}
