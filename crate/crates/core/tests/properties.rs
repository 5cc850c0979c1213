use nash_match::ccp::{ccp_solve, CcpConfig};
use nash_match::gen::{generate, GenSpec, ModelKind, ValueMode};
use nash_match::model::*;
use ndarray::Array2;
use proptest::prelude::*;

fn shuffled(keys: &[u32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by_key(|&i| (keys[i], i));
    idx
}

/// Doubly stochastic matrix as a mixture of random permutations.
fn birkhoff(n: usize) -> impl Strategy<Value = Array2<f64>> {
    let part = (proptest::collection::vec(any::<u32>(), n), 0.05f64..1.0);
    proptest::collection::vec(part, 1..6).prop_map(move |parts| {
        let total: f64 = parts.iter().map(|p| p.1).sum();
        let mut x = Array2::zeros((n, n));
        for (keys, w) in parts {
            for (i, j) in shuffled(&keys).into_iter().enumerate() {
                x[[i, j]] += w / total;
            }
        }
        x
    })
}

fn market(model: ModelKind, n: usize, seed: u64) -> MarketInstance {
    generate(&GenSpec::new(model, n, 0.5, ValueMode::Nonbinary, 3, seed)).unwrap()
}

fn pair_and_weight() -> impl Strategy<Value = (usize, Array2<f64>, Array2<f64>, f64)> {
    (2usize..=6).prop_flat_map(|n| (Just(n), birkhoff(n), birkhoff(n), 0.0f64..=1.0))
}

fn blend(x: &Array2<f64>, y: &Array2<f64>, a: f64) -> Array2<f64> {
    x * a + y * (1.0 - a)
}

fn matrix_utilities(m: &MarketInstance, x: &Array2<f64>) -> Vec<f64> {
    let alloc = match m {
        MarketInstance::Splc(s) => s.fill_segments(x),
        _ => Allocation::Matrix(x.clone()),
    };
    utilities(m, &alloc).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn utilities_are_linear_for_linear_models(
        (n, x, y, a) in pair_and_weight(),
        seed in 0u64..1000,
    ) {
        for model in [ModelKind::OneLad, ModelKind::TwoLf] {
            let m = market(model, n, seed);
            let vx = matrix_utilities(&m, &x);
            let vy = matrix_utilities(&m, &y);
            let vz = matrix_utilities(&m, &blend(&x, &y, a));
            for i in 0..vz.len() {
                prop_assert!((vz[i] - (a * vx[i] + (1.0 - a) * vy[i])).abs() <= 1e-12 * (1.0 + vz[i].abs()));
            }
        }
    }

    #[test]
    fn splc_utilities_are_linear_in_segment_amounts(
        (n, x, y, a) in pair_and_weight(),
        seed in 0u64..1000,
    ) {
        let m = market(ModelKind::OneSad, n, seed);
        let MarketInstance::Splc(s) = &m else { unreachable!() };
        let (sx, sy) = (s.fill_segments(&x), s.fill_segments(&y));
        let sz = sx.blend(&sy, 1.0 - a);
        let vx = utilities(&m, &sx).unwrap();
        let vy = utilities(&m, &sy).unwrap();
        let vz = utilities(&m, &sz).unwrap();
        for i in 0..n {
            prop_assert!((vz[i] - (a * vx[i] + (1.0 - a) * vy[i])).abs() <= 1e-12 * (1.0 + vz[i].abs()));
        }
    }

    #[test]
    fn nplc_utilities_are_concave(
        (n, x, y, a) in pair_and_weight(),
        seed in 0u64..1000,
    ) {
        let m = market(ModelKind::OneNad, n, seed);
        let vx = matrix_utilities(&m, &x);
        let vy = matrix_utilities(&m, &y);
        let vz = matrix_utilities(&m, &blend(&x, &y, a));
        for i in 0..n {
            prop_assert!(vz[i] >= a * vx[i] + (1.0 - a) * vy[i] - 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences(
        (n, x, _, _) in pair_and_weight(),
        seed in 0u64..1000,
    ) {
        for model in [ModelKind::OneLf, ModelKind::TwoLf] {
            let m = market(model, n, seed);
            // keep every agent strictly inside the domain
            let x = blend(&x, &Array2::from_elem((n, n), 1.0 / n as f64), 0.9);
            let g = gradient(&m, &Allocation::Matrix(x.clone())).unwrap();
            let h = 1e-6;
            for ((i, j), gij) in g.indexed_iter() {
                let f = |d: f64| {
                    let mut y = x.clone();
                    y[[i, j]] += d;
                    objective(&m, &matrix_utilities(&m, &y)).unwrap()
                };
                prop_assert!(((f(h) - f(-h)) / (2.0 * h) - gij).abs() <= 1e-5);
            }
        }
    }
}

fn solve(m: &MarketInstance) -> nash_match::SolveResult {
    ccp_solve(m, &CcpConfig::default()).unwrap().result
}

fn scaled(m: &LinearInstance, lambda: &[f64]) -> MarketInstance {
    let mut u = m.u().clone();
    for (mut row, l) in u.rows_mut().into_iter().zip(lambda) {
        row *= *l;
    }
    let c = m.c().iter().zip(lambda).map(|(c, l)| c * l).collect();
    LinearInstance::new(u, c).unwrap().into()
}

fn permuted(m: &LinearInstance, order: &[usize]) -> MarketInstance {
    let u = Array2::from_shape_fn(m.u().dim(), |(i, j)| m.u()[[order[i], j]]);
    let c = order.iter().map(|&k| m.c()[k]).collect();
    LinearInstance::new(u, c).unwrap().into()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimum_is_invariant_under_agent_scaling(
        n in 2usize..=8,
        seed in 0u64..1000,
        picks in proptest::collection::vec(0usize..3, 8),
    ) {
        let MarketInstance::Linear(m) = market(ModelKind::OneLad, n, seed) else { unreachable!() };
        let lambda: Vec<f64> = picks[..n].iter().map(|&k| [0.1, 3.0, 10.0][k]).collect();
        let base = solve(&m.clone().into());
        let s = scaled(&m, &lambda);
        let other = solve(&s);
        let shift: f64 = lambda.iter().map(|l| l.ln()).sum();
        prop_assert!((other.objective - base.objective - shift).abs() <= 1e-5);
        // the scaled market's allocation is optimal for the original one
        let back = objective(&m.clone().into(), &utilities(&m.into(), &other.allocation).unwrap()).unwrap();
        prop_assert!((back - base.objective).abs() <= 1e-5);
    }

    #[test]
    fn optimum_follows_agent_permutations(
        n in 2usize..=8,
        seed in 0u64..1000,
        keys in proptest::collection::vec(any::<u32>(), 8),
    ) {
        let MarketInstance::Linear(m) = market(ModelKind::OneLad, n, seed) else { unreachable!() };
        let order = shuffled(&keys[..n]);
        let base = solve(&m.clone().into());
        let other = solve(&permuted(&m, &order));
        prop_assert!((other.objective - base.objective).abs() <= 1e-8 * (1.0 + base.objective.abs()));
        // an objective error e moves gain i by about (v_i - c_i) * sqrt(2e)
        let e = 1e-8 * (1.0 + base.objective.abs());
        for (i, &k) in order.iter().enumerate() {
            let tol = 2.0 * (base.v[k] - m.c()[k]) * (2.0 * e).sqrt();
            prop_assert!((other.v[i] - base.v[k]).abs() <= tol);
        }
    }

    #[test]
    fn converged_solutions_are_pareto_optimal(
        n in 1usize..=10,
        seed in 0u64..1000,
        model in prop_oneof![Just(ModelKind::OneLf), Just(ModelKind::OneLad), Just(ModelKind::OneSad), Just(ModelKind::OneNad)],
    ) {
        let m = market(model, n, seed);
        let r = solve(&m);
        prop_assert!(pareto_check(&m, &r.v).unwrap());
    }
}
