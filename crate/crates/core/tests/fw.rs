use approx::assert_abs_diff_eq;
use nash_match::assignment::Permutation;
use nash_match::fw::*;
use nash_match::gen::{generate, GenSpec, ModelKind, ValueMode};
use nash_match::model::*;
use nash_match::Termination;
use ndarray::{array, Array2};

fn fisher(u: Array2<f64>) -> MarketInstance {
    LinearInstance::fisher(u).unwrap().into()
}

fn uniform(n: usize) -> Allocation {
    Allocation::Matrix(Array2::from_elem((n, n), 1.0 / n as f64))
}

#[test]
fn atom_examples() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    let (p, value) = fw_atom(&m, &uniform(2)).unwrap();
    assert_eq!(p, Permutation::identity(2));
    assert_abs_diff_eq!(value, 8.0 / 3.0, epsilon = 1e-12);

    let one = fisher(array![[5.0]]);
    assert_eq!(fw_atom(&one, &uniform(1)).unwrap().0, Permutation::identity(1));

    let two: MarketInstance = TwoSidedInstance::new(Array2::eye(3), Array2::eye(3)).unwrap().into();
    assert_eq!(fw_atom(&two, &uniform(3)).unwrap().0, Permutation::identity(3));
}

#[test]
fn line_search_examples() {
    // v = (1, 3) at the identity, (3, 1) at the swap
    let m = fisher(array![[1.0, 3.0], [1.0, 3.0]]);
    let x = Allocation::Matrix(Array2::eye(2));
    let swap = Permutation::new(vec![1, 0]).unwrap();
    assert_abs_diff_eq!(fw_line_search(&m, &x, &swap, 1e-12).unwrap(), 0.5, epsilon = 1e-9);

    // the atom reproduces the current utilities
    let flat = fisher(Array2::ones((2, 2)));
    assert_eq!(fw_line_search(&flat, &x, &swap, 1e-12).unwrap(), 0.0);

    // moving toward the atom only loses
    let m = fisher(array![[3.0, 1.0], [1.0, 3.0]]);
    assert_eq!(fw_line_search(&m, &x, &swap, 1e-12).unwrap(), 0.0);
}

#[test]
fn line_search_stays_in_the_domain() {
    let m: MarketInstance = LinearInstance::new(array![[2.0, 0.5], [0.5, 2.0]], vec![1.0, 1.0]).unwrap().into();
    let x = Allocation::Matrix(Array2::eye(2));
    let swap = Permutation::new(vec![1, 0]).unwrap();
    let step = fw_line_search(&m, &x, &swap, 1e-12).unwrap();
    assert!((0.0..1.0).contains(&step));
}

#[test]
fn gap_examples() {
    let x = Array2::eye(2);
    assert_eq!(fw_gap(&Array2::ones((2, 2)), &x, &x, -2.0), 0.0);

    let g = array![[0.0, 1e-5], [0.0, 0.0]];
    let atom = array![[0.0, 1.0], [1.0, 0.0]];
    assert_abs_diff_eq!(fw_gap(&g, &x, &atom, -2.0), 5e-6, epsilon = 1e-20);
    assert_abs_diff_eq!(fw_gap(&g, &x, &atom, 1e-13), 1e-5, epsilon = 1e-20);
    assert_eq!(fw_gap_numerator(&(-g), &x, &atom), 0.0);
}

#[test]
fn uniform_start_reaches_the_identity_in_one_step() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    let out = fw_solve_from(&m, &FwConfig::default(), &uniform(2)).unwrap();
    assert_eq!(out.records[0].step, 1.0);
    assert_abs_diff_eq!(out.result.objective, 4f64.ln(), epsilon = 1e-12);
    assert_eq!(out.result.termination, Termination::GapReached);
    assert_eq!(out.result.iterations, 2);
}

#[test]
fn flat_market_stops_at_the_first_iteration() {
    let out = fw_solve(&fisher(Array2::ones((3, 3))), &FwConfig::default()).unwrap();
    assert_eq!(out.result.iterations, 1);
    assert_eq!(out.result.gap, 0.0);
    assert_eq!(out.result.objective, 0.0);
}

#[test]
fn solves_the_two_by_two_market() {
    let out = fw_solve(&fisher(array![[2.0, 1.0], [1.0, 2.0]]), &FwConfig::default()).unwrap();
    assert_abs_diff_eq!(out.result.objective, 4f64.ln(), epsilon = 1e-12);
}

#[test]
fn piecewise_models_are_unsupported() {
    for model in [ModelKind::OneSad, ModelKind::OneNad] {
        let m = generate(&GenSpec::new(model, 3, 0.5, ValueMode::Nonbinary, 2, 1)).unwrap();
        assert!(matches!(fw_solve(&m, &FwConfig::default()), Err(ModelError::Unsupported(_))));
    }
}

#[test]
fn blended_start_keeps_atoms_and_residual_consistent() {
    // every perfect matching leaves some agent below its disagreement point
    let m: MarketInstance = LinearInstance::new(array![[3.0, 1.0], [1.0, 0.0]], vec![1.5, 0.5]).unwrap().into();
    let out = fw_solve(&m, &FwConfig::default()).unwrap();
    assert!(out.initial_point_blended);
    assert!(out.residual.is_some());
    let x = out.result.allocation.as_matrix().unwrap();
    let back = out.reconstruct();
    assert!(back.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-9));
    let lottery = out.lottery().unwrap();
    let total: f64 = lottery.entries().iter().map(|e| e.1).sum();
    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
}

#[test]
fn iterates_are_monotone_feasible_and_sparse() {
    let config = FwConfig {
        max_iters: 300,
        ..FwConfig::default()
    };
    for model in [ModelKind::OneLf, ModelKind::OneLad, ModelKind::TwoLf] {
        for seed in 0..4 {
            let m = generate(&GenSpec::new(model, 8, 0.5, ValueMode::Nonbinary, 1, seed)).unwrap();
            let out = fw_solve(&m, &config).unwrap();
            for w in out.records.windows(2) {
                assert!(w[1].objective >= w[0].objective - 1e-12, "{model} seed {seed}");
            }
            assert!(validate_allocation(&m, &out.result.allocation, 1e-9).is_empty());
            assert!(out.atoms.len() <= out.result.iterations + 1);
            let x = out.result.allocation.as_matrix().unwrap();
            assert!(out.reconstruct().iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-9));
        }
    }
}

#[test]
fn sink_sees_every_record() {
    let m = generate(&GenSpec::new(ModelKind::OneLad, 6, 0.5, ValueMode::Nonbinary, 1, 2)).unwrap();
    let mut seen = Vec::new();
    let out = fw_solve_with_sink(&m, &FwConfig::default(), &mut |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, out.records);
    assert_eq!(out.records.len(), out.result.iterations);
}

#[test]
fn iteration_limit_is_honored() {
    let m = generate(&GenSpec::new(ModelKind::OneLad, 30, 0.33, ValueMode::Nonbinary, 1, 3)).unwrap();
    let config = FwConfig {
        max_iters: 3,
        gap_tol: 1e-15,
        ..FwConfig::default()
    };
    let out = fw_solve(&m, &config).unwrap();
    assert_eq!(out.result.termination, Termination::IterLimit);
    assert_eq!(out.result.iterations, 3);
}
