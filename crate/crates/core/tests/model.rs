use approx::assert_abs_diff_eq;
use nash_match::model::*;
use ndarray::{array, Array2};

fn linear(u: Array2<f64>, c: Vec<f64>) -> MarketInstance {
    LinearInstance::new(u, c).unwrap().into()
}

fn fisher(u: Array2<f64>) -> MarketInstance {
    LinearInstance::fisher(u).unwrap().into()
}

fn mat(x: Array2<f64>) -> Allocation {
    Allocation::Matrix(x)
}

#[test]
fn linear_utilities_at_identity() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    let v = utilities(&m, &mat(Array2::eye(2))).unwrap();
    assert_eq!(v, vec![2.0, 2.0]);
}

#[test]
fn splc_utilities_sum_segment_contributions() {
    let seg = |slope| Segment { slope, length: 0.5 };
    let weak = vec![Segment { slope: 1.0, length: 1.0 }];
    let segments = vec![vec![seg(3.0), seg(1.0)], weak.clone(), weak.clone(), weak];
    let m: MarketInstance = SplcInstance::new(2, segments, vec![0.0, 0.0]).unwrap().into();
    let x = Allocation::Segments {
        n: 2,
        x: vec![vec![0.5, 0.25], vec![0.25], vec![0.25], vec![0.75]],
    };
    let v = utilities(&m, &x).unwrap();
    assert_abs_diff_eq!(v[0], 1.75 + 0.25, epsilon = 1e-15);
}

#[test]
fn nplc_utility_is_min_over_hyperplanes() {
    let agent0 = vec![
        Hyperplane { a: vec![1.0, 3.0], b: 0.0 },
        Hyperplane { a: vec![2.0, 1.0], b: 0.5 },
    ];
    let agent1 = vec![Hyperplane { a: vec![1.0, 1.0], b: 0.0 }];
    let m: MarketInstance = NplcInstance::new(2, vec![agent0, agent1], vec![0.0, 0.0]).unwrap().into();
    let v = utilities(&m, &mat(array![[0.5, 0.5], [0.5, 0.5]])).unwrap();
    assert_abs_diff_eq!(v[0], 2.0, epsilon = 1e-15);
}

#[test]
fn utilities_reject_wrong_shape() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    assert!(matches!(utilities(&m, &mat(Array2::eye(3))), Err(ModelError::Dimension(_))));
}

#[test]
fn objective_values() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    assert_abs_diff_eq!(objective(&m, &[2.0, 2.0]).unwrap(), 1.386294361, epsilon = 1e-9);
    assert_eq!(objective(&m, &[1.0, 1.0]).unwrap(), 0.0);
    let two: MarketInstance = TwoSidedInstance::new(Array2::eye(2), Array2::eye(2)).unwrap().into();
    assert_eq!(objective(&two, &[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
}

#[test]
fn objective_domain_error_names_the_agent() {
    let m = linear(array![[2.0, 1.0], [1.0, 2.0]], vec![0.5, 1.0]);
    match objective(&m, &[2.0, 1.0]) {
        Err(ModelError::Domain { agent, .. }) => assert_eq!(agent, 1),
        other => panic!("expected a domain error, got {other:?}"),
    }
}

#[test]
fn gradient_values() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    let g = gradient(&m, &mat(Array2::from_elem((2, 2), 0.5))).unwrap();
    let want = array![[4.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 4.0 / 3.0]];
    assert!(g.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-15));

    let m = fisher(Array2::eye(2));
    assert_eq!(gradient(&m, &mat(Array2::eye(2))).unwrap(), Array2::<f64>::eye(2));

    let two: MarketInstance = TwoSidedInstance::new(Array2::eye(2), Array2::eye(2)).unwrap().into();
    assert_eq!(gradient(&two, &mat(Array2::eye(2))).unwrap(), Array2::<f64>::eye(2) * 2.0);
}

#[test]
fn gradient_matches_central_differences() {
    let u = array![[3.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, 4.0, 2.0]];
    let w = array![[1.0, 2.0, 3.0], [0.0, 1.0, 4.0], [2.0, 0.0, 1.0]];
    let x = array![[0.5, 0.3, 0.2], [0.2, 0.4, 0.4], [0.3, 0.3, 0.4]];
    let markets: Vec<MarketInstance> = vec![
        linear(u.clone(), vec![0.2, 0.5, 0.1]),
        TwoSidedInstance::new(u, w).unwrap().into(),
    ];
    let h = 1e-6;
    for m in markets {
        let g = gradient(&m, &mat(x.clone())).unwrap();
        for ((i, j), gij) in g.indexed_iter() {
            let f = |d: f64| {
                let mut y = x.clone();
                y[[i, j]] += d;
                objective(&m, &utilities(&m, &mat(y)).unwrap()).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((fd - gij).abs() <= 1e-5, "{} ({i},{j}): {fd} vs {gij}", m.kind_name());
        }
    }
}

#[test]
fn gradient_unsupported_for_piecewise_models() {
    let m: MarketInstance = leontief_to_nplc(&[vec![(0, 1.0)], vec![(1, 1.0)]], vec![0.0, 0.0])
        .unwrap()
        .into();
    assert!(matches!(gradient(&m, &mat(Array2::eye(2))), Err(ModelError::Unsupported(_))));
}

#[test]
fn validate_allocation_examples() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    assert!(validate_allocation(&m, &mat(Array2::from_elem((2, 2), 0.5)), 1e-9).is_empty());

    let bad = validate_allocation(&m, &mat(array![[1.0, 0.0], [1.0, 0.0]]), 1e-9);
    let cols: Vec<usize> = bad
        .iter()
        .filter_map(|v| match v {
            Violation::ColumnSum { column, .. } => Some(*column),
            _ => None,
        })
        .collect();
    assert_eq!(cols, vec![0, 1]);

    let neg = validate_allocation(&m, &mat(array![[-0.1, 1.1], [1.1, -0.1]]), 1e-9);
    assert_eq!(neg.iter().filter(|v| matches!(v, Violation::Negative { .. })).count(), 2);
}

#[test]
fn validate_allocation_checks_segment_bounds() {
    let segs = vec![vec![Segment { slope: 2.0, length: 0.5 }, Segment { slope: 1.0, length: 0.5 }]; 4];
    let m: MarketInstance = SplcInstance::new(2, segs, vec![0.0, 0.0]).unwrap().into();
    let x = Allocation::Segments {
        n: 2,
        x: vec![vec![0.8, 0.2], vec![0.0, 0.0], vec![0.0, 0.0], vec![0.5, 0.5]],
    };
    let bad = validate_allocation(&m, &x, 1e-9);
    assert!(bad.iter().any(|v| matches!(v, Violation::SegmentBound { row: 0, column: 0, segment: 0, .. })));
}

#[test]
fn leontief_conversion() {
    let m = leontief_to_nplc(&[vec![(0, 0.5), (1, 0.25)], vec![(0, 1.0)]], vec![0.0, 0.0]).unwrap();
    let hs = m.hyperplanes(0);
    assert_eq!(hs.len(), 2);
    assert_eq!((hs[0].a.clone(), hs[0].b), (vec![2.0, 0.0], 0.0));
    assert_eq!((hs[1].a.clone(), hs[1].b), (vec![0.0, 4.0], 0.0));
    assert_eq!(m.hyperplanes(1), &[Hyperplane { a: vec![1.0, 0.0], b: 0.0 }]);

    let m: MarketInstance = leontief_to_nplc(&[vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]], vec![0.0; 2])
        .unwrap()
        .into();
    let v = utilities(&m, &mat(array![[0.3, 0.7], [0.7, 0.3]])).unwrap();
    assert_abs_diff_eq!(v[0], 0.3, epsilon = 1e-15);

    assert!(leontief_to_nplc(&[vec![(0, 0.0)]], vec![0.0]).is_err());
}

#[test]
fn certificate_for_identity_market() {
    let m = linear(Array2::eye(2), vec![0.4, 0.4]);
    let cert = feasibility_certificate(&m).unwrap();
    assert_abs_diff_eq!(cert.t_star, 0.6, epsilon = 1e-9);
    let x = cert.x_bar.aggregate();
    assert_abs_diff_eq!(x[[0, 0]], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(x[[1, 1]], 1.0, epsilon = 1e-9);
}

#[test]
fn certificate_positive_for_fisher_markets() {
    let m = fisher(array![[1.0, 0.0, 2.0], [0.0, 3.0, 0.0], [1.0, 1.0, 0.0]]);
    assert!(feasibility_certificate(&m).unwrap().t_star > 0.0);
}

#[test]
fn zero_column_is_rejected() {
    assert!(LinearInstance::fisher(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
}

#[test]
fn pareto_examples() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    assert!(pareto_check(&m, &[2.0, 2.0]).unwrap());
    assert!(!pareto_check(&m, &[1.5, 1.5]).unwrap());
    assert!(pareto_check(&fisher(array![[5.0]]), &[5.0]).unwrap());
}

#[test]
fn optimality_bound_vanishes_at_the_optimum() {
    let m = fisher(array![[2.0, 1.0], [1.0, 2.0]]);
    assert_abs_diff_eq!(optimality_bound(&m, &[2.0, 2.0]).unwrap(), 0.0, epsilon = 1e-9);
    // at (1.5, 1.5): gradient (2/3, 2/3), best v is (2, 2)
    assert_abs_diff_eq!(optimality_bound(&m, &[1.5, 1.5]).unwrap(), 2.0 / 3.0, epsilon = 1e-9);
}

#[test]
fn brute_force_examples() {
    let bf = brute_force_solve(&fisher(array![[2.0, 1.0], [1.0, 2.0]]), 0.02).unwrap();
    assert_abs_diff_eq!(bf.f_star, 4f64.ln(), epsilon = 1e-9);
    assert_abs_diff_eq!(bf.x_star[[0, 0]], 1.0, epsilon = 1e-9);

    let bf = brute_force_solve(&fisher(Array2::ones((2, 2))), 0.02).unwrap();
    assert_abs_diff_eq!(bf.f_star, 0.0, epsilon = 1e-12);

    let bf = brute_force_solve(&fisher(Array2::eye(2)), 0.02).unwrap();
    assert_abs_diff_eq!(bf.f_star, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(bf.x_star[[0, 0]], 1.0, epsilon = 1e-12);
}

#[test]
fn brute_force_refuses_large_markets() {
    let m = fisher(Array2::ones((5, 5)));
    assert!(matches!(brute_force_solve(&m, 0.02), Err(ModelError::TooLarge(5))));
}

#[test]
fn two_sided_utilities_list_agents_then_jobs() {
    let m: MarketInstance = TwoSidedInstance::new(array![[2.0, 1.0], [1.0, 3.0]], array![[4.0, 1.0], [1.0, 5.0]])
        .unwrap()
        .into();
    let v = utilities(&m, &mat(Array2::eye(2))).unwrap();
    assert_eq!(v, vec![2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn agent_scaling_and_permutation() {
    let m: MarketInstance = LinearInstance::new(ndarray::array![[2.0, 1.0], [1.0, 3.0]], vec![0.5, 0.25]).unwrap().into();
    let MarketInstance::Linear(s) = m.scale_agents(&[2.0, 10.0]).unwrap() else { unreachable!() };
    assert_eq!(s.u(), &ndarray::array![[4.0, 2.0], [10.0, 30.0]]);
    assert_eq!(s.c(), &[1.0, 2.5]);
    let MarketInstance::Linear(p) = m.permute_agents(&[1, 0]).unwrap() else { unreachable!() };
    assert_eq!(p.u(), &ndarray::array![[1.0, 3.0], [2.0, 1.0]]);
    assert_eq!(p.c(), &[0.25, 0.5]);
    assert!(m.scale_agents(&[1.0, 0.0]).is_err());
    assert!(m.permute_agents(&[0, 0]).is_err());
    let two: MarketInstance = TwoSidedInstance::new(Array2::eye(2), Array2::eye(2)).unwrap().into();
    assert!(matches!(two.scale_agents(&[1.0, 1.0]), Err(ModelError::Unsupported(_))));
}
