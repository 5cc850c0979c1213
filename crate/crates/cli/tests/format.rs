use nash_match::model::{LinearInstance, MarketInstance, TwoSidedInstance};
use nash_match_cli::format::{format_f64, to_json, InstanceFile};
use ndarray::Array2;
use proptest::prelude::*;

fn significant_digits(text: &str) -> usize {
    let mantissa = text.split(['e', 'E']).next().unwrap();
    mantissa
        .chars()
        .filter(|c| c.is_ascii_digit())
        .collect::<String>()
        .trim_start_matches('0')
        .len()
}

#[test]
fn float_text_examples() {
    assert_eq!(format_f64(2.0), "2.0000000000000000");
    assert_eq!(format_f64(0.1), "0.10000000000000001");
    assert_eq!(format_f64(0.0), "0.0000000000000000");
    assert_eq!(format_f64(1e-7), "9.9999999999999995e-8");
    assert_eq!(format_f64(1.5e20), "1.5000000000000000e20");
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -1e6f64..1e6,
        (0u32..=20).prop_map(f64::from),
    ]
}

fn matrix(n: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..100.0], n * n)
        .prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
}

fn linear() -> impl Strategy<Value = MarketInstance> {
    (1usize..=6)
        .prop_flat_map(|n| (matrix(n), matrix(n), proptest::collection::vec(0.0f64..1.0, n), any::<bool>()))
        .prop_filter_map("needs a positive row and column", |(u, w, c, two)| {
            if two {
                TwoSidedInstance::new(u, w).ok().map(Into::into)
            } else {
                LinearInstance::new(u, c).ok().map(Into::into)
            }
        })
}

proptest! {
    #[test]
    fn floats_read_back_exactly(v in finite()) {
        let text = format_f64(v);
        prop_assert_eq!(text.parse::<f64>().unwrap().to_bits(), v.to_bits());
        prop_assert!(v == 0.0 || significant_digits(&text) >= 17, "{}", text);
        let json: f64 = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(json.to_bits(), v.to_bits());
    }

    #[test]
    fn instances_round_trip(m in linear(), seed in proptest::option::of(any::<u64>())) {
        let text = to_json(&InstanceFile::encode(&m, seed));
        let file: InstanceFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(file.seed, seed);
        prop_assert_eq!(&file.decode().unwrap(), &m);
        prop_assert_eq!(to_json(&file), text);
    }
}
