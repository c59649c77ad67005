use fleeg_core::{build_from_table, PersonalizedModel, Tensor4, WeightSet};
use fleeg_transport::{decode_frame, decode_weights, encode_frame, encode_weights, CodecError, Message};
use proptest::prelude::*;

fn entry() -> impl Strategy<Value = (String, [usize; 4], Vec<f64>)> {
    ("[a-z.]{0,12}", [1usize..4, 1usize..4, 1usize..4, 1usize..6]).prop_flat_map(|(name, dims)| {
        let n: usize = dims.iter().product();
        (Just(name), Just(dims), prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, n))
    })
}

fn set(entries: Vec<(String, [usize; 4], Vec<f64>)>) -> WeightSet {
    let mut w = WeightSet::default();
    for (name, dims, values) in entries {
        w.push(name, Tensor4::new(dims, values).unwrap());
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_sets_round_trip_bit_exactly(entries in prop::collection::vec(entry(), 0..6)) {
        let w = set(entries);
        let bytes = encode_weights(&w).unwrap();
        let back = decode_weights(&bytes).unwrap();
        prop_assert_eq!(back.layout(), w.layout());
        for (a, b) in back.values().zip(w.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn stream_prefixes_never_misparse(entries in prop::collection::vec(entry(), 0..3), round in 0usize..500) {
        let msgs = [
            Message::GlobalWeights { round, weights: set(entries) },
            Message::Shutdown,
            Message::Error("bye".into()),
        ];
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode_frame(m).unwrap()).collect();
        for cut in 0..=stream.len() {
            let mut rest = &stream[..cut];
            let mut parsed = 0;
            while let Some((m, used)) = decode_frame(rest).unwrap() {
                prop_assert_eq!(&m, &msgs[parsed]);
                parsed += 1;
                rest = &rest[used..];
            }
            let complete: usize = msgs[..parsed].iter().map(|m| encode_frame(m).unwrap().len()).sum();
            prop_assert_eq!(complete + rest.len(), cut);
        }
    }
}

#[test]
fn ku_global_weights_encode_canonically() {
    let (local, global) = build_from_table("KU").unwrap();
    let model = PersonalizedModel::new(local, global, 1000, 0, 0).unwrap();
    let w = model.global_weights();
    let first = encode_weights(w).unwrap();
    let second = encode_weights(&w.clone()).unwrap();
    assert_eq!(first, second);
    let back = decode_weights(&first).unwrap();
    assert_eq!(&back, w);
    assert_eq!(encode_weights(&back).unwrap(), first);
    assert_eq!(w.num_params(), 203_002);
}

#[test]
fn non_finite_values_are_refused() {
    let mut w = WeightSet::default();
    w.push("x", Tensor4::filled([1, 1, 1, 1], 0.0));
    w.get_mut(0).data_mut()[0] = f64::NAN;
    assert!(matches!(encode_weights(&w), Err(CodecError::NonFinite { .. })));
}
