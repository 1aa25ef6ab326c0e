use strn::features::{check_completeness, parse_features, write_features};
use strn::weights::{parse_weights, write_weights};
use strn::Error;
use strn_core::model::{init_params, ModelDims};
use strn_core::numeric::ParamStore;
use strn_core::synth::{generate, SynthConfig};

#[test]
fn weights_round_trip_bit_exact() {
    let mut store = init_params(&ModelDims { app: 16, heads: 2, key: 8, hidden: 12 }, 42).unwrap();
    store.set_meta("ablation", "A+L+S+Max");
    store.set_meta("note", "two words");
    store.param_mut(0).data[0] = -0.0;
    store.param_mut(0).data[1] = 1.0 / 3.0;
    store.param_mut(0).data[2] = 5e-324;
    let text = write_weights(&store);
    assert!(text.starts_with("STRN-WEIGHTS v1\n"));
    let back = parse_weights(&text).unwrap();
    assert_eq!(back.seed(), 42);
    assert_eq!(back.meta(), store.meta());
    assert_eq!(back.len(), store.len());
    for (a, b) in store.iter().zip(back.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.shape, b.shape);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.data), bits(&b.data), "{}", a.name);
    }
    assert_eq!(write_weights(&back), text);
}

#[test]
fn weights_errors_name_the_line() {
    assert!(matches!(parse_weights("STRN-WEIGHTS v2\n").unwrap_err(), Error::Parse { line: 1, .. }));
    let short = "STRN-WEIGHTS v1\n@seed 1\nw 2 2\n1 2 3\n";
    assert!(matches!(parse_weights(short).unwrap_err(), Error::Parse { line: 3, .. }));
    let long = "STRN-WEIGHTS v1\n@seed 1\nw 2\n1 2 3\n";
    assert!(matches!(parse_weights(long).unwrap_err(), Error::Parse { line: 4, .. }));
    let dup = "STRN-WEIGHTS v1\n@seed 1\nw 1\n1\nw 1\n2\n";
    assert!(matches!(parse_weights(dup).unwrap_err(), Error::Parse { line: 5, .. }));
    let nan = "STRN-WEIGHTS v1\n@seed 1\nw 1\nNaN\n";
    assert!(parse_weights(nan).is_err());
}

#[test]
fn empty_store_round_trips() {
    let s = ParamStore::new(9);
    assert_eq!(parse_weights(&write_weights(&s)).unwrap(), s);
}

#[test]
fn generated_features_are_complete() {
    let seq = generate(&SynthConfig { length: 200, ..SynthConfig::noisy(11) }).unwrap();
    let text = write_features(&seq.features);
    assert!(text.starts_with("STRN-FEATS v1 d=64\n"));
    let table = parse_features(&text).unwrap();
    assert_eq!(table, seq.features);
    check_completeness(&table, &seq.detections).unwrap();

    let mut missing = seq.detections.clone();
    let last = missing.iter_mut().rev().find(|f| !f.1.is_empty()).unwrap();
    last.1.push(last.1[0]);
    assert!(check_completeness(&table, &missing).is_err());

    let mut fewer = seq.detections.clone();
    let first = fewer.iter_mut().find(|f| f.1.len() > 1).unwrap();
    first.1.pop();
    assert!(check_completeness(&table, &fewer).is_err());
}

#[test]
fn feature_header_is_checked() {
    assert!(parse_features("").is_err());
    assert!(parse_features("STRN-FEATS v1 d=0\n").is_err());
    assert!(parse_features("STRN-FEATS v1\n").is_err());
    let t = parse_features("STRN-FEATS v1 d=2\n").unwrap();
    assert!(t.is_empty());
    let dup = parse_features("STRN-FEATS v1 d=1\n1,0,1\n1,0,2\n").unwrap_err();
    assert!(matches!(dup, Error::Parse { line: 3, .. }));
}
