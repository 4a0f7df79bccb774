#![no_main]

use condexit::projection::{evaluate_drift, DriftField};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((probe, json)) = data.split_first_chunk::<16>() else {
        return;
    };
    let Ok(field) = serde_json::from_slice::<DriftField>(json) else {
        return;
    };
    let t = f64::from_le_bytes(probe[..8].try_into().unwrap());
    let x = f64::from_le_bytes(probe[8..].try_into().unwrap());
    let point = vec![x; field.dimension()];
    if let Ok(v) = evaluate_drift(&field, t, &point) {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(
            norm <= field.bound() * (1.0 + 1e-12),
            "{norm} > {}",
            field.bound()
        );
    }
    let text = serde_json::to_string(&field).unwrap();
    let back: DriftField = serde_json::from_str(&text).expect("serialized field parses");
    assert_eq!(back, field);
});
