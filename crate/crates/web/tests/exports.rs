use gridless_doa_web::{autocorr_json, covering_json, estimate_json};
use serde_json::Value;

#[test]
fn estimate_recovers_two_spikes() {
    let v: Value = serde_json::from_str(&estimate_json("circular", 17, 1.0, "30, 150", "1, 0.6", f64::INFINITY, 0.01, 20, 1).unwrap()).unwrap();
    let est = v["estimate"].as_array().unwrap();
    assert_eq!(est.len(), 2);
    for (s, t) in est.iter().zip([30.0, 150.0]) {
        assert!((s["theta_deg"].as_f64().unwrap() - t).abs() < 0.05);
    }
    let peak = v["dual_curve"].as_array().unwrap().iter().map(|p| p[1].as_f64().unwrap()).fold(0.0, f64::max);
    assert!(peak <= 1.0 + 1e-6 && peak > 0.99);
}

#[test]
fn covering_and_autocorr_shapes() {
    let v: Value = serde_json::from_str(&covering_json("circular", 16, 1.0).unwrap()).unwrap();
    assert_eq!(v["lags"].as_array().unwrap().len(), 16 * 16 / 2 + 1);
    assert!(v["gamma"].as_f64().unwrap() > 0.0);
    let a: Value = serde_json::from_str(&autocorr_json(8, 3).unwrap()).unwrap();
    let curve = a["curve"].as_array().unwrap();
    let mid = &curve[curve.len() / 2];
    assert!(mid[0].as_f64().unwrap().abs() < 1e-9 && (mid[1].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(estimate_json("hexagon", 7, 1.0, "0", "1", 10.0, 0.01, 20, 0).is_err());
    assert!(estimate_json("circular", 17, 1.0, "0, x", "1", 10.0, 0.01, 20, 0).is_err());
    assert!(autocorr_json(0, 3).is_err());
}
