use permabound_wasm::{bounds_json, explore_2x2, objective_curves};

#[test]
fn all_ones_2x2() {
    let e = explore_2x2(1.0, 1.0, 1.0, 1.0).unwrap();
    assert!((e.per - 2.0).abs() < 1e-12);
    // B = J_2 / 2: each of the four terms is (1/2) log 2, Bethe adds 4 (1/2) log(1/2)
    assert!((e.capacity - 4.0).abs() < 1e-9, "{}", e.capacity);
    assert!((e.bethe - 1.0).abs() < 1e-6, "{}", e.bethe);
}

#[test]
fn zero_permanent_short_circuits() {
    let e = explore_2x2(1.0, 0.0, 1.0, 0.0).unwrap();
    assert_eq!(e.per, 0.0);
    assert!(e.entropy_b.is_empty());
}

#[test]
fn bounds_order_on_2x2() {
    for &(a, b, c, d) in &[(1.0, 2.0, 3.0, 4.0), (0.1, 5.0, 2.0, 0.3), (1.0, 0.0, 1.0, 1.0)] {
        let e = explore_2x2(a, b, c, d).unwrap();
        assert!(e.bethe <= e.per * (1.0 + 1e-6));
        assert!(e.per <= e.capacity * (1.0 + 1e-9));
        assert!(e.per <= 4.0 * e.bethe * (1.0 + 1e-6));
    }
}

#[test]
fn curves_peak_at_optimum() {
    let c = objective_curves(1.0, 2.0, 3.0, 4.0, 201).unwrap();
    assert_eq!(c.t.len(), 201);
    assert!((c.log_per - 10f64.ln()).abs() < 1e-12);
    let emax = c.entropy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let omax = c.bethe.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = explore_2x2(1.0, 2.0, 3.0, 4.0).unwrap();
    assert!(emax <= e.capacity.ln() + 1e-9 && emax > e.capacity.ln() - 1e-3);
    assert!(omax <= e.bethe.ln() + 1e-7 && omax > e.bethe.ln() - 1e-3);
    assert!(omax <= c.log_per + 1e-9 && c.log_per <= emax + 1e-3);
}

#[test]
fn curves_reject_bad_input() {
    assert!(objective_curves(1.0, 0.0, 1.0, 1.0, 10).is_err());
    assert!(objective_curves(1.0, 1.0, 1.0, 1.0, 1).is_err());
    assert!(objective_curves(-1.0, 1.0, 1.0, 1.0, 10).is_err());
}

#[test]
fn bounds_report_is_json() {
    let s = bounds_json("uniform:4:7", true).unwrap();
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert!(v.is_object());
    assert!(bounds_json("uniform:40:7", false).is_err());
    assert!(bounds_json("nonsense", false).is_err());
}
