use hiergeo_wasm::{campus_partition, dycl_curve, rerank_demo};

#[test]
fn campus_levels_follow_distance_to_anchor() {
    let view = campus_partition(4, 30, 1500.0, 3, vec![0.0, 200.0, 500.0]).unwrap();
    assert_eq!(view.buildings.len(), 30);
    assert_eq!(view.buildings.iter().filter(|b| b.train).count(), 18);
    let anchor = view.buildings.iter().find(|b| b.id == view.anchor).unwrap();
    assert_eq!(anchor.level, 0);
    for b in &view.buildings {
        let d = ((b.x - anchor.x).powi(2) + (b.y - anchor.y).powi(2)).sqrt();
        let expected = view.thresholds.iter().position(|&t| d <= t).unwrap_or(3);
        assert_eq!(b.level, expected, "building {} at {d} m", b.id);
    }
}

#[test]
fn campus_rejects_bad_thresholds() {
    assert!(campus_partition(0, 10, 1000.0, 0, vec![0.0, 500.0, 200.0]).is_err());
}

#[test]
fn dycl_curve_decreases_with_gap_and_margin() {
    let steps = 21;
    let curve = dycl_curve(32.0, vec![0.3, 0.2, 0.1], -1.0, 1.0, steps).unwrap();
    assert_eq!(curve.len(), 3 * steps);
    for row in curve.chunks(steps) {
        assert!(row.windows(2).all(|w| w[1] < w[0]));
    }
    // a larger margin costs more at every gap
    for i in 0..steps {
        assert!(curve[i] > curve[steps + i] && curve[steps + i] > curve[2 * steps + i]);
    }
    // softplus(tau * (m - gap)) at gap = 0 for the first scale
    let expected = (1.0 + (32.0f64 * 0.3).exp()).ln();
    assert!((curve[10] - expected).abs() < 1e-12);
}

#[test]
fn rerank_demo_returns_permutations() {
    let view = rerank_demo(2, 24, 6, vec![3, 6, 12]).unwrap();
    assert_eq!(view.points.len(), 25);
    for order in [&view.original, &view.standard, &view.multi_scale] {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..24).collect::<Vec<_>>());
    }
    assert_eq!(view.standard_shift.len(), 24);
    assert!(rerank_demo(2, 24, 30, vec![3]).is_err());
}
