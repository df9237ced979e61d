use cornerray_wasm::{classify_flat, hyperbolic_heatmap, trace_disc};

#[test]
fn near_grazing_chords_hug_the_circle() {
    let n = 400;
    let v = trace_disc(0.999, 2.0, n);
    let min_r = v[..2 * (n + 1)]
        .chunks(2)
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
        .fold(f64::INFINITY, f64::min);
    assert!(min_r > 0.998, "{min_r}");
}

#[test]
fn margin_changes_sign_at_unit_zeta() {
    let margin = |z: f64| classify_flat(z, 1.0).split_whitespace().nth(1).unwrap().parse::<f64>().unwrap();
    assert!(margin(0.9) > 0.0);
    assert!(margin(1.1) < 0.0);
}

#[test]
fn heatmap_vanishes_far_from_the_boundary() {
    let n = 16;
    let h = hyperbolic_heatmap(1e-3, 30.0, n);
    // top row: x = 2εδ, outside the support of a
    assert!(h[(n - 1) * n..].iter().all(|&v| v == 0.0));
}
