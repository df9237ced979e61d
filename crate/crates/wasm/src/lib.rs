//! Browser bindings: a disc billiard, the boundary classification margin and
//! a heatmap of the hyperbolic escape function.

use cornerray::boundary::{classify, Kind};
use cornerray::geometry::{BCotangentPoint, CompressedPoint, Domain, MetricCoeffs};
use cornerray::symbols::{a_hyp, CommutantParams};
use cornerray::tracer::{sample_ray, trace, EventKind, TraceConfig};
use cornerray::{Chart, CotangentPoint};
use wasm_bindgen::prelude::*;

fn disc() -> Chart {
    let d = Domain::new(vec![0.9], vec![-1e3], vec![1e3], -1e3, 1e3);
    let m = |e: &str| vec![vec![e.to_string()]];
    let coeffs = MetricCoeffs::parse(1, 1, &m("1"), &m("1/(1 - x1)^2"), &m("0")).expect("disc metric");
    Chart::new(1, 1, d, coeffs).expect("disc chart")
}

/// Traces the unit disc chord leaving the boundary with impact parameter
/// `b ∈ [0, 1]` and returns `n + 1` plane points as `[X0, Y0, X1, Y1, ..]`
/// followed by the reflection points in the same layout, prefixed by their count.
#[wasm_bindgen]
pub fn trace_disc(b: f64, max_time: f64, n: usize) -> Vec<f64> {
    let b = b.clamp(0.0, 1.0);
    let q0 = CotangentPoint::new(vec![0.0], vec![0.0], 0.0, vec![-(1.0 - b * b).max(0.0).sqrt()], vec![b], 1.0);
    let mut cfg = TraceConfig::default();
    cfg.integrator.max_time = max_time.clamp(0.0, 50.0);
    let tree = trace(&disc(), &q0, &cfg);
    let ray = &tree.nodes[0].ray;
    let (lo, hi) = ray.range();
    let n = n.max(1);
    let s: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let plane = |q: &CotangentPoint| {
        let r = 1.0 - q.x[0];
        [r * q.y[0].cos(), r * q.y[0].sin()]
    };
    let mut out: Vec<f64> = sample_ray(ray, &s, false).unwrap_or_default().iter().flat_map(plane).collect();
    let hits: Vec<[f64; 2]> = ray
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Reflection { .. }))
        .map(|e| plane(&e.right))
        .collect();
    out.push(hits.len() as f64);
    out.extend(hits.iter().flatten());
    out
}

/// Margin `τ² - |ζ|²` and kind of the boundary covector `(ζ, τ)` of the flat
/// half plane, as `"<kind> <margin>"`.
#[wasm_bindgen]
pub fn classify_flat(zeta: f64, tau: f64) -> String {
    let d = Domain::new(vec![1.0], vec![-1.0], vec![1.0], -1.0, 1.0);
    let chart = Chart::flat(1, 1, d).expect("flat chart");
    match classify(&chart, &CompressedPoint::corner(vec![0.0], 0.0, 1, vec![zeta], tau)) {
        Ok(c) => {
            let kind = match c.kind {
                Kind::Elliptic => "elliptic",
                Kind::Glancing => "glancing",
                Kind::Hyperbolic => "hyperbolic",
            };
            format!("{kind} {}", c.margin)
        }
        Err(e) => format!("error {e}"),
    }
}

/// `a_hyp` over an `n × n` grid of `(σ, x)` at the flat half plane point
/// `y = t = ζ = 0, τ = 1`, with `σ ∈ [-4δ, 2δ]` and `x ∈ [0, 2εδ]`. Row major
/// in `x`; empty for invalid parameters.
#[wasm_bindgen]
pub fn hyperbolic_heatmap(delta: f64, eps: f64, n: usize) -> Vec<f64> {
    let q0 = CompressedPoint::corner(vec![0.0], 0.0, 1, vec![0.0], 1.0);
    let Ok(params) = CommutantParams::new(q0, delta, eps, 1.0, 1.0) else {
        return Vec::new();
    };
    let n = n.clamp(2, 512);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let x = 2.0 * eps * delta * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let sigma = delta * (-4.0 + 6.0 * j as f64 / (n - 1) as f64);
            let q = BCotangentPoint {
                x: vec![x],
                y: vec![0.0],
                t: 0.0,
                sigma: vec![sigma],
                zeta: vec![0.0],
                tau: 1.0,
            };
            out.push(a_hyp(&q, &params));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_chord_stays_in_the_disc() {
        let v = trace_disc(0.8, 4.0, 200);
        let pts = &v[..402];
        for p in pts.chunks(2) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((0.8 - 1e-6..=1.0 + 1e-9).contains(&r), "{r}");
        }
        let hits = v[402] as usize;
        assert_eq!(hits, 6);
        for h in v[403..].chunks(2) {
            assert!(((h[0] * h[0] + h[1] * h[1]).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn classification_strings() {
        assert!(classify_flat(0.5, 1.0).starts_with("hyperbolic 0.75"));
        assert!(classify_flat(1.0, 1.0).starts_with("glancing"));
        assert!(classify_flat(1.5, 1.0).starts_with("elliptic"));
    }

    #[test]
    fn heatmap_is_a_cutoff() {
        let h = hyperbolic_heatmap(1e-3, 30.0, 32);
        assert_eq!(h.len(), 32 * 32);
        assert!(h.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(h.iter().any(|&v| v > 0.0));
        assert!(hyperbolic_heatmap(-1.0, 30.0, 8).is_empty());
    }
}
