//! Named property suites run against a scenario. Shared by the command line
//! front end and the integration tests.

use crate::boundary::{classify, BranchRule, Kind};
use crate::geometry::{compress, compressed_distance, CompressedPoint};
use crate::records::write_rays;
use crate::scenario::{CommutantKind, Scenario};
use crate::symbols::{
    bracket_grid, bracket_identity_report, glancing_support_report, hp_omega_glancing_estimate, hp_phi_lower_bound,
    parse_b_symbol, GlancingSymbol, GridSpec, SampleSpec, BRACKET_BASKET,
};
use crate::tracer::{reverse, sample_ray, trace, BranchTree, EventKind, Ray};
use crate::verify::{
    billiard_oracle_flat, check_conservation, check_leaves_face, check_lipschitz, check_one_sided,
    check_uniform_limit, Coordinate, PiInvariant, PropertyReport,
};
use crate::{Error, Result};

/// Tolerance of the one-sided derivative comparison.
pub const ONE_SIDED_TOL: f64 = 1e-4;
/// Tolerance of the reversal re-trace comparison.
pub const RETRACE_TOL: f64 = 1e-6;
/// Tolerance of the oracle comparison.
pub const ORACLE_TOL: f64 = 1e-9;
/// Tolerance of the bracket identities.
pub const BRACKET_TOL: f64 = 1e-10;
const BRACKET_POINTS: usize = 1000;
const RETRACE_GRID: usize = 200;

pub fn trace_initial(sc: &Scenario) -> Vec<BranchTree> {
    sc.initial.iter().map(|q| trace(&sc.chart, q, &sc.trace)).collect()
}

fn trace_rays(sc: &Scenario, points: &[crate::CotangentPoint]) -> Vec<Ray> {
    points
        .iter()
        .flat_map(|q| trace(&sc.chart, q, &sc.trace).rays())
        .collect()
}

fn worst(reports: impl IntoIterator<Item = (usize, PropertyReport)>, name: &str, tol: f64) -> PropertyReport {
    let mut out = PropertyReport::new(name, 0.0, tol, None);
    let mut all_pass = true;
    for (i, r) in reports {
        all_pass &= r.pass;
        if r.statistic > out.statistic || r.statistic.is_nan() {
            out.statistic = r.statistic;
            out.location = r.location.map(|(_, s)| (i, s));
        }
    }
    out.pass = all_pass && out.statistic <= tol;
    out
}

/// Compressed distance between a reversed ray and its re-trace, after
/// shifting both to start at `s = 0`.
fn retrace_distance(sc: &Scenario, ray: &Ray) -> Result<f64> {
    let len = ray.s_end() - ray.s_start();
    let rev = reverse(ray);
    let Some(start) = rev.start_point() else { return Ok(0.0) };
    let mut cfg = sc.trace.clone();
    cfg.rule = BranchRule::Specular;
    cfg.integrator.max_time = len;
    let again = trace(&sc.chart, start, &cfg);
    let r2 = &again.nodes[0].ray;
    let len2 = r2.s_end() - r2.s_start();
    if (len2 - len).abs() > RETRACE_TOL {
        return Ok((len2 - len).abs());
    }
    let span = len.min(len2);
    let u: Vec<f64> = (0..=RETRACE_GRID).map(|i| span * i as f64 / RETRACE_GRID as f64).collect();
    let at = |r: &Ray| -> Vec<f64> { u.iter().map(|v| (r.s_start() + v).min(r.s_end())).collect() };
    let a = sample_ray(&rev, &at(&rev), false)?;
    let b = sample_ray(r2, &at(r2), false)?;
    let mut d = 0.0f64;
    for (qa, qb) in a.iter().zip(&b) {
        d = d.max(compressed_distance(&compress(&sc.chart, qa), &compress(&sc.chart, qb))?);
    }
    Ok(d)
}

fn involution_error(ray: &Ray) -> f64 {
    let rr = reverse(&reverse(ray));
    let mut d = 0.0f64;
    for (a, b) in ray.segments.iter().zip(&rr.segments) {
        for ((sa, qa), (sb, qb)) in a.samples.iter().zip(&b.samples) {
            d = d.max((sa - sb).abs());
            for (u, v) in qa.to_state().iter().zip(qb.to_state()) {
                d = d.max((u - v).abs());
            }
        }
    }
    if ray.segments.len() != rr.segments.len() || ray.events.len() != rr.events.len() {
        return f64::INFINITY;
    }
    d
}

/// Ray-level properties: conservation, leaving faces, one-sided derivative
/// law, reversal, determinism, and the scenario's Lipschitz and limit checks.
pub fn core_suite(sc: &Scenario) -> Result<Vec<PropertyReport>> {
    let chart = &sc.chart;
    let trees = trace_initial(sc);
    let rays: Vec<(bool, Ray)> = trees
        .iter()
        .flat_map(|t| {
            let single = t.nodes.len() == 1;
            t.rays().into_iter().map(move |r| (single, r))
        })
        .collect();
    let mut out = Vec::new();

    let cons: Vec<_> = rays.iter().map(|(_, r)| check_conservation(chart, r)).collect();
    out.push(worst(cons.iter().enumerate().map(|(i, c)| (i, c[0].clone())), "conservation-interior", 1e-8));
    out.push(worst(cons.iter().enumerate().map(|(i, c)| (i, c[1].clone())), "conservation-glide", 1e-6));

    let event_tol = sc.trace.integrator.event_tol;
    out.push(worst(
        rays.iter().enumerate().map(|(i, (_, r))| (i, check_leaves_face(chart, r, event_tol))),
        "leaves-face",
        10.0 * event_tol,
    ));

    let mut invariants = vec![PiInvariant::T];
    invariants.extend((0..chart.l()).map(PiInvariant::Y));
    invariants.extend((0..chart.l()).map(PiInvariant::Zeta));
    invariants.push(PiInvariant::Eta);
    for f in invariants {
        let mut each = Vec::new();
        for (i, (_, r)) in rays.iter().enumerate() {
            for (e, _) in r.reflections() {
                each.push((i, check_one_sided(chart, r, e, f, ONE_SIDED_TOL)?));
            }
        }
        let reflections = each.len();
        let mut rep = worst(each, &format!("one-sided-{}", f.name()), ONE_SIDED_TOL);
        rep.extra.push(("reflections".into(), reflections as f64));
        out.push(rep);
    }

    out.push(worst(
        rays.iter().enumerate().map(|(i, (_, r))| {
            (i, PropertyReport::new("", involution_error(r), 0.0, Some((i, r.s_start()))))
        }),
        "reverse-involution",
        0.0,
    ));

    let mut retraced = Vec::new();
    for (i, (single, r)) in rays.iter().enumerate() {
        if *single && r.s_end() > r.s_start() {
            let d = retrace_distance(sc, r)?;
            retraced.push((i, PropertyReport::new("", d, RETRACE_TOL, Some((i, r.s_start())))));
        }
    }
    let n_retraced = retraced.len();
    let mut rep = worst(retraced, "reverse-retrace", RETRACE_TOL);
    rep.extra.push(("rays".into(), n_retraced as f64));
    out.push(rep);

    let first = write_rays(&trees);
    let second = write_rays(&trace_initial(sc));
    let differs = if first == second { 0.0 } else { 1.0 };
    out.push(PropertyReport::new("determinism", differs, 0.0, None));

    if let (Some(m), Some(bx)) = (sc.verify.lipschitz_m, &sc.verify.lipschitz_box) {
        if sc.family.is_empty() {
            return Err(Error::EmptyFamily);
        }
        let fam = trace_rays(sc, &sc.family);
        out.push(check_lipschitz(&fam, &Coordinate::ALL, bx, m, sc.verify.lipschitz_grid)?);
    }

    if let Some(lim) = &sc.verify.limit {
        let fam: Vec<Ray> = lim
            .family
            .iter()
            .map(|q| trace(chart, q, &sc.trace).nodes[0].ray.clone())
            .collect();
        let cand = trace(chart, &lim.candidate, &sc.trace).nodes[0].ray.clone();
        out.push(check_uniform_limit(
            chart,
            &fam,
            &cand,
            lim.interval,
            lim.grid,
            sc.verify.delta_conv,
            event_tol,
        )?);
    }
    Ok(out)
}

/// Escape-function reports for every declared commutant, then the b-bracket
/// identities on the fixed symbol basket.
pub fn symbol_suite(sc: &Scenario) -> Result<Vec<PropertyReport>> {
    let chart = &sc.chart;
    let seed = sc.trace.seed;
    let mut out = Vec::new();
    for (i, c) in sc.commutants.iter().enumerate() {
        match c.kind {
            CommutantKind::Hyperbolic => {
                let spec = SampleSpec { n: c.samples, seed };
                match hp_phi_lower_bound(chart, &c.params, spec) {
                    Ok(h) => {
                        let mut r = PropertyReport::new(&format!("hyperbolic-positivity-{i}"), 0.0, 0.0, None);
                        r.statistic = h.min_hp_phi;
                        r.tolerance = h.c0 / 4.0;
                        r.pass = h.pass;
                        r.extra = vec![
                            ("c0".into(), h.c0),
                            ("c1pp".into(), h.c1pp),
                            ("eps".into(), c.params.eps),
                            ("threshold".into(), h.threshold),
                            ("samples".into(), h.samples as f64),
                            ("max-sigma-ratio".into(), h.max_sigma_ratio),
                            ("c1-valid".into(), if h.c1_valid { 1.0 } else { 0.0 }),
                        ];
                        out.push(r);
                    }
                    Err(Error::EpsilonTooSmall { eps, threshold }) => {
                        let mut r = PropertyReport::new(&format!("hyperbolic-epsilon-{i}"), threshold, eps, None);
                        r.pass = false;
                        out.push(r);
                    }
                    Err(e) => return Err(e),
                }
            }
            CommutantKind::Glancing => {
                let sym = GlancingSymbol::new(chart, c.params.clone())?;
                let s = glancing_support_report(&sym, c.samples, seed);
                let violations = (s.t_violations + s.omega_violations + s.band_violations) as f64;
                let mut r = PropertyReport::new(&format!("glancing-support-{i}"), violations, 0.0, None);
                r.pass = s.pass;
                r.extra = vec![
                    ("samples".into(), s.samples as f64),
                    ("in-support".into(), s.in_support as f64),
                    ("in-band".into(), s.in_band as f64),
                    ("t-violations".into(), s.t_violations as f64),
                    ("omega-violations".into(), s.omega_violations as f64),
                    ("band-violations".into(), s.band_violations as f64),
                ];
                out.push(r);
                let grid = GridSpec {
                    radius: c.radius,
                    n: c.samples,
                    seed,
                };
                let g = hp_omega_glancing_estimate(chart, &sym, grid)?;
                let mut r = PropertyReport::new(&format!("glancing-estimate-{i}"), g.refinement_change, 0.15, None);
                r.pass = g.pass;
                r.extra = vec![
                    ("c-coarse".into(), g.c_coarse),
                    ("c-fine".into(), g.c_fine),
                    ("c-without-p".into(), g.c_without_p),
                    ("ablation-violations".into(), g.ablation_violations as f64),
                    ("samples".into(), g.samples as f64),
                ];
                out.push(r);
            }
        }
    }
    out.push(bracket_report(seed)?);
    Ok(out)
}

/// Largest discrepancy of the bracket identity over the basket.
pub fn bracket_report(seed: u64) -> Result<PropertyReport> {
    let (k, l) = (2, 1);
    let points = bracket_grid(k, l, BRACKET_POINTS, seed);
    let mut r = PropertyReport::new("bracket-identities", 0.0, BRACKET_TOL, None);
    for (i, src) in BRACKET_BASKET.iter().enumerate() {
        let a = parse_b_symbol(src, k, l)?;
        let b = bracket_identity_report(&a, k, l, &points)?;
        r.extra.push((format!("symbol-{i}"), b.max_discrepancy));
        if b.max_discrepancy > r.statistic || b.max_discrepancy.is_nan() {
            r.statistic = b.max_discrepancy;
            r.location = Some((i, 0.0));
        }
    }
    r.pass = r.statistic <= BRACKET_TOL;
    r.extra.push(("points".into(), points.len() as f64));
    Ok(r)
}

/// Event-by-event comparison of each initial ray with the closed-form
/// billiard, under the specular rule.
pub fn oracle_suite(sc: &Scenario) -> Result<Vec<PropertyReport>> {
    let chart = &sc.chart;
    if !chart.is_flat() {
        return Err(Error::NotFlat);
    }
    let mut cfg = sc.trace.clone();
    cfg.rule = BranchRule::Specular;
    let mut out = Vec::new();
    for (i, q) in sc.initial.iter().enumerate() {
        let ray = trace(chart, q, &cfg).nodes[0].ray.clone();
        let oracle = billiard_oracle_flat(chart, q, cfg.integrator.max_time)?;
        let (d, at) = compare_events(&ray, &oracle);
        let mut r = PropertyReport::new(&format!("oracle-{i}"), d, ORACLE_TOL, at.map(|s| (i, s)));
        r.extra.push(("events".into(), ray.events.len() as f64));
        r.extra.push(("reflections".into(), ray.reflections().count() as f64));
        out.push(r);
    }
    Ok(out)
}

/// Largest mismatch in event times and post-event states; infinite when the
/// event sequences differ in length or kind.
pub fn compare_events(a: &Ray, b: &Ray) -> (f64, Option<f64>) {
    if a.events.len() != b.events.len() {
        return (f64::INFINITY, None);
    }
    let mut d = 0.0f64;
    let mut at = None;
    for (ea, eb) in a.events.iter().zip(&b.events) {
        if ea.kind.name() != eb.kind.name() || matches!(ea.kind, EventKind::Flagged { .. }) {
            return (f64::INFINITY, Some(ea.s));
        }
        let mut e = (ea.s - eb.s).abs();
        for (u, v) in ea.right.to_state().iter().zip(eb.right.to_state()) {
            e = e.max((u - v).abs());
        }
        if e > d {
            d = e;
            at = Some(ea.s);
        }
    }
    (d, at)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyRow {
    /// Length of `ζ` along the first tangential axis.
    pub zeta: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub kind: Kind,
}

pub fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Elliptic => "elliptic",
        Kind::Glancing => "glancing",
        Kind::Hyperbolic => "hyperbolic",
    }
}

/// Classification of `ζ = z e1, τ = 1` over the corner `x = 0` for `n + 1`
/// equally spaced `z ∈ [z_min, z_max]`. Base point from the first initial
/// point, or the centre of the domain.
pub fn classify_grid(sc: &Scenario, z_min: f64, z_max: f64, n: usize) -> Result<Vec<ClassifyRow>> {
    let chart = &sc.chart;
    let (k, l) = (chart.k(), chart.l());
    let d = chart.domain();
    let (y, t) = match sc.initial.first() {
        Some(q) => (q.y.clone(), q.t),
        None => (
            d.y_min.iter().zip(&d.y_max).map(|(a, b)| 0.5 * (a + b)).collect(),
            0.5 * (d.t_min + d.t_max),
        ),
    };
    let count = if l == 0 { 1 } else { n + 1 };
    (0..count)
        .map(|i| {
            let z = if l == 0 || n == 0 { z_min } else { z_min + (z_max - z_min) * i as f64 / n as f64 };
            let mut zeta = vec![0.0; l];
            if l > 0 {
                zeta[0] = z;
            }
            let c = classify(chart, &CompressedPoint::corner(y.clone(), t, k, zeta, 1.0))?;
            Ok(ClassifyRow {
                zeta: if l == 0 { 0.0 } else { z },
                margin: c.margin,
                tolerance: c.tolerance,
                kind: c.kind,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const STRIP: &str = r#"
name = "strip"
[chart]
k = 1
l = 0
x_max = [1.0]
t_min = -10.0
t_max = 10.0
[trace]
max_time = 5.0
[[initial]]
x = [0.5]
xi = [1.0]
tau = 1.0
"#;

    #[test]
    fn strip_core_suite_passes() {
        let sc = Scenario::parse(STRIP).unwrap();
        let reps = core_suite(&sc).unwrap();
        for r in &reps {
            assert!(r.pass, "{r:?}");
        }
        assert!(reps.iter().any(|r| r.name == "reverse-retrace"));
    }

    #[test]
    fn strip_oracle_agrees() {
        let sc = Scenario::parse(STRIP).unwrap();
        let reps = oracle_suite(&sc).unwrap();
        assert_eq!(reps.len(), 1);
        assert!(reps[0].pass, "{:?}", reps[0]);
    }

    #[test]
    fn classify_flips_at_unit_zeta() {
        let src = STRIP.replace("l = 0", "l = 1\ny_min = [-5.0]\ny_max = [5.0]").replace("xi = [1.0]", "xi = [1.0]\ny = [0.0]\nzeta = [0.0]");
        let sc = Scenario::parse(&src).unwrap();
        let rows = classify_grid(&sc, 0.0, 1.5, 15).unwrap();
        assert_eq!(rows.len(), 16);
        for r in &rows {
            let want = if r.zeta < 0.95 {
                Kind::Hyperbolic
            } else if r.zeta < 1.05 {
                Kind::Glancing
            } else {
                Kind::Elliptic
            };
            assert_eq!(r.kind, want, "{r:?}");
        }
    }

    #[test]
    fn bracket_basket_holds() {
        let r = bracket_report(1).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
