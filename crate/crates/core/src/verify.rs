//! Property oracles run against traced rays.

use num_dual::Dual64;

use crate::boundary::{face_form, linear_span};
use crate::geometry::{compress, compressed_distance, Chart, CotangentPoint, FaceId, Side, UpperSide};
use crate::hamiltonian::{eval_hp, eta, p_generic, Direction, Segment, SegmentKind, Terminal};
use crate::tracer::{sample_ray, Event, EventKind, Ray};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: String,
    pub pass: bool,
    pub statistic: f64,
    /// `(ray index, s)` of the worst case.
    pub location: Option<(usize, f64)>,
    pub tolerance: f64,
    /// Secondary statistics, in a fixed order.
    pub extra: Vec<(String, f64)>,
}

impl PropertyReport {
    pub fn new(name: &str, statistic: f64, tolerance: f64, location: Option<(usize, f64)>) -> Self {
        Self {
            name: name.to_string(),
            pass: statistic <= tolerance,
            statistic,
            location,
            tolerance,
            extra: Vec::new(),
        }
    }
}

/// Coordinates constant on the fibers of the compression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiInvariant {
    T,
    X(usize),
    Y(usize),
    Zeta(usize),
    Tau,
    Eta,
}

impl PiInvariant {
    pub fn eval<S: Scalar>(&self, q: &CotangentPoint<S>) -> S {
        match *self {
            PiInvariant::T => q.t,
            PiInvariant::X(j) => q.x[j],
            PiInvariant::Y(j) => q.y[j],
            PiInvariant::Zeta(j) => q.zeta[j],
            PiInvariant::Tau => q.tau,
            PiInvariant::Eta => eta(q),
        }
    }

    pub fn name(&self) -> String {
        match self {
            PiInvariant::T => "t".into(),
            PiInvariant::X(j) => format!("x{}", j + 1),
            PiInvariant::Y(j) => format!("y{}", j + 1),
            PiInvariant::Zeta(j) => format!("zeta{}", j + 1),
            PiInvariant::Tau => "tau".into(),
            PiInvariant::Eta => "eta".into(),
        }
    }

    /// `⟨∇f, H_p⟩` at `q`.
    pub fn hp_derivative(&self, chart: &Chart, q: &CotangentPoint) -> Result<f64> {
        let v = eval_hp(chart, q)?.to_state();
        let d: CotangentPoint<Dual64> = q.with_tangent(&v);
        Ok(self.eval(&d).eps)
    }
}

/// Sample parameters for a segment: its nodes and the midpoints between them.
fn segment_probes(seg: &Segment) -> Vec<(f64, CotangentPoint)> {
    let mut out = Vec::with_capacity(2 * seg.samples.len());
    for w in seg.samples.windows(2) {
        out.push(w[0].clone());
        let m = 0.5 * (w[0].0 + w[1].0);
        if let Some(q) = seg.eval(m) {
            out.push((m, q));
        }
    }
    if let Some(last) = seg.samples.last() {
        out.push(last.clone());
    }
    out
}

/// `max |p|/τ²` over interior segments and `max |margin|/τ²` over gliding
/// segments, as two reports.
pub fn check_conservation(chart: &Chart, ray: &Ray) -> [PropertyReport; 2] {
    let mut worst_i = (0.0f64, None);
    let mut worst_g = (0.0f64, None);
    for seg in &ray.segments {
        for (s, q) in segment_probes(seg) {
            let tau2 = q.tau * q.tau;
            match seg.kind {
                SegmentKind::Interior => {
                    let v = p_generic(chart, &q).abs() / tau2;
                    if v > worst_i.0 || v.is_nan() {
                        worst_i = (v, Some((0, s)));
                    }
                }
                SegmentKind::Gliding(face) => {
                    let v = face_form(chart, face, &q).margin.abs() / tau2;
                    if v > worst_g.0 || v.is_nan() {
                        worst_g = (v, Some((0, s)));
                    }
                }
            }
        }
    }
    [
        PropertyReport::new("conservation-interior", worst_i.0, 1e-8, worst_i.1),
        PropertyReport::new("conservation-glide", worst_g.0, 1e-6, worst_g.1),
    ]
}

/// Coordinate groups for the Lipschitz check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    X,
    Y,
    T,
    Zeta,
    Tau,
}

impl Coordinate {
    pub const ALL: [Coordinate; 5] = [Coordinate::X, Coordinate::Y, Coordinate::T, Coordinate::Zeta, Coordinate::Tau];

    pub fn name(&self) -> &'static str {
        match self {
            Coordinate::X => "x",
            Coordinate::Y => "y",
            Coordinate::T => "t",
            Coordinate::Zeta => "zeta",
            Coordinate::Tau => "tau",
        }
    }

    fn values(&self, q: &CotangentPoint) -> Vec<f64> {
        match self {
            Coordinate::X => q.x.clone(),
            Coordinate::Y => q.y.clone(),
            Coordinate::T => vec![q.t],
            Coordinate::Zeta => q.zeta.clone(),
            Coordinate::Tau => vec![q.tau],
        }
    }
}

/// A compact box in `(s, x, y, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub s: (f64, f64),
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
    pub t: (f64, f64),
}

impl ParamBox {
    fn holds(&self, q: &CotangentPoint) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        q.x.iter().zip(&self.x).all(|(&v, &b)| inside(v, b))
            && q.y.iter().zip(&self.y).all(|(&v, &b)| inside(v, b))
            && inside(q.t, self.t)
    }
}

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

fn max_quotients(rays: &[&Ray], coords: &[Coordinate], a: f64, b: f64, n: usize) -> Result<Vec<(f64, usize, f64)>> {
    let s = grid(a, b, n);
    let mut worst = vec![(0.0f64, 0usize, a); coords.len()];
    for (ri, ray) in rays.iter().enumerate() {
        let qs = sample_ray(ray, &s, false)?;
        for w in 0..n {
            let ds = s[w + 1] - s[w];
            for (ci, c) in coords.iter().enumerate() {
                let (u, v) = (c.values(&qs[w]), c.values(&qs[w + 1]));
                let d = u.iter().zip(&v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                let quot = d / ds;
                if quot > worst[ci].0 {
                    worst[ci] = (quot, ri, s[w]);
                }
            }
        }
    }
    Ok(worst)
}

/// Empirical Lipschitz quotients on a uniform grid of `n` steps, compared
/// against the same on a grid of `4n` steps and against the declared bound `m`.
pub fn check_lipschitz(
    rays: &[Ray],
    coords: &[Coordinate],
    k: &ParamBox,
    m: f64,
    n: usize,
) -> Result<PropertyReport> {
    let (a, b) = k.s;
    let kept: Vec<&Ray> = rays
        .iter()
        .filter(|r| {
            let (lo, hi) = r.range();
            lo <= a
                && hi >= b
                && sample_ray(r, &grid(a, b, n), false).is_ok_and(|qs| qs.iter().all(|q| k.holds(q)))
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let coarse = max_quotients(&kept, coords, a, b, n)?;
    let fine = max_quotients(&kept, coords, a, b, 4 * n)?;
    let mut stat = 0.0f64;
    let mut loc = None;
    let mut worst_change = 0.0f64;
    let mut extra = Vec::new();
    for (ci, c) in coords.iter().enumerate() {
        let (qc, qf) = (coarse[ci].0, fine[ci].0);
        let change = if qf > 0.0 { (qf - qc).abs() / qf } else { 0.0 };
        worst_change = worst_change.max(change);
        extra.push((format!("{}-quotient", c.name()), qf));
        extra.push((format!("{}-refinement", c.name()), change));
        if qf > stat {
            stat = qf;
            loc = Some((fine[ci].1, fine[ci].2));
        }
    }
    extra.push(("rays".into(), kept.len() as f64));
    let finite = stat.is_finite();
    let mut r = PropertyReport::new("lipschitz", stat, m, loc);
    r.pass = finite && stat <= m && worst_change <= 0.05;
    r.extra = extra;
    Ok(r)
}

/// Richardson steps for one-sided slopes.
const SLOPE_STEPS: [f64; 2] = [1e-3, 1e-4];

/// Compares one-sided finite-difference slopes of `f` at a reflection with
/// `⟨∇f, H_p⟩` at the stored incoming and outgoing lifts.
pub fn check_one_sided(chart: &Chart, ray: &Ray, event_index: usize, f: PiInvariant, tol: f64) -> Result<PropertyReport> {
    let ev = ray.events.get(event_index).ok_or(Error::NotAnEvent(event_index))?;
    if !matches!(ev.kind, EventKind::Reflection { .. }) {
        return Err(Error::NotAnEvent(event_index));
    }
    let sig = ray.direction.sign();
    // room to the neighbouring events on either side
    let prev = ray.events[..event_index].last().map_or(ray.s_start(), |e| e.s);
    let next = ray.events.get(event_index + 1).map_or(ray.s_end(), |e| e.s);
    let room_after = (next - ev.s).abs();
    let room_before = (ev.s - prev).abs();
    let mut worst = 0.0f64;
    let mut extra = Vec::new();
    for (label, lift, room, side) in [("before", &ev.left, room_before, -1.0), ("after", &ev.right, room_after, 1.0)] {
        let scale = (0.5 * room / SLOPE_STEPS[0]).min(1.0);
        let hs = SLOPE_STEPS.map(|h| h * scale);
        let f0 = f.eval(if side > 0.0 { &ev.right } else { &ev.left });
        let mut d = [0.0; 2];
        for (i, &h) in hs.iter().enumerate() {
            let s = ev.s + side * sig * h;
            let q = &sample_ray(ray, &[s], false)?[0];
            d[i] = side * (f.eval(q) - f0) / (sig * h);
        }
        let extrapolated = (10.0 * d[1] - d[0]) / 9.0;
        let exact = f.hp_derivative(chart, lift)?;
        let err = (extrapolated - exact).abs();
        extra.push((format!("{label}-slope"), extrapolated));
        extra.push((format!("{label}-exact"), exact));
        worst = worst.max(err);
    }
    let mut r = PropertyReport::new(&format!("one-sided-{}", f.name()), worst, tol, Some((0, ev.s)));
    r.extra = extra;
    Ok(r)
}

fn on_any(chart: &Chart, face: FaceId, q: &CotangentPoint) -> bool {
    face.normals().iter().any(|&(j, side)| match side {
        Side::Lower => q.x[j] <= chart.tol_face(),
        Side::Upper => q.x[j] >= chart.domain().x_max[j] - chart.tol_face(),
    })
}

fn reflection_face(e: &Event) -> Option<FaceId> {
    match e.kind {
        EventKind::Reflection { face, .. } => Some(face),
        _ => None,
    }
}

/// After each hyperbolic event, the longest window in which the ray stays
/// over the face, probed at offsets `1e-6 ..= 1e-3`.
pub fn check_leaves_face(chart: &Chart, ray: &Ray, event_tol: f64) -> PropertyReport {
    const OFFSETS: [f64; 7] = [1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3];
    let sig = ray.direction.sign();
    let mut worst = 0.0f64;
    let mut loc = None;
    for (i, ev) in ray.events.iter().enumerate() {
        let Some(face) = reflection_face(ev) else { continue };
        let next = ray.events.get(i + 1).map_or(ray.s_end(), |e| e.s);
        let room = (next - ev.s).abs();
        for &o in OFFSETS.iter().filter(|&&o| o < room) {
            let q = match sample_ray(ray, &[ev.s + sig * o], false) {
                Ok(q) => q.into_iter().next().unwrap(),
                Err(_) => continue,
            };
            if on_any(chart, face, &q) && o > worst {
                worst = o;
                loc = Some((0, ev.s));
            }
        }
    }
    PropertyReport::new("leaves-face", worst, 10.0 * event_tol, loc)
}

/// Sup over a grid of the compressed distance between `a` and `b`.
pub fn sup_distance(chart: &Chart, a: &Ray, b: &Ray, s0: f64, s1: f64, n: usize) -> Result<(f64, f64)> {
    let s = grid(s0, s1, n);
    let qa = sample_ray(a, &s, false)?;
    let qb = sample_ray(b, &s, false)?;
    let mut worst = (0.0f64, s0);
    for i in 0..s.len() {
        if qa[i].k() != qb[i].k() || qa[i].l() != qb[i].l() {
            return Err(Error::ChartMismatch);
        }
        let d = compressed_distance(&compress(chart, &qa[i]), &compress(chart, &qb[i]))?;
        if d > worst.0 {
            worst = (d, s[i]);
        }
    }
    Ok(worst)
}

/// Uniform convergence of `family` to `candidate` on `[a, b]`, together with
/// the candidate's own ray checks.
pub fn check_uniform_limit(
    chart: &Chart,
    family: &[Ray],
    candidate: &Ray,
    interval: (f64, f64),
    n: usize,
    delta_conv: f64,
    event_tol: f64,
) -> Result<PropertyReport> {
    let (a, b) = interval;
    for r in family.iter().chain(std::iter::once(candidate)) {
        let (lo, hi) = r.range();
        if lo > a || hi < b {
            return Err(Error::MismatchedIntervals { a, b });
        }
        if let Some(q) = r.start_point() {
            if q.k() != chart.k() || q.l() != chart.l() {
                return Err(Error::ChartMismatch);
            }
        }
    }
    let mut dists = Vec::new();
    let mut extra = Vec::new();
    for (i, r) in family.iter().enumerate() {
        let (d, _) = sup_distance(chart, r, candidate, a, b, n)?;
        extra.push((format!("distance-{i}"), d));
        dists.push(d);
    }
    let decreasing = dists.windows(2).all(|w| w[1] <= w[0]);
    let final_d = dists.last().copied().unwrap_or(0.0);
    let [ci, cg] = check_conservation(chart, candidate);
    let lf = check_leaves_face(chart, candidate, event_tol);
    extra.push(("candidate-conservation-interior".into(), ci.statistic));
    extra.push(("candidate-conservation-glide".into(), cg.statistic));
    extra.push(("candidate-leaves-face".into(), lf.statistic));
    extra.push(("decreasing".into(), if decreasing { 1.0 } else { 0.0 }));
    let mut r = PropertyReport::new("uniform-limit", final_d, delta_conv, Some((family.len().saturating_sub(1), a)));
    r.pass = final_d <= delta_conv && decreasing && ci.pass && cg.pass && lf.pass;
    r.extra = extra;
    Ok(r)
}

/// Closed-form straight-line billiard in a flat chart: every `x_j = 0` is a
/// mirror, `x_j = x_max` is a mirror or an exit per the chart, the `y` and
/// `t` bounds are exits. Hits within `1e-12` in `s` are one corner hit.
pub fn billiard_oracle_flat(chart: &Chart, q0: &CotangentPoint, max_time: f64) -> Result<Ray> {
    if !chart.is_flat() {
        return Err(Error::NotFlat);
    }
    let (k, l) = (chart.k(), chart.l());
    let d = chart.domain();
    let mut q = q0.clone();
    let mut s = 0.0;
    let mut segments = Vec::new();
    let mut events = Vec::new();
    loop {
        let vx: Vec<f64> = q.xi.iter().map(|v| -2.0 * v).collect();
        let vy: Vec<f64> = q.zeta.iter().map(|v| -2.0 * v).collect();
        let vt = 2.0 * q.tau;
        // (time, face hypersurface or exit)
        let mut hits: Vec<(f64, Option<(usize, Side)>)> = Vec::new();
        for j in 0..k {
            if vx[j] < 0.0 {
                hits.push((q.x[j] / -vx[j], Some((j, Side::Lower))));
            } else if vx[j] > 0.0 {
                let dt = (d.x_max[j] - q.x[j]) / vx[j];
                let wall = d.x_upper[j] == UpperSide::Wall;
                hits.push((dt, wall.then_some((j, Side::Upper))));
            }
        }
        for j in 0..l {
            if vy[j] < 0.0 {
                hits.push(((q.y[j] - d.y_min[j]) / -vy[j], None));
            } else if vy[j] > 0.0 {
                hits.push(((d.y_max[j] - q.y[j]) / vy[j], None));
            }
        }
        if vt < 0.0 {
            hits.push(((q.t - d.t_min) / -vt, None));
        } else if vt > 0.0 {
            hits.push(((d.t_max - q.t) / vt, None));
        }
        let remaining = max_time - s;
        let first = hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
        let (dt, horizon) = if first >= remaining { (remaining, true) } else { (first, false) };
        let mut q1 = q.clone();
        for j in 0..k {
            q1.x[j] += vx[j] * dt;
        }
        for j in 0..l {
            q1.y[j] += vy[j] * dt;
        }
        q1.t += vt * dt;
        let mut face = FaceId::default();
        let mut exit = false;
        if !horizon {
            for h in hits.iter().filter(|h| h.0 - first <= 1e-12) {
                match h.1 {
                    Some((j, Side::Lower)) => {
                        face.lower |= 1 << j;
                        q1.x[j] = 0.0;
                    }
                    Some((j, Side::Upper)) => {
                        face.upper |= 1 << j;
                        q1.x[j] = d.x_max[j];
                    }
                    None => exit = true,
                }
            }
        }
        let s1 = s + dt;
        let (ya, yb) = (q.to_state(), q1.to_state());
        segments.push(Segment {
            kind: SegmentKind::Interior,
            s_start: s,
            s_end: s1,
            samples: vec![(s, q.clone()), (s1, q1.clone())],
            dense: vec![linear_span(s, s1, &ya, &yb)],
            terminal: if horizon {
                Terminal::TimeHorizon
            } else if exit {
                Terminal::DomainExit
            } else {
                Terminal::BoundaryHit(face)
            },
            drift: 0.0,
            drift_warning: false,
        });
        let point = compress(chart, &q1);
        if horizon || exit {
            events.push(Event {
                kind: if horizon { EventKind::TimeHorizon } else { EventKind::DomainExit },
                s: s1,
                point,
                left: q1.clone(),
                right: q1,
            });
            break;
        }
        let mut out = q1.clone();
        for j in face.indices() {
            out.xi[j] = -out.xi[j];
        }
        events.push(Event {
            kind: EventKind::Reflection {
                face,
                lift_in: face.indices().iter().map(|&j| q1.xi[j]).collect(),
                lift_out: face.indices().iter().map(|&j| out.xi[j]).collect(),
            },
            s: s1,
            point,
            left: q1,
            right: out.clone(),
        });
        q = out;
        s = s1;
    }
    Ok(Ray {
        segments,
        events,
        direction: Direction::Forward,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::tracer::{trace, TraceConfig};

    fn strip_wall() -> Chart {
        Chart::flat(1, 1, Domain::new(vec![1.0], vec![-100.0], vec![100.0], -100.0, 100.0).with_upper(vec![UpperSide::Wall]))
            .unwrap()
    }

    fn strip_ray(max_time: f64) -> Ray {
        let q0 = CotangentPoint::new(vec![0.5], vec![0.0], 0.0, vec![0.6], vec![0.8], 1.0);
        let mut cfg = TraceConfig::default();
        cfg.integrator.max_time = max_time;
        trace(&strip_wall(), &q0, &cfg).nodes[0].ray.clone()
    }

    #[test]
    fn conservation_flat_and_perturbed() {
        let chart = strip_wall();
        let ray = strip_ray(3.0);
        let [i, g] = check_conservation(&chart, &ray);
        assert!(i.pass && i.statistic <= 1e-10);
        assert!(g.pass);
        let mut bad = ray.clone();
        for seg in &mut bad.segments {
            for (_, q) in &mut seg.samples {
                q.xi[0] *= 1.01;
                q.zeta[0] *= 1.01;
            }
            seg.dense.clear();
        }
        let [i, _] = check_conservation(&chart, &bad);
        assert!(!i.pass);
        assert!((i.statistic - 0.0201).abs() < 1e-3);
    }

    #[test]
    fn lipschitz_flat_closed_form() {
        let ray = strip_ray(3.0);
        let k = ParamBox {
            s: (0.0, 2.0),
            x: vec![(0.0, 1.0)],
            y: vec![(-10.0, 10.0)],
            t: (-10.0, 10.0),
        };
        let r = check_lipschitz(std::slice::from_ref(&ray), &Coordinate::ALL, &k, 10.0, 200).unwrap();
        assert!(r.pass, "{r:?}");
        let get = |n: &str| r.extra.iter().find(|e| e.0 == n).unwrap().1;
        assert!((get("x-quotient") - 1.2).abs() < 1e-9);
        assert!((get("y-quotient") - 1.6).abs() < 1e-9);
        assert!((get("t-quotient") - 2.0).abs() < 1e-9);
        let far = ParamBox { y: vec![(50.0, 60.0)], ..k };
        assert!(matches!(check_lipschitz(&[ray], &Coordinate::ALL, &far, 10.0, 200), Err(Error::EmptyFamily)));
    }

    #[test]
    fn one_sided_t_and_eta() {
        let chart = Chart::flat(1, 0, Domain::new(vec![2.0], vec![], vec![], -10.0, 10.0)).unwrap();
        let q0 = CotangentPoint::new(vec![1.0], vec![], 0.0, vec![1.0], vec![], 1.0);
        let ray = trace(&chart, &q0, &TraceConfig::default()).nodes[0].ray.clone();
        let r = check_one_sided(&chart, &ray, 0, PiInvariant::T, 1e-10).unwrap();
        assert!(r.pass && r.statistic < 1e-10);
        let r = check_one_sided(&chart, &ray, 0, PiInvariant::Eta, 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
        let get = |n: &str| r.extra.iter().find(|e| e.0 == n).unwrap().1;
        assert!((get("before-exact") - 2.0).abs() < 1e-12);
        assert!((get("after-exact") - 2.0).abs() < 1e-12);
        assert!(matches!(check_one_sided(&chart, &ray, 1, PiInvariant::T, 1.0), Err(Error::NotAnEvent(1))));
    }

    #[test]
    fn leaves_face_flat() {
        let chart = strip_wall();
        let r = check_leaves_face(&chart, &strip_ray(3.0), 1e-10);
        assert!(r.pass);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn uniform_limit_constant_family() {
        let chart = strip_wall();
        let ray = strip_ray(3.0);
        let r = check_uniform_limit(&chart, &[ray.clone(), ray.clone()], &ray, (0.0, 2.0), 100, 1e-3, 1e-10).unwrap();
        assert!(r.pass);
        assert_eq!(r.statistic, 0.0);
        let short = strip_ray(1.0);
        assert!(matches!(
            check_uniform_limit(&chart, &[short], &ray, (0.0, 2.0), 100, 1e-3, 1e-10),
            Err(Error::MismatchedIntervals { .. })
        ));
        let other = Chart::flat(1, 0, Domain::new(vec![2.0], vec![], vec![], -10.0, 10.0)).unwrap();
        let q = CotangentPoint::new(vec![1.0], vec![], 0.0, vec![1.0], vec![], 1.0);
        let mut cfg = TraceConfig::default();
        cfg.integrator.max_time = 3.0;
        let alien = trace(&other, &q, &cfg).nodes[0].ray.clone();
        assert!(check_uniform_limit(&chart, &[alien], &ray, (0.0, 1.0), 10, 1e-3, 1e-10).is_err());
    }

    #[test]
    fn oracle_strip_period() {
        let chart = strip_wall();
        let q0 = CotangentPoint::new(vec![0.0], vec![0.0], 0.0, vec![-1.0], vec![0.0], 1.0);
        let ray = billiard_oracle_flat(&chart, &q0, 5.5).unwrap();
        let times: Vec<f64> = ray.reflections().map(|(_, e)| e.s).collect();
        // |dx/ds| = 2 across width 1: one wall every 0.5, the same wall every 1
        assert_eq!(times.len(), 10);
        for (i, s) in times.iter().enumerate() {
            assert!((s - 0.5 * (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_corner_retroreflects() {
        let chart = Chart::flat(2, 0, Domain::new(vec![3.0, 3.0], vec![], vec![], -20.0, 20.0)).unwrap();
        let q0 = CotangentPoint::new(vec![1.0, 2.0], vec![], 0.0, vec![0.6, 0.8], vec![], 1.0);
        let ray = billiard_oracle_flat(&chart, &q0, 10.0).unwrap();
        let end = ray.end_point().unwrap();
        assert_eq!(end.xi, vec![-0.6, -0.8]);
        let curved = crate::geometry::Chart::new(
            1,
            0,
            Domain::new(vec![1.0], vec![], vec![], 0.0, 1.0),
            crate::geometry::MetricCoeffs {
                a: vec![crate::expr::Expr::parse("1 + x1", &["x1"]).unwrap()],
                b: vec![],
                c: vec![],
            },
        )
        .unwrap();
        assert!(matches!(billiard_oracle_flat(&curved, &CotangentPoint::new(vec![0.5], vec![], 0.5, vec![1.0], vec![], 1.0), 1.0), Err(Error::NotFlat)));
    }

    #[test]
    fn oracle_agrees_with_trace() {
        let chart = strip_wall();
        let q0 = CotangentPoint::new(vec![0.3], vec![0.0], 0.0, vec![0.6], vec![0.8], 1.0);
        let mut cfg = TraceConfig::default();
        cfg.integrator.max_time = 10.0;
        let ray = trace(&chart, &q0, &cfg).nodes[0].ray.clone();
        let oracle = billiard_oracle_flat(&chart, &q0, 10.0).unwrap();
        assert_eq!(ray.events.len(), oracle.events.len());
        for (a, b) in ray.events.iter().zip(&oracle.events) {
            assert_eq!(a.kind.name(), b.kind.name());
            assert!((a.s - b.s).abs() < 1e-9);
            for (u, v) in a.right.xi.iter().zip(&b.right.xi) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
