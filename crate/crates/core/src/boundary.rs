//! Boundary behaviour: elliptic/glancing/hyperbolic classification, lifts,
//! reflection at hyperbolic points and the gliding flow at glancing points.
//!
//! Over a face `S` the dual metric splits as
//! `g = (ξ_S - c)·A_SS(ξ_S - c) + m(v_T)` where `v_T` collects the remaining
//! fiber variables and `m` is the Schur complement form. The margin is
//! `τ² - m(v_T)`; the lifts to `Char(P)` form the ellipsoid
//! `(ξ_S - c)·A_SS(ξ_S - c) = margin`. With `C = 0` on the face and no free
//! boundary coordinates this is `τ² - ζ·Bζ` with centre `0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{compress, Chart, CompressedPoint, CotangentPoint, FaceId, Side};
use crate::hamiltonian::{
    guards, hp_state, DenseSpan, Direction, IntegratorConfig, Segment, SegmentKind, Terminal,
};
use crate::ode::{single_step, DenseStep, Stepper};
use crate::{Error, Result, Scalar};

/// Relative width of the glancing band.
pub const THETA: f64 = 1e-6;
/// Threshold on `d²x/ds²` (relative to `τ²`) separating gliding from diffractive.
pub const THETA_G: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Elliptic,
    Glancing,
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub kind: Kind,
    pub margin: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlancingKindTag {
    Gliding,
    Diffractive,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlancingKind {
    pub kind: GlancingKindTag,
    pub second_derivative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftSet {
    pub face: FaceId,
    pub radius2: f64,
    pub quadric: DMatrix<f64>,
    pub center: Vec<f64>,
    /// Face-normal `ξ` components, in face index order.
    pub lifts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchRule {
    Specular,
    BranchAll(usize),
}

/// The split of the dual metric over a face at one base point.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceForm {
    pub normals: Vec<(usize, Side)>,
    pub a_ss: DMatrix<f64>,
    pub center: DVector<f64>,
    pub margin: f64,
}

impl FaceForm {
    /// `dx_S = -2A_SS(ξ_S - c)` for the given normal components.
    pub fn normal_velocity(&self, xi_s: &[f64]) -> Vec<f64> {
        let d = DVector::from_column_slice(xi_s) - &self.center;
        (&self.a_ss * d).iter().map(|v| -2.0 * v).collect()
    }

    /// Strictly leaves every face hypersurface in the given direction.
    pub fn leaves(&self, xi_s: &[f64], direction: Direction) -> bool {
        self.normal_velocity(xi_s)
            .iter()
            .zip(&self.normals)
            .all(|(v, (_, side))| side.sign() * direction.sign() * v > 0.0)
    }
}

/// Splits the metric over `face` at the base point of `q`. Face coordinates
/// are snapped; the face-normal entries of `q.xi` are ignored.
pub fn face_form(chart: &Chart, face: FaceId, q: &CotangentPoint) -> FaceForm {
    let normals = face.normals();
    let mut x = q.x.clone();
    for &(j, side) in &normals {
        x[j] = chart.face_value(j, side);
    }
    let full = chart.metric_f64(&x, &q.y).block();
    let s_idx: Vec<usize> = normals.iter().map(|(j, _)| *j).collect();
    let t_idx: Vec<usize> = (0..chart.k() + chart.l()).filter(|i| !s_idx.contains(i)).collect();
    let fibers: Vec<f64> = q.xi.iter().chain(&q.zeta).copied().collect();
    let v_t = DVector::from_iterator(t_idx.len(), t_idx.iter().map(|&i| fibers[i]));
    let a_ss = full.select_rows(&s_idx).select_columns(&s_idx);
    let q_st = full.select_rows(&s_idx).select_columns(&t_idx);
    let q_tt = full.select_rows(&t_idx).select_columns(&t_idx);
    let w = &q_st * &v_t;
    let (center, schur_shift) = match a_ss.clone().cholesky() {
        Some(ch) => {
            let c = -ch.solve(&w);
            let shift = w.dot(&ch.solve(&w));
            (c, shift)
        }
        None => (DVector::zeros(s_idx.len()), 0.0),
    };
    let m = v_t.dot(&(&q_tt * &v_t)) - schur_shift;
    FaceForm {
        normals,
        a_ss,
        center,
        margin: q.tau * q.tau - m,
    }
}

fn kind_of(margin: f64, tau: f64) -> (Kind, f64) {
    let tol = THETA * tau * tau;
    let kind = if margin < -tol {
        Kind::Elliptic
    } else if margin > tol {
        Kind::Hyperbolic
    } else {
        Kind::Glancing
    };
    (kind, tol)
}

/// Classifies a compressed boundary point.
pub fn classify(chart: &Chart, q: &CompressedPoint) -> Result<Classification> {
    if q.face.is_empty() {
        return Err(Error::InteriorPoint);
    }
    if q.x.len() != chart.k() || q.y.len() != chart.l() {
        return Err(Error::ChartMismatch);
    }
    let form = face_form(chart, q.face, &q.lift(&vec![0.0; q.face.codim()]));
    let (kind, tolerance) = kind_of(form.margin, q.tau);
    Ok(Classification {
        kind,
        margin: form.margin,
        tolerance,
    })
}

/// Unit vectors on the sphere `S^{d-1}`, deterministic given `seed`.
pub fn sphere_samples(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match d {
        0 => vec![],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let off: f64 = rng.gen();
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * (i as f64 + off) / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect()
        }
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            let off: f64 = rng.gen::<f64>() * 2.0 * PI;
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64 + off;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => (0..n)
            .map(|_| {
                // Box–Muller pairs, then normalise
                let mut v: Vec<f64> = (0..d)
                    .map(|_| {
                        let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
                        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
                    })
                    .collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter_mut().for_each(|a| *a /= norm);
                v
            })
            .collect(),
    }
}

/// Lifts of `q` to `Char(P)`. At codimension one these are the roots; at
/// corners `n_samples` points on the lift ellipsoid. `incoming` (face-normal
/// components) is appended when given.
pub fn lift_set(
    chart: &Chart,
    q: &CompressedPoint,
    n_samples: usize,
    seed: u64,
    incoming: Option<&[f64]>,
) -> Result<LiftSet> {
    let c = classify(chart, q)?;
    if c.kind == Kind::Elliptic {
        return Err(Error::EllipticFace(q.face));
    }
    let form = face_form(chart, q.face, &q.lift(&vec![0.0; q.face.codim()]));
    let r2 = form.margin.max(0.0);
    let center: Vec<f64> = form.center.iter().copied().collect();
    let mut lifts = Vec::new();
    if c.kind == Kind::Glancing {
        lifts.push(center.clone());
    } else if q.face.codim() == 1 {
        let r = (r2 / form.a_ss[(0, 0)]).sqrt();
        lifts.push(vec![center[0] + r]);
        lifts.push(vec![center[0] - r]);
    } else {
        let l = form
            .a_ss
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { which: "A", at: "face".into() })?
            .l();
        let lt = l.transpose();
        for u in sphere_samples(q.face.codim(), n_samples, seed) {
            let u = DVector::from_vec(u) * r2.sqrt();
            let v = lt.clone().solve_upper_triangular(&u).unwrap_or(u);
            lifts.push(v.iter().zip(&center).map(|(a, b)| a + b).collect());
        }
    }
    if let Some(inc) = incoming {
        lifts.push(inc.to_vec());
    }
    Ok(LiftSet {
        face: q.face,
        radius2: r2,
        quadric: form.a_ss,
        center,
        lifts,
    })
}

fn face_components(q: &CotangentPoint, face: FaceId) -> Vec<f64> {
    face.indices().iter().map(|&j| q.xi[j]).collect()
}

fn with_face_components(q: &CotangentPoint, face: FaceId, xi_s: &[f64], chart: &Chart) -> CotangentPoint {
    let mut out = q.clone();
    for (&(j, side), &v) in face.normals().iter().zip(xi_s) {
        out.xi[j] = v;
        out.x[j] = chart.face_value(j, side);
    }
    out
}

/// Outgoing continuations of a ray arriving at `q_in` on `face`.
pub fn reflect(
    chart: &Chart,
    q_in: &CotangentPoint,
    face: FaceId,
    rule: BranchRule,
    direction: Direction,
    seed: u64,
) -> Result<Vec<CotangentPoint>> {
    if face.is_empty() {
        return Err(Error::InteriorPoint);
    }
    let form = face_form(chart, face, q_in);
    let (kind, _) = kind_of(form.margin, q_in.tau);
    if kind != Kind::Hyperbolic {
        return Err(Error::NotHyperbolic { margin: form.margin });
    }
    let xi_in = face_components(q_in, face);
    let candidates: Vec<Vec<f64>> = match rule {
        BranchRule::Specular => {
            vec![xi_in.iter().zip(form.center.iter()).map(|(x, c)| 2.0 * c - x).collect()]
        }
        BranchRule::BranchAll(n) => {
            let mut cq = compress(chart, q_in);
            cq.face = face;
            lift_set(chart, &cq, n, seed, Some(&xi_in))?.lifts
        }
    };
    let mut out: Vec<Vec<f64>> = Vec::new();
    for cand in candidates {
        if !form.leaves(&cand, direction) {
            continue;
        }
        let dup = out
            .iter()
            .any(|o| o.iter().zip(&cand).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs())));
        if !dup {
            out.push(cand);
        }
    }
    if out.is_empty() {
        return Err(Error::NoOutgoingLift(face));
    }
    Ok(out.iter().map(|xi| with_face_components(q_in, face, xi, chart)).collect())
}

/// `d x_j / ds` at `q` for any number type.
fn dx_generic<S: Scalar>(chart: &Chart, q: &CotangentPoint<S>, j: usize) -> S {
    chart.metric(&q.x, &q.y).a_xi_c_zeta(j, &q.xi, &q.zeta) * (-2.0)
}

/// Second derivative of the defining function of `(j, side)` along `H_p` at `q`.
pub fn normal_acceleration(chart: &Chart, q: &CotangentPoint, j: usize, side: Side) -> f64 {
    let s = q.to_state();
    let mut v = vec![0.0; s.len()];
    hp_state(chart, &s, &mut v);
    side.sign() * dx_generic(chart, &q.with_tangent(&v), j).eps
}

/// The unique lift of a glancing point.
pub fn glancing_lift(chart: &Chart, q: &CompressedPoint) -> CotangentPoint {
    let base = q.lift(&vec![0.0; q.face.codim()]);
    let form = face_form(chart, q.face, &base);
    let c: Vec<f64> = form.center.iter().copied().collect();
    with_face_components(&base, q.face, &c, chart)
}

/// Gliding/diffractive dichotomy at a glancing point of a codimension-one face.
pub fn glancing_type(chart: &Chart, q: &CompressedPoint) -> Result<GlancingKind> {
    let c = classify(chart, q)?;
    if c.kind != Kind::Glancing {
        return Err(Error::NotGlancing { margin: c.margin });
    }
    if q.face.codim() >= 2 {
        return Err(Error::CornerGlancing(q.face.codim()));
    }
    let (j, side) = q.face.normals()[0];
    let d2 = normal_acceleration(chart, &glancing_lift(chart, q), j, side);
    let th = THETA_G * q.tau * q.tau;
    let kind = if d2 > th {
        GlancingKindTag::Diffractive
    } else if d2 < -th {
        GlancingKindTag::Gliding
    } else {
        GlancingKindTag::Undetermined
    };
    Ok(GlancingKind {
        kind,
        second_derivative: d2,
    })
}

/// Projects a state onto the glide manifold of `face`: face coordinates on
/// their hypersurface and face-normal `ξ` at the centre.
fn project_glide(chart: &Chart, face: FaceId, y: &mut [f64]) {
    let (k, l) = (chart.k(), chart.l());
    let n = k + l + 1;
    let q = CotangentPoint::from_state(k, l, y);
    let form = face_form(chart, face, &q);
    for (i, &(j, side)) in form.normals.iter().enumerate() {
        y[j] = chart.face_value(j, side);
        y[n + j] = form.center[i];
    }
}

fn glide_rhs(chart: &Chart, face: FaceId, sign: f64, y: &[f64], out: &mut [f64]) {
    let (k, l) = (chart.k(), chart.l());
    let n = k + l + 1;
    let mut p = y.to_vec();
    project_glide(chart, face, &mut p);
    hp_state(chart, &p, out);
    for j in face.indices() {
        out[j] = 0.0;
        out[n + j] = 0.0;
    }
    if sign < 0.0 {
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Signed quantity whose sign change ends a glide: positive while gliding.
fn glide_guard(chart: &Chart, face: FaceId, y: &[f64]) -> (f64, f64) {
    let (k, l) = (chart.k(), chart.l());
    let q = CotangentPoint::from_state(k, l, y);
    let tau2 = q.tau * q.tau;
    let margin = face_form(chart, face, &q).margin;
    let band = THETA * tau2 - margin.abs();
    let release = if face.codim() == 1 {
        let (j, side) = face.normals()[0];
        THETA_G * tau2 - normal_acceleration(chart, &q, j, side)
    } else {
        f64::INFINITY
    };
    (release, band)
}

/// Integrates the tangential flow `W♭ = 2τ∂_t - H_h` over `face`, holding the
/// face coordinates on the boundary and the normal covector at the centre
/// of the (degenerate) lift ellipsoid.
///
/// Ends at a diffractive release, on leaving the glancing band, at a domain
/// exit, when a free boundary coordinate reaches a face, or after
/// `cfg.max_time`.
pub fn glide(
    chart: &Chart,
    q0: &CompressedPoint,
    s0: f64,
    cfg: &IntegratorConfig,
    direction: Direction,
) -> Result<Segment> {
    let c = classify(chart, q0)?;
    if c.kind != Kind::Glancing {
        return Err(Error::NotGlancing { margin: c.margin });
    }
    let face = q0.face;
    let (k, l) = (chart.k(), chart.l());
    let sign = direction.sign();
    let start = glancing_lift(chart, q0);
    let mut y0 = start.to_state();
    project_glide(chart, face, &mut y0);
    let guards: Vec<_> = guards(chart)
        .into_iter()
        .filter(|g| g.face.is_none_or(|(j, _)| !face.contains(j)))
        .collect();
    let rhs = |y: &[f64], out: &mut [f64]| glide_rhs(chart, face, sign, y, out);
    let mut stepper = Stepper::new(rhs, y0.clone(), cfg.ode())?;
    let q_start = CotangentPoint::from_state(k, l, &y0);
    let mut samples = vec![(s0, q_start)];
    let mut dense = Vec::new();
    let mut drift = c.margin.abs();
    let terminal;
    loop {
        let u0 = stepper.u();
        let remaining = cfg.max_time - u0;
        if remaining <= 0.0 {
            terminal = Terminal::TimeHorizon;
            break;
        }
        let step = stepper.step(remaining)?;
        let mut cut: Option<(f64, Vec<f64>, Terminal)> = None;
        if let Some(cr) = crate::hamiltonian::locate_crossing(stepper.rhs(), &guards, &step, u0, cfg.event_tol) {
            cut = Some((cr.u - u0, cr.y, cr.terminal));
        }
        // release or band exit inside this step
        let end = step.end();
        let (rel1, band1) = glide_guard(chart, face, &end);
        if rel1 < 0.0 || band1 < 0.0 {
            let y_start = step.start().to_vec();
            let mut f = |y: &[f64], out: &mut [f64]| glide_rhs(chart, face, sign, y, out);
            let which = |y: &[f64]| {
                let (r, b) = glide_guard(chart, face, y);
                r.min(b)
            };
            let (mut a, mut b) = (0.0, 1.0);
            let mut ya = y_start.clone();
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let ym = single_step(&mut f, &y_start, m * step.h);
                if which(&ym) >= 0.0 {
                    a = m;
                    ya = ym;
                } else {
                    b = m;
                }
                if (b - a) * step.h <= cfg.event_tol {
                    break;
                }
            }
            let (r, _) = glide_guard(chart, face, &single_step(&mut f, &y_start, b * step.h));
            let term = if r < 0.0 { Terminal::Released } else { Terminal::BandExit };
            if cut.as_ref().is_none_or(|(du, _, _)| a * step.h < *du) {
                cut = Some((a * step.h, ya, term));
            }
        }
        if let Some((du, mut y, term)) = cut {
            project_glide(chart, face, &mut y);
            let s_end = s0 + sign * (u0 + du);
            let q = CotangentPoint::from_state(k, l, &y);
            drift = drift.max(face_form(chart, face, &q).margin.abs());
            dense.push(DenseSpan {
                s_a: s0 + sign * u0,
                s_b: s_end,
                frac: du / step.h,
                step,
                negate_fibers: false,
            });
            samples.push((s_end, q));
            terminal = term;
            break;
        }
        let mut y1 = end;
        project_glide(chart, face, &mut y1);
        stepper.set_y(y1.clone());
        let s_b = s0 + sign * stepper.u();
        let q = CotangentPoint::from_state(k, l, &y1);
        drift = drift.max(face_form(chart, face, &q).margin.abs());
        dense.push(DenseSpan {
            s_a: s0 + sign * u0,
            s_b,
            frac: 1.0,
            step,
            negate_fibers: false,
        });
        samples.push((s_b, q));
    }
    let s_end = samples.last().map(|(s, _)| *s).unwrap_or(s0);
    let tau2 = q0.tau * q0.tau;
    Ok(Segment {
        kind: SegmentKind::Gliding(face),
        s_start: s0,
        s_end,
        samples,
        dense,
        terminal,
        drift,
        drift_warning: drift > THETA * tau2,
    })
}

/// Linear dense step between two states, for exact constant-coefficient motion.
pub fn linear_span(s_a: f64, s_b: f64, y_a: &[f64], y_b: &[f64]) -> DenseSpan {
    DenseSpan {
        s_a,
        s_b,
        frac: 1.0,
        step: DenseStep::linear(y_a, y_b, (s_b - s_a).abs()),
        negate_fibers: false,
    }
}
