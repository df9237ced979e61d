//! Principal symbol, Hamilton vector field and the interior flow.
//!
//! State vectors use the layout `[x, y, t, ξ, ζ, τ]`. The flow parameter `s`
//! is the `H_p` parameter, so `dt/ds = 2τ`.

use num_dual::Dual64;

use crate::geometry::{Chart, CompressedPoint, CotangentPoint, FaceId, Side, UpperSide};
use crate::ode::{single_step, DenseStep, OdeConfig, Stepper};
use crate::{Error, Result, Scalar};

/// Components of `H_p` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVelocity {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dt: f64,
    pub dxi: Vec<f64>,
    pub dzeta: Vec<f64>,
    pub dtau: f64,
}

impl PhaseVelocity {
    pub fn from_state(k: usize, l: usize, v: &[f64]) -> Self {
        let q = CotangentPoint::from_state(k, l, v);
        Self {
            dx: q.x,
            dy: q.y,
            dt: q.t,
            dxi: q.xi,
            dzeta: q.zeta,
            dtau: q.tau,
        }
    }

    pub fn to_state(&self) -> Vec<f64> {
        CotangentPoint::new(
            self.dx.clone(),
            self.dy.clone(),
            self.dt,
            self.dxi.clone(),
            self.dzeta.clone(),
            self.dtau,
        )
        .to_state()
    }

    pub fn norm(&self) -> f64 {
        self.to_state().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Bracketing tolerance on the defining function at a boundary hit.
    pub event_tol: f64,
    /// Bound on the flow-parameter length of one call.
    pub max_time: f64,
    pub p_drift_warn: f64,
    /// Rescale `(ξ, ζ)` after each step so that `p` keeps its initial value.
    pub rescale_fibers: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-13,
            max_step: 0.05,
            event_tol: 1e-10,
            max_time: 10.0,
            p_drift_warn: 1e-8,
            rescale_fibers: false,
        }
    }
}

impl IntegratorConfig {
    pub fn ode(&self) -> OdeConfig {
        OdeConfig {
            rtol: self.rel_tol,
            atol: self.abs_tol,
            h_init: 0.0,
            h_min: 1e-14,
            h_max: self.max_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// Why a segment stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    BoundaryHit(FaceId),
    TimeHorizon,
    DomainExit,
    /// Gliding ended at a diffractive point; the ray continues into the interior.
    Released,
    /// Gliding ended because the point left the glancing band.
    BandExit,
}

/// One accepted integrator step placed on the ray's parameter axis.
///
/// The interpolant is evaluated at `θ = frac·(s - s_a) / (s_b - s_a)`, so
/// the span may run in either direction and may cover only the first part
/// of a step cut short by an event. `negate_fibers` marks spans obtained by
/// time reversal.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSpan {
    pub s_a: f64,
    pub s_b: f64,
    pub frac: f64,
    pub step: DenseStep,
    pub negate_fibers: bool,
}

impl DenseSpan {
    pub fn contains(&self, s: f64) -> bool {
        let (lo, hi) = if self.s_a <= self.s_b { (self.s_a, self.s_b) } else { (self.s_b, self.s_a) };
        s >= lo && s <= hi
    }

    pub fn eval(&self, s: f64, k: usize, l: usize) -> Vec<f64> {
        let theta = if self.s_b == self.s_a { 0.0 } else { (s - self.s_a) / (self.s_b - self.s_a) };
        let mut y = self.step.eval(self.frac * theta.clamp(0.0, 1.0));
        if self.negate_fibers {
            let n = k + l + 1;
            for v in &mut y[n..] {
                *v = -*v;
            }
        }
        y
    }

    pub fn reversed(&self) -> Self {
        Self {
            s_a: -self.s_a,
            s_b: -self.s_b,
            frac: self.frac,
            step: self.step.clone(),
            negate_fibers: !self.negate_fibers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Interior,
    Gliding(FaceId),
}

/// A stretch of ray between events: the nodes of the integrator plus the
/// dense interpolants between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub s_start: f64,
    pub s_end: f64,
    pub samples: Vec<(f64, CotangentPoint)>,
    pub dense: Vec<DenseSpan>,
    pub terminal: Terminal,
    /// Largest `|p(γ(s)) - p(γ(s_start))|` at the nodes (interior), or the
    /// largest `|margin|` (gliding).
    pub drift: f64,
    pub drift_warning: bool,
}

pub type InteriorSegment = Segment;

impl Segment {
    pub fn first(&self) -> &CotangentPoint {
        &self.samples[0].1
    }

    pub fn last(&self) -> &CotangentPoint {
        &self.samples[self.samples.len() - 1].1
    }

    pub fn contains(&self, s: f64) -> bool {
        let (lo, hi) = if self.s_start <= self.s_end { (self.s_start, self.s_end) } else { (self.s_end, self.s_start) };
        s >= lo && s <= hi
    }

    /// State at `s`; knots return the stored sample exactly. Without dense
    /// data, interpolates linearly between samples.
    pub fn eval(&self, s: f64) -> Option<CotangentPoint> {
        if !self.contains(s) {
            return None;
        }
        let q0 = self.first();
        let (k, l) = (q0.k(), q0.l());
        if let Some((_, q)) = self.samples.iter().find(|(sv, _)| *sv == s) {
            return Some(q.clone());
        }
        if let Some(span) = self.dense.iter().find(|d| d.contains(s)) {
            return Some(CotangentPoint::from_state(k, l, &span.eval(s, k, l)));
        }
        let w = self.samples.windows(2).find(|w| {
            let (a, b) = (w[0].0, w[1].0);
            (a <= s && s <= b) || (b <= s && s <= a)
        })?;
        let (a, b) = (&w[0], &w[1]);
        let th = if b.0 == a.0 { 0.0 } else { (s - a.0) / (b.0 - a.0) };
        let (ya, yb) = (a.1.to_state(), b.1.to_state());
        let y: Vec<f64> = ya.iter().zip(&yb).map(|(u, v)| u + th * (v - u)).collect();
        Some(CotangentPoint::from_state(k, l, &y))
    }

    /// Time reversal: `s ↦ -s`, fibers negated, order reversed.
    pub fn reversed(&self) -> Self {
        Self {
            kind: self.kind,
            s_start: -self.s_end,
            s_end: -self.s_start,
            samples: self.samples.iter().rev().map(|(s, q)| (-s, q.reversed())).collect(),
            dense: self.dense.iter().rev().map(DenseSpan::reversed).collect(),
            terminal: self.terminal,
            drift: self.drift,
            drift_warning: self.drift_warning,
        }
    }
}

/// `p = τ² - g(ξ, ζ)` for any number type.
pub fn p_generic<S: Scalar>(chart: &Chart, q: &CotangentPoint<S>) -> S {
    let m = chart.metric(&q.x, &q.y);
    q.tau * q.tau - m.dual_metric(&q.xi, &q.zeta)
}

fn check_domain(chart: &Chart, q: &CotangentPoint) -> Result<()> {
    if q.k() != chart.k() || q.l() != chart.l() {
        return Err(Error::ChartMismatch);
    }
    if !chart.contains(&q.x, &q.y, q.t, chart.tol_face()) {
        return Err(Error::OutOfDomain(format!("x = {:?}, y = {:?}, t = {}", q.x, q.y, q.t)));
    }
    Ok(())
}

/// The principal symbol at `q`.
pub fn eval_p(chart: &Chart, q: &CotangentPoint) -> Result<f64> {
    check_domain(chart, q)?;
    Ok(p_generic(chart, q))
}

/// `H_p = 2τ∂_t - H_g` written into `out` in state layout. No domain check.
pub fn hp_state(chart: &Chart, state: &[f64], out: &mut [f64]) {
    let (k, l) = (chart.k(), chart.l());
    let n = k + l + 1;
    let x = &state[..k];
    let y = &state[k..k + l];
    let xi = &state[n..n + k];
    let zeta = &state[n + k..n + k + l];
    let tau = state[n + k + l];
    let jet = chart.metric_jet(x, y);
    let m = &jet.value;
    for i in 0..k {
        out[i] = -2.0 * m.a_xi_c_zeta(i, xi, zeta);
    }
    for i in 0..l {
        out[k + i] = -2.0 * m.b_zeta_ct_xi(i, xi, zeta);
    }
    out[k + l] = 2.0 * tau;
    for (i, d) in jet.dx.iter().enumerate() {
        out[n + i] = d.dual_metric(xi, zeta);
    }
    for (i, d) in jet.dy.iter().enumerate() {
        out[n + k + i] = d.dual_metric(xi, zeta);
    }
    out[n + k + l] = 0.0;
}

/// The Hamilton vector field at `q`.
pub fn eval_hp(chart: &Chart, q: &CotangentPoint) -> Result<PhaseVelocity> {
    check_domain(chart, q)?;
    let s = q.to_state();
    let mut out = vec![0.0; s.len()];
    hp_state(chart, &s, &mut out);
    Ok(PhaseVelocity::from_state(chart.k(), chart.l(), &out))
}

/// Derivative of `f` at `q` in the direction `v` (state layout), by one dual pass.
pub fn directional<F>(q: &CotangentPoint, v: &[f64], f: F) -> f64
where
    F: Fn(&CotangentPoint<Dual64>) -> Dual64,
{
    f(&q.with_tangent(v)).eps
}

/// `η = -x·ξ / |τ|`.
pub fn eta<S: Scalar>(q: &CotangentPoint<S>) -> S {
    let mut s = S::from(0.0);
    for (&x, &xi) in q.x.iter().zip(&q.xi) {
        s += x * xi;
    }
    -s / q.tau.abs()
}

pub fn eval_eta(q: &CotangentPoint) -> f64 {
    eta(q)
}

/// `|τ|⁻¹ (2τ² - 2ζ·B(0, y)ζ)`, the value of `H_pη` at every lift in
/// `Char(P)` of a point over `x = 0`.
pub fn eval_hp_eta_boundary(chart: &Chart, q: &CompressedPoint) -> f64 {
    let zero = vec![0.0; chart.k()];
    let m = chart.metric_f64(&zero, &q.y);
    let l = chart.l();
    let mut h = 0.0;
    for i in 0..l {
        for j in 0..l {
            h += m.b[i * l + j] * q.zeta[i] * q.zeta[j];
        }
    }
    (2.0 * q.tau * q.tau - 2.0 * h) / q.tau.abs()
}

/// A hypersurface `sign·(y[idx] - bound) = 0` with the domain on the positive side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Guard {
    pub idx: usize,
    pub sign: f64,
    pub bound: f64,
    /// `Some` for reflecting faces, `None` for domain exits.
    pub face: Option<(usize, Side)>,
}

impl Guard {
    pub fn value(&self, y: &[f64]) -> f64 {
        self.sign * (y[self.idx] - self.bound)
    }
}

pub(crate) fn guards(chart: &Chart) -> Vec<Guard> {
    let (k, l) = (chart.k(), chart.l());
    let d = chart.domain();
    let mut g = Vec::new();
    for j in 0..k {
        g.push(Guard {
            idx: j,
            sign: 1.0,
            bound: 0.0,
            face: Some((j, Side::Lower)),
        });
        g.push(Guard {
            idx: j,
            sign: -1.0,
            bound: d.x_max[j],
            face: (d.x_upper[j] == UpperSide::Wall).then_some((j, Side::Upper)),
        });
    }
    for j in 0..l {
        g.push(Guard { idx: k + j, sign: 1.0, bound: d.y_min[j], face: None });
        g.push(Guard { idx: k + j, sign: -1.0, bound: d.y_max[j], face: None });
    }
    g.push(Guard { idx: k + l, sign: 1.0, bound: d.t_min, face: None });
    g.push(Guard { idx: k + l, sign: -1.0, bound: d.t_max, face: None });
    g
}

/// Outcome of locating the first guard crossing inside a step.
pub(crate) struct Crossing {
    pub u: f64,
    pub y: Vec<f64>,
    pub terminal: Terminal,
}

/// Finds the earliest guard crossing inside an accepted step that started
/// at `y0` and has interpolant `dense`. `rhs` must be the same field the
/// step was taken with.
pub(crate) fn locate_crossing<F: FnMut(&[f64], &mut [f64])>(
    rhs: &mut F,
    guards: &[Guard],
    dense: &DenseStep,
    u0: f64,
    event_tol: f64,
) -> Option<Crossing> {
    const CHECKS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
    let y0 = dense.start().to_vec();
    let h = dense.h;
    let at = |rhs: &mut F, th: f64| -> Vec<f64> {
        if th == 0.0 {
            y0.clone()
        } else {
            single_step(rhs, &y0, th * h)
        }
    };
    for w in CHECKS.windows(2) {
        let (ya, yb) = (dense.eval(w[0]), if w[1] == 1.0 { dense.end() } else { dense.eval(w[1]) });
        let crossing: Vec<&Guard> = guards
            .iter()
            .filter(|g| g.value(&ya) >= 0.0 && g.value(&yb) < 0.0)
            .collect();
        if crossing.is_empty() {
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for g in crossing {
            let (th, y) = illinois(rhs, &at, g, w[0], w[1], event_tol);
            if best.as_ref().is_none_or(|(b, _)| th < *b) {
                best = Some((th, y));
            }
        }
        let (th, mut y) = best?;
        let mut face = FaceId::default();
        let mut exit = false;
        for g in guards {
            if g.value(&y) <= event_tol {
                match g.face {
                    Some((j, Side::Lower)) => face.lower |= 1 << j,
                    Some((j, Side::Upper)) => face.upper |= 1 << j,
                    None => exit = true,
                }
            }
        }
        for g in guards {
            if g.value(&y) <= event_tol && (g.face.is_some() || exit) {
                y[g.idx] = g.bound;
            }
        }
        let terminal = if exit || face.is_empty() {
            Terminal::DomainExit
        } else {
            Terminal::BoundaryHit(face)
        };
        return Some(Crossing { u: u0 + th * h, y, terminal });
    }
    None
}

/// Illinois iteration on `θ`, evaluating states by exact partial steps.
/// Returns the left bracket, where the guard is still non-negative.
fn illinois<F, G>(rhs: &mut F, at: &G, g: &Guard, mut a: f64, mut b: f64, tol: f64) -> (f64, Vec<f64>)
where
    F: FnMut(&[f64], &mut [f64]),
    G: Fn(&mut F, f64) -> Vec<f64>,
{
    let mut ya = at(rhs, a);
    let mut ga = g.value(&ya);
    let mut gb = g.value(&at(rhs, b));
    let mut side = 0i8;
    for _ in 0..200 {
        if ga <= 1e-3 * tol || b - a <= 4.0 * f64::EPSILON * b.max(1e-300) {
            break;
        }
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let yc = at(rhs, c);
        let gc = g.value(&yc);
        if gc >= 0.0 {
            a = c;
            ya = yc;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    (a, ya)
}

/// Rescales `(ξ, ζ)` at fixed `τ` so that `p` takes the value `p0`.
fn rescale_to(chart: &Chart, y: &mut [f64], p0: f64) {
    let (k, l) = (chart.k(), chart.l());
    let q = CotangentPoint::from_state(k, l, y);
    let g = q.tau * q.tau - p_generic(chart, &q);
    let target = q.tau * q.tau - p0;
    if g > 0.0 && target > 0.0 {
        let lam = (target / g).sqrt();
        let n = k + l + 1;
        for v in &mut y[n..n + k + l] {
            *v *= lam;
        }
    }
}

/// Integrates `H_p` from `q0` at parameter `s0` until the first boundary
/// hit, domain exit or until `cfg.max_time` of flow parameter has elapsed.
pub fn flow_interior(
    chart: &Chart,
    q0: &CotangentPoint,
    s0: f64,
    cfg: &IntegratorConfig,
    direction: Direction,
) -> Result<InteriorSegment> {
    if q0.k() != chart.k() || q0.l() != chart.l() {
        return Err(Error::ChartMismatch);
    }
    let (k, l) = (chart.k(), chart.l());
    let guards = guards(chart);
    let y0 = q0.to_state();
    if let Some(g) = guards.iter().find(|g| g.value(&y0) < -cfg.event_tol) {
        return Err(Error::OutOfDomain(format!("state component {} outside its bound {}", g.idx, g.bound)));
    }
    let sign = direction.sign();
    let rhs = |y: &[f64], out: &mut [f64]| {
        hp_state(chart, y, out);
        if sign < 0.0 {
            for v in out.iter_mut() {
                *v = -*v;
            }
        }
    };
    let v0 = {
        let mut out = vec![0.0; y0.len()];
        hp_state(chart, &y0, &mut out);
        out
    };
    if v0.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-14 {
        return Err(Error::DegenerateVelocity);
    }
    let p0 = p_generic(chart, q0);
    let mut stepper = Stepper::new(rhs, y0.clone(), cfg.ode())?;
    let mut samples = vec![(s0, q0.clone())];
    let mut dense = Vec::new();
    let mut drift: f64 = 0.0;
    let terminal;
    loop {
        let u0 = stepper.u();
        let remaining = cfg.max_time - u0;
        if remaining <= 0.0 {
            terminal = Terminal::TimeHorizon;
            break;
        }
        let step = stepper.step(remaining).map_err(|e| match e {
            Error::StepFailure { s, h } => Error::StepFailure { s: s0 + sign * s, h },
            e => e,
        })?;
        if let Some(c) = locate_crossing(stepper.rhs(), &guards, &step, u0, cfg.event_tol) {
            let s_end = s0 + sign * c.u;
            dense.push(DenseSpan {
                s_a: s0 + sign * u0,
                s_b: s_end,
                frac: (c.u - u0) / step.h,
                step,
                negate_fibers: false,
            });
            let q = CotangentPoint::from_state(k, l, &c.y);
            drift = drift.max((p_generic(chart, &q) - p0).abs());
            samples.push((s_end, q));
            terminal = c.terminal;
            break;
        }
        let mut y1 = step.end();
        if cfg.rescale_fibers {
            rescale_to(chart, &mut y1, p0);
            stepper.set_y(y1.clone());
        }
        let s_b = s0 + sign * stepper.u();
        dense.push(DenseSpan {
            s_a: s0 + sign * u0,
            s_b,
            frac: 1.0,
            step,
            negate_fibers: false,
        });
        let q = CotangentPoint::from_state(k, l, &y1);
        drift = drift.max((p_generic(chart, &q) - p0).abs());
        samples.push((s_b, q));
    }
    let s_end = samples.last().map(|(s, _)| *s).unwrap_or(s0);
    Ok(Segment {
        kind: SegmentKind::Interior,
        s_start: s0,
        s_end,
        samples,
        dense,
        terminal,
        drift,
        drift_warning: drift > cfg.p_drift_warn * (q0.tau * q0.tau).max(1.0),
    })
}
