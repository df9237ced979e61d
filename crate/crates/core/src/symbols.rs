//! Escape-function symbols for the hyperbolic and glancing commutator
//! constructions, and the b-bracket identities.

use num_dual::Dual64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::{classify, sphere_samples, Kind};
use crate::expr::Expr;
use crate::geometry::{to_b_coords, BCotangentPoint, Chart, CompressedPoint, CotangentPoint};
use crate::hamiltonian::{eval_hp, p_generic};
use crate::ode::{DenseStep, OdeConfig, Stepper};
use crate::{dual, Error, Result, Scalar};

/// `χ0(t) = exp(-1/t)` for `t > 0`, else `0`.
pub fn chi0(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

pub fn chi0_prime(t: f64) -> f64 {
    if t > 0.0 {
        chi0(t) / (t * t)
    } else {
        0.0
    }
}

/// Left and right edges of the transition of `χ1`.
const CHI1_LO: f64 = 0.1;
const CHI1_HI: f64 = 0.9;

fn step(u: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let (a, b) = (chi0(u), chi0(1.0 - u));
    let (da, db) = (chi0_prime(u), -chi0_prime(1.0 - u));
    let d = a + b;
    (a / d, (da * b - a * db) / (d * d))
}

/// Smooth monotone step, `0` below `0.1` and `1` above `0.9`.
pub fn chi1(t: f64) -> f64 {
    step((t - CHI1_LO) / (CHI1_HI - CHI1_LO)).0
}

pub fn chi1_prime(t: f64) -> f64 {
    step((t - CHI1_LO) / (CHI1_HI - CHI1_LO)).1 / (CHI1_HI - CHI1_LO)
}

/// `χ1(2 + t/c1)·χ1(2 - t/c1)`: `1` on `[-c1, c1]`, supported in `[-2c1, 2c1]`.
pub fn chi2(t: f64, c1: f64) -> f64 {
    chi1(2.0 + t / c1) * chi1(2.0 - t / c1)
}

pub fn chi2_prime(t: f64, c1: f64) -> f64 {
    (chi1_prime(2.0 + t / c1) * chi1(2.0 - t / c1) - chi1(2.0 + t / c1) * chi1_prime(2.0 - t / c1)) / c1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoffs {
    pub chi0: f64,
    pub chi0_prime: f64,
    pub chi1: f64,
    pub chi1_prime: f64,
    pub chi2: f64,
    pub chi2_prime: f64,
}

pub fn cutoffs(t: f64, c1: f64) -> Cutoffs {
    Cutoffs {
        chi0: chi0(t),
        chi0_prime: chi0_prime(t),
        chi1: chi1(t),
        chi1_prime: chi1_prime(t),
        chi2: chi2(t, c1),
        chi2_prime: chi2_prime(t, c1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutantParams {
    pub q0: CompressedPoint,
    pub delta: f64,
    pub eps: f64,
    pub a0: f64,
    pub c1: f64,
}

impl CommutantParams {
    pub fn new(q0: CompressedPoint, delta: f64, eps: f64, a0: f64, c1: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(delta) && ok(eps) && ok(a0) && ok(c1)) {
            return Err(Error::InvalidParams(format!(
                "need δ, ε, A0, c1 > 0 (got {delta}, {eps}, {a0}, {c1})"
            )));
        }
        if q0.face.codim() != q0.x.len() || q0.x.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidParams("reference point must lie over x = 0".into()));
        }
        Ok(Self { q0, delta, eps, a0, c1 })
    }
}

fn sum_sq<S: Scalar>(v: impl Iterator<Item = S>) -> S {
    v.fold(S::from(0.0), |acc, d| acc + d * d)
}

/// `η = -Σσ_j / |τ|` on the b-cotangent bundle.
pub fn eta_b<S: Scalar>(q: &BCotangentPoint<S>) -> S {
    let s = q.sigma.iter().fold(S::from(0.0), |acc, &v| acc + v);
    -s / q.tau.abs()
}

fn sigma_ratio<S: Scalar>(q: &BCotangentPoint<S>) -> S {
    sum_sq(q.sigma.iter().copied()) / (q.tau * q.tau)
}

/// `|x|² + |y - y0|² + |t - t0|² + |ζ/τ - ζ0/τ0|²`.
pub fn omega_hyp<S: Scalar>(q: &BCotangentPoint<S>, q0: &CompressedPoint) -> S {
    let dt = q.t - S::from(q0.t);
    sum_sq(q.x.iter().zip(&q0.x).map(|(&a, &b)| a - S::from(b)))
        + sum_sq(q.y.iter().zip(&q0.y).map(|(&a, &b)| a - S::from(b)))
        + dt * dt
        + sum_sq(q.zeta.iter().zip(&q0.zeta).map(|(&z, &z0)| z / q.tau - S::from(z0 / q0.tau)))
}

/// `φ = η + ω/(ε²δ)`.
pub fn phi_hyp<S: Scalar>(q: &BCotangentPoint<S>, params: &CommutantParams) -> S {
    eta_b(q) + omega_hyp(q, &params.q0) / (params.eps * params.eps * params.delta)
}

/// `χ0(A0⁻¹(2 - φ/δ))·χ1(η/δ + 2)·χ2(|σ|²/τ²)`.
pub fn a_hyp(q: &BCotangentPoint, params: &CommutantParams) -> f64 {
    let d = params.delta;
    chi0((2.0 - phi_hyp(q, params) / d) / params.a0) * chi1(eta_b(q) / d + 2.0) * chi2(sigma_ratio(q), params.c1)
}

/// Sampling density for the positivity and estimate reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicReport {
    pub c0: f64,
    /// Empirical `max |τ⁻¹H_pω| / ω^{1/2}`.
    pub c1pp: f64,
    pub threshold: f64,
    pub min_hp_phi: f64,
    /// Accepted samples in `supp a ∩ Char(P)`.
    pub samples: usize,
    pub max_sigma_ratio: f64,
    pub c1_valid: bool,
    pub violation: Option<CotangentPoint>,
    pub pass: bool,
}

/// `τ⁻¹ H_p f` for a b-symbol `f`, pulled back through `ι`.
pub fn hp_b<F>(chart: &Chart, q: &CotangentPoint, f: F) -> Result<f64>
where
    F: Fn(&BCotangentPoint<Dual64>) -> Dual64,
{
    let v = eval_hp(chart, q)?.to_state();
    Ok(f(&to_b_coords(&q.with_tangent(&v))).eps / q.tau)
}

/// A random point of `Char(P)` with base in the `r`-box of `q0` (normal
/// coordinates in `[0, r]`, biased towards the face), `|τ| = 1` and a
/// uniformly random `ξ` direction.
fn char_sample(chart: &Chart, q0: &CompressedPoint, r: f64, rng: &mut ChaCha8Rng) -> Option<CotangentPoint> {
    let (k, l) = (chart.k(), chart.l());
    let tau = q0.tau.signum();
    let x: Vec<f64> = (0..k).map(|_| r * rng.gen::<f64>().powi(3)).collect();
    let y: Vec<f64> = q0.y.iter().map(|&v| v + r * rng.gen_range(-1.0..1.0)).collect();
    let t = q0.t + r * rng.gen_range(-1.0..1.0);
    let zeta: Vec<f64> = q0.zeta.iter().map(|&z| tau * (z / q0.tau + r * rng.gen_range(-1.0..1.0))).collect();
    if !chart.contains(&x, &y, t, 0.0) {
        return None;
    }
    let dir = sphere_samples(k.max(1), 1, rng.gen())[0].clone();
    let q = chart.metric_f64(&x, &y).block();
    let mut a2 = 0.0;
    let mut a1 = 0.0;
    let mut a0 = -tau * tau;
    for i in 0..k {
        for j in 0..k {
            a2 += dir[i] * q[(i, j)] * dir[j];
        }
        for j in 0..l {
            a1 += 2.0 * dir[i] * q[(i, k + j)] * zeta[j];
        }
    }
    for i in 0..l {
        for j in 0..l {
            a0 += zeta[i] * q[(k + i, k + j)] * zeta[j];
        }
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    if k == 0 || disc < 0.0 {
        return None;
    }
    let lam = (-a1 + disc.sqrt()) / (2.0 * a2);
    let xi = dir.iter().map(|d| lam * d).collect();
    Some(CotangentPoint::new(x, y, t, xi, zeta, tau))
}

/// Positivity of `|τ|⁻¹H_pφ` on the support of the hyperbolic symbol.
///
/// `C1″` is estimated on `spec.n` samples of `Char(P)` with `ω ≤ 4δ²ε²`;
/// then `spec.n` samples with `a > 0` are drawn (up to `200·n` attempts).
pub fn hp_phi_lower_bound(chart: &Chart, params: &CommutantParams, spec: SampleSpec) -> Result<HyperbolicReport> {
    let q0 = &params.q0;
    let cl = classify(chart, q0)?;
    if cl.kind != Kind::Hyperbolic {
        return Err(Error::NotHyperbolic { margin: cl.margin });
    }
    if spec.n == 0 {
        return Err(Error::EmptyGrid);
    }
    let c0 = 2.0 * cl.margin / (q0.tau * q0.tau);
    let r = 2.0 * params.delta * params.eps;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut c1pp = 0.0f64;
    let mut max_sigma_ratio = 0.0f64;
    let mut got = 0;
    let mut tries = 0;
    while got < spec.n && tries < 200 * spec.n {
        tries += 1;
        let Some(q) = char_sample(chart, q0, r, &mut rng) else { continue };
        let b = to_b_coords(&q);
        let w = omega_hyp(&b, q0);
        if w > r * r || w == 0.0 {
            continue;
        }
        got += 1;
        let hw = hp_b(chart, &q, |b| omega_hyp(b, q0))?;
        c1pp = c1pp.max(hw.abs() / w.sqrt());
        max_sigma_ratio = max_sigma_ratio.max(sigma_ratio(&b));
    }
    if got == 0 {
        return Err(Error::EmptySupport);
    }
    let threshold = 8.0 * c1pp / c0;
    if params.eps <= threshold {
        return Err(Error::EpsilonTooSmall { eps: params.eps, threshold });
    }

    let mut min_hp_phi = f64::INFINITY;
    let mut samples = 0;
    let mut violation = None;
    let mut tries = 0;
    while samples < spec.n && tries < 200 * spec.n {
        tries += 1;
        let Some(q) = char_sample(chart, q0, r, &mut rng) else { continue };
        if a_hyp(&to_b_coords(&q), params) <= 0.0 {
            continue;
        }
        samples += 1;
        let v = hp_b(chart, &q, |b| phi_hyp(b, params))? * q.tau.signum();
        if v < c0 / 4.0 && violation.is_none() {
            violation = Some(q.clone());
        }
        min_hp_phi = min_hp_phi.min(v);
    }
    if samples == 0 {
        return Err(Error::EmptySupport);
    }
    let c1_valid = max_sigma_ratio < params.c1 / 2.0;
    Ok(HyperbolicReport {
        c0,
        c1pp,
        threshold,
        min_hp_phi,
        samples,
        max_sigma_ratio,
        c1_valid,
        pass: min_hp_phi >= c0 / 4.0 && c1_valid,
        violation,
    })
}

/// Integral curve of `W♭ = 2τ∂_t - H_h`, `h = ζ·B(0, y)ζ`, through a glancing
/// point with `τ0 = 1`, parametrised by `t`.
#[derive(Debug, Clone)]
pub struct WFlatCurve {
    t0: f64,
    l: usize,
    y0: Vec<f64>,
    forward: Vec<(f64, DenseStep)>,
    backward: Vec<(f64, DenseStep)>,
    chart: Chart,
}

/// `d(y, ζ)/dt` along `W♭` with `τ = 1`.
fn wflat_rhs(chart: &Chart, u: &[f64], out: &mut [f64]) {
    let l = chart.l();
    let zero = vec![0.0; chart.k()];
    let (y, zeta) = u.split_at(l);
    let jet = chart.metric_jet(&zero, y);
    for i in 0..l {
        let mut by = 0.0;
        for j in 0..l {
            by += jet.value.b[i * l + j] * zeta[j];
        }
        out[i] = -by;
    }
    for m in 0..l {
        let db = &jet.dy[m].b;
        let mut h = 0.0;
        for i in 0..l {
            for j in 0..l {
                h += zeta[i] * db[i * l + j] * zeta[j];
            }
        }
        out[l + m] = 0.5 * h;
    }
}

impl WFlatCurve {
    /// Curve through `q0` covering `t ∈ [t0 - half_width, t0 + half_width]`.
    pub fn new(chart: &Chart, q0: &CompressedPoint, half_width: f64) -> Result<Self> {
        let l = chart.l();
        let mut u0 = q0.y.clone();
        u0.extend(q0.zeta.iter().map(|z| z / q0.tau));
        let cfg = OdeConfig {
            rtol: 1e-12,
            atol: 1e-14,
            ..OdeConfig::default()
        };
        let run = |sign: f64| -> Result<Vec<(f64, DenseStep)>> {
            let c = chart.clone();
            let f = move |u: &[f64], out: &mut [f64]| {
                wflat_rhs(&c, u, out);
                out.iter_mut().for_each(|v| *v *= sign);
            };
            let mut st = Stepper::new(f, u0.clone(), cfg)?;
            let mut steps = Vec::new();
            while st.u() < half_width {
                let u = st.u();
                let d = st.step(half_width - u)?;
                steps.push((u, d));
            }
            Ok(steps)
        };
        let (forward, backward) = if l == 0 { (Vec::new(), Vec::new()) } else { (run(1.0)?, run(-1.0)?) };
        Ok(Self {
            t0: q0.t,
            l,
            y0: u0,
            forward,
            backward,
            chart: chart.clone(),
        })
    }

    /// `(y, ζ̂)` on the curve at time `t` and its `t`-derivative.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        if self.l == 0 {
            return (Vec::new(), Vec::new());
        }
        let (u, steps) = if t >= self.t0 { (t - self.t0, &self.forward) } else { (self.t0 - t, &self.backward) };
        let i = steps.partition_point(|(u0, _)| *u0 <= u).saturating_sub(1);
        let v = match steps.get(i) {
            Some((u0, d)) => d.eval(((u - u0) / d.h).clamp(0.0, 1.0)),
            None => self.y0.clone(),
        };
        let mut dv = vec![0.0; 2 * self.l];
        wflat_rhs(&self.chart, &v, &mut dv);
        (v, dv)
    }
}

/// The glancing symbol family around a glancing reference point.
#[derive(Debug, Clone)]
pub struct GlancingSymbol {
    pub params: CommutantParams,
    pub curve: WFlatCurve,
}

impl GlancingSymbol {
    pub fn new(chart: &Chart, params: CommutantParams) -> Result<Self> {
        let cl = classify(chart, &params.q0)?;
        if cl.kind != Kind::Glancing || params.q0.tau <= 0.0 {
            return Err(Error::NotGlancing { margin: cl.margin });
        }
        if params.eps >= 1.0 {
            return Err(Error::InvalidParams(format!("glancing ε must be < 1 (got {})", params.eps)));
        }
        let half = (4.0 * params.delta).max(1.0);
        let curve = WFlatCurve::new(chart, &params.q0, half)?;
        Ok(Self { params, curve })
    }

    /// `ω0 + |x|²`, with `ω0` the squared distance in `(y, ζ̂)` to the `W♭`
    /// curve at the same `t`.
    pub fn omega<S: Scalar>(&self, q: &BCotangentPoint<S>) -> S {
        let tr = q.t.re();
        let (v, dv) = self.curve.eval(tr);
        let l = q.y.len();
        let dt = q.t - S::from(tr);
        let mut w = sum_sq(q.x.iter().copied());
        for i in 0..l {
            let yc = S::from(v[i]) + dt * dv[i];
            let zc = S::from(v[l + i]) + dt * dv[l + i];
            let dy = q.y[i] - yc;
            let dz = q.zeta[i] / q.tau - zc;
            w += dy * dy + dz * dz;
        }
        w
    }

    /// `φ = t - t0 + ω/(ε²δ)`.
    pub fn phi<S: Scalar>(&self, q: &BCotangentPoint<S>) -> S {
        let p = &self.params;
        q.t - S::from(p.q0.t) + self.omega(q) / (p.eps * p.eps * p.delta)
    }

    fn chi1_arg(&self, t: f64) -> f64 {
        let p = &self.params;
        (t - p.q0.t + p.delta) / (p.eps * p.delta) + 1.0
    }

    /// Zero off the `τ > 0` sheet.
    pub fn a(&self, q: &BCotangentPoint) -> f64 {
        if q.tau <= 0.0 {
            return 0.0;
        }
        let p = &self.params;
        chi0((2.0 - self.phi(q) / p.delta) / p.a0) * chi1(self.chi1_arg(q.t)) * chi2(sigma_ratio(q), p.c1)
    }

    /// True where the `χ1` factor has nonzero derivative and the other
    /// factors do not vanish.
    pub fn in_dchi1_support(&self, q: &BCotangentPoint) -> bool {
        let p = &self.params;
        q.tau > 0.0
            && chi1_prime(self.chi1_arg(q.t)) > 0.0
            && chi0((2.0 - self.phi(q) / p.delta) / p.a0) > 0.0
            && chi2(sigma_ratio(q), p.c1) > 0.0
    }
}

pub fn omega_gla(q: &BCotangentPoint, params: &CommutantParams, chart: &Chart) -> Result<f64> {
    Ok(GlancingSymbol::new(chart, params.clone())?.omega(q))
}

pub fn a_gla(q: &BCotangentPoint, params: &CommutantParams, chart: &Chart) -> Result<f64> {
    Ok(GlancingSymbol::new(chart, params.clone())?.a(q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlancingSupportReport {
    pub samples: usize,
    pub in_support: usize,
    pub in_band: usize,
    pub t_violations: usize,
    pub omega_violations: usize,
    pub band_violations: usize,
    pub pass: bool,
}

/// Random b-points in a box around `q0` scaled to the support of `a_gla`.
fn gla_box_sample(sym: &GlancingSymbol, rng: &mut ChaCha8Rng) -> BCotangentPoint {
    let p = &sym.params;
    let r = 3.0 * p.eps * p.delta;
    let q0 = &p.q0;
    let x: Vec<f64> = q0.x.iter().map(|_| r * rng.gen::<f64>()).collect();
    let sigma = x.iter().map(|&x| x * rng.gen_range(-1.0..1.0)).collect();
    let t = q0.t + 3.0 * p.delta * rng.gen_range(-1.0..1.0);
    let tau = rng.gen_range(0.5..2.0);
    let (v, _) = sym.curve.eval(t);
    let l = q0.y.len();
    BCotangentPoint {
        x,
        y: (0..l).map(|i| v[i] + r * rng.gen_range(-1.0..1.0)).collect(),
        t,
        sigma,
        zeta: (0..l).map(|i| tau * (v[l + i] + r * rng.gen_range(-1.0..1.0))).collect(),
        tau,
    }
}

/// Support confinement of `a_gla` and of its `dχ1` band on `n` random samples.
pub fn glancing_support_report(sym: &GlancingSymbol, n: usize, seed: u64) -> GlancingSupportReport {
    let p = &sym.params;
    let (d, e) = (p.delta, p.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = GlancingSupportReport {
        samples: n,
        in_support: 0,
        in_band: 0,
        t_violations: 0,
        omega_violations: 0,
        band_violations: 0,
        pass: false,
    };
    for _ in 0..n {
        let q = gla_box_sample(sym, &mut rng);
        let dt = q.t - p.q0.t;
        if sym.a(&q) > 0.0 {
            r.in_support += 1;
            if dt.abs() > 2.0 * d {
                r.t_violations += 1;
            }
            if sym.omega(&q) > 4.0 * d * d * e * e {
                r.omega_violations += 1;
            }
        }
        if sym.in_dchi1_support(&q) {
            r.in_band += 1;
            if dt < -d - e * d || dt > -d || sym.omega(&q).sqrt() > 2.0 * e * d {
                r.band_violations += 1;
            }
        }
    }
    r.pass = r.in_support > 0 && r.in_band > 0 && r.t_violations + r.omega_violations + r.band_violations == 0;
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlancingEstimateReport {
    /// Smallest admissible constant on `n` samples.
    pub c_coarse: f64,
    /// The same on `4n` samples (a superset).
    pub c_fine: f64,
    pub refinement_change: f64,
    /// Admissible constant with the `τ⁻²|p|` term dropped.
    pub c_without_p: f64,
    /// Samples violating the bound at `c_fine` once the `|p|` term is dropped.
    pub ablation_violations: usize,
    pub samples: usize,
    pub pass: bool,
}

/// Radius and density of the cotangent box sampled around the glancing lift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub radius: f64,
    pub n: usize,
    pub seed: u64,
}

/// Smallest `C` with `|τ⁻¹H_pω| ≤ C ω^{1/2}(ω^{1/2} + |t - t0| + τ⁻²|p|)`
/// over a nested pair of samples of the `radius`-box around the glancing
/// lift, and its change under `4×` refinement.
pub fn hp_omega_glancing_estimate(chart: &Chart, sym: &GlancingSymbol, grid: GridSpec) -> Result<GlancingEstimateReport> {
    if grid.n == 0 || !(grid.radius > 0.0) {
        return Err(Error::EmptyGrid);
    }
    let q0 = &sym.params.q0;
    let k = chart.k();
    let r = grid.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    // (lhs, ω^{1/2}, |t - t0|, |p|/τ²)
    let mut rows: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(4 * grid.n);
    while rows.len() < 4 * grid.n {
        let x: Vec<f64> = (0..k).map(|_| r * rng.gen::<f64>()).collect();
        let y: Vec<f64> = q0.y.iter().map(|&v| v + r * rng.gen_range(-1.0..1.0)).collect();
        let t = q0.t + r * rng.gen_range(-1.0..1.0);
        let xi: Vec<f64> = (0..k).map(|_| r * rng.gen_range(-1.0..1.0)).collect();
        let zeta: Vec<f64> = q0.zeta.iter().map(|&z| z / q0.tau + r * rng.gen_range(-1.0..1.0)).collect();
        if !chart.contains(&x, &y, t, 0.0) {
            continue;
        }
        let q = CotangentPoint::new(x, y, t, xi, zeta, 1.0);
        let w = sym.omega(&to_b_coords(&q));
        if w == 0.0 {
            continue;
        }
        let lhs = hp_b(chart, &q, |b| sym.omega(b))?.abs();
        let p = p_generic(chart, &q).abs();
        rows.push((lhs, w.sqrt(), (t - q0.t).abs(), p));
    }
    let admissible = |rows: &[(f64, f64, f64, f64)], with_p: bool| {
        rows.iter()
            .map(|&(lhs, s, dt, p)| lhs / (s * (s + dt + if with_p { p } else { 0.0 })))
            .fold(0.0f64, f64::max)
    };
    let c_coarse = admissible(&rows[..grid.n], true);
    let c_fine = admissible(&rows, true);
    let c_without_p = admissible(&rows, false);
    let ablation_violations = rows.iter().filter(|&&(lhs, s, dt, _)| lhs > c_fine * s * (s + dt)).count();
    let refinement_change = (c_fine - c_coarse).abs() / c_fine;
    Ok(GlancingEstimateReport {
        c_coarse,
        c_fine,
        refinement_change,
        c_without_p,
        ablation_violations,
        samples: rows.len(),
        pass: c_fine.is_finite() && refinement_change <= 0.15,
    })
}

/// Variable names of b-symbols: `x1.., y1.., t, s1.. (σ), z1.. (ζ), tau`.
pub fn b_variables(k: usize, l: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    v.extend((1..=l).map(|i| format!("y{i}")));
    v.push("t".into());
    v.extend((1..=k).map(|i| format!("s{i}")));
    v.extend((1..=l).map(|i| format!("z{i}")));
    v.push("tau".into());
    v
}

/// Parses a b-symbol over [`b_variables`].
pub fn parse_b_symbol(src: &str, k: usize, l: usize) -> Result<Expr> {
    let names = b_variables(k, l);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Expr::parse(src, &refs).map_err(|e| Error::Scenario(format!("symbol `{src}`: {e}")))
}

/// A cotangent point over `q` (`ξ_j = σ_j/x_j`, or `0` where `x_j = 0`).
fn preimage(q: &BCotangentPoint) -> Result<CotangentPoint> {
    let mut xi = Vec::with_capacity(q.x.len());
    for (&x, &s) in q.x.iter().zip(&q.sigma) {
        if x != 0.0 {
            xi.push(s / x);
        } else if s == 0.0 {
            xi.push(0.0);
        } else {
            return Err(Error::OutOfDomain(format!("σ = {s} over x = 0")));
        }
    }
    Ok(CotangentPoint::new(q.x.clone(), q.y.clone(), q.t, xi, q.zeta.clone(), q.tau))
}

fn b_vars<S: Scalar>(b: &BCotangentPoint<S>) -> Vec<S> {
    let mut v = b.x.clone();
    v.extend_from_slice(&b.y);
    v.push(b.t);
    v.extend_from_slice(&b.sigma);
    v.extend_from_slice(&b.zeta);
    v.push(b.tau);
    v
}

/// Gradient of `e ∘ ι` in cotangent state coordinates.
fn pullback_gradient(e: &Expr, q: &CotangentPoint) -> Result<Vec<f64>> {
    let n = q.to_state().len();
    let mut g = vec![0.0; n];
    let mut v = vec![0.0; n];
    for i in 0..n {
        v[i] = 1.0;
        let d = e.eval(&b_vars(&to_b_coords(&q.with_tangent(&v))));
        v[i] = 0.0;
        if !d.re.is_finite() || !d.eps.is_finite() {
            return Err(Error::NonDifferentiable);
        }
        g[i] = d.eps;
    }
    Ok(g)
}

/// `{a, b}` of the pullbacks through `ι`, in cotangent coordinates, with
/// `{a, b} = Σ ∂_ξ a ∂_x b - ∂_x a ∂_ξ b` (and likewise for `(y, ζ)`, `(t, τ)`).
pub fn b_poisson_bracket(a: &Expr, b: &Expr, q: &BCotangentPoint) -> Result<f64> {
    let p = preimage(q)?;
    let ga = pullback_gradient(a, &p)?;
    let gb = pullback_gradient(b, &p)?;
    let half = ga.len() / 2;
    Ok((0..half).map(|i| ga[half + i] * gb[i] - ga[i] * gb[half + i]).sum())
}

/// Partial derivative of `e` in b-coordinate `i` (layout of [`b_variables`]).
fn b_partial(e: &Expr, q: &BCotangentPoint, i: usize) -> Result<f64> {
    let mut v = b_vars(q).into_iter().map(|x| dual(x, 0.0)).collect::<Vec<_>>();
    v[i].eps = 1.0;
    let d = e.eval(&v);
    if !d.re.is_finite() || !d.eps.is_finite() {
        return Err(Error::NonDifferentiable);
    }
    Ok(d.eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BracketReport {
    pub symbol: String,
    pub points: usize,
    pub max_discrepancy: f64,
    pub worst: Option<usize>,
}

/// Max over `points` and `j` of the discrepancies in `{σ_j, a} = x_j∂_{x_j}a`
/// and `{x_j, a} = -x_j∂_{σ_j}a`.
pub fn bracket_identity_report(a: &Expr, k: usize, l: usize, points: &[BCotangentPoint]) -> Result<BracketReport> {
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let names = b_variables(k, l);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let n = k + l + 1;
    let mut worst = (0.0f64, None);
    for (pi, q) in points.iter().enumerate() {
        for j in 0..k {
            let sj = Expr::parse(&names[n + j], &refs).expect("variable name parses");
            let xj = Expr::parse(&names[j], &refs).expect("variable name parses");
            let d1 = b_poisson_bracket(&sj, a, q)? - q.x[j] * b_partial(a, q, j)?;
            let d2 = b_poisson_bracket(&xj, a, q)? + q.x[j] * b_partial(a, q, n + j)?;
            let d = d1.abs().max(d2.abs());
            if d > worst.0 || d.is_nan() {
                worst = (d, Some(pi));
            }
        }
    }
    Ok(BracketReport {
        symbol: a.source().to_string(),
        points: points.len(),
        max_discrepancy: worst.0,
        worst: worst.1,
    })
}

/// Seeded b-points with `x ∈ (0, 1]`, `y, t, σ, ζ ∈ [-1, 1]`, `τ ∈ [0.5, 1.5]`.
pub fn bracket_grid(k: usize, l: usize, n: usize, seed: u64) -> Vec<BCotangentPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    (0..n)
        .map(|_| BCotangentPoint {
            x: (0..k).map(|_| 1.0 - u(0.0, 0.95)).collect(),
            y: (0..l).map(|_| u(-1.0, 1.0)).collect(),
            t: u(-1.0, 1.0),
            sigma: (0..k).map(|_| u(-1.0, 1.0)).collect(),
            zeta: (0..l).map(|_| u(-1.0, 1.0)).collect(),
            tau: u(0.5, 1.5),
        })
        .collect()
}

/// The fixed basket of polynomial and trigonometric b-symbols for `k = 2, l = 1`.
pub const BRACKET_BASKET: [&str; 8] = [
    "s1",
    "x1*s1",
    "s1^2 + x1*y1*z1 - s2*tau",
    "x1^3*s2 + x2*s1^2 - t*z1",
    "sin(x1*s1)*cos(y1) + exp(-x2)*s2/tau",
    "cos(s1 + s2)*sin(t) + x1*x2*z1^2",
    "sqrt(1 + s1^2 + z1^2)/tau",
    "exp(x1*y1 - s2)*(s1 + t)",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, FaceId, MetricCoeffs};
    use crate::hamiltonian::eval_p;

    fn flat_half_plane() -> Chart {
        Chart::flat(1, 1, Domain::new(vec![1.0], vec![-2.0], vec![2.0], -2.0, 2.0)).unwrap()
    }

    fn disc() -> Chart {
        let s = |v: &str| vec![vec![v.to_string()]];
        let c = MetricCoeffs::parse(1, 1, &s("1"), &s("1/(1 - x1)^2"), &s("0")).unwrap();
        Chart::new(1, 1, Domain::new(vec![0.9], vec![-10.0], vec![10.0], -10.0, 10.0), c).unwrap()
    }

    fn hyp_params(eps: f64, delta: f64) -> CommutantParams {
        let q0 = CompressedPoint::corner(vec![0.0], 0.0, 1, vec![0.0], 1.0);
        CommutantParams::new(q0, delta, eps, 1.0, 1.0).unwrap()
    }

    fn gla_params() -> CommutantParams {
        let q0 = CompressedPoint::corner(vec![0.0], 0.0, 1, vec![1.0], 1.0);
        CommutantParams::new(q0, 0.05, 0.5, 1.0, 1.0).unwrap()
    }

    #[test]
    fn cutoff_values() {
        assert!((chi0(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(chi0(-0.5), 0.0);
        assert_eq!(chi1(2.0), 1.0);
        assert!((chi0_prime(0.5) - 4.0 * (-2.0f64).exp()).abs() < 1e-15);
        for i in 0..=200 {
            let t = 0.05 + (10.0 - 0.05) * i as f64 / 200.0;
            assert!((chi0_prime(t) * t * t - chi0(t)).abs() < 1e-12);
        }
        for i in 0..=100 {
            let t = -1.0 + 2.0 * i as f64 / 100.0;
            assert_eq!(chi2(0.3 * t, 0.3), 1.0);
            assert_eq!(chi2(0.6 + 0.1 * (t + 1.0), 0.3), 0.0);
        }
    }

    #[test]
    fn chi1_monotone_with_interior_transition() {
        let mut prev = 0.0;
        for i in 0..=1000 {
            let t = -0.5 + 2.0 * i as f64 / 1000.0;
            let v = chi1(t);
            assert!(v >= prev);
            prev = v;
            if !(0.0..=1.0).contains(&t) {
                assert_eq!(chi1_prime(t), 0.0);
            }
            let h = 1e-6;
            let fd = (chi1(t + h) - chi1(t - h)) / (2.0 * h);
            assert!((fd - chi1_prime(t)).abs() < 1e-6);
            let fd2 = (chi2(t + h, 0.4) - chi2(t - h, 0.4)) / (2.0 * h);
            assert!((fd2 - chi2_prime(t, 0.4)).abs() < 1e-5);
        }
    }

    #[test]
    fn omega_hyp_vanishes_and_is_homogeneous() {
        let p = hyp_params(30.0, 1e-3);
        let at = BCotangentPoint { x: vec![0.0], y: vec![0.0], t: 0.0, sigma: vec![0.0], zeta: vec![0.0], tau: 1.0 };
        assert_eq!(omega_hyp(&at, &p.q0), 0.0);
        assert!((a_hyp(&at, &p) - chi0(2.0)).abs() < 1e-15);
        let q = BCotangentPoint { x: vec![0.3], y: vec![0.2], t: -0.1, sigma: vec![0.05], zeta: vec![0.4], tau: 1.3 };
        let direct = 0.09 + 0.04 + 0.01 + (0.4f64 / 1.3).powi(2);
        assert!((omega_hyp(&q, &p.q0) - direct).abs() < 1e-14);
        let near = BCotangentPoint { x: vec![1e-3], y: vec![1e-3], t: 0.0, sigma: vec![-1e-3], zeta: vec![0.01], tau: 1.0 };
        let gp = gla_params();
        let sym = GlancingSymbol::new(&flat_half_plane(), gp).unwrap();
        for lam in [0.5, 2.0, 10.0] {
            let s = |b: &BCotangentPoint| BCotangentPoint {
                sigma: b.sigma.iter().map(|v| v * lam).collect(),
                zeta: b.zeta.iter().map(|v| v * lam).collect(),
                tau: b.tau * lam,
                ..b.clone()
            };
            for b in [&q, &near] {
                assert!((omega_hyp(&s(b), &p.q0) - omega_hyp(b, &p.q0)).abs() < 1e-14);
                assert!((phi_hyp(&s(b), &p) - phi_hyp(b, &p)).abs() < 1e-12);
                assert!((a_hyp(&s(b), &p) - a_hyp(b, &p)).abs() < 1e-14);
                assert!((sym.omega(&s(b)) - sym.omega(b)).abs() < 1e-14);
                assert!((sym.a(&s(b)) - sym.a(b)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn a_hyp_support_confinement() {
        let p = hyp_params(30.0, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = 0;
        for _ in 0..20000 {
            let r = 0.1;
            let q = BCotangentPoint {
                x: vec![0.01 * rng.gen::<f64>()],
                y: vec![r * rng.gen_range(-1.0..1.0)],
                t: r * rng.gen_range(-1.0..1.0),
                sigma: vec![0.005 * rng.gen_range(-1.0..1.0)],
                zeta: vec![r * rng.gen_range(-1.0..1.0)],
                tau: 1.0,
            };
            let eta = eta_b(&q);
            if eta < -2.0 * p.delta {
                assert_eq!(a_hyp(&q, &p), 0.0);
            }
            if a_hyp(&q, &p) > 0.0 {
                seen += 1;
                assert!(eta.abs() <= 2.0 * p.delta);
                assert!(omega_hyp(&q, &p.q0) <= 4.0 * (p.delta * p.eps).powi(2));
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn hyperbolic_positivity_flat_and_disc() {
        let spec = SampleSpec { n: 2000, seed: 5 };
        let r = hp_phi_lower_bound(&flat_half_plane(), &hyp_params(30.0, 1e-3), spec).unwrap();
        assert_eq!(r.c0, 2.0);
        assert!(r.pass && r.min_hp_phi >= 0.5, "{r:?}");
        let r10 = hp_phi_lower_bound(&flat_half_plane(), &hyp_params(30.0, 1e-4), spec).unwrap();
        assert!(r10.min_hp_phi >= 0.9 * r.min_hp_phi);
        let r = hp_phi_lower_bound(&disc(), &hyp_params(40.0, 1e-3), spec).unwrap();
        assert!(r.pass, "{r:?}");
        match hp_phi_lower_bound(&flat_half_plane(), &hyp_params(2.0, 1e-3), spec) {
            Err(Error::EpsilonTooSmall { eps, threshold }) => {
                assert_eq!(eps, 2.0);
                assert!(threshold > 2.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn char_samples_are_characteristic() {
        let chart = disc();
        let q0 = CompressedPoint::corner(vec![0.0], 0.0, 1, vec![0.3], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut n = 0;
        for _ in 0..200 {
            if let Some(q) = char_sample(&chart, &q0, 0.1, &mut rng) {
                assert!(eval_p(&chart, &q).unwrap().abs() < 1e-12);
                n += 1;
            }
        }
        assert!(n > 100);
    }

    #[test]
    fn wflat_curve_flat_and_disc() {
        let chart = flat_half_plane();
        let q0 = CompressedPoint::corner(vec![0.2], 0.1, 1, vec![1.0], 1.0);
        let c = WFlatCurve::new(&chart, &q0, 1.0).unwrap();
        let (v, dv) = c.eval(0.6);
        // dy/dt = -ζ with τ = 1
        assert!((v[0] - (0.2 - 0.5)).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-14);
        assert!((dv[0] + 1.0).abs() < 1e-14);
        let (v, _) = c.eval(-0.4);
        assert!((v[0] - 0.7).abs() < 1e-12);
        let sym = GlancingSymbol::new(&chart, CommutantParams::new(q0, 0.05, 0.5, 1.0, 1.0).unwrap()).unwrap();
        let on = BCotangentPoint { x: vec![0.0], y: vec![0.2 - 0.3], t: 0.4, sigma: vec![0.0], zeta: vec![2.0], tau: 2.0 };
        assert!(sym.omega::<f64>(&on).abs() < 1e-20);
    }

    #[test]
    fn glancing_rejects_non_glancing() {
        let q0 = CompressedPoint::corner(vec![0.0], 0.0, 1, vec![0.5], 1.0);
        let p = CommutantParams::new(q0, 0.05, 0.5, 1.0, 1.0).unwrap();
        assert!(matches!(GlancingSymbol::new(&flat_half_plane(), p), Err(Error::NotGlancing { .. })));
        let mut q0 = CompressedPoint::corner(vec![0.0], 0.0, 1, vec![0.0], 1.0);
        q0.face = FaceId::default();
        assert!(CommutantParams::new(q0, 0.05, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn glancing_support_facts() {
        let sym = GlancingSymbol::new(&disc(), gla_params()).unwrap();
        let r = glancing_support_report(&sym, 10_000, 7);
        assert!(r.pass, "{r:?}");
        assert!(r.in_support > 100 && r.in_band > 10);
    }

    #[test]
    fn glancing_estimate_runs_and_ablation_bites() {
        let chart = flat_half_plane();
        let sym = GlancingSymbol::new(&chart, gla_params()).unwrap();
        let r = hp_omega_glancing_estimate(&chart, &sym, GridSpec { radius: 0.1, n: 500, seed: 2 }).unwrap();
        assert!(r.c_fine.is_finite() && r.c_fine >= r.c_coarse);
        assert!(r.c_without_p > r.c_fine && r.ablation_violations > 0);
        assert!(matches!(
            hp_omega_glancing_estimate(&chart, &sym, GridSpec { radius: 0.1, n: 0, seed: 2 }),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn bracket_examples() {
        let q = BCotangentPoint { x: vec![0.7], y: vec![], t: 0.2, sigma: vec![0.3], zeta: vec![], tau: 1.1 };
        let s1 = parse_b_symbol("s1", 1, 0).unwrap();
        let x1 = parse_b_symbol("x1", 1, 0).unwrap();
        assert!(b_poisson_bracket(&s1, &s1, &q).unwrap().abs() < 1e-15);
        let a = parse_b_symbol("x1*s1", 1, 0).unwrap();
        assert!((b_poisson_bracket(&x1, &a, &q).unwrap() + 0.49).abs() < 1e-14);
        let bad = parse_b_symbol("sqrt(x1 - 1)", 1, 0).unwrap();
        assert!(matches!(b_poisson_bracket(&x1, &bad, &q), Err(Error::NonDifferentiable)));
    }

    #[test]
    fn bracket_basket_identities() {
        let pts = bracket_grid(2, 1, 1000, 9);
        for src in BRACKET_BASKET {
            let a = parse_b_symbol(src, 2, 1).unwrap();
            let r = bracket_identity_report(&a, 2, 1, &pts).unwrap();
            assert!(r.max_discrepancy <= 1e-10, "{src}: {r:?}");
        }
    }
}
