//! Dormand–Prince 5(4) with PI step control and continuous output.
//!
//! Systems are autonomous, `y' = f(y)`, integrated forward in the local
//! parameter `u ≥ 0`. Callers map `u` onto their own flow parameter.

use crate::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; `0` picks one from the local scale of `f`.
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 0.0,
            h_min: 1e-14,
            h_max: 0.1,
        }
    }
}

/// Quintic interpolant over one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub h: f64,
    /// `[r1, r2, r3, r4, r5]`, each the length of the state.
    pub r: [Vec<f64>; 5],
}

impl DenseStep {
    /// Straight-line motion from `y0` to `y1`.
    pub fn linear(y0: &[f64], y1: &[f64], h: f64) -> Self {
        let n = y0.len();
        Self {
            h,
            r: [
                y0.to_vec(),
                y1.iter().zip(y0).map(|(a, b)| a - b).collect(),
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
            ],
        }
    }

    /// State at the fraction `theta ∈ [0, 1]` of the step.
    pub fn eval(&self, theta: f64) -> Vec<f64> {
        let t1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.r;
        (0..r1.len())
            .map(|i| r1[i] + theta * (r2[i] + t1 * (r3[i] + theta * (r4[i] + t1 * r5[i]))))
            .collect()
    }

    pub fn start(&self) -> &[f64] {
        &self.r[0]
    }

    pub fn end(&self) -> Vec<f64> {
        self.r[0].iter().zip(&self.r[1]).map(|(a, b)| a + b).collect()
    }
}

struct Stages {
    y1: Vec<f64>,
    err: Vec<f64>,
    k: [Vec<f64>; 7],
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    (0..y.len())
        .map(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
        .collect()
}

fn eval<F: FnMut(&[f64], &mut [f64])>(f: &mut F, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    f(y, &mut out);
    out
}

fn stages<F: FnMut(&[f64], &mut [f64])>(f: &mut F, y0: &[f64], k1: &[f64], h: f64) -> Stages {
    let k2 = eval(f, &axpy(y0, h, &[(A21, k1)]));
    let k3 = eval(f, &axpy(y0, h, &[(A31, k1), (A32, &k2)]));
    let k4 = eval(f, &axpy(y0, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = eval(f, &axpy(y0, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = eval(
        f,
        &axpy(y0, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    );
    let y1 = axpy(y0, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = eval(f, &y1);
    let err = (0..y0.len())
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    Stages {
        y1,
        err,
        k: [k1.to_vec(), k2, k3, k4, k5, k6, k7],
    }
}

/// One fifth-order step of length `h` from `y0`, without error control.
/// Used to land exactly on an event inside an accepted step.
pub fn single_step<F: FnMut(&[f64], &mut [f64])>(f: &mut F, y0: &[f64], h: f64) -> Vec<f64> {
    let k1 = eval(f, y0);
    stages(f, y0, &k1, h).y1
}

fn error_norm(cfg: &OdeConfig, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
    let n = y0.len().max(1) as f64;
    let sum: f64 = (0..y0.len())
        .map(|i| {
            let sc = cfg.atol + cfg.rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Adaptive integrator state. Each call to [`Stepper::step`] advances by one
/// accepted step.
pub struct Stepper<F> {
    f: F,
    cfg: OdeConfig,
    u: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    err_prev: f64,
}

impl<F: FnMut(&[f64], &mut [f64])> Stepper<F> {
    pub fn new(mut f: F, y0: Vec<f64>, cfg: OdeConfig) -> Result<Self> {
        let k1 = eval(&mut f, &y0);
        if k1.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure { s: 0.0, h: 0.0 });
        }
        let h = if cfg.h_init > 0.0 {
            cfg.h_init
        } else {
            initial_step(&mut f, &cfg, &y0, &k1)
        };
        Ok(Self {
            f,
            cfg,
            u: 0.0,
            y: y0,
            k1,
            h: h.min(cfg.h_max),
            err_prev: 1e-4,
        })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn rhs(&mut self) -> &mut F {
        &mut self.f
    }

    /// Replaces the current state, e.g. after a projection.
    pub fn set_y(&mut self, y: Vec<f64>) {
        self.k1 = eval(&mut self.f, &y);
        self.y = y;
    }

    /// Advances one accepted step of length at most `h_cap`.
    pub fn step(&mut self, h_cap: f64) -> Result<DenseStep> {
        let mut h = self.h.min(h_cap).min(self.cfg.h_max);
        let mut rejected = false;
        loop {
            if h < self.cfg.h_min && h < h_cap {
                return Err(Error::StepFailure { s: self.u, h });
            }
            let st = stages(&mut self.f, &self.y, &self.k1, h);
            let finite = st.y1.iter().chain(&st.k[6]).all(|v| v.is_finite());
            let err = if finite {
                error_norm(&self.cfg, &self.y, &st.y1, &st.err)
            } else {
                f64::INFINITY
            };
            let fac11 = err.powf(ALPHA);
            if err <= 1.0 {
                let mut fac = fac11 / self.err_prev.powf(BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if rejected {
                    h_new = h_new.min(h);
                }
                self.err_prev = err.max(1e-4);
                let dense = build_dense(&self.y, &st, h);
                self.u += h;
                self.y = st.y1;
                self.k1 = st.k[6].clone();
                // keep the controller's proposal even when the step was capped
                self.h = if h < h_cap { h_new } else { self.h.max(h_new) };
                return Ok(dense);
            }
            rejected = true;
            h /= if finite { (fac11 / SAFETY).clamp(1.5, 1.0 / FAC_MIN) } else { 4.0 };
        }
    }
}

fn build_dense(y0: &[f64], st: &Stages, h: f64) -> DenseStep {
    let n = y0.len();
    let k = &st.k;
    let r2: Vec<f64> = (0..n).map(|i| st.y1[i] - y0[i]).collect();
    let r3: Vec<f64> = (0..n).map(|i| h * k[0][i] - r2[i]).collect();
    let r4: Vec<f64> = (0..n).map(|i| r2[i] - h * k[6][i] - r3[i]).collect();
    let r5: Vec<f64> = (0..n)
        .map(|i| {
            h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i])
        })
        .collect();
    DenseStep {
        h,
        r: [y0.to_vec(), r2, r3, r4, r5],
    }
}

fn initial_step<F: FnMut(&[f64], &mut [f64])>(f: &mut F, cfg: &OdeConfig, y0: &[f64], f0: &[f64]) -> f64 {
    let n = y0.len().max(1) as f64;
    let sc: Vec<f64> = y0.iter().map(|v| cfg.atol + cfg.rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt();
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.h_max);
    let y1 = axpy(y0, h0, &[(1.0, f0)]);
    let f1 = eval(f, &y1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(cfg.h_max).max(cfg.h_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }

    #[test]
    fn harmonic_oscillator_period() {
        let mut st = Stepper::new(oscillator, vec![1.0, 0.0], OdeConfig::default()).unwrap();
        let end = 2.0 * std::f64::consts::PI;
        while st.u() < end - 1e-15 {
            let cap = end - st.u();
            st.step(cap).unwrap();
        }
        assert!((st.y()[0] - 1.0).abs() < 1e-8);
        assert!(st.y()[1].abs() < 1e-8);
    }

    #[test]
    fn dense_output_is_fifth_order_accurate() {
        let cfg = OdeConfig {
            h_max: 0.5,
            ..OdeConfig::default()
        };
        let mut st = Stepper::new(oscillator, vec![1.0, 0.0], cfg).unwrap();
        let mut u0 = 0.0;
        for _ in 0..20 {
            let d = st.step(10.0).unwrap();
            for j in 0..=8 {
                let th = j as f64 / 8.0;
                let u = u0 + th * d.h;
                let y = d.eval(th);
                assert!((y[0] - u.cos()).abs() < 1e-8, "u = {u}");
                assert!((y[1] + u.sin()).abs() < 1e-8);
            }
            u0 += d.h;
        }
    }

    #[test]
    fn dense_end_points_match_step() {
        let mut st = Stepper::new(oscillator, vec![0.3, 0.7], OdeConfig::default()).unwrap();
        let y0 = st.y().to_vec();
        let d = st.step(1.0).unwrap();
        assert_eq!(d.eval(0.0), y0);
        for (a, b) in d.eval(1.0).iter().zip(st.y()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_is_exact_for_cubic() {
        // y' = 3u² written autonomously with u as a state component
        let mut f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = 1.0;
            dy[1] = 3.0 * y[0] * y[0];
        };
        let y = single_step(&mut f, &[0.5, 0.0], 0.75);
        assert!((y[1] - (1.25f64.powi(3) - 0.125)).abs() < 1e-14);
    }

    #[test]
    fn linear_dense_step() {
        let d = DenseStep::linear(&[0.0, 1.0], &[2.0, -1.0], 0.5);
        assert_eq!(d.eval(0.25), vec![0.5, 0.5]);
        assert_eq!(d.end(), vec![2.0, -1.0]);
    }

    #[test]
    fn non_finite_rhs_triggers_failure() {
        let f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = if y[0] > 0.5 { f64::NAN } else { 1.0 };
        };
        let mut st = Stepper::new(f, vec![0.0], OdeConfig::default()).unwrap();
        let mut res = Ok(());
        for _ in 0..10_000 {
            match st.step(1.0) {
                Ok(_) => {}
                Err(e) => {
                    res = Err(e);
                    break;
                }
            }
        }
        assert!(matches!(res, Err(Error::StepFailure { .. })));
        assert!(st.y()[0] <= 0.5);
    }
}
