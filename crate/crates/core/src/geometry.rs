//! Chart, metric coefficients, b-coordinates and compression.
//!
//! A chart is the box `[0, x_max]^k × [y_min, y_max] × [t_min, t_max]`. The
//! hypersurfaces `x_j = 0` are boundary faces. The far side `x_j = x_max` is
//! either a domain exit or, for billiard-style tables, a second reflecting
//! wall whose defining function is `x_max - x_j`.
//!
//! The dual metric is `g = ξ·Aξ + 2ξ·Cζ + ζ·Bζ` with `A`, `B`, `C` closed-form
//! expressions in `(x, y)`.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use num_dual::Dual64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, ParseError};
use crate::{dual, Error, Result, Scalar};

/// What happens at `x_j = x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpperSide {
    #[default]
    Exit,
    Wall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub x_max: Vec<f64>,
    pub x_upper: Vec<UpperSide>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
}

impl Domain {
    /// Box with every `x_j` in `[0, x_max]` exiting at the far side.
    pub fn new(x_max: Vec<f64>, y_min: Vec<f64>, y_max: Vec<f64>, t_min: f64, t_max: f64) -> Self {
        let x_upper = vec![UpperSide::Exit; x_max.len()];
        Self {
            x_max,
            x_upper,
            y_min,
            y_max,
            t_min,
            t_max,
        }
    }

    pub fn with_upper(mut self, upper: Vec<UpperSide>) -> Self {
        self.x_upper = upper;
        self
    }
}

/// Metric coefficient fields, each entry an expression in `x1..xk, y1..yl`.
/// Matrices are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCoeffs {
    pub a: Vec<Expr>,
    pub b: Vec<Expr>,
    pub c: Vec<Expr>,
}

/// Variable names visible to coefficient expressions.
pub fn coefficient_variables(k: usize, l: usize) -> Vec<String> {
    (1..=k)
        .map(|i| format!("x{i}"))
        .chain((1..=l).map(|i| format!("y{i}")))
        .collect()
}

impl MetricCoeffs {
    /// `A = I_k`, `B = I_l`, `C = 0`.
    pub fn flat(k: usize, l: usize) -> Self {
        let eye = |n: usize| {
            (0..n * n)
                .map(|i| Expr::constant(if i / n == i % n { 1.0 } else { 0.0 }))
                .collect()
        };
        Self {
            a: eye(k),
            b: eye(l),
            c: (0..k * l).map(|_| Expr::constant(0.0)).collect(),
        }
    }

    /// Parses row-major string matrices. Errors name the offending entry.
    pub fn parse(
        k: usize,
        l: usize,
        a: &[Vec<String>],
        b: &[Vec<String>],
        c: &[Vec<String>],
    ) -> std::result::Result<Self, (String, ParseError)> {
        let names = coefficient_variables(k, l);
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let parse_block = |label: &str, rows: &[Vec<String>], nr: usize, nc: usize| {
            if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
                return Err((
                    label.to_string(),
                    ParseError {
                        column: 1,
                        message: format!("{label} must be a {nr}x{nc} matrix"),
                    },
                ));
            }
            let mut out = Vec::with_capacity(nr * nc);
            for (i, row) in rows.iter().enumerate() {
                for (j, src) in row.iter().enumerate() {
                    let e = Expr::parse(src, &vars)
                        .map_err(|e| (format!("{label}[{}][{}]", i + 1, j + 1), e))?;
                    out.push(e);
                }
            }
            Ok(out)
        };
        Ok(Self {
            a: parse_block("A", a, k, k)?,
            b: parse_block("B", b, l, l)?,
            c: parse_block("C", c, k, l)?,
        })
    }
}

/// Metric coefficients evaluated at one base point, generic over the number type.
#[derive(Debug, Clone)]
pub struct MetricAt<S> {
    pub k: usize,
    pub l: usize,
    pub a: Vec<S>,
    pub b: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> MetricAt<S> {
    /// `g(ξ, ζ) = ξ·Aξ + 2ξ·Cζ + ζ·Bζ`.
    pub fn dual_metric<T>(&self, xi: &[T], zeta: &[T]) -> S
    where
        T: Copy + Into<S>,
    {
        let (k, l) = (self.k, self.l);
        let mut g = S::from(0.0);
        for i in 0..k {
            for j in 0..k {
                g += self.a[i * k + j] * xi[i].into() * xi[j].into();
            }
            for j in 0..l {
                g += self.c[i * l + j] * xi[i].into() * zeta[j].into() * 2.0;
            }
        }
        for i in 0..l {
            for j in 0..l {
                g += self.b[i * l + j] * zeta[i].into() * zeta[j].into();
            }
        }
        g
    }

    /// `(Aξ + Cζ)_i`: half of `-dx_i/ds`.
    pub fn a_xi_c_zeta(&self, i: usize, xi: &[S], zeta: &[S]) -> S {
        let (k, l) = (self.k, self.l);
        let mut v = S::from(0.0);
        for j in 0..k {
            v += self.a[i * k + j] * xi[j];
        }
        for j in 0..l {
            v += self.c[i * l + j] * zeta[j];
        }
        v
    }

    /// `(Bζ + Cᵀξ)_i`: half of `-dy_i/ds`.
    pub fn b_zeta_ct_xi(&self, i: usize, xi: &[S], zeta: &[S]) -> S {
        let (k, l) = (self.k, self.l);
        let mut v = S::from(0.0);
        for j in 0..l {
            v += self.b[i * l + j] * zeta[j];
        }
        for j in 0..k {
            v += self.c[j * l + i] * xi[j];
        }
        v
    }
}

impl MetricAt<f64> {
    /// Full block matrix `[[A, C], [Cᵀ, B]]` acting on `(ξ, ζ)`.
    pub fn block(&self) -> DMatrix<f64> {
        let (k, l) = (self.k, self.l);
        let n = k + l;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = self.a[i * k + j];
            }
            for j in 0..l {
                m[(i, k + j)] = self.c[i * l + j];
                m[(k + j, i)] = self.c[i * l + j];
            }
        }
        for i in 0..l {
            for j in 0..l {
                m[(k + i, k + j)] = self.b[i * l + j];
            }
        }
        m
    }
}

/// Value and first partial derivatives of the metric at a base point.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub value: MetricAt<f64>,
    /// `∂/∂x_j` for each `j`.
    pub dx: Vec<MetricAt<f64>>,
    /// `∂/∂y_j` for each `j`.
    pub dy: Vec<MetricAt<f64>>,
}

/// Numeric coefficient matrices returned by [`eval_metric`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValues {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    k: usize,
    l: usize,
    domain: Domain,
    coeffs: MetricCoeffs,
    lambda_min: f64,
    tol_face: f64,
}

/// Number of interior sample points used by chart validation.
const VALIDATION_SAMPLES: usize = 2048;
const VALIDATION_BOUNDARY_SAMPLES: usize = 512;

impl Chart {
    /// Builds and validates a chart: box bounds, symmetry of `A` and `B`,
    /// positive definiteness on sampled points and `C(0, y) = 0`.
    pub fn new(k: usize, l: usize, domain: Domain, coeffs: MetricCoeffs) -> Result<Self> {
        if k + l == 0 {
            return Err(Error::InvalidChart("k + l must be at least 1".into()));
        }
        if k > 16 {
            return Err(Error::InvalidChart("at most 16 boundary coordinates".into()));
        }
        let d = &domain;
        if d.x_max.len() != k || d.x_upper.len() != k || d.y_min.len() != l || d.y_max.len() != l {
            return Err(Error::InvalidChart("domain bounds do not match k and l".into()));
        }
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && hi > lo;
        if !d.x_max.iter().all(|&m| ok(0.0, m))
            || !d.y_min.iter().zip(&d.y_max).all(|(&a, &b)| ok(a, b))
            || !ok(d.t_min, d.t_max)
        {
            return Err(Error::InvalidChart("domain bounds must be finite with positive extent".into()));
        }
        if coeffs.a.len() != k * k || coeffs.b.len() != l * l || coeffs.c.len() != k * l {
            return Err(Error::InvalidChart("coefficient matrices do not match k and l".into()));
        }
        let x_extent = domain.x_max.iter().cloned().fold(0.0, f64::max);
        let tol_face = 1e-9 * if k > 0 { x_extent } else { 1.0 };
        let mut chart = Self {
            k,
            l,
            domain,
            coeffs,
            lambda_min: 0.0,
            tol_face,
        };
        chart.lambda_min = chart.validate()?;
        Ok(chart)
    }

    pub fn flat(k: usize, l: usize, domain: Domain) -> Result<Self> {
        Self::new(k, l, domain, MetricCoeffs::flat(k, l))
    }

    fn validate(&self) -> Result<f64> {
        let (k, l) = (self.k, self.l);
        for (label, m, n) in [("A", &self.coeffs.a, k), ("B", &self.coeffs.b, l)] {
            for i in 0..n {
                for j in i + 1..n {
                    let (e1, e2) = (&m[i * n + j], &m[j * n + i]);
                    if !e1.same_tree(e2) && e1.source() != e2.source() {
                        // fall back to a numerical comparison on samples below
                        let mismatch = self.sample_points(256, 11).any(|(x, y)| {
                            let vars: Vec<f64> = x.iter().chain(&y).copied().collect();
                            let (v1, v2) = (e1.eval(&vars), e2.eval(&vars));
                            (v1 - v2).abs() > 1e-14 * (1.0 + v1.abs())
                        });
                        if mismatch {
                            return Err(Error::InvalidChart(format!(
                                "{label}[{}][{}] and {label}[{}][{}] differ",
                                i + 1,
                                j + 1,
                                j + 1,
                                i + 1
                            )));
                        }
                    }
                }
            }
        }
        let mut lambda = f64::INFINITY;
        for (x, y) in self.sample_points(VALIDATION_SAMPLES, 1) {
            let m = self.metric_f64(&x, &y);
            for (which, mat) in [("A", square(&m.a, k)), ("B", square(&m.b, l))] {
                if mat.nrows() == 0 {
                    continue;
                }
                if !mat.iter().all(|v| v.is_finite()) || mat.clone().cholesky().is_none() {
                    return Err(Error::NotPositiveDefinite {
                        which,
                        at: format!("x = {x:?}, y = {y:?}"),
                    });
                }
                let eig = SymmetricEigen::new(mat).eigenvalues.min();
                lambda = lambda.min(eig);
            }
        }
        if k > 0 && l > 0 {
            let zero = vec![0.0; k];
            for (_, y) in self.sample_points(VALIDATION_BOUNDARY_SAMPLES, 2) {
                let m = self.metric_f64(&zero, &y);
                if let Some(v) = m.c.iter().find(|v| v.abs() > 1e-12) {
                    return Err(Error::InvalidChart(format!(
                        "C(0, y) must vanish; found {v:e} at y = {y:?}"
                    )));
                }
            }
        }
        Ok(0.5 * lambda)
    }

    /// Deterministic sample of base points: the box corners followed by
    /// uniform points.
    pub fn sample_points(&self, n: usize, seed: u64) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = self.k + self.l;
        let corners = if dims <= 10 { 1usize << dims } else { 0 };
        (0..corners + n).map(move |i| {
            let mut x = vec![0.0; self.k];
            let mut y = vec![0.0; self.l];
            for j in 0..self.k {
                x[j] = if i < corners {
                    if i >> j & 1 == 1 { self.domain.x_max[j] } else { 0.0 }
                } else {
                    rng.gen::<f64>() * self.domain.x_max[j]
                };
            }
            for j in 0..self.l {
                let (lo, hi) = (self.domain.y_min[j], self.domain.y_max[j]);
                y[j] = if i < corners {
                    if i >> (self.k + j) & 1 == 1 { hi } else { lo }
                } else {
                    lo + rng.gen::<f64>() * (hi - lo)
                };
            }
            (x, y)
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn coeffs(&self) -> &MetricCoeffs {
        &self.coeffs
    }

    /// Lower bound on the eigenvalues of `A` and `B`, recorded at validation
    /// as half the smallest sampled eigenvalue.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Face-membership tolerance on `x`.
    pub fn tol_face(&self) -> f64 {
        self.tol_face
    }

    /// Dimension of the phase-space state vector `(x, y, t, ξ, ζ, τ)`.
    pub fn state_dim(&self) -> usize {
        2 * (self.k + self.l + 1)
    }

    /// True when every coefficient is the constant of the identity metric.
    pub fn is_flat(&self) -> bool {
        let (k, l) = (self.k, self.l);
        let is = |e: &Expr, v: f64| e.as_constant() == Some(v);
        (0..k * k).all(|i| is(&self.coeffs.a[i], if i / k == i % k { 1.0 } else { 0.0 }))
            && (0..l * l).all(|i| is(&self.coeffs.b[i], if i / l == i % l { 1.0 } else { 0.0 }))
            && self.coeffs.c.iter().all(|e| is(e, 0.0))
    }

    pub fn metric<S: Scalar>(&self, x: &[S], y: &[S]) -> MetricAt<S> {
        let vars: Vec<S> = x.iter().chain(y).copied().collect();
        let ev = |es: &[Expr]| es.iter().map(|e| e.eval(&vars)).collect();
        MetricAt {
            k: self.k,
            l: self.l,
            a: ev(&self.coeffs.a),
            b: ev(&self.coeffs.b),
            c: ev(&self.coeffs.c),
        }
    }

    pub fn metric_f64(&self, x: &[f64], y: &[f64]) -> MetricAt<f64> {
        self.metric(x, y)
    }

    /// Metric value and all first partials, one dual-number pass per base coordinate.
    pub fn metric_jet(&self, x: &[f64], y: &[f64]) -> MetricJet {
        let value = self.metric_f64(x, y);
        let n = self.k + self.l;
        let base: Vec<f64> = x.iter().chain(y).copied().collect();
        let mut partials = Vec::with_capacity(n);
        for v in 0..n {
            let vars: Vec<Dual64> = base
                .iter()
                .enumerate()
                .map(|(i, &b)| dual(b, if i == v { 1.0 } else { 0.0 }))
                .collect();
            let ev = |es: &[Expr]| -> Vec<f64> {
                es.iter()
                    .map(|e| if e.as_constant().is_some() { 0.0 } else { e.eval(&vars).eps })
                    .collect()
            };
            partials.push(MetricAt {
                k: self.k,
                l: self.l,
                a: ev(&self.coeffs.a),
                b: ev(&self.coeffs.b),
                c: ev(&self.coeffs.c),
            });
        }
        let dy = partials.split_off(self.k);
        MetricJet {
            value,
            dx: partials,
            dy,
        }
    }

    /// Whether `(x, y, t)` lies in the closed domain box, widened by `slack`.
    pub fn contains(&self, x: &[f64], y: &[f64], t: f64, slack: f64) -> bool {
        let d = &self.domain;
        x.iter().zip(&d.x_max).all(|(&v, &m)| v >= -slack && v <= m + slack)
            && y.iter()
                .zip(d.y_min.iter().zip(&d.y_max))
                .all(|(&v, (&lo, &hi))| v >= lo - slack && v <= hi + slack)
            && t >= d.t_min - slack
            && t <= d.t_max + slack
    }

    /// Boundary hypersurfaces containing `x` (within `tol_face`).
    pub fn face_of(&self, x: &[f64]) -> FaceId {
        let mut face = FaceId::default();
        for (j, &v) in x.iter().enumerate() {
            if v <= self.tol_face {
                face.lower |= 1 << j;
            } else if self.domain.x_upper[j] == UpperSide::Wall && v >= self.domain.x_max[j] - self.tol_face {
                face.upper |= 1 << j;
            }
        }
        face
    }

    /// Value of the coordinate on the hypersurface `(j, side)`.
    pub fn face_value(&self, j: usize, side: Side) -> f64 {
        match side {
            Side::Lower => 0.0,
            Side::Upper => self.domain.x_max[j],
        }
    }

    fn check_dims(&self, k: usize, l: usize) -> Result<()> {
        if k != self.k || l != self.l {
            Err(Error::ChartMismatch)
        } else {
            Ok(())
        }
    }
}

fn square(v: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, v)
}

/// Evaluates `A`, `B`, `C` at `(x, y)`, checking the domain and positive definiteness.
pub fn eval_metric(chart: &Chart, x: &[f64], y: &[f64]) -> Result<MetricValues> {
    chart.check_dims(x.len(), y.len())?;
    let d = chart.domain();
    if !chart.contains(x, y, 0.5 * (d.t_min + d.t_max), chart.tol_face) {
        return Err(Error::OutOfDomain(format!("x = {x:?}, y = {y:?}")));
    }
    let m = chart.metric_f64(x, y);
    let (k, l) = (chart.k, chart.l);
    let a = square(&m.a, k);
    let b = square(&m.b, l);
    for (which, mat) in [("A", &a), ("B", &b)] {
        if mat.nrows() > 0 && mat.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                which,
                at: format!("x = {x:?}, y = {y:?}"),
            });
        }
    }
    Ok(MetricValues {
        a,
        b,
        c: DMatrix::from_row_slice(k, l, &m.c),
    })
}

/// Side of a coordinate box face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// `x_j = 0`
    Lower,
    /// `x_j = x_max` (reflecting wall)
    Upper,
}

impl Side {
    /// Sign turning `dx_j` into the derivative of the defining function.
    pub fn sign(self) -> f64 {
        match self {
            Side::Lower => 1.0,
            Side::Upper => -1.0,
        }
    }
}

/// Set of boundary hypersurfaces a point lies on. Empty means interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct FaceId {
    /// Bit `j` set: `x_{j+1} = 0`.
    pub lower: u32,
    /// Bit `j` set: `x_{j+1} = x_max` (wall).
    pub upper: u32,
}

impl FaceId {
    pub fn lower(indices: &[usize]) -> Self {
        Self {
            lower: indices.iter().fold(0, |acc, &j| acc | 1 << j),
            upper: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lower == 0 && self.upper == 0
    }

    pub fn codim(&self) -> usize {
        (self.lower.count_ones() + self.upper.count_ones()) as usize
    }

    pub fn contains(&self, j: usize) -> bool {
        (self.lower | self.upper) >> j & 1 == 1
    }

    /// Face-normal coordinates in increasing index order.
    pub fn normals(&self) -> Vec<(usize, Side)> {
        (0..32)
            .filter_map(|j| {
                if self.lower >> j & 1 == 1 {
                    Some((j, Side::Lower))
                } else if self.upper >> j & 1 == 1 {
                    Some((j, Side::Upper))
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.normals().into_iter().map(|(j, _)| j).collect()
    }

    pub fn union(self, other: FaceId) -> FaceId {
        FaceId {
            lower: self.lower | other.lower,
            upper: self.upper | other.upper,
        }
    }

    pub fn is_subset_of(&self, other: &FaceId) -> bool {
        self.lower & !other.lower == 0 && self.upper & !other.upper == 0
    }
}

/// Written as a comma list of 1-based indices, `^` marking far-side walls;
/// the interior is `-`.
impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let parts: Vec<String> = self
            .normals()
            .into_iter()
            .map(|(j, side)| match side {
                Side::Lower => format!("{}", j + 1),
                Side::Upper => format!("{}^", j + 1),
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for FaceId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut face = FaceId::default();
        if s == "-" {
            return Ok(face);
        }
        for part in s.split(',') {
            let (num, upper) = match part.strip_suffix('^') {
                Some(n) => (n, true),
                None => (part, false),
            };
            let j: usize = num.parse().map_err(|_| format!("bad face index '{part}'"))?;
            if j == 0 || j > 32 {
                return Err(format!("face index {j} out of range"));
            }
            if upper {
                face.upper |= 1 << (j - 1);
            } else {
                face.lower |= 1 << (j - 1);
            }
        }
        Ok(face)
    }
}

/// A point of `T*X` in chart coordinates `(x, y, t, ξ, ζ, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentPoint<S = f64> {
    pub x: Vec<S>,
    pub y: Vec<S>,
    pub t: S,
    pub xi: Vec<S>,
    pub zeta: Vec<S>,
    pub tau: S,
}

impl CotangentPoint<f64> {
    pub fn new(x: Vec<f64>, y: Vec<f64>, t: f64, xi: Vec<f64>, zeta: Vec<f64>, tau: f64) -> Self {
        assert_eq!(x.len(), xi.len(), "x and ξ must have the same length");
        assert_eq!(y.len(), zeta.len(), "y and ζ must have the same length");
        Self { x, y, t, xi, zeta, tau }
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn l(&self) -> usize {
        self.y.len()
    }

    /// Packs into `[x, y, t, ξ, ζ, τ]`.
    pub fn to_state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(2 * (self.k() + self.l() + 1));
        s.extend_from_slice(&self.x);
        s.extend_from_slice(&self.y);
        s.push(self.t);
        s.extend_from_slice(&self.xi);
        s.extend_from_slice(&self.zeta);
        s.push(self.tau);
        s
    }

    pub fn from_state(k: usize, l: usize, s: &[f64]) -> Self {
        let n = k + l + 1;
        Self {
            x: s[..k].to_vec(),
            y: s[k..k + l].to_vec(),
            t: s[k + l],
            xi: s[n..n + k].to_vec(),
            zeta: s[n + k..n + k + l].to_vec(),
            tau: s[n + k + l],
        }
    }

    /// `(ξ, ζ, τ) ↦ λ(ξ, ζ, τ)`.
    pub fn scale_fibers(&self, lambda: f64) -> Self {
        Self {
            xi: self.xi.iter().map(|v| v * lambda).collect(),
            zeta: self.zeta.iter().map(|v| v * lambda).collect(),
            tau: self.tau * lambda,
            ..self.clone()
        }
    }

    /// Negated fibers: the time-reversed covector.
    pub fn reversed(&self) -> Self {
        self.scale_fibers(-1.0)
    }

    /// Lifts to a dual-number point moving in direction `v` (same layout as
    /// [`CotangentPoint::to_state`]).
    pub fn with_tangent(&self, v: &[f64]) -> CotangentPoint<Dual64> {
        let s = self.to_state();
        let d: Vec<Dual64> = s.iter().zip(v).map(|(&a, &b)| dual(a, b)).collect();
        let (k, l) = (self.k(), self.l());
        let n = k + l + 1;
        CotangentPoint {
            x: d[..k].to_vec(),
            y: d[k..k + l].to_vec(),
            t: d[k + l],
            xi: d[n..n + k].to_vec(),
            zeta: d[n + k..n + k + l].to_vec(),
            tau: d[n + k + l],
        }
    }
}

/// A point of the b-cotangent bundle `(x, y, t, σ, ζ, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BCotangentPoint<S = f64> {
    pub x: Vec<S>,
    pub y: Vec<S>,
    pub t: S,
    pub sigma: Vec<S>,
    pub zeta: Vec<S>,
    pub tau: S,
}

impl BCotangentPoint<f64> {
    /// Packs into `[x, y, t, σ, ζ, τ]`.
    pub fn to_state(&self) -> Vec<f64> {
        let mut s = Vec::new();
        s.extend_from_slice(&self.x);
        s.extend_from_slice(&self.y);
        s.push(self.t);
        s.extend_from_slice(&self.sigma);
        s.extend_from_slice(&self.zeta);
        s.push(self.tau);
        s
    }

    pub fn with_tangent(&self, v: &[f64]) -> BCotangentPoint<Dual64> {
        let s = self.to_state();
        let d: Vec<Dual64> = s.iter().zip(v).map(|(&a, &b)| dual(a, b)).collect();
        let (k, l) = (self.x.len(), self.y.len());
        let n = k + l + 1;
        BCotangentPoint {
            x: d[..k].to_vec(),
            y: d[k..k + l].to_vec(),
            t: d[k + l],
            sigma: d[n..n + k].to_vec(),
            zeta: d[n + k..n + k + l].to_vec(),
            tau: d[n + k + l],
        }
    }
}

/// The map `ι`: `σ_j = x_j ξ_j`, everything else copied.
pub fn to_b_coords<S: Scalar>(q: &CotangentPoint<S>) -> BCotangentPoint<S> {
    BCotangentPoint {
        x: q.x.clone(),
        y: q.y.clone(),
        t: q.t,
        sigma: q.x.iter().zip(&q.xi).map(|(&x, &xi)| x * xi).collect(),
        zeta: q.zeta.clone(),
        tau: q.tau,
    }
}

/// Image of a cotangent point in the compressed bundle: over a face, the
/// face-normal `ξ` components are forgotten.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPoint {
    pub face: FaceId,
    /// Full base point; face coordinates are exactly on their hypersurface.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    /// `None` over face-normal indices.
    pub xi: Vec<Option<f64>>,
    pub zeta: Vec<f64>,
    pub tau: f64,
}

impl CompressedPoint {
    /// A point over the corner `x = 0` (every lower face).
    pub fn corner(y: Vec<f64>, t: f64, k: usize, zeta: Vec<f64>, tau: f64) -> Self {
        Self {
            face: FaceId::lower(&(0..k).collect::<Vec<_>>()),
            x: vec![0.0; k],
            y,
            t,
            xi: vec![None; k],
            zeta,
            tau,
        }
    }

    /// Fills the forgotten components with `xi_normal` (in face index order).
    pub fn lift(&self, xi_normal: &[f64]) -> CotangentPoint {
        let mut xi: Vec<f64> = self.xi.iter().map(|v| v.unwrap_or(0.0)).collect();
        for (slot, &v) in self.face.indices().iter().zip(xi_normal) {
            xi[*slot] = v;
        }
        CotangentPoint::new(self.x.clone(), self.y.clone(), self.t, xi, self.zeta.clone(), self.tau)
    }

    /// `(ζ, τ) ↦ -(ζ, τ)` and the free `ξ` negated.
    pub fn reversed(&self) -> Self {
        Self {
            xi: self.xi.iter().map(|v| v.map(|x| -x)).collect(),
            zeta: self.zeta.iter().map(|v| -v).collect(),
            tau: -self.tau,
            ..self.clone()
        }
    }
}

/// The compression `π`. Face membership uses the chart's `tol_face`; face
/// coordinates are snapped onto their hypersurface.
pub fn compress(chart: &Chart, q: &CotangentPoint) -> CompressedPoint {
    let face = chart.face_of(&q.x);
    let mut x = q.x.clone();
    let mut xi: Vec<Option<f64>> = q.xi.iter().map(|&v| Some(v)).collect();
    for (j, side) in face.normals() {
        x[j] = chart.face_value(j, side);
        xi[j] = None;
    }
    CompressedPoint {
        face,
        x,
        y: q.y.clone(),
        t: q.t,
        xi,
        zeta: q.zeta.clone(),
        tau: q.tau,
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Sup over the five basis-set norms: `|x - x0|`, `|y - y0|`, `|t - t0|`,
/// `|τ - τ0|` and `|ζ/τ - ζ0/τ0|`.
pub fn compressed_distance(a: &CompressedPoint, b: &CompressedPoint) -> Result<f64> {
    if a.x.len() != b.x.len() || a.y.len() != b.y.len() {
        return Err(Error::ChartMismatch);
    }
    let zh = |p: &CompressedPoint| p.zeta.iter().map(|z| z / p.tau).collect::<Vec<_>>();
    Ok(norm_diff(&a.x, &b.x)
        .max(norm_diff(&a.y, &b.y))
        .max((a.t - b.t).abs())
        .max((a.tau - b.tau).abs())
        .max(norm_diff(&zh(a), &zh(b))))
}

/// Membership in the basis neighbourhood `B_δ(center)` of the compressed
/// characteristic set.
pub fn compressed_ball_contains(center: &CompressedPoint, delta: f64, q: &CompressedPoint) -> Result<bool> {
    Ok(compressed_distance(center, q)? < delta)
}
