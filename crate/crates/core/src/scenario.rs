//! Scenario files: a TOML document describing a chart, initial covectors,
//! trace settings, commutant parameters and verification constants.
//!
//! ```toml
//! name = "curved-disc"
//!
//! [chart]
//! k = 1
//! l = 1
//! x_max = [0.9]
//! x_upper = ["exit"]          # or "wall"; optional
//! y_min = [-100.0]
//! y_max = [100.0]
//! t_min = -100.0
//! t_max = 100.0
//! A = [["1"]]
//! B = [["1/(1 - x1)^2"]]
//! C = [["0"]]                 # optional, zero by default
//!
//! [trace]
//! max_time = 4.0
//! branch_rule = "specular"    # or "all:256"
//!
//! [[initial]]
//! x = [0.0]
//! y = [0.0]
//! t = 0.0
//! xi = [-0.6]
//! zeta = [0.8]
//! tau = 1.0
//!
//! [family]
//! center = { x = [0.0], y = [0.0], t = 0.0, xi = [0.0], zeta = [0.5], tau = 1.0 }
//! vary = "zeta1"
//! range = [0.15, 0.95, 100]   # or values = [...]
//! solve = "xi1"
//! sign = -1.0
//! ```
//!
//! Errors carry the line and column of the offending value.

use std::ops::Range;

use serde::Deserialize;
use toml::Spanned;

use crate::boundary::BranchRule;
use crate::expr::Expr;
use crate::geometry::{coefficient_variables, Chart, CompressedPoint, CotangentPoint, Domain, MetricCoeffs, UpperSide};
use crate::hamiltonian::{Direction, IntegratorConfig};
use crate::symbols::CommutantParams;
use crate::tracer::TraceConfig;
use crate::verify::ParamBox;
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSpec {
    name: Option<String>,
    description: Option<String>,
    chart: Spanned<ChartSpec>,
    #[serde(default)]
    trace: TraceSpec,
    #[serde(default)]
    initial: Vec<Spanned<PointSpec>>,
    family: Option<Spanned<FamilySpec>>,
    #[serde(default)]
    commutant: Vec<Spanned<CommutantSpec>>,
    verify: Option<VerifySpec>,
}

type Matrix = Vec<Vec<Spanned<String>>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChartSpec {
    k: usize,
    l: usize,
    x_max: Vec<f64>,
    x_upper: Option<Vec<UpperSide>>,
    #[serde(default)]
    y_min: Vec<f64>,
    #[serde(default)]
    y_max: Vec<f64>,
    t_min: f64,
    t_max: f64,
    #[serde(rename = "A")]
    a: Option<Spanned<Matrix>>,
    #[serde(rename = "B")]
    b: Option<Spanned<Matrix>>,
    #[serde(rename = "C")]
    c: Option<Spanned<Matrix>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceSpec {
    max_time: Option<f64>,
    branch_rule: Option<Spanned<String>>,
    seed: Option<u64>,
    direction: Option<Spanned<String>>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    max_step: Option<f64>,
    event_tol: Option<f64>,
    p_drift_warn: Option<f64>,
    rescale_fibers: Option<bool>,
    max_depth: Option<usize>,
    max_leaves: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointSpec {
    #[serde(default)]
    x: Vec<f64>,
    #[serde(default)]
    y: Vec<f64>,
    #[serde(default)]
    t: f64,
    #[serde(default)]
    xi: Vec<f64>,
    #[serde(default)]
    zeta: Vec<f64>,
    tau: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilySpec {
    center: PointSpec,
    vary: String,
    values: Option<Vec<f64>>,
    range: Option<(f64, f64, usize)>,
    solve: String,
    #[serde(default = "minus_one")]
    sign: f64,
}

fn minus_one() -> f64 {
    -1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommutantSpec {
    kind: String,
    #[serde(default)]
    y0: Vec<f64>,
    #[serde(default)]
    t0: f64,
    #[serde(default)]
    zeta0: Vec<f64>,
    #[serde(default = "one")]
    tau0: f64,
    delta: f64,
    eps: f64,
    #[serde(default = "one")]
    a0: f64,
    #[serde(default = "one")]
    c1: f64,
    #[serde(default = "ten_thousand")]
    samples: usize,
    #[serde(default = "tenth")]
    radius: f64,
}

fn one() -> f64 {
    1.0
}

fn tenth() -> f64 {
    0.1
}

fn ten_thousand() -> usize {
    10_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxSpec {
    s: (f64, f64),
    x: Vec<(f64, f64)>,
    #[serde(default)]
    y: Vec<(f64, f64)>,
    t: (f64, f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitSpec {
    family: Spanned<FamilySpec>,
    candidate: Spanned<PointSpec>,
    interval: (f64, f64),
    #[serde(default = "four_hundred")]
    grid: usize,
}

fn four_hundred() -> usize {
    400
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySpec {
    lipschitz_m: Option<f64>,
    #[serde(rename = "box")]
    lipschitz_box: Option<BoxSpec>,
    #[serde(default = "two_hundred")]
    lipschitz_grid: usize,
    #[serde(default = "milli")]
    delta_conv: f64,
    limit: Option<LimitSpec>,
}

fn two_hundred() -> usize {
    200
}

fn milli() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommutantKind {
    Hyperbolic,
    Glancing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutantEntry {
    pub kind: CommutantKind,
    pub params: CommutantParams,
    pub samples: usize,
    /// Radius of the sampled box for the glancing estimate.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitSetup {
    pub family: Vec<CotangentPoint>,
    pub candidate: CotangentPoint,
    pub interval: (f64, f64),
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConstants {
    pub lipschitz_m: Option<f64>,
    pub lipschitz_box: Option<ParamBox>,
    pub lipschitz_grid: usize,
    pub delta_conv: f64,
    pub limit: Option<LimitSetup>,
}

impl Default for VerifyConstants {
    fn default() -> Self {
        Self {
            lipschitz_m: None,
            lipschitz_box: None,
            lipschitz_grid: 200,
            delta_conv: 1e-3,
            limit: None,
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub chart: Chart,
    pub trace: TraceConfig,
    pub initial: Vec<CotangentPoint>,
    pub family: Vec<CotangentPoint>,
    pub commutants: Vec<CommutantEntry>,
    pub verify: VerifyConstants,
}

/// 1-based line and column of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
    (line, col)
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn at(&self, span: Range<usize>, message: impl Into<String>) -> Error {
        let (line, column) = line_col(self.src, span.start);
        Error::ScenarioAt {
            line,
            column,
            message: message.into(),
        }
    }
}

/// Parses a branch rule: `specular` or `all:N`.
pub fn parse_branch_rule(s: &str) -> std::result::Result<BranchRule, String> {
    if s == "specular" {
        return Ok(BranchRule::Specular);
    }
    match s.strip_prefix("all:").map(str::parse::<usize>) {
        Some(Ok(n)) if n > 0 => Ok(BranchRule::BranchAll(n)),
        _ => Err(format!("branch rule must be `specular` or `all:N`, got `{s}`")),
    }
}

fn parse_matrix(ctx: &Ctx, label: &str, m: &Option<Spanned<Matrix>>, nr: usize, nc: usize, vars: &[&str], diag: f64) -> Result<Vec<Expr>> {
    let Some(m) = m else {
        return Ok((0..nr * nc)
            .map(|i| Expr::constant(if i / nc.max(1) == i % nc.max(1) { diag } else { 0.0 }))
            .collect());
    };
    let rows = m.get_ref();
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(ctx.at(m.span(), format!("{label} must be a {nr}x{nc} matrix of expression strings")));
    }
    let mut out = Vec::with_capacity(nr * nc);
    for row in rows {
        for e in row {
            let parsed = Expr::parse(e.get_ref(), vars).map_err(|pe| {
                // +1 skips the opening quote
                let start = e.span().start + pe.column;
                ctx.at(start..start, format!("{label}: {}", pe.message))
            })?;
            out.push(parsed);
        }
    }
    Ok(out)
}

fn point(ctx: &Ctx, p: &Spanned<PointSpec>, k: usize, l: usize) -> Result<CotangentPoint> {
    let v = p.get_ref();
    if v.x.len() != k || v.xi.len() != k || v.y.len() != l || v.zeta.len() != l {
        return Err(ctx.at(p.span(), format!("point needs x, xi of length {k} and y, zeta of length {l}")));
    }
    if v.tau == 0.0 {
        return Err(ctx.at(p.span(), "tau must be nonzero"));
    }
    if v.x.iter().any(|&x| x < 0.0) {
        return Err(ctx.at(p.span(), "x must be nonnegative"));
    }
    Ok(CotangentPoint::new(v.x.clone(), v.y.clone(), v.t, v.xi.clone(), v.zeta.clone(), v.tau))
}

/// Index into the state vector of a fiber variable name (`xi1`, `zeta2`, `tau`).
fn fiber_index(name: &str, k: usize, l: usize) -> Option<usize> {
    let n = k + l + 1;
    if name == "tau" {
        return Some(n + k + l);
    }
    let (base, cap, off) = if let Some(i) = name.strip_prefix("xi") {
        (i, k, n)
    } else {
        let i = name.strip_prefix("zeta")?;
        (i, l, n + k)
    };
    let i: usize = base.parse().ok()?;
    (1..=cap).contains(&i).then(|| off + i - 1)
}

fn family(ctx: &Ctx, chart: &Chart, f: &Spanned<FamilySpec>) -> Result<Vec<CotangentPoint>> {
    let (k, l) = (chart.k(), chart.l());
    let spec = f.get_ref();
    let err = |m: String| ctx.at(f.span(), m);
    let center = point(ctx, &Spanned::new(f.span(), spec.center.clone()), k, l)?;
    let vary = fiber_index(&spec.vary, k, l).ok_or_else(|| err(format!("unknown fiber variable `{}`", spec.vary)))?;
    let solve = fiber_index(&spec.solve, k, l).ok_or_else(|| err(format!("unknown fiber variable `{}`", spec.solve)))?;
    if vary == solve || solve == 2 * (k + l + 1) - 1 {
        return Err(err("`solve` must be a ξ or ζ component different from `vary`".into()));
    }
    let values = match (&spec.values, spec.range) {
        (Some(v), None) => v.clone(),
        (None, Some((lo, hi, n))) if n >= 1 => {
            (0..n).map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
        }
        _ => return Err(err("family needs exactly one of `values` or `range = [lo, hi, n]` with n ≥ 1".into())),
    };
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let mut st = center.to_state();
        st[vary] = v;
        st[solve] = 0.0;
        let q = CotangentPoint::from_state(k, l, &st);
        // p is quadratic in the solved component: p(c) = p0 + b1 c - a2 c²
        let m = chart.metric_f64(&q.x, &q.y).block();
        let j = solve - (k + l + 1);
        let fib: Vec<f64> = q.xi.iter().chain(&q.zeta).copied().collect();
        let a2 = m[(j, j)];
        let b1: f64 = -2.0 * (0..k + l).filter(|&i| i != j).map(|i| m[(j, i)] * fib[i]).sum::<f64>();
        let p0 = crate::hamiltonian::p_generic(chart, &q);
        let disc = b1 * b1 + 4.0 * a2 * p0;
        if disc < 0.0 {
            return Err(err(format!("no real `{}` solves p = 0 at {} = {v}", spec.solve, spec.vary)));
        }
        let c = (b1 + spec.sign.signum() * disc.sqrt()) / (2.0 * a2);
        st[solve] = c;
        out.push(CotangentPoint::from_state(k, l, &st));
    }
    Ok(out)
}

impl Scenario {
    pub fn parse(src: &str) -> Result<Self> {
        let ctx = Ctx { src };
        let file: FileSpec = toml::from_str(src).map_err(|e| {
            let span = e.span().unwrap_or(0..0);
            ctx.at(span, e.message().to_string())
        })?;
        let cs = file.chart.get_ref();
        let cspan = file.chart.span();
        let (k, l) = (cs.k, cs.l);
        if cs.x_max.len() != k || cs.y_min.len() != l || cs.y_max.len() != l {
            return Err(ctx.at(cspan, format!("x_max needs length {k}; y_min, y_max need length {l}")));
        }
        let mut domain = Domain::new(cs.x_max.clone(), cs.y_min.clone(), cs.y_max.clone(), cs.t_min, cs.t_max);
        if let Some(u) = &cs.x_upper {
            if u.len() != k {
                return Err(ctx.at(cspan.clone(), format!("x_upper needs length {k}")));
            }
            domain = domain.with_upper(u.clone());
        }
        let names = coefficient_variables(k, l);
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let coeffs = MetricCoeffs {
            a: parse_matrix(&ctx, "A", &cs.a, k, k, &vars, 1.0)?,
            b: parse_matrix(&ctx, "B", &cs.b, l, l, &vars, 1.0)?,
            c: parse_matrix(&ctx, "C", &cs.c, k, l, &vars, 0.0)?,
        };
        let chart = Chart::new(k, l, domain, coeffs).map_err(|e| ctx.at(cspan.clone(), e.to_string()))?;

        let ts = &file.trace;
        let d = IntegratorConfig::default();
        let integrator = IntegratorConfig {
            rel_tol: ts.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: ts.abs_tol.unwrap_or(d.abs_tol),
            max_step: ts.max_step.unwrap_or(d.max_step),
            event_tol: ts.event_tol.unwrap_or(d.event_tol),
            max_time: ts.max_time.unwrap_or(d.max_time),
            p_drift_warn: ts.p_drift_warn.unwrap_or(d.p_drift_warn),
            rescale_fibers: ts.rescale_fibers.unwrap_or(d.rescale_fibers),
        };
        let rule = match &ts.branch_rule {
            Some(r) => parse_branch_rule(r.get_ref()).map_err(|m| ctx.at(r.span(), m))?,
            None => BranchRule::Specular,
        };
        let direction = match &ts.direction {
            None => Direction::Forward,
            Some(s) => match s.get_ref().as_str() {
                "forward" => Direction::Forward,
                "backward" => Direction::Backward,
                other => return Err(ctx.at(s.span(), format!("direction must be forward or backward, got `{other}`"))),
            },
        };
        let dt = TraceConfig::default();
        let trace = TraceConfig {
            integrator,
            rule,
            max_depth: ts.max_depth.unwrap_or(dt.max_depth),
            max_leaves: ts.max_leaves.unwrap_or(dt.max_leaves),
            seed: ts.seed.unwrap_or(dt.seed),
            direction,
        };

        let initial = file.initial.iter().map(|p| point(&ctx, p, k, l)).collect::<Result<Vec<_>>>()?;
        let fam = match &file.family {
            Some(f) => family(&ctx, &chart, f)?,
            None => Vec::new(),
        };

        let mut commutants = Vec::new();
        for c in &file.commutant {
            let cv = c.get_ref();
            let kind = match cv.kind.as_str() {
                "hyperbolic" => CommutantKind::Hyperbolic,
                "glancing" => CommutantKind::Glancing,
                other => return Err(ctx.at(c.span(), format!("commutant kind must be hyperbolic or glancing, got `{other}`"))),
            };
            if cv.y0.len() != l || cv.zeta0.len() != l {
                return Err(ctx.at(c.span(), format!("y0 and zeta0 need length {l}")));
            }
            let q0 = CompressedPoint::corner(cv.y0.clone(), cv.t0, k, cv.zeta0.clone(), cv.tau0);
            let params = CommutantParams::new(q0, cv.delta, cv.eps, cv.a0, cv.c1).map_err(|e| ctx.at(c.span(), e.to_string()))?;
            commutants.push(CommutantEntry {
                kind,
                params,
                samples: cv.samples,
                radius: cv.radius,
            });
        }

        let mut verify = VerifyConstants::default();
        if let Some(v) = &file.verify {
            verify.lipschitz_m = v.lipschitz_m;
            verify.lipschitz_grid = v.lipschitz_grid;
            verify.delta_conv = v.delta_conv;
            if let Some(b) = &v.lipschitz_box {
                if b.x.len() != k || b.y.len() != l {
                    return Err(ctx.at(0..0, format!("verify.box needs {k} x ranges and {l} y ranges")));
                }
                verify.lipschitz_box = Some(ParamBox {
                    s: b.s,
                    x: b.x.clone(),
                    y: b.y.clone(),
                    t: b.t,
                });
            }
            if let Some(lim) = &v.limit {
                verify.limit = Some(LimitSetup {
                    family: family(&ctx, &chart, &lim.family)?,
                    candidate: point(&ctx, &lim.candidate, k, l)?,
                    interval: lim.interval,
                    grid: lim.grid,
                });
            }
        }

        Ok(Scenario {
            name: file.name.unwrap_or_else(|| "unnamed".into()),
            description: file.description.unwrap_or_default(),
            chart,
            trace,
            initial,
            family: fam,
            commutants,
            verify,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
        Self::parse(&src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::eval_p;

    const DISC: &str = r#"
name = "disc"

[chart]
k = 1
l = 1
x_max = [0.9]
y_min = [-100.0]
y_max = [100.0]
t_min = -100.0
t_max = 100.0
A = [["1"]]
B = [["1/(1 - x1)^2"]]

[trace]
max_time = 2.0
branch_rule = "all:16"

[[initial]]
x = [0.0]
y = [0.0]
t = 0.0
xi = [-0.6]
zeta = [0.8]
tau = 1.0

[family]
center = { x = [0.0], y = [0.0], t = 0.0, xi = [0.0], zeta = [0.5], tau = 1.0 }
vary = "zeta1"
range = [0.2, 0.9, 8]
solve = "xi1"

[[commutant]]
kind = "hyperbolic"
y0 = [0.0]
zeta0 = [0.0]
delta = 1e-3
eps = 40.0
"#;

    #[test]
    fn parses_disc() {
        let s = Scenario::parse(DISC).unwrap();
        assert_eq!(s.name, "disc");
        assert_eq!(s.trace.rule, BranchRule::BranchAll(16));
        assert_eq!(s.trace.integrator.max_time, 2.0);
        assert_eq!(s.initial.len(), 1);
        assert_eq!(s.family.len(), 8);
        for q in &s.family {
            assert!(eval_p(&s.chart, q).unwrap().abs() < 1e-14);
            assert!(q.xi[0] < 0.0);
        }
        assert!((s.family[0].zeta[0] - 0.2).abs() < 1e-15);
        assert_eq!(s.commutants[0].kind, CommutantKind::Hyperbolic);
        assert_eq!(s.commutants[0].samples, 10_000);
        assert!(!s.chart.is_flat());
    }

    #[test]
    fn expression_error_has_line_and_column() {
        let bad = DISC.replace("1/(1 - x1)^2", "1/(1 - q1)^2");
        match Scenario::parse(&bad) {
            Err(Error::ScenarioAt { line, column, message }) => {
                assert_eq!(line, 13);
                assert!(column > 8, "{column}");
                assert!(message.starts_with("B:"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_and_validation_errors_have_positions() {
        let bad = DISC.replace("k = 1\n", "k = [\n");
        assert!(matches!(Scenario::parse(&bad), Err(Error::ScenarioAt { line: 6, .. })));
        let bad = DISC.replace("branch_rule = \"all:16\"", "branch_rule = \"some\"");
        assert!(matches!(Scenario::parse(&bad), Err(Error::ScenarioAt { line: 17, .. })));
        let bad = DISC.replace("A = [[\"1\"]]", "A = [[\"-1\"]]");
        assert!(matches!(Scenario::parse(&bad), Err(Error::ScenarioAt { line: 4, .. })));
        let bad = DISC.replace("tau = 1.0\n\n[family]", "tau = 1.0\nmass = 2\n\n[family]");
        assert!(Scenario::parse(&bad).is_err());
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
