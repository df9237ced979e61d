//! The event loop: interior flow, reflection, branching and gliding,
//! assembled into rays and branch trees.

use std::fmt;

use crate::boundary::{
    classify, face_form, glancing_lift, glancing_type, glide, lift_set, reflect, BranchRule, GlancingKind,
    GlancingKindTag, Kind,
};
use crate::geometry::{compress, Chart, CompressedPoint, CotangentPoint, FaceId};
use crate::hamiltonian::{flow_interior, p_generic, Direction, IntegratorConfig, Segment, Terminal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// `lift_in` and `lift_out` are the face-normal `ξ` components.
    Reflection {
        face: FaceId,
        lift_in: Vec<f64>,
        lift_out: Vec<f64>,
    },
    CornerBranch {
        face: FaceId,
        n_branches: usize,
    },
    GlancingEnter {
        face: FaceId,
        kind: GlancingKind,
    },
    GlancingExit {
        face: FaceId,
    },
    TimeHorizon,
    DomainExit,
    Flagged {
        reason: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Reflection { .. } => "reflection",
            EventKind::CornerBranch { .. } => "corner-branch",
            EventKind::GlancingEnter { .. } => "glancing-enter",
            EventKind::GlancingExit { .. } => "glancing-exit",
            EventKind::TimeHorizon => "time-horizon",
            EventKind::DomainExit => "domain-exit",
            EventKind::Flagged { .. } => "flagged",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            EventKind::TimeHorizon | EventKind::DomainExit | EventKind::Flagged { .. } | EventKind::CornerBranch { .. }
        )
    }
}

/// An event with both one-sided limits of the ray at it.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub s: f64,
    pub point: CompressedPoint,
    pub left: CotangentPoint,
    pub right: CotangentPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    Drift { s: f64, drift: f64 },
    CornerGlancing { s: f64, face: FaceId },
    UndeterminedGlancing { s: f64, face: FaceId },
    Projected { p: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::Drift { s, drift } => write!(f, "drift s={s:.16e} value={drift:.16e}"),
            Warning::CornerGlancing { s, face } => write!(f, "corner-glancing s={s:.16e} face={face}"),
            Warning::UndeterminedGlancing { s, face } => write!(f, "undetermined-glancing s={s:.16e} face={face}"),
            Warning::Projected { p } => write!(f, "projected p={p:.16e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub segments: Vec<Segment>,
    pub events: Vec<Event>,
    pub direction: Direction,
    pub warnings: Vec<Warning>,
}

impl Ray {
    pub fn s_start(&self) -> f64 {
        self.segments.first().map_or_else(|| self.events.first().map_or(0.0, |e| e.s), |s| s.s_start)
    }

    pub fn s_end(&self) -> f64 {
        self.segments.last().map_or_else(|| self.events.last().map_or(0.0, |e| e.s), |s| s.s_end)
    }

    /// Parameter range as `(lo, hi)`.
    pub fn range(&self) -> (f64, f64) {
        let (a, b) = (self.s_start(), self.s_end());
        (a.min(b), a.max(b))
    }

    pub fn start_point(&self) -> Option<&CotangentPoint> {
        self.segments.first().map(|s| s.first())
    }

    pub fn end_point(&self) -> Option<&CotangentPoint> {
        self.segments.last().map(|s| s.last())
    }

    pub fn reflections(&self) -> impl Iterator<Item = (usize, &Event)> {
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.kind, EventKind::Reflection { .. }))
    }

    pub fn terminal(&self) -> Option<&Event> {
        self.events.last().filter(|e| e.kind.is_terminal())
    }

    /// Every integrator node of every segment, in ray order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, f64, &CotangentPoint)> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, seg)| seg.samples.iter().map(move |(s, q)| (i, *s, q)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceConfig {
    pub integrator: IntegratorConfig,
    pub rule: BranchRule,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub seed: u64,
    pub direction: Direction,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            rule: BranchRule::Specular,
            max_depth: 32,
            max_leaves: 4096,
            seed: 0,
            direction: Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    /// Position among the parent's children.
    pub branch_index: usize,
    pub depth: usize,
    pub ray: Ray,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchTree {
    pub root: CotangentPoint,
    pub nodes: Vec<Node>,
}

impl BranchTree {
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].children.is_empty())
    }

    /// The root-to-leaf ray ending at `leaf`. Corner branchings on the path
    /// appear as reflections with the chosen outgoing lift.
    pub fn path_ray(&self, leaf: usize) -> Ray {
        let mut chain = vec![leaf];
        while let Some(p) = self.nodes[*chain.last().unwrap()].parent {
            chain.push(p);
        }
        chain.reverse();
        let mut ray = self.nodes[chain[0]].ray.clone();
        for &id in &chain[1..] {
            let child = &self.nodes[id].ray;
            if let Some(last) = ray.events.pop() {
                let out = child.start_point().cloned().unwrap_or_else(|| last.right.clone());
                let kind = match &last.kind {
                    EventKind::CornerBranch { face, .. } => EventKind::Reflection {
                        face: *face,
                        lift_in: face.indices().iter().map(|&j| last.left.xi[j]).collect(),
                        lift_out: face.indices().iter().map(|&j| out.xi[j]).collect(),
                    },
                    k => k.clone(),
                };
                ray.events.push(Event {
                    kind,
                    right: out,
                    ..last
                });
            }
            ray.segments.extend(child.segments.iter().cloned());
            ray.events.extend(child.events.iter().cloned());
            ray.warnings.extend(child.warnings.iter().cloned());
        }
        ray
    }

    /// All root-to-leaf rays in leaf order.
    pub fn rays(&self) -> Vec<Ray> {
        self.leaves().map(|l| self.path_ray(l)).collect()
    }
}

fn event_at(chart: &Chart, kind: EventKind, s: f64, left: &CotangentPoint, right: &CotangentPoint) -> Event {
    Event {
        kind,
        s,
        point: compress(chart, right),
        left: left.clone(),
        right: right.clone(),
    }
}

fn flagged(chart: &Chart, s: f64, q: &CotangentPoint, reason: impl Into<String>) -> Event {
    event_at(chart, EventKind::Flagged { reason: reason.into() }, s, q, q)
}

fn strictly_leaving(chart: &Chart, q: &CotangentPoint, face: FaceId, direction: Direction) -> bool {
    let form = face_form(chart, face, q);
    let xi_s: Vec<f64> = face.indices().iter().map(|&j| q.xi[j]).collect();
    form.leaves(&xi_s, direction)
}

/// Outcome of tracing one node of the tree.
struct NodeRun {
    ray: Ray,
    children: Vec<CotangentPoint>,
}

const MAX_STALLS: usize = 8;

fn run_node(chart: &Chart, q_start: &CotangentPoint, s_start: f64, s_root: f64, cfg: &TraceConfig, seed: u64) -> NodeRun {
    let icfg = &cfg.integrator;
    let dir = cfg.direction;
    let mut ray = Ray {
        segments: Vec::new(),
        events: Vec::new(),
        direction: dir,
        warnings: Vec::new(),
    };
    let mut q = q_start.clone();
    let mut s = s_start;
    let mut force_flow = false;
    let mut stalls = 0usize;
    let mut last_s = f64::NAN;
    loop {
        let remaining = icfg.max_time - (s - s_root).abs();
        if remaining <= 0.0 {
            ray.events.push(event_at(chart, EventKind::TimeHorizon, s, &q, &q));
            break;
        }
        if s == last_s {
            stalls += 1;
            if stalls > MAX_STALLS {
                ray.events.push(flagged(chart, s, &q, "no progress at boundary"));
                break;
            }
        } else {
            stalls = 0;
            last_s = s;
        }
        let face = chart.face_of(&q.x);
        if force_flow || face.is_empty() || strictly_leaving(chart, &q, face, dir) {
            force_flow = false;
            let seg_cfg = IntegratorConfig {
                max_time: remaining,
                ..*icfg
            };
            let seg = match flow_interior(chart, &q, s, &seg_cfg, dir) {
                Ok(seg) => seg,
                Err(e) => {
                    ray.events.push(flagged(chart, s, &q, e.to_string()));
                    break;
                }
            };
            if seg.drift_warning {
                ray.warnings.push(Warning::Drift {
                    s: seg.s_end,
                    drift: seg.drift,
                });
            }
            let terminal = seg.terminal;
            s = seg.s_end;
            q = seg.last().clone();
            ray.segments.push(seg);
            match terminal {
                Terminal::TimeHorizon => {
                    ray.events.push(event_at(chart, EventKind::TimeHorizon, s, &q, &q));
                    break;
                }
                Terminal::DomainExit => {
                    ray.events.push(event_at(chart, EventKind::DomainExit, s, &q, &q));
                    break;
                }
                _ => continue,
            }
        }
        let mut cq = compress(chart, &q);
        cq.face = face;
        let class = match classify(chart, &cq) {
            Ok(c) => c,
            Err(e) => {
                ray.events.push(flagged(chart, s, &q, e.to_string()));
                break;
            }
        };
        match class.kind {
            Kind::Elliptic => {
                ray.events.push(flagged(chart, s, &q, format!("elliptic point, margin {:e}", class.margin)));
                break;
            }
            Kind::Hyperbolic => match reflect(chart, &q, face, cfg.rule, dir, seed) {
                Ok(outs) if outs.len() == 1 => {
                    let out = outs.into_iter().next().unwrap();
                    let kind = EventKind::Reflection {
                        face,
                        lift_in: face.indices().iter().map(|&j| q.xi[j]).collect(),
                        lift_out: face.indices().iter().map(|&j| out.xi[j]).collect(),
                    };
                    ray.events.push(event_at(chart, kind, s, &q, &out));
                    q = out;
                    force_flow = true;
                }
                Ok(outs) => {
                    let kind = EventKind::CornerBranch {
                        face,
                        n_branches: outs.len(),
                    };
                    ray.events.push(event_at(chart, kind, s, &q, &q));
                    return NodeRun { ray, children: outs };
                }
                Err(e) => {
                    ray.events.push(flagged(chart, s, &q, e.to_string()));
                    break;
                }
            },
            Kind::Glancing => {
                let kind = if face.codim() == 1 {
                    match glancing_type(chart, &cq) {
                        Ok(k) => k,
                        Err(e) => {
                            ray.events.push(flagged(chart, s, &q, e.to_string()));
                            break;
                        }
                    }
                } else {
                    ray.warnings.push(Warning::CornerGlancing { s, face });
                    GlancingKind {
                        kind: GlancingKindTag::Undetermined,
                        second_derivative: f64::NAN,
                    }
                };
                let lift = glancing_lift(chart, &cq);
                ray.events.push(event_at(chart, EventKind::GlancingEnter { face, kind }, s, &q, &lift));
                q = lift;
                if kind.kind == GlancingKindTag::Diffractive {
                    force_flow = true;
                    continue;
                }
                if kind.kind == GlancingKindTag::Undetermined && face.codim() == 1 {
                    ray.warnings.push(Warning::UndeterminedGlancing { s, face });
                }
                let seg_cfg = IntegratorConfig {
                    max_time: remaining,
                    ..*icfg
                };
                let seg = match glide(chart, &cq, s, &seg_cfg, dir) {
                    Ok(seg) => seg,
                    Err(e) => {
                        ray.events.push(flagged(chart, s, &q, e.to_string()));
                        break;
                    }
                };
                let terminal = seg.terminal;
                s = seg.s_end;
                q = seg.last().clone();
                ray.segments.push(seg);
                match terminal {
                    Terminal::TimeHorizon => {
                        ray.events.push(event_at(chart, EventKind::TimeHorizon, s, &q, &q));
                        break;
                    }
                    Terminal::DomainExit => {
                        ray.events.push(event_at(chart, EventKind::DomainExit, s, &q, &q));
                        break;
                    }
                    Terminal::Released => {
                        ray.events.push(event_at(chart, EventKind::GlancingExit { face }, s, &q, &q));
                        force_flow = true;
                    }
                    Terminal::BandExit => {
                        let mut cq = compress(chart, &q);
                        cq.face = face;
                        let out = lift_set(chart, &cq, 64, seed, None).ok().and_then(|ls| {
                            ls.lifts.into_iter().find(|xi| {
                                let form = face_form(chart, face, &q);
                                form.leaves(xi, dir)
                            })
                        });
                        match out {
                            Some(xi) => {
                                let mut right = q.clone();
                                for (&j, v) in face.indices().iter().zip(xi) {
                                    right.xi[j] = v;
                                }
                                ray.events.push(event_at(chart, EventKind::GlancingExit { face }, s, &q, &right));
                                q = right;
                                force_flow = true;
                            }
                            None => {
                                ray.events.push(flagged(chart, s, &q, "left the glancing band without an outgoing lift"));
                                break;
                            }
                        }
                    }
                    Terminal::BoundaryHit(f) => {
                        ray.events.push(flagged(chart, s, &q, format!("gliding ray reached face {f}")));
                        break;
                    }
                }
            }
        }
    }
    NodeRun {
        ray,
        children: Vec::new(),
    }
}

/// Normalises `τ` to `±1` and checks `q0 ∈ Char(P)`, projecting when the
/// integrator's rescaling flag is set.
fn prepare(chart: &Chart, q0: &CotangentPoint, cfg: &TraceConfig) -> std::result::Result<(CotangentPoint, Vec<Warning>), String> {
    if q0.k() != chart.k() || q0.l() != chart.l() {
        return Err(Error::ChartMismatch.to_string());
    }
    if q0.tau == 0.0 || !q0.tau.is_finite() {
        return Err("τ must be nonzero".into());
    }
    let mut q = q0.scale_fibers(1.0 / q0.tau.abs());
    let p = p_generic(chart, &q);
    let mut warnings = Vec::new();
    if p.abs() > 1e-8 {
        if !cfg.integrator.rescale_fibers {
            return Err(format!("initial point is not characteristic (p = {p:e})"));
        }
        let g = 1.0 - p;
        if g <= 0.0 {
            return Err(format!("cannot project onto Char(P) (p = {p:e})"));
        }
        let lam = 1.0 / g.sqrt();
        q.xi.iter_mut().chain(q.zeta.iter_mut()).for_each(|v| *v *= lam);
        warnings.push(Warning::Projected { p });
    }
    Ok((q, warnings))
}

/// Traces every continuation of the ray through `q0` allowed by the
/// branch rule, up to the configured horizon.
pub fn trace(chart: &Chart, q0: &CotangentPoint, cfg: &TraceConfig) -> BranchTree {
    let (q, warnings) = match prepare(chart, q0, cfg) {
        Ok(v) => v,
        Err(reason) => {
            let ev = flagged(chart, 0.0, q0, reason);
            return BranchTree {
                root: q0.clone(),
                nodes: vec![Node {
                    parent: None,
                    branch_index: 0,
                    depth: 0,
                    ray: Ray {
                        segments: Vec::new(),
                        events: vec![ev],
                        direction: cfg.direction,
                        warnings: Vec::new(),
                    },
                    children: Vec::new(),
                }],
            };
        }
    };
    let mut nodes: Vec<Node> = Vec::new();
    // depth-first in branch order keeps node numbering deterministic
    let mut stack: Vec<(Option<usize>, usize, usize, CotangentPoint, f64)> = vec![(None, 0, 0, q.clone(), 0.0)];
    let mut leaves = 0usize;
    while let Some((parent, branch_index, depth, start, s0)) = stack.pop() {
        let id = nodes.len();
        let mut run = if depth > cfg.max_depth || leaves >= cfg.max_leaves {
            let reason = if depth > cfg.max_depth { "branch depth limit" } else { "branch leaf limit" };
            NodeRun {
                ray: Ray {
                    segments: Vec::new(),
                    events: vec![flagged(chart, s0, &start, reason)],
                    direction: cfg.direction,
                    warnings: Vec::new(),
                },
                children: Vec::new(),
            }
        } else {
            run_node(chart, &start, s0, 0.0, cfg, cfg.seed.wrapping_add(id as u64))
        };
        if id == 0 {
            let mut w = warnings.clone();
            w.append(&mut run.ray.warnings);
            run.ray.warnings = w;
        }
        if run.children.is_empty() {
            leaves += 1;
        }
        let s_branch = run.ray.events.last().map_or(s0, |e| e.s);
        nodes.push(Node {
            parent,
            branch_index,
            depth,
            ray: run.ray,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            nodes[p].children.push(id);
        }
        for (i, child) in run.children.into_iter().enumerate().rev() {
            stack.push((Some(id), i, depth + 1, child, s_branch));
        }
    }
    BranchTree { root: q, nodes }
}

/// Interpolated states of `ray` at `s_values`. At an event the right limit
/// (after the event in ray order) is returned unless `left` is set.
pub fn sample_ray(ray: &Ray, s_values: &[f64], left: bool) -> Result<Vec<CotangentPoint>> {
    let (lo, hi) = ray.range();
    s_values
        .iter()
        .map(|&s| {
            if !(s >= lo && s <= hi) {
                return Err(Error::OutOfRange { s, lo, hi });
            }
            let mut candidates = ray.segments.iter().filter(|seg| seg.contains(s));
            let seg = if left {
                candidates.next()
            } else {
                candidates.next_back()
            };
            seg.and_then(|seg| seg.eval(s)).ok_or(Error::OutOfRange { s, lo, hi })
        })
        .collect()
}

fn reverse_event(e: &Event) -> Event {
    let kind = match &e.kind {
        EventKind::Reflection { face, lift_in, lift_out } => EventKind::Reflection {
            face: *face,
            lift_in: lift_out.iter().map(|v| -v).collect(),
            lift_out: lift_in.iter().map(|v| -v).collect(),
        },
        k => k.clone(),
    };
    Event {
        kind,
        s: -e.s,
        point: e.point.reversed(),
        left: e.right.reversed(),
        right: e.left.reversed(),
    }
}

/// Time reversal: fibers negated, `s ↦ -s`, order of segments and events reversed.
pub fn reverse(ray: &Ray) -> Ray {
    Ray {
        segments: ray.segments.iter().rev().map(Segment::reversed).collect(),
        events: ray.events.iter().rev().map(reverse_event).collect(),
        direction: ray.direction,
        warnings: ray.warnings.clone(),
    }
}
