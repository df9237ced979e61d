//! Line-oriented output records.
//!
//! Rays: one record per line, every float as `{:.16e}` so that reading and
//! re-writing is byte-identical.
//!
//! ```text
//! # cornerray rays v1
//! tree 0 k 1 l 1 nodes 1
//! root <x..> <y..> <t> <ξ..> <ζ..> <τ>
//! node 0 parent - branch 0 depth 0 dir forward children -
//! seg 0 0 kind interior s <s0> <s1> end boundary:1 drift <d> warn 0
//! sample 0 0 <s> <state..>
//! event 0 0 reflection s <s> face 1 in <v,..> out <v,..>
//! point 0 0 <face> <x..> <y..> <t> <ξ or *..> <ζ..> <τ>
//! left 0 0 <state..>
//! right 0 0 <state..>
//! warn 0 <text>
//! ```
//!
//! Dense interpolants are not stored; loaded segments interpolate linearly.

use std::fmt::Write;

use crate::boundary::{GlancingKind, GlancingKindTag};
use crate::geometry::{CompressedPoint, CotangentPoint, FaceId};
use crate::hamiltonian::{Direction, Segment, SegmentKind, Terminal};
use crate::tracer::{BranchTree, Event, EventKind, Node, Ray, Warning};
use crate::verify::PropertyReport;
use crate::{Error, Result};

pub const RAYS_HEADER: &str = "# cornerray rays v1";
pub const REPORTS_HEADER: &str = "# cornerray reports v1";

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(" ")
}

fn csv(v: &[f64]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(",")
    }
}

fn state(q: &CotangentPoint) -> String {
    floats(&q.to_state())
}

fn terminal_str(t: Terminal) -> String {
    match t {
        Terminal::BoundaryHit(face) => format!("boundary:{face}"),
        Terminal::TimeHorizon => "time-horizon".into(),
        Terminal::DomainExit => "domain-exit".into(),
        Terminal::Released => "released".into(),
        Terminal::BandExit => "band-exit".into(),
    }
}

fn glancing_tag(t: GlancingKindTag) -> &'static str {
    match t {
        GlancingKindTag::Gliding => "gliding",
        GlancingKindTag::Diffractive => "diffractive",
        GlancingKindTag::Undetermined => "undetermined",
    }
}

fn dir_str(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Backward => "backward",
    }
}

fn write_event(out: &mut String, node: usize, i: usize, e: &Event) {
    let payload = match &e.kind {
        EventKind::Reflection { face, lift_in, lift_out } => {
            format!(" face {face} in {} out {}", csv(lift_in), csv(lift_out))
        }
        EventKind::CornerBranch { face, n_branches } => format!(" face {face} n {n_branches}"),
        EventKind::GlancingEnter { face, kind } => {
            format!(" face {face} type {} d2 {}", glancing_tag(kind.kind), f(kind.second_derivative))
        }
        EventKind::GlancingExit { face } => format!(" face {face}"),
        EventKind::TimeHorizon | EventKind::DomainExit => String::new(),
        EventKind::Flagged { reason } => format!(" reason {}", reason.replace('\n', " ")),
    };
    let _ = writeln!(out, "event {node} {i} {} s {}{payload}", e.kind.name(), f(e.s));
    let p = &e.point;
    let xi: Vec<String> = p.xi.iter().map(|v| v.map_or("*".into(), f)).collect();
    let mut pt = vec![p.face.to_string()];
    pt.extend(p.x.iter().chain(&p.y).chain(std::iter::once(&p.t)).map(|&v| f(v)));
    pt.extend(xi);
    pt.extend(p.zeta.iter().chain(std::iter::once(&p.tau)).map(|&v| f(v)));
    let _ = writeln!(out, "point {node} {i} {}", pt.join(" "));
    let _ = writeln!(out, "left {node} {i} {}", state(&e.left));
    let _ = writeln!(out, "right {node} {i} {}", state(&e.right));
}

/// Serializes a sequence of branch trees.
pub fn write_rays(trees: &[BranchTree]) -> String {
    let mut out = String::new();
    out.push_str(RAYS_HEADER);
    out.push('\n');
    for (ti, tree) in trees.iter().enumerate() {
        let (k, l) = (tree.root.k(), tree.root.l());
        let _ = writeln!(out, "tree {ti} k {k} l {l} nodes {}", tree.nodes.len());
        let _ = writeln!(out, "root {}", state(&tree.root));
        for (id, node) in tree.nodes.iter().enumerate() {
            let parent = node.parent.map_or("-".into(), |p| p.to_string());
            let children = if node.children.is_empty() {
                "-".into()
            } else {
                node.children.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(
                out,
                "node {id} parent {parent} branch {} depth {} dir {} children {children}",
                node.branch_index,
                node.depth,
                dir_str(node.ray.direction)
            );
            for (si, seg) in node.ray.segments.iter().enumerate() {
                let kind = match seg.kind {
                    SegmentKind::Interior => "interior".to_string(),
                    SegmentKind::Gliding(face) => format!("glide:{face}"),
                };
                let _ = writeln!(
                    out,
                    "seg {id} {si} kind {kind} s {} {} end {} drift {} warn {}",
                    f(seg.s_start),
                    f(seg.s_end),
                    terminal_str(seg.terminal),
                    f(seg.drift),
                    u8::from(seg.drift_warning)
                );
                for (s, q) in &seg.samples {
                    let _ = writeln!(out, "sample {id} {si} {} {}", f(*s), state(q));
                }
            }
            for (i, e) in node.ray.events.iter().enumerate() {
                write_event(&mut out, id, i, e);
            }
            for w in &node.ray.warnings {
                let _ = writeln!(out, "warn {id} {w}");
            }
        }
    }
    out
}

struct Cursor<'a> {
    line: usize,
    toks: Vec<&'a str>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Record {
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.toks.get(self.pos).copied().ok_or_else(|| self.err("unexpected end of record"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, key: &str) -> Result<()> {
        let t = self.next()?;
        if t == key {
            Ok(())
        } else {
            Err(self.err(format!("expected `{key}`, found `{t}`")))
        }
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse().map_err(|_| self.err(format!("bad integer `{t}`")))
    }

    fn float(&mut self) -> Result<f64> {
        let t = self.next()?;
        parse_float(t).ok_or_else(|| self.err(format!("bad number `{t}`")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.float()).collect()
    }

    fn face(&mut self) -> Result<FaceId> {
        let t = self.next()?;
        t.parse().map_err(|e: String| self.err(e))
    }

    fn csv(&mut self) -> Result<Vec<f64>> {
        let t = self.next()?;
        if t == "-" {
            return Ok(Vec::new());
        }
        t.split(',')
            .map(|v| parse_float(v).ok_or_else(|| self.err(format!("bad number `{v}`"))))
            .collect()
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            Err(self.err(format!("trailing tokens starting at `{}`", self.toks[self.pos])))
        }
    }

    fn rest(&mut self) -> String {
        let r = self.toks[self.pos..].join(" ");
        self.pos = self.toks.len();
        r
    }
}

fn parse_float(t: &str) -> Option<f64> {
    t.parse().ok()
}

fn parse_terminal(c: &Cursor, t: &str) -> Result<Terminal> {
    Ok(match t {
        "time-horizon" => Terminal::TimeHorizon,
        "domain-exit" => Terminal::DomainExit,
        "released" => Terminal::Released,
        "band-exit" => Terminal::BandExit,
        _ => match t.strip_prefix("boundary:") {
            Some(face) => Terminal::BoundaryHit(face.parse().map_err(|e: String| c.err(e))?),
            None => return Err(c.err(format!("unknown terminal `{t}`"))),
        },
    })
}

fn parse_warning(c: &Cursor, text: &str) -> Result<Warning> {
    let mut fields = text.split(' ');
    let kind = fields.next().unwrap_or("");
    let mut get = |key: &str| -> Result<String> {
        let tok = fields.next().ok_or_else(|| c.err("truncated warning"))?;
        tok.strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| c.err(format!("expected `{key}=` in warning")))
    };
    let num = |v: String| parse_float(&v).ok_or_else(|| c.err(format!("bad number `{v}`")));
    let face = |v: String| v.parse::<FaceId>().map_err(|e| c.err(e));
    Ok(match kind {
        "drift" => Warning::Drift {
            s: num(get("s")?)?,
            drift: num(get("value")?)?,
        },
        "corner-glancing" => Warning::CornerGlancing {
            s: num(get("s")?)?,
            face: face(get("face")?)?,
        },
        "undetermined-glancing" => Warning::UndeterminedGlancing {
            s: num(get("s")?)?,
            face: face(get("face")?)?,
        },
        "projected" => Warning::Projected { p: num(get("p")?)? },
        _ => return Err(c.err(format!("unknown warning `{kind}`"))),
    })
}

fn parse_event_kind(c: &mut Cursor, name: &str) -> Result<EventKind> {
    Ok(match name {
        "reflection" => {
            c.expect("face")?;
            let face = c.face()?;
            c.expect("in")?;
            let lift_in = c.csv()?;
            c.expect("out")?;
            let lift_out = c.csv()?;
            EventKind::Reflection { face, lift_in, lift_out }
        }
        "corner-branch" => {
            c.expect("face")?;
            let face = c.face()?;
            c.expect("n")?;
            EventKind::CornerBranch {
                face,
                n_branches: c.usize()?,
            }
        }
        "glancing-enter" => {
            c.expect("face")?;
            let face = c.face()?;
            c.expect("type")?;
            let tag = match c.next()? {
                "gliding" => GlancingKindTag::Gliding,
                "diffractive" => GlancingKindTag::Diffractive,
                "undetermined" => GlancingKindTag::Undetermined,
                t => return Err(c.err(format!("unknown glancing type `{t}`"))),
            };
            c.expect("d2")?;
            EventKind::GlancingEnter {
                face,
                kind: GlancingKind {
                    kind: tag,
                    second_derivative: c.float()?,
                },
            }
        }
        "glancing-exit" => {
            c.expect("face")?;
            EventKind::GlancingExit { face: c.face()? }
        }
        "time-horizon" => EventKind::TimeHorizon,
        "domain-exit" => EventKind::DomainExit,
        "flagged" => {
            c.expect("reason")?;
            EventKind::Flagged { reason: c.rest() }
        }
        _ => return Err(c.err(format!("unknown event kind `{name}`"))),
    })
}

#[derive(Default)]
struct PartialEvent {
    kind: Option<EventKind>,
    s: f64,
    point: Option<CompressedPoint>,
    left: Option<CotangentPoint>,
    right: Option<CotangentPoint>,
}

/// Reads what [`write_rays`] writes.
pub fn read_rays(text: &str) -> Result<Vec<BranchTree>> {
    let mut trees: Vec<BranchTree> = Vec::new();
    let mut k = 0usize;
    let mut l = 0usize;
    let mut pending: Vec<Vec<PartialEvent>> = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    match lines.next() {
        Some((_, h)) if h == RAYS_HEADER => {}
        _ => return Err(Error::Record { line: 1, message: format!("missing header `{RAYS_HEADER}`") }),
    }
    let finish = |trees: &mut Vec<BranchTree>, pending: &mut Vec<Vec<PartialEvent>>, line: usize| -> Result<()> {
        if let Some(tree) = trees.last_mut() {
            for (node, evs) in tree.nodes.iter_mut().zip(pending.drain(..)) {
                for e in evs {
                    let err = || Error::Record { line, message: "incomplete event record".into() };
                    node.ray.events.push(Event {
                        kind: e.kind.ok_or_else(err)?,
                        s: e.s,
                        point: e.point.ok_or_else(err)?,
                        left: e.left.ok_or_else(err)?,
                        right: e.right.ok_or_else(err)?,
                    });
                }
            }
        }
        Ok(())
    };
    let n_state = |k: usize, l: usize| 2 * (k + l + 1);
    for (li, raw) in lines {
        let line = li + 1;
        let mut c = Cursor {
            line,
            toks: raw.split(' ').filter(|t| !t.is_empty()).collect(),
            pos: 0,
        };
        if c.toks.is_empty() {
            continue;
        }
        let tag = c.next()?;
        let need_tree = |c: &Cursor, trees: &Vec<BranchTree>| {
            if trees.is_empty() {
                Err(c.err(format!("`{tag}` record before any tree")))
            } else {
                Ok(())
            }
        };
        match tag {
            "tree" => {
                finish(&mut trees, &mut pending, line)?;
                let idx = c.usize()?;
                if idx != trees.len() {
                    return Err(c.err(format!("tree index {idx} out of order")));
                }
                c.expect("k")?;
                k = c.usize()?;
                c.expect("l")?;
                l = c.usize()?;
                c.expect("nodes")?;
                let n = c.usize()?;
                c.done()?;
                trees.push(BranchTree {
                    root: CotangentPoint::from_state(k, l, &vec![0.0; n_state(k, l)]),
                    nodes: Vec::with_capacity(n),
                });
            }
            "root" => {
                need_tree(&c, &trees)?;
                let s = c.floats(n_state(k, l))?;
                c.done()?;
                trees.last_mut().unwrap().root = CotangentPoint::from_state(k, l, &s);
            }
            "node" => {
                need_tree(&c, &trees)?;
                let id = c.usize()?;
                let tree = trees.last_mut().unwrap();
                if id != tree.nodes.len() {
                    return Err(c.err(format!("node {id} out of order")));
                }
                c.expect("parent")?;
                let parent = match c.next()? {
                    "-" => None,
                    t => Some(t.parse().map_err(|_| c.err(format!("bad parent `{t}`")))?),
                };
                c.expect("branch")?;
                let branch_index = c.usize()?;
                c.expect("depth")?;
                let depth = c.usize()?;
                c.expect("dir")?;
                let direction = match c.next()? {
                    "forward" => Direction::Forward,
                    "backward" => Direction::Backward,
                    t => return Err(c.err(format!("bad direction `{t}`"))),
                };
                c.expect("children")?;
                let children = match c.next()? {
                    "-" => Vec::new(),
                    t => t
                        .split(',')
                        .map(|v| v.parse().map_err(|_| c.err(format!("bad child `{v}`"))))
                        .collect::<Result<_>>()?,
                };
                c.done()?;
                tree.nodes.push(Node {
                    parent,
                    branch_index,
                    depth,
                    ray: Ray {
                        segments: Vec::new(),
                        events: Vec::new(),
                        direction,
                        warnings: Vec::new(),
                    },
                    children,
                });
                pending.push(Vec::new());
            }
            "seg" | "sample" | "event" | "point" | "left" | "right" | "warn" => {
                need_tree(&c, &trees)?;
                let node_id = c.usize()?;
                let tree = trees.last_mut().unwrap();
                if node_id + 1 != tree.nodes.len() {
                    return Err(c.err(format!("record for node {node_id} outside its node block")));
                }
                let ray = &mut tree.nodes[node_id].ray;
                let evs = pending.last_mut().unwrap();
                match tag {
                    "seg" => {
                        let si = c.usize()?;
                        if si != ray.segments.len() {
                            return Err(c.err(format!("segment {si} out of order")));
                        }
                        c.expect("kind")?;
                        let kind = match c.next()? {
                            "interior" => SegmentKind::Interior,
                            t => match t.strip_prefix("glide:") {
                                Some(face) => SegmentKind::Gliding(face.parse().map_err(|e: String| c.err(e))?),
                                None => return Err(c.err(format!("bad segment kind `{t}`"))),
                            },
                        };
                        c.expect("s")?;
                        let (s_start, s_end) = (c.float()?, c.float()?);
                        c.expect("end")?;
                        let t = c.next()?;
                        let terminal = parse_terminal(&c, t)?;
                        c.expect("drift")?;
                        let drift = c.float()?;
                        c.expect("warn")?;
                        let drift_warning = match c.next()? {
                            "0" => false,
                            "1" => true,
                            t => return Err(c.err(format!("bad flag `{t}`"))),
                        };
                        c.done()?;
                        ray.segments.push(Segment {
                            kind,
                            s_start,
                            s_end,
                            samples: Vec::new(),
                            dense: Vec::new(),
                            terminal,
                            drift,
                            drift_warning,
                        });
                    }
                    "sample" => {
                        let si = c.usize()?;
                        if si + 1 != ray.segments.len() {
                            return Err(c.err(format!("sample for segment {si} outside its block")));
                        }
                        let s = c.float()?;
                        let st = c.floats(n_state(k, l))?;
                        c.done()?;
                        ray.segments[si].samples.push((s, CotangentPoint::from_state(k, l, &st)));
                    }
                    "event" => {
                        let i = c.usize()?;
                        if i != evs.len() {
                            return Err(c.err(format!("event {i} out of order")));
                        }
                        let name = c.next()?;
                        c.expect("s")?;
                        let s = c.float()?;
                        let kind = parse_event_kind(&mut c, name)?;
                        c.done()?;
                        evs.push(PartialEvent {
                            kind: Some(kind),
                            s,
                            ..PartialEvent::default()
                        });
                    }
                    "point" | "left" | "right" => {
                        let i = c.usize()?;
                        if i + 1 != evs.len() {
                            return Err(c.err(format!("`{tag}` for event {i} outside its block")));
                        }
                        let e = evs.last_mut().unwrap();
                        if tag == "point" {
                            let face = c.face()?;
                            let base = c.floats(k + l + 1)?;
                            let mut xi = Vec::with_capacity(k);
                            for _ in 0..k {
                                xi.push(match c.next()? {
                                    "*" => None,
                                    t => Some(parse_float(t).ok_or_else(|| c.err(format!("bad number `{t}`")))?),
                                });
                            }
                            let fib = c.floats(l + 1)?;
                            c.done()?;
                            e.point = Some(CompressedPoint {
                                face,
                                x: base[..k].to_vec(),
                                y: base[k..k + l].to_vec(),
                                t: base[k + l],
                                xi,
                                zeta: fib[..l].to_vec(),
                                tau: fib[l],
                            });
                        } else {
                            let st = c.floats(n_state(k, l))?;
                            c.done()?;
                            let q = Some(CotangentPoint::from_state(k, l, &st));
                            if tag == "left" {
                                e.left = q;
                            } else {
                                e.right = q;
                            }
                        }
                    }
                    _ => {
                        let text = c.rest();
                        ray.warnings.push(parse_warning(&c, &text)?);
                    }
                }
            }
            _ => return Err(c.err(format!("unknown record `{tag}`"))),
        }
    }
    let last = text.lines().count();
    finish(&mut trees, &mut pending, last)?;
    Ok(trees)
}

fn json_f(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or_else(|| serde_json::Value::String(f(v)), serde_json::Value::Number)
}

/// Structured summary of the trees: node layout, events and warnings.
pub fn tree_summary_json(trees: &[BranchTree]) -> String {
    use serde_json::json;
    let doc: Vec<_> = trees
        .iter()
        .map(|tree| {
            let nodes: Vec<_> = tree
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| {
                    json!({
                        "id": id,
                        "parent": n.parent,
                        "branch": n.branch_index,
                        "depth": n.depth,
                        "direction": dir_str(n.ray.direction),
                        "children": n.children,
                        "s_start": json_f(n.ray.s_start()),
                        "s_end": json_f(n.ray.s_end()),
                        "segments": n.ray.segments.len(),
                        "events": n.ray.events.iter().map(|e| json!({
                            "kind": e.kind.name(),
                            "s": json_f(e.s),
                            "face": e.point.face.to_string(),
                        })).collect::<Vec<_>>(),
                        "warnings": n.ray.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
                    })
                })
                .collect();
            json!({
                "k": tree.root.k(),
                "l": tree.root.l(),
                "root": tree.root.to_state().into_iter().map(json_f).collect::<Vec<_>>(),
                "leaves": tree.leaves().count(),
                "nodes": nodes,
            })
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&json!({ "trees": doc })).expect("json serialization");
    s.push('\n');
    s
}

/// One line per report:
/// `report <name> pass|fail statistic <v> tolerance <v> at <ray>:<s>|- [<key> <v>]..`.
pub fn write_reports(reports: &[PropertyReport]) -> String {
    let mut out = String::from(REPORTS_HEADER);
    out.push('\n');
    for r in reports {
        let at = r.location.map_or("-".into(), |(i, s)| format!("{i}:{}", f(s)));
        let _ = write!(
            out,
            "report {} {} statistic {} tolerance {} at {at}",
            r.name,
            if r.pass { "pass" } else { "fail" },
            f(r.statistic),
            f(r.tolerance)
        );
        for (key, v) in &r.extra {
            let _ = write!(out, " {key} {}", f(*v));
        }
        out.push('\n');
    }
    out
}

pub fn read_reports(text: &str) -> Result<Vec<PropertyReport>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORTS_HEADER => {}
        _ => return Err(Error::Record { line: 1, message: format!("missing header `{REPORTS_HEADER}`") }),
    }
    let mut out = Vec::new();
    for (li, raw) in lines {
        let mut c = Cursor {
            line: li + 1,
            toks: raw.split(' ').filter(|t| !t.is_empty()).collect(),
            pos: 0,
        };
        if c.toks.is_empty() {
            continue;
        }
        c.expect("report")?;
        let name = c.next()?.to_string();
        let pass = match c.next()? {
            "pass" => true,
            "fail" => false,
            t => return Err(c.err(format!("expected pass or fail, found `{t}`"))),
        };
        c.expect("statistic")?;
        let statistic = c.float()?;
        c.expect("tolerance")?;
        let tolerance = c.float()?;
        c.expect("at")?;
        let location = match c.next()? {
            "-" => None,
            t => {
                let (i, s) = t.split_once(':').ok_or_else(|| c.err(format!("bad location `{t}`")))?;
                let i = i.parse().map_err(|_| c.err(format!("bad location `{t}`")))?;
                let s = parse_float(s).ok_or_else(|| c.err(format!("bad location `{t}`")))?;
                Some((i, s))
            }
        };
        let mut extra = Vec::new();
        while c.pos < c.toks.len() {
            let key = c.next()?.to_string();
            extra.push((key, c.float()?));
        }
        out.push(PropertyReport {
            name,
            pass,
            statistic,
            location,
            tolerance,
            extra,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BranchRule;
    use crate::geometry::{Chart, Domain};
    use crate::tracer::{trace, TraceConfig};

    fn sample_trees() -> Vec<BranchTree> {
        let strip = Chart::flat(1, 0, Domain::new(vec![1.0], vec![], vec![], -10.0, 10.0)).unwrap();
        let a = trace(&strip, &CotangentPoint::new(vec![0.5], vec![], 0.0, vec![1.0], vec![], 1.0), &TraceConfig::default());
        let corner = Chart::flat(2, 0, Domain::new(vec![2.0, 2.0], vec![], vec![], -10.0, 10.0)).unwrap();
        let cfg = TraceConfig {
            rule: BranchRule::BranchAll(16),
            ..TraceConfig::default()
        };
        let h = 0.5f64.sqrt();
        let q = CotangentPoint::new(vec![0.5, 0.5], vec![], 0.0, vec![h, h], vec![], 1.0);
        let b = trace(&corner, &q, &cfg);
        vec![a, b]
    }

    #[test]
    fn rays_round_trip_is_byte_identical() {
        let trees = sample_trees();
        assert!(trees[1].nodes.len() > 1);
        let text = write_rays(&trees);
        let back = read_rays(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(write_rays(&back), text);
        assert_eq!(back[0].nodes[0].ray.events, trees[0].nodes[0].ray.events);
        assert_eq!(back[1].nodes.len(), trees[1].nodes.len());
        let js = tree_summary_json(&trees);
        assert!(js.contains("\"reflection\""), "{js}");
    }

    #[test]
    fn flagged_reason_and_warnings_survive() {
        let mut trees = sample_trees();
        let ray = &mut trees[0].nodes[0].ray;
        ray.warnings.push(Warning::Projected { p: -1.5e-9 });
        ray.warnings.push(Warning::UndeterminedGlancing { s: 0.25, face: "1".parse().unwrap() });
        let last = ray.events.last_mut().unwrap();
        last.kind = EventKind::Flagged { reason: "elliptic face 1 at s 0.5".into() };
        let text = write_rays(&trees);
        let back = read_rays(&text).unwrap();
        assert_eq!(back[0].nodes[0].ray.warnings, trees[0].nodes[0].ray.warnings);
        assert_eq!(back[0].nodes[0].ray.events, trees[0].nodes[0].ray.events);
        assert_eq!(write_rays(&back), text);
    }

    #[test]
    fn malformed_records_report_line() {
        let text = write_rays(&sample_trees());
        let broken = text.replacen("sample 0 0 ", "sample 0 0 zz ", 1);
        match read_rays(&broken) {
            Err(Error::Record { line, .. }) => assert!(line > 3),
            other => panic!("{other:?}"),
        }
        assert!(read_rays("nope\n").is_err());
    }

    #[test]
    fn reports_round_trip() {
        let reports = vec![
            PropertyReport {
                name: "conservation-interior".into(),
                pass: true,
                statistic: 1.25e-14,
                location: Some((0, 0.5)),
                tolerance: 1e-8,
                extra: vec![("rays".into(), 3.0)],
            },
            PropertyReport {
                name: "leaves-face".into(),
                pass: false,
                statistic: 1e-3,
                location: None,
                tolerance: 1e-9,
                extra: vec![],
            },
        ];
        let text = write_reports(&reports);
        let back = read_reports(&text).unwrap();
        assert_eq!(back, reports);
        assert_eq!(write_reports(&back), text);
    }
}
