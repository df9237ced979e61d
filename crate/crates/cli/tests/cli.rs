use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cornerray::records::{read_reports, read_rays};
use cornerray::tracer::EventKind;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cornerray"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn trace_flat_strip() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["trace", s(&scenario("flat-strip"))], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trees = read_rays(&fs::read_to_string(dir.path().join("rays.txt")).unwrap()).unwrap();
    assert_eq!(trees.len(), 1);
    assert_eq!(trees[0].nodes.len(), 1);
    let events = &trees[0].nodes[0].ray.events;
    assert_eq!(events.len(), 2);
    assert!(matches!(events[0].kind, EventKind::Reflection { .. }));
    assert_eq!(events[1].kind, EventKind::DomainExit);
    let json = fs::read_to_string(dir.path().join("tree.json")).unwrap();
    assert!(json.trim_start().starts_with('{') || json.trim_start().starts_with('['));
}

#[test]
fn trace_output_is_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&["trace", s(&scenario("curved-disc")), "--seed", "7"], d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["rays.txt", "tree.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn branch_rule_flag_splits_the_corner() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["trace", s(&scenario("flat-quarter-plane")), "--branch-rule", "all:16"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let trees = read_rays(&fs::read_to_string(dir.path().join("rays.txt")).unwrap()).unwrap();
    assert_eq!(trees[0].nodes.len(), 1);
    assert!(trees[1].nodes.len() > 2);
}

#[test]
fn classify_flips_at_unit_zeta() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["classify", s(&scenario("flat-half-plane")), "--zeta-min", "0", "--zeta-max", "1.5", "--n", "30"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("classify.txt")).unwrap();
    let rows: Vec<(f64, String)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let w: Vec<&str> = l.split_whitespace().collect();
            (w[1].parse().unwrap(), w[6].to_string())
        })
        .collect();
    assert_eq!(rows.len(), 31);
    for (z, kind) in rows {
        let want = if z < 0.99 {
            "hyperbolic"
        } else if z > 1.01 {
            "elliptic"
        } else {
            "glancing"
        };
        assert_eq!(kind, want, "zeta {z}");
    }
}

#[test]
fn verify_core_on_disc_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", s(&scenario("curved-disc")), "--suite", "core"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let got = read_reports(&fs::read_to_string(dir.path().join("reports.txt")).unwrap()).unwrap();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/curved-disc.reports.txt");
    let want = read_reports(&fs::read_to_string(golden_path).unwrap()).unwrap();
    assert_eq!(got.len(), want.len());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-15;
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.name, w.name);
        assert!(g.pass && w.pass, "{}", g.name);
        assert!(close(g.statistic, w.statistic), "{}: {} vs {}", g.name, g.statistic, w.statistic);
        assert_eq!(g.extra.len(), w.extra.len());
        for (a, b) in g.extra.iter().zip(&w.extra) {
            assert_eq!(a.0, b.0);
            assert!(close(a.1, b.1), "{} {}", g.name, a.0);
        }
    }
}

#[test]
fn failed_property_exits_two() {
    // the glancing estimate has no stable constant on the flat half plane
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["symbol-check", s(&scenario("flat-half-plane"))], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let reps = read_reports(&fs::read_to_string(dir.path().join("symbols.txt")).unwrap()).unwrap();
    assert!(reps.iter().any(|r| r.name.starts_with("glancing-estimate") && !r.pass));
    assert!(reps.iter().filter(|r| !r.name.starts_with("glancing-estimate")).all(|r| r.pass));
}

#[test]
fn oracle_on_flat_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["flat-strip", "flat-quarter-plane", "flat-half-plane"] {
        let o = run(&["oracle", s(&scenario(name))], dir.path());
        assert_eq!(o.status.code(), Some(0), "{name}");
    }
    let o = run(&["oracle", s(&scenario("curved-disc"))], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("flat"));
}

#[test]
fn parse_errors_report_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"bad\"\n[chart]\nk = 1\nl = 0\nx_max = [1.0]\nt_min = -1.0\nt_max = 1.0\nA = [[\"1 + \"]]\n").unwrap();
    let o = run(&["trace", s(&bad)], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:8:"), "{err}");
    assert!(!dir.path().join("rays.txt").exists());
}

#[test]
fn invalid_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("flat-strip");
    for args in [
        vec!["trace", s(&sc), "--branch-rule", "all:0"],
        vec!["trace", s(&sc), "--max-time", "-1"],
        vec!["verify", s(&sc), "--suite", "nope"],
    ] {
        assert_eq!(run(&args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}
