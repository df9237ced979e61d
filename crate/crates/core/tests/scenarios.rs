use std::path::PathBuf;

use cornerray::boundary::GlancingKindTag;
use cornerray::scenario::Scenario;
use cornerray::suite::{core_suite, oracle_suite, trace_initial};
use cornerray::tracer::EventKind;
use cornerray::Error;

fn load(name: &str) -> Scenario {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.toml")]
        .iter()
        .collect();
    Scenario::load(&p).unwrap()
}

#[test]
fn every_shipped_scenario_passes_the_core_suite() {
    for name in ["flat-strip", "flat-quarter-plane", "flat-half-plane", "curved-disc", "curved-diffractive"] {
        for r in core_suite(&load(name)).unwrap() {
            assert!(r.pass, "{name}: {r:?}");
        }
    }
}

#[test]
fn glancing_starts_glide_on_the_disc_and_leave_the_obstacle() {
    let glancing_kind = |name: &str, i: usize| {
        let trees = trace_initial(&load(name));
        trees[i].nodes[0]
            .ray
            .events
            .iter()
            .find_map(|e| match &e.kind {
                EventKind::GlancingEnter { kind, .. } => Some(kind.kind),
                _ => None,
            })
            .unwrap()
    };
    assert_eq!(glancing_kind("curved-disc", 1), GlancingKindTag::Gliding);
    assert_eq!(glancing_kind("curved-diffractive", 0), GlancingKindTag::Diffractive);
}

#[test]
fn oracle_suite_needs_a_flat_chart() {
    assert!(matches!(oracle_suite(&load("curved-disc")), Err(Error::NotFlat)));
    assert!(oracle_suite(&load("flat-half-plane")).unwrap().iter().all(|r| r.pass));
}
