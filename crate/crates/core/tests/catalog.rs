//! Every catalog item satisfies its declared properties at 100 sample points.

use std::collections::BTreeSet;

use conflat::catalog;
use conflat::runner::{run_scenario, Scenario, Status, Suite};

const POINTWISE: [Suite; 4] = [Suite::Extrinsic, Suite::Principal, Suite::Conformal, Suite::Lightcone];

/// `example2` is holonomic with k = 3 and multiplicities [2, 1, 1], but its two
/// simple principal normals differ from the fiber normal by parallel vectors,
/// so every consequence of conformal flatness fails on it.
const EXAMPLE2_RED: [&str; 6] = [
    "principal.separation",
    "principal.span_umbilic",
    "principal.quasiumbilical_multiplicity",
    "principal.codimension_bound",
    "principal.quasiumbilical_orthogonality",
    "conformal.quadruple_identity",
];

fn failing(item: &str) -> BTreeSet<String> {
    let sc = Scenario { samples: 100, ..Scenario::new(item) }.with_suites(&POINTWISE);
    let run = run_scenario(&sc).unwrap();
    let r = &run.report;
    assert!(r.verify_hash());
    assert!(r.checks().iter().all(|c| c.status != Status::Error), "{item}: {:#?}", r.failing().collect::<Vec<_>>());
    r.failing().map(|c| c.name.clone()).collect()
}

#[test]
fn declared_properties_hold_on_every_item() {
    for name in catalog::NAMES {
        if *name == "example2" {
            continue;
        }
        let bad = failing(name);
        assert!(bad.is_empty(), "{name}: {bad:?}");
    }
}

#[test]
fn example2_fails_exactly_the_flatness_consequences() {
    let bad = failing("example2");
    let want: BTreeSet<String> = EXAMPLE2_RED.iter().map(|s| s.to_string()).collect();
    assert_eq!(bad, want);
}

#[test]
fn negative_control_is_confirmed() {
    let sc = Scenario::new("s2xs2_control").with_suites(&[Suite::Conformal]);
    let r = run_scenario(&sc).unwrap().report;
    let c = r.check("conformal.quadruple_identity").unwrap();
    assert_eq!(c.status, Status::Pass);
    assert!(c.residual.unwrap() > 0.05);
    assert_eq!(c.note.as_deref(), Some("negative control confirmed"));
    assert_eq!(r.exit_code(), 0);
}

#[test]
fn every_executed_check_appears_once() {
    let r = run_scenario(&Scenario { samples: 10, ..Scenario::new("s3xs1") }.with_suites(&POINTWISE)).unwrap().report;
    let names: BTreeSet<&str> = r.checks().iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names.len(), r.checks().len());
    assert!(r.checks().iter().all(|c| !c.anchor.is_empty()));
    let s = &r.deterministic.summary;
    assert_eq!(s.passed + s.failed + s.errors + s.not_applicable, s.total);
    assert_eq!(s.pass, r.checks().iter().all(|c| c.pass));
}
