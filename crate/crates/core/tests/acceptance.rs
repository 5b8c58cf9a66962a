//! Acceptance criteria, one line each.
//!
//! Runs without the libtest harness so the lines always print.  Residual
//! limits are pinned here rather than read from the report.  A criterion
//! listed in `KNOWN_RED` is expected to fail; the target exits nonzero if any
//! other criterion fails or if a known-red one starts passing.

use std::process::ExitCode;
use std::time::Instant;

use conflat::runner::{run_pipeline, run_scenario, Report, Scenario, Status, Suite};

/// `example2` as constructed is not conformally flat: its two simple principal
/// normals differ from the fiber normal by parallel vectors, so the
/// separation singular value is exactly 0.
const KNOWN_RED: [usize; 1] = [1];

#[derive(Default)]
struct Criterion {
    ok: bool,
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Criterion {
    fn new() -> Self {
        Criterion { ok: true, ..Default::default() }
    }

    fn record(&mut self, label: String, ok: bool) {
        if ok {
            self.notes.push(label);
        } else {
            self.ok = false;
            self.failures.push(label);
        }
    }

    fn residual(report: &Report, name: &str) -> Option<f64> {
        report.check(name).filter(|c| c.status != Status::NotApplicable).and_then(|c| c.residual)
    }

    fn at_most(&mut self, report: &Report, name: &str, tol: f64) {
        let item = &report.deterministic.item.name;
        match Self::residual(report, name) {
            Some(v) => self.record(format!("{item} {name} {v:.2e} <= {tol:.0e}"), v <= tol),
            None => self.record(format!("{item} {name} missing"), false),
        }
    }

    fn at_least(&mut self, report: &Report, name: &str, tol: f64) {
        let item = &report.deterministic.item.name;
        match Self::residual(report, name) {
            Some(v) => self.record(format!("{item} {name} {v:.3e} >= {tol:.0e}"), v >= tol),
            None => self.record(format!("{item} {name} missing"), false),
        }
    }

    fn holds(&mut self, report: &Report, name: &str) {
        let item = &report.deterministic.item.name;
        let ok = report.check(name).is_some_and(|c| c.status == Status::Pass);
        let note = report.check(name).and_then(|c| c.note.clone()).unwrap_or_default();
        self.record(format!("{item} {name} [{note}]"), ok);
    }

    fn within(&mut self, what: &str, secs: f64, limit: f64) {
        self.record(format!("{what} {secs:.1} s <= {limit:.0} s"), secs <= limit);
    }
}

fn verify(item: &str, suites: &[Suite], samples: usize) -> Report {
    let sc = Scenario { samples, ..Scenario::new(item) }.with_suites(suites);
    run_scenario(&sc).expect("scenario runs").report
}

fn criterion_1() -> Criterion {
    let mut c = Criterion::new();
    let t = Instant::now();
    for item in ["example2", "s3xs1"] {
        let r = verify(item, &[Suite::Principal], 200);
        c.holds(&r, "principal.census_k");
        c.holds(&r, "principal.census_multiplicities");
        c.holds(&r, "principal.at_most_one_high");
        c.at_most(&r, "principal.holonomic_offdiag", 1e-7);
        if item == "example2" {
            // k = 3 here, so the pairwise test applies
            c.at_least(&r, "principal.separation", 1e-3);
        } else {
            c.record(
                format!("{item} separation not applicable (k = 2)"),
                r.check("principal.separation").is_some_and(|x| x.status == Status::NotApplicable),
            );
        }
    }
    c.within("two items at 200 points", t.elapsed().as_secs_f64(), 60.0);
    c
}

fn criterion_2() -> Criterion {
    let mut c = Criterion::new();
    for item in ["s3xs1", "s2_pseudosphere"] {
        let r = verify(item, &[Suite::Principal], 100);
        c.holds(&r, "principal.quasiumbilical_multiplicity");
        c.holds(&r, "principal.codimension_bound");
    }
    let r = verify("s2xs2_control", &[Suite::Conformal], 100);
    c.at_least(&r, "conformal.quadruple_identity", 0.05);
    c
}

fn criterion_3() -> Criterion {
    let mut c = Criterion::new();
    let r = verify("torus_cone", &[Suite::Principal], 100);
    c.holds(&r, "principal.nullity_index");
    c.at_most(&r, "principal.leaf_pairs", 1e-7);
    c.at_most(&r, "principal.leaf_constancy", 1e-7);
    let r = verify("flat_cylinder", &[Suite::Principal], 100);
    c.holds(&r, "principal.nullity_branch");
    c.at_most(&r, "principal.branch_curvature", 1e-8);
    c
}

fn criterion_4() -> Criterion {
    let mut c = Criterion::new();
    for item in ["s3xs1", "s3xs1_cone_chart", "s2_pseudosphere", "stereographic_sphere", "inverted_flat"] {
        let r = verify(item, &[Suite::Conformal, Suite::Lightcone], 50);
        c.at_most(&r, "conformal.conformal_change_curvature", 1e-7);
        c.at_most(&r, "conformal.q_offdiagonal", 1e-7);
        if Criterion::residual(&r, "conformal.q_high_multiplicity").is_some() {
            c.at_most(&r, "conformal.q_high_multiplicity", 1e-7);
        }
        c.at_most(&r, "lightcone.lift_sff", 1e-7);
        c.at_most(&r, "lightcone.lift_umbilic", 1e-8);
        c.at_most(&r, "lightcone.lift_null", 1e-8);
        c.at_most(&r, "lightcone.round_trip", 1e-9);
    }
    c
}

fn criterion_5() -> Criterion {
    let mut c = Criterion::new();
    let t = Instant::now();
    let sc = Scenario { grid: Some(5), ..Scenario::new("s3xs1") };
    let run = run_pipeline(&sc).expect("pipeline runs");
    let r = &run.report;
    let fam = run.family.as_ref().expect("family report");
    let ns = &fam.nullspace;
    c.record(format!("{} unknowns, {} equations", ns.unknowns, ns.equations), ns.unknowns == 3125);
    c.at_most(r, "ribaucour.condition_analytic", ns.spacing * ns.spacing);
    c.at_least(r, "ribaucour.nullspace_dim", (fam.ambient_dim + 3) as f64);
    c.at_least(r, "ribaucour.analytic_capture", 0.999);
    let reflections: Vec<_> = fam.members.iter().filter(|m| m.kind == "reflection").collect();
    c.record(format!("{} reflection members", reflections.len()), !reflections.is_empty());
    for m in reflections {
        let l = &m.label;
        c.at_most(r, &format!("ribaucour.reflection_cone_defect[{l}]"), 1e-10);
        c.at_most(r, &format!("ribaucour.reflection_metric[{l}]"), 1e-9);
        c.at_most(r, &format!("ribaucour.reflection_quadruple[{l}]"), 1e-6);
    }
    c.at_most(r, "ribaucour.cone_defect_identity", 1e-8);
    c.at_most(r, "ribaucour.scaling_invariance", 1e-12);
    c.within("pipeline", t.elapsed().as_secs_f64(), 600.0);
    c
}

fn criterion_6() -> Criterion {
    let mut c = Criterion::new();
    let scenarios = [
        Scenario { samples: 30, seed: 5, ..Scenario::new("example2") },
        Scenario {
            samples: 30,
            seed: 9,
            pipeline: conflat::runner::PipelineConfig { count: 2, ..Default::default() },
            ..Scenario::new("s3xs1")
        },
    ];
    for sc in scenarios {
        let a = run_scenario(&sc).expect("first run").report;
        let b = run_scenario(&sc).expect("second run").report;
        let bytes = |r: &Report| serde_json::to_vec(&r.deterministic).expect("serializes");
        let same = bytes(&a) == bytes(&b) && a.hash == b.hash;
        c.record(format!("{} seed {} hash {}", sc.item, sc.seed, &a.hash[..16]), same);
    }
    c
}

type Entry = (&'static str, fn() -> Criterion);

fn main() -> ExitCode {
    let criteria: [Entry; 6] = [
        ("principal normals, holonomicity and separation", criterion_1),
        ("quasiumbilical frames and the negative control", criterion_2),
        ("relative nullity branches", criterion_3),
        ("conformal change and light-cone identities", criterion_4),
        ("Ribaucour family on the product lift", criterion_5),
        ("determinism", criterion_6),
    ];
    let mut unexpected = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let k = i + 1;
        let c = run();
        let known = KNOWN_RED.contains(&k);
        let tag = match (c.ok, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (expected red)",
        };
        if c.ok == known {
            unexpected += 1;
        }
        println!("criterion {k} {tag}: {title}");
        for f in &c.failures {
            println!("    red: {f}");
        }
        for n in &c.notes {
            println!("    ok:  {n}");
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criteria deviate from the expected outcome");
        ExitCode::FAILURE
    }
}
