use std::sync::OnceLock;

use conflat::catalog::{self, CatalogItem};
use conflat::lightcone::{build_cone_model, flat_lift, ConeModel, LiftedImmersion};
use conflat::ribaucour::*;
use conflat::{ChartDomain, Error};
use nalgebra::DVector;
use proptest::prelude::*;

struct Fixture {
    model: ConeModel,
    lift: LiftedImmersion,
    geo: GridGeometry,
    op: ConditionOperator,
}

fn lifted(item: &CatalogItem, hw: f64, grid: usize) -> (ConeModel, LiftedImmersion, ChartDomain) {
    let dom = ChartDomain::around(&item.domain().center(), hw).with_uniform_grid(grid);
    let it = item.with_domain(dom.clone());
    let model = build_cone_model(6).unwrap();
    let (li, _) = flat_lift(it.map.clone(), it.conformal.as_ref().unwrap(), &model, &dom.grid_points()).unwrap();
    (model, li, dom)
}

fn build(hw: f64) -> Fixture {
    let item = catalog::build("s3xs1", &serde_json::Value::Null).unwrap();
    let (model, lift, dom) = lifted(&item, hw, 5);
    let geo = grid_geometry(lift.lift.as_ref(), &model.ambient(), &dom, &RibaucourOptions::default()).unwrap();
    let op = condition_operator(&geo);
    Fixture { model, lift, geo, op }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(0.02))
}

fn unit(m: usize, k: usize) -> DVector<f64> {
    let mut z = DVector::zeros(m);
    z[k] = 1.0;
    z
}

#[test]
fn transported_frame_is_parallel_and_orthonormal() {
    let f = fixture();
    let h = f.geo.spacing();
    assert!(f.geo.frame_residual < 10.0 * h * h, "{}", f.geo.frame_residual);
    for q in [0, f.geo.center, f.geo.len() - 1] {
        for a in 0..f.geo.p {
            for b in 0..f.geo.p {
                let v = f.geo.inner(&f.geo.frame[q][a], &f.geo.frame[q][b]);
                let want = if a == b { f.geo.normal_signs[a] } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "{q} {a} {b}: {v}");
            }
            for t in &f.geo.tangents[q] {
                assert!(f.geo.inner(&f.geo.frame[q][a], t).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn operator_shape() {
    let f = fixture();
    // 4 axes * 4 * 5^3 edges, p = 4 components each
    assert_eq!(f.op.rows, 4 * 4 * 125 * 4);
    assert_eq!(f.op.cols, 625 * 5);
}

#[test]
fn parallel_normal_with_zero_phi_is_exact() {
    let f = fixture();
    let b = vec![vec![0.3, -1.0, 0.5, 2.0]; f.geo.len()];
    let d = RibaucourData::from_fields(&f.geo, &f.op, vec![0.0; f.geo.len()], b);
    assert!(d.condition_residual < 1e-12, "{}", d.condition_residual);
}

#[test]
fn constant_vector_family_is_second_order() {
    let coarse = build(0.04);
    let f = fixture();
    let h = f.geo.spacing();
    let mut z = DVector::from_vec(vec![0.2, 1.0, -0.5, 0.3, 0.7, -0.1, 0.4, 0.9]);
    z /= z.norm();
    let fine = constant_vector_data(&f.geo, &f.op, &z, 0.0, 0.0).condition_residual;
    let rough = constant_vector_data(&coarse.geo, &coarse.op, &z, 0.0, 0.0).condition_residual;
    assert!(fine <= h * h, "{fine} > h^2 = {}", h * h);
    let order = (rough / fine).log2();
    assert!((1.7..2.3).contains(&order), "observed order {order}");
}

#[test]
fn random_phi_without_beta_violates_condition() {
    let f = fixture();
    let phi: Vec<f64> = f
        .geo
        .domain
        .grid_points()
        .iter()
        .map(|x| (13.0 * x[0]).sin() + (7.0 * x[1] * x[2]).cos() + 40.0 * x[3] * x[0])
        .collect();
    let d = RibaucourData::from_fields(&f.geo, &f.op, phi, vec![vec![0.0; f.geo.p]; f.geo.len()]);
    assert!(d.condition_residual > 1e-2, "{}", d.condition_residual);
}

#[test]
fn light_cone_constant_of_constant_vector_data() {
    let f = fixture();
    let z = unit(f.geo.m, 2);
    let d = constant_vector_data(&f.geo, &f.op, &z, 0.7, 0.0);
    assert!((d.c + 0.7).abs() < 1e-12, "{}", d.c);
    assert!(d.c_spread < 1e-12);
}

#[test]
fn nullspace_contains_the_analytic_family() {
    let f = fixture();
    let ns = solve_condition_nullspace(&f.geo, &f.op, &RibaucourOptions::default()).unwrap();
    assert!(ns.dim() >= 9, "dim {}", ns.dim());
    for (label, d) in analytic_family(&f.geo, &f.op) {
        let c = ns.capture(&d.to_vector());
        assert!(c >= 0.999, "{label}: {c}");
    }
    for b in ns.basis.iter().take(12) {
        let d = RibaucourData::from_vector(&f.geo, &f.op, b);
        assert!(d.condition_residual < ns.threshold, "{}", d.condition_residual);
    }
}

#[test]
fn umbilical_lift_is_refused() {
    let item = catalog::build("flat_inclusion", &serde_json::Value::Null).unwrap();
    let (model, li, dom) = lifted(&item, 0.1, 5);
    let err = grid_geometry(li.lift.as_ref(), &model.ambient(), &dom, &RibaucourOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DegenerateInput(_)), "{err}");
}

#[test]
fn coarse_grids_are_refused() {
    let item = catalog::build("s3xs1", &serde_json::Value::Null).unwrap();
    let (model, li, dom) = lifted(&item, 0.02, 4);
    let err = grid_geometry(li.lift.as_ref(), &model.ambient(), &dom, &RibaucourOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Parameter(_)), "{err}");
}

#[test]
fn constant_transform_is_degenerate() {
    // (1, w + aF) on the flat lift: F̃ = −w/a
    let item = catalog::build("flat_inclusion", &serde_json::Value::Null).unwrap();
    let (model, li, dom) = lifted(&item, 0.1, 5);
    let opts = RibaucourOptions { check_rigidity: false, ..Default::default() };
    let geo = grid_geometry(li.lift.as_ref(), &model.ambient(), &dom, &opts).unwrap();
    let op = condition_operator(&geo);
    let w = model.w.clone();
    let d = constant_vector_data(&geo, &op, &w, 0.0, 0.5);
    assert!(d.phi.iter().all(|p| (p - 1.0).abs() < 1e-12));
    let err = transform_with_frame(&geo, &d, constant_vector_frame(&geo, &w, 0.5), &opts).unwrap_err();
    assert!(matches!(err, Error::DegenerateTransform { .. }), "{err}");
}

#[test]
fn null_frame_vector_is_singular() {
    let f = fixture();
    let w = f.model.w.clone();
    let d = constant_vector_data(&f.geo, &f.op, &w, 0.0, 0.0);
    let err = transform_with_frame(&f.geo, &d, constant_vector_frame(&f.geo, &w, 0.0), &RibaucourOptions::default())
        .unwrap_err();
    assert!(matches!(err, Error::SingularTransform { .. }), "{err}");
}

#[test]
fn reflection_is_the_ambient_reflection() {
    let f = fixture();
    let z = unit(f.geo.m, 1);
    let map = analytic_transform(f.lift.lift.clone(), f.geo.signs.clone(), z.clone(), 0.0, 0.0);
    for x in f.geo.domain.grid_points().iter().step_by(37) {
        let fx = conflat::evaluate(f.lift.lift.as_ref(), x).unwrap();
        let tx = conflat::evaluate(map.as_ref(), x).unwrap();
        for k in 0..f.geo.m {
            let want = if k == 1 { -fx[1] } else { fx[k] };
            assert!((tx[k] - want).abs() < 1e-13);
        }
    }
    let diag = analytic_diagnostics(
        f.lift.lift.as_ref(),
        map.as_ref(),
        &f.geo.signs,
        &f.geo.domain.grid_points()[..50],
        &z,
        0.0,
    )
    .unwrap();
    assert!(diag.metric_residual <= 1e-9);
    assert!(diag.cone_defect <= 1e-10);
    assert!(diag.curvature_residual <= 1e-8);
}

#[test]
fn grid_reflection_stays_in_the_cone() {
    let f = fixture();
    let z = unit(f.geo.m, 3);
    let d = constant_vector_data(&f.geo, &f.op, &z, 0.0, 0.0);
    let r =
        transform_with_frame(&f.geo, &d, constant_vector_frame(&f.geo, &z, 0.0), &RibaucourOptions::default()).unwrap();
    let defect = cone_preservation_check(&d, &r, 1e-10).unwrap();
    assert!(defect <= 1e-10, "{defect}");
    assert!(r.metric_residual < 1e-3);
}

#[test]
fn shifted_data_leaves_the_cone_as_predicted() {
    let f = fixture();
    let z = unit(f.geo.m, 3);
    let d = constant_vector_data(&f.geo, &f.op, &z, 1.0, 0.0);
    assert!((d.c + 1.0).abs() < 1e-12);
    let r =
        transform_with_frame(&f.geo, &d, constant_vector_frame(&f.geo, &z, 0.0), &RibaucourOptions::default()).unwrap();
    assert!(r.cone_defect > 1e-3, "{}", r.cone_defect);
    assert!(r.defect_identity <= 1e-8, "{}", r.defect_identity);
}

#[test]
fn identity_datum_fixes_f() {
    let f = fixture();
    let b = vec![vec![1.0, 0.0, 0.0, 0.0]; f.geo.len()];
    let d = RibaucourData::from_fields(&f.geo, &f.op, vec![0.0; f.geo.len()], b);
    let r = transform(&f.geo, &d, &RibaucourOptions::default()).unwrap();
    for (a, b) in r.values.iter().zip(&f.geo.position) {
        assert_eq!(a, b);
    }
}

#[test]
fn compatibility_holds_on_analytic_solutions() {
    let f = fixture();
    let h = f.geo.spacing();
    for (label, d) in analytic_family(&f.geo, &f.op).iter().take(8) {
        let c = compatibility_residual(&f.geo, d);
        assert!(c <= 100.0 * h * h, "{label}: {c}");
    }
}

#[test]
fn flatness_filter_keeps_reflections() {
    let f = fixture();
    let cands: Vec<Candidate> =
        (1..4).map(|k| Candidate::Analytic { label: format!("e{k}"), z: unit(f.geo.m, k), t: 0.0, s: 0.0 }).collect();
    let rep = flatness_filter(&f.geo, &f.op, &f.lift.lift, &cands, 1e-8, &RibaucourOptions::default()).unwrap();
    assert_eq!(rep.retained, 3);
    assert!(rep.outcomes.iter().all(|o| o.curvature_residual <= 1e-8));
}

#[test]
fn family_pipeline_on_s3xs1() {
    let item = catalog::build("s3xs1", &serde_json::Value::Null).unwrap();
    let opts = FamilyOptions { count: 3, grid_candidates: 1, ..Default::default() };
    let rep = conformally_flat_family(&item, &opts).unwrap();
    assert!(rep.nullspace.dim >= rep.nullspace.lower_bound);
    assert!(rep.nullspace.analytic_capture.iter().all(|(_, c)| *c >= 0.999));
    let id = &rep.members[0];
    assert_eq!(id.kind, "identity");
    assert!(id.identity_defect.unwrap() < 1e-12);
    for m in rep.members.iter().filter(|m| m.kind == "reflection") {
        assert!(m.error.is_none(), "{:?}", m.error);
        assert!(m.retained);
        assert!(m.cone_defect <= 1e-10);
        assert!(m.metric_residual <= 1e-9);
        assert!(m.quadruple_residual.unwrap() <= 1e-6);
        assert!(m.holonomic_offdiag.unwrap() <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn data_scaling_leaves_the_transform_unchanged(t in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0], k in 1usize..7) {
        let f = fixture();
        let z = unit(f.geo.m, k);
        let d = constant_vector_data(&f.geo, &f.op, &z, 0.0, 0.0);
        let ds = d.scaled(&f.geo, &f.op, t);
        let o = RibaucourOptions::default();
        let a = transform_with_frame(&f.geo, &d, constant_vector_frame(&f.geo, &z, 0.0), &o).unwrap();
        let b = transform_with_frame(&f.geo, &ds, constant_vector_frame(&f.geo, &(&z * t), 0.0), &o).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).amax() <= 1e-14 * x.amax().max(1.0));
        }
        let g = transform(&f.geo, &d, &o).unwrap();
        let gs = transform(&f.geo, &ds, &o).unwrap();
        for (x, y) in g.values.iter().zip(&gs.values) {
            prop_assert!((x - y).amax() <= 1e-13 * x.amax().max(1.0));
        }
    }

    #[test]
    fn constant_shift_preserves_the_residual(c in -3.0f64..3.0, k in 0usize..8) {
        let f = fixture();
        let z = unit(f.geo.m, k);
        let d = constant_vector_data(&f.geo, &f.op, &z, 0.0, 0.0);
        let s = d.shifted(&f.geo, &f.op, c);
        let ra = f.op.apply(&d.to_vector());
        let rb = f.op.apply(&s.to_vector());
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
        prop_assert!((s.c - (d.c - c)).abs() < 1e-12);
    }
}
