//! Property tests for the pointwise kernels on randomized inputs.

use conflat::catalog;
use conflat::conformal::{conformal_change, conformal_flatness_test};
use conflat::curvature::{riemann_from_metric, Riemann};
use conflat::extrinsic::{fundamental_forms, intrinsic_curvatures, normal_curvature, AmbientSpace};
use conflat::gridfile::{read_grid, write_grid, GridHeader};
use conflat::jet::{dot, Jet};
use conflat::lightcone::{build_cone_model, flat_lift, project_from_cone, POLE_REL_EPS};
use conflat::linalg::{jet_sdot, orthonormal_frame};
use conflat::map::{evaluate, evaluate_jets, finite_difference_jet, seed, ChartDomain, FnMap, MapRef};
use conflat::principal::{principal_decomposition, PrincipalOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Graph `x ↦ (x, q₁(x), q₂(x))` of two cubic polynomials over a box in `R^n`.
fn graph(n: usize, coef: Vec<f64>) -> MapRef {
    FnMap::new(ChartDomain::around(&vec![0.0; n], 0.3), n + 2, move |x| {
        let mut out: Vec<Jet> = x.to_vec();
        for s in 0..2 {
            let c = &coef[s * 3 * n..(s + 1) * 3 * n];
            let mut q = &x[0] * 0.0;
            for i in 0..n {
                let j = (i + 1) % n;
                q = q + &(&x[i] * &x[j]) * c[i] + x[i].square() * c[n + i] + x[i].powi(3) * c[2 * n + i];
            }
            out.push(q);
        }
        out
    })
    .into_ref()
}

fn metric_jets(map: &dyn conflat::SmoothMap, amb: &AmbientSpace, x: &[f64]) -> Vec<Vec<Jet>> {
    let f = evaluate_jets(map, x, 3).unwrap();
    let n = x.len();
    let d: Vec<Vec<Jet>> = (0..n).map(|i| f.iter().map(|c| c.partial(i)).collect()).collect();
    (0..n).map(|i| (0..n).map(|j| jet_sdot(&amb.signs(), &d[i], &d[j])).collect()).collect()
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.2..0.2f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn jets_match_finite_differences(a in -1.0..1.0f64, b in -1.0..1.0f64, x in point(3)) {
        let map = FnMap::new(ChartDomain::around(&[0.0; 3], 1.0), 1, move |v| {
            vec![&(&v[0] * a + &v[1] * &v[2]).sin() * &(&v[2] * b).exp() + v[1].square().atan()]
        }).into_ref();
        let exact = conflat::evaluate_jet(map.as_ref(), &x, 2).unwrap();
        let fd = finite_difference_jet(map.as_ref(), &x, 2, 1e-3).unwrap();
        let d = exact.max_rel_diff(&fd);
        prop_assert!(d[1] < 1e-6 && d[2] < 1e-4, "{d:?}");
    }

    #[test]
    fn elementary_inverse_pairs(v in 0.2..3.0f64, dv in prop::collection::vec(-1.0..1.0f64, 2)) {
        let x = seed(&[v, dv[0]], 3);
        let u = &x[0] + &(&x[1] * dv[1]);
        let back = u.ln().exp();
        let pyth = u.sin().square() + u.cos().square();
        let root = u.sqrt().square();
        for i in 0..2 {
            prop_assert!((back.d1(i) - u.d1(i)).abs() < 1e-12);
            prop_assert!(pyth.d1(i).abs() < 1e-12);
            prop_assert!((root.d1(i) - u.d1(i)).abs() < 1e-12);
            for j in 0..2 {
                prop_assert!(pyth.d2(i, j).abs() < 1e-12);
                prop_assert!((back.d3(i, j, 0) - u.d3(i, j, 0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gauss_and_ricci_equations_on_graphs(coef in prop::collection::vec(-1.0..1.0f64, 24), x in point(4)) {
        let amb = AmbientSpace::Euclidean { dim: 6 };
        let map = graph(4, coef);
        let ext = fundamental_forms(map.as_ref(), &amb, &x).unwrap();
        let pack = intrinsic_curvatures(&ext).unwrap();
        let direct = riemann_from_metric(&metric_jets(map.as_ref(), &amb, &x)).unwrap();
        let scale = direct.max_abs().max(1.0);
        prop_assert!(direct.max_diff(&pack.riemann) / scale < 1e-8);
        prop_assert!(direct.symmetry_defect() / scale < 1e-10);
        prop_assert!(pack.ricci_disagreement().unwrap_or(0.0) < 1e-9 * scale);
        let nc = normal_curvature(&ext).unwrap();
        prop_assert!(nc.disagreement < 1e-8 * ext.shape_scale().powi(2).max(1.0));
    }

    #[test]
    fn round_spheres_have_constant_curvature(seed_v in 0u64..1000) {
        let item = catalog::build("stereographic_sphere", &serde_json::Value::Null).unwrap();
        let x = item.samples(1, seed_v).remove(0);
        let c = 1.0;
        let ext = fundamental_forms(item.map.as_ref(), &item.ambient, &x).unwrap();
        let pack = intrinsic_curvatures(&ext).unwrap();
        let model = Riemann::constant_curvature(&pack.metric, c);
        prop_assert!(pack.riemann.max_diff(&model) / model.max_abs().max(1.0) < 1e-8);
        let dec = principal_decomposition(&ext, &PrincipalOptions::default()).unwrap();
        prop_assert_eq!(dec.k(), 1);
    }

    #[test]
    fn schouten_tensor_gives_sectional_curvature(r1 in 0.5..0.9f64, seed_v in 0u64..1000) {
        let r2 = (1.0 - r1 * r1).sqrt();
        let item = catalog::build("s3xs1", &json!({"r1": r1, "r2": r2})).unwrap();
        let x = item.samples(1, seed_v).remove(0);
        let ext = fundamental_forms(item.map.as_ref(), &item.ambient, &x).unwrap();
        let pack = intrinsic_curvatures(&ext).unwrap();
        let t = orthonormal_frame(&pack.metric).unwrap();
        let l = pack.schouten().unwrap().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed_v);
        let q = conflat::linalg::random_orthonormal(4, 2, &mut rng);
        let (a, b): (DVector<f64>, DVector<f64>) = (&t * q.column(0), &t * q.column(1));
        let k = pack.sectional(&a, &b);
        let lsum = (a.transpose() * &l * &a)[0] + (b.transpose() * &l * &b)[0];
        prop_assert!((k - lsum).abs() < 1e-8 * k.abs().max(1.0), "K {k} vs {lsum}");
        let fl = conformal_flatness_test(&[pack], 20, 1e-8, &mut rng).unwrap();
        prop_assert!(fl.residual < 1e-6);
    }

    #[test]
    fn product_of_spheres_has_two_principal_normals(r1 in 0.5..0.9f64, seed_v in 0u64..1000) {
        let r2 = (1.0 - r1 * r1).sqrt();
        let item = catalog::build("s3xs1", &json!({"r1": r1, "r2": r2})).unwrap();
        let x = item.samples(1, seed_v).remove(0);
        let ext = fundamental_forms(item.map.as_ref(), &item.ambient, &x).unwrap();
        let dec = principal_decomposition(&ext, &PrincipalOptions::default()).unwrap();
        let mut m = dec.multiplicities();
        m.sort();
        prop_assert_eq!(m, vec![1, 3]);
        prop_assert!(dec.reconstruction < 1e-7 * dec.scale.max(1.0));
        // |η| equals the reciprocal radius of the factor sphere
        for e in &dec.normals {
            let want = if e.multiplicity == 3 { 1.0 / r1 } else { 1.0 / r2 };
            prop_assert!((ext.inner(&e.eta, &e.eta).sqrt() - want).abs() < 1e-8);
        }
    }

    #[test]
    fn conformal_change_formula_on_euclidean_metric(c in prop::collection::vec(-0.5..0.5f64, 3), x in point(4)) {
        let xs = seed(&x, 2);
        let n = xs.len();
        let g: Vec<Vec<Jet>> = (0..n).map(|i| (0..n).map(|j| Jet::constant(if i == j { 1.0 } else { 0.0 }, n, 2)).collect()).collect();
        let w = &(&(&xs[0] * c[0]) + &(dot(&xs, &xs) * c[1])) + &(&xs[1] * &xs[2]).sin() * c[2];
        let ch = conformal_change(&g, &w).unwrap();
        prop_assert!(ch.curvature_residual() < 1e-7);
        prop_assert!(ch.connection_residual() < 1e-7);
        prop_assert!(ch.duality_residual() < 1e-9);
    }

    #[test]
    fn cone_model_is_isometric(x in prop::collection::vec(-5.0..5.0f64, 6), y in prop::collection::vec(-5.0..5.0f64, 6)) {
        let m = build_cone_model(6).unwrap();
        let (px, py) = (m.psi(&x), m.psi(&y));
        let d = &px - &py;
        let e2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((m.inner(&d, &d) - e2).abs() < 1e-12 * e2.max(1.0));
        prop_assert!(m.inner(&px, &px).abs() < 1e-12 * px.norm_squared().max(1.0));
        prop_assert!((m.inner(&px, &m.w) - 1.0).abs() < 1e-12);
        let back = m.psi_invert(&px, 1e-10).unwrap();
        prop_assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn lift_projects_back(seed_v in 0u64..1000) {
        let item = catalog::build("s2_pseudosphere", &serde_json::Value::Null).unwrap();
        let cs = item.conformal.clone().unwrap();
        let model = build_cone_model(6).unwrap();
        let pts = item.samples(3, seed_v);
        let (li, inv) = flat_lift(item.map.clone(), &cs, &model, &pts).unwrap();
        prop_assert!(inv.worst() < 1e-8, "{inv:?}");
        let proj = project_from_cone(li.lift.clone(), &model, POLE_REL_EPS);
        for x in &pts {
            let a = proj.eval_checked(x).unwrap();
            let b = evaluate(item.map.as_ref(), x).unwrap();
            prop_assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-9 * v.abs().max(1.0)));
        }
    }

    #[test]
    fn grid_files_round_trip(shape in prop::collection::vec(1usize..4, 1..4), amb in 1usize..4, salt in any::<u64>()) {
        let n = shape.len();
        let header = GridHeader { n, ambient_dim: amb, grid_shape: shape, lower: vec![-1.0; n], upper: vec![2.0; n] };
        let values: Vec<f64> = (0..header.value_count()).map(|i| ((i as u64 ^ salt) as f64).sin() * 1e3).collect();
        let mut buf = Vec::new();
        write_grid(&mut buf, &header, &values).unwrap();
        let (h, v) = read_grid(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(h, header);
        prop_assert!(v.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn orthonormal_frame_whitens_random_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = DMatrix::from_fn(5, 5, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let g = &a * a.transpose() + DMatrix::identity(5, 5) * 0.1;
        let t = orthonormal_frame(&g).unwrap();
        let id = t.transpose() * &g * &t;
        assert!((id - DMatrix::identity(5, 5)).amax() < 1e-10);
    }
}
