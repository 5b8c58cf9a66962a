//! The light-cone model of Euclidean space in `L^{N+2}`: the embedding
//! `Ψ(x) = v + Ax − ½|x|² w`, flat lifts `F = e^{−ω} Ψ∘f`, their second
//! fundamental form, and projection of cone immersions back to `R^N`.
//!
//! Concrete model: `w = e₀ + e_{N+1}`, `v = ½(−e₀ + e_{N+1})` and `A` the
//! inclusion onto axes `1..N`.  With signature `(−, +, …, +)` the vectors `w`
//! and `Ψ(x)` lie on opposite components of the cone.

use nalgebra::{DMatrix, DVector};

use crate::conformal::{conformal_change_at, ConformalStructure};
use crate::error::{Error, Result};
use crate::extrinsic::{fundamental_forms, fundamental_forms_with, AmbientSpace, ExtrinsicData, FrameOptions};
use crate::jet::Jet;
use crate::linalg::{orthonormal_frame, sdot};
use crate::map::{evaluate_jets, ChartDomain, FnMap, MapRef, SmoothMap};
use crate::principal::{principal_decomposition, PrincipalOptions};

/// `L^{dim}` with signature `(−, +, …, +)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LorentzForm {
    pub dim: usize,
}

impl LorentzForm {
    pub fn signs(&self) -> Vec<f64> {
        AmbientSpace::Lorentz { dim: self.dim }.signs()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        -a[0] * b[0] + a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn inner_jets(&self, a: &[Jet], b: &[Jet]) -> Jet {
        let mut s = -(&a[0] * &b[0]);
        for k in 1..self.dim {
            s = s + &a[k] * &b[k];
        }
        s
    }
}

/// Null vectors `v, w` with `⟪v,w⟫ = 1` and an isometry `A` of `R^N` onto
/// their orthogonal complement.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeModel {
    /// Euclidean dimension `N`.
    pub n: usize,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub form: LorentzForm,
}

pub fn build_cone_model(n: usize) -> Result<ConeModel> {
    if n == 0 {
        return Err(Error::Dimension("cone model needs N >= 1".into()));
    }
    let mut v = DVector::zeros(n + 2);
    let mut w = DVector::zeros(n + 2);
    v[0] = -0.5;
    v[n + 1] = 0.5;
    w[0] = 1.0;
    w[n + 1] = 1.0;
    Ok(ConeModel { n, v, w, form: LorentzForm { dim: n + 2 } })
}

impl ConeModel {
    pub fn ambient(&self) -> AmbientSpace {
        AmbientSpace::Lorentz { dim: self.n + 2 }
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.form.inner(a.as_slice(), b.as_slice())
    }

    /// `A x`.
    pub fn a_map(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n + 2);
        out.rows_mut(1, self.n).copy_from_slice(x);
        out
    }

    pub fn psi(&self, x: &[f64]) -> DVector<f64> {
        let r2: f64 = x.iter().map(|t| t * t).sum();
        &self.v + self.a_map(x) - &self.w * (0.5 * r2)
    }

    /// `Ψ` applied to jets.
    pub fn psi_jets(&self, x: &[Jet]) -> Vec<Jet> {
        let half = crate::jet::dot(x, x) * 0.5;
        let mut out = Vec::with_capacity(self.n + 2);
        out.push(half.lift(0.0) - &half - 0.5);
        out.extend(x.iter().cloned());
        out.push(-&half + 0.5);
        out
    }

    /// `Ψ_*` at `x`: `u ↦ Au − ⟨x,u⟩ w`.
    pub fn psi_push(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let d: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
        self.a_map(u) - &self.w * d
    }

    /// `Ψ` as a map on a box of half-width `r` around the origin.
    pub fn psi_map(&self, r: f64) -> MapRef {
        let me = self.clone();
        FnMap::new(ChartDomain::around(&vec![0.0; self.n], r), self.n + 2, move |x| me.psi_jets(x)).into_ref()
    }

    /// Inverse of `Ψ` on the model set `{⟪V,w⟫ = 1, ⟪V,V⟫ = 0}`.
    pub fn psi_invert(&self, v: &DVector<f64>, tol: f64) -> Result<Vec<f64>> {
        let w_defect = self.inner(v, &self.w) - 1.0;
        let scale = v.norm().max(1.0);
        let null_defect = self.inner(v, v) / (scale * scale);
        if w_defect.abs() > tol || null_defect.abs() > tol {
            return Err(Error::ModelMembership { w_defect, null_defect });
        }
        Ok(v.as_slice()[1..=self.n].to_vec())
    }

    /// Largest violation of the model identities.
    pub fn invariant_defect(&self) -> f64 {
        let vv = self.inner(&self.v, &self.v).abs();
        let ww = self.inner(&self.w, &self.w).abs();
        let vw = (self.inner(&self.v, &self.w) - 1.0).abs();
        let mut d = vv.max(ww).max(vw);
        for i in 0..self.n {
            let mut e = vec![0.0; self.n];
            e[i] = 1.0;
            let ai = self.a_map(&e);
            d = d.max(self.inner(&ai, &self.v).abs()).max(self.inner(&ai, &self.w).abs());
            for j in 0..self.n {
                let mut f = vec![0.0; self.n];
                f[j] = 1.0;
                let target = if i == j { 1.0 } else { 0.0 };
                d = d.max((self.inner(&ai, &self.a_map(&f)) - target).abs());
            }
        }
        d
    }
}

/// Largest `|α_Ψ(∂_i,∂_j) + δ_ij w|` at a point.
pub fn psi_sff_residual(model: &ConeModel, x: &[f64]) -> Result<f64> {
    let r = x.iter().fold(1.0f64, |m, t| m.max(2.0 * t.abs()));
    let ext = fundamental_forms(model.psi_map(r).as_ref(), &model.ambient(), x)?;
    let mut worst = 0.0f64;
    for i in 0..model.n {
        for j in 0..model.n {
            let target = if i == j { -&model.w } else { DVector::zeros(model.n + 2) };
            worst = worst.max((ext.alpha(i, j) - target).amax());
        }
    }
    Ok(worst)
}

/// A flat lift `F = e^{−ω} Ψ∘f` of an immersion into `R^N`.
#[derive(Clone)]
pub struct LiftedImmersion {
    pub lift: MapRef,
    pub parent: MapRef,
    pub structure: ConformalStructure,
    pub model: ConeModel,
}

impl std::fmt::Debug for LiftedImmersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiftedImmersion").field("model", &self.model).finish()
    }
}

impl LiftedImmersion {
    pub fn ambient(&self) -> AmbientSpace {
        self.model.ambient()
    }

    pub fn extrinsic(&self, x: &[f64]) -> Result<ExtrinsicData> {
        fundamental_forms(self.lift.as_ref(), &self.ambient(), x)
    }
}

/// Lift invariants at one point, relative to the flat metric scale.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LiftPointCheck {
    /// `|F*⟪,⟫ − g₀|`.
    pub metric: f64,
    /// `|⟪α_F(∂_i,∂_j), F⟫ + g₀_ij|`.
    pub umbilic: f64,
    /// Tangential part of `F` and normal part of `dF`.
    pub parallel: f64,
    /// `|⟪F,F⟫| / |F|²`.
    pub cone: f64,
    /// `|⟪F,w⟫ − e^{−ω}|`.
    pub w_defect: f64,
}

impl LiftPointCheck {
    pub fn worst(&self) -> f64 {
        self.metric.max(self.umbilic).max(self.parallel).max(self.cone).max(self.w_defect)
    }

    fn merge(&mut self, o: &LiftPointCheck) {
        self.metric = self.metric.max(o.metric);
        self.umbilic = self.umbilic.max(o.umbilic);
        self.parallel = self.parallel.max(o.parallel);
        self.cone = self.cone.max(o.cone);
        self.w_defect = self.w_defect.max(o.w_defect);
    }
}

/// Tolerance for the precondition `f*δ = e^{2ω} g₀`.
pub const LIFT_METRIC_TOL: f64 = 1e-8;

/// Build the flat lift and verify its invariants at `samples`.  Fails with a
/// conformal-structure error at the worst point if `f` is not isometric to
/// `e^{2ω} g₀` there.
pub fn flat_lift(
    f: MapRef,
    cs: &ConformalStructure,
    model: &ConeModel,
    samples: &[Vec<f64>],
) -> Result<(LiftedImmersion, LiftPointCheck)> {
    if f.codomain_dim() != model.n {
        return Err(Error::Dimension(format!("f has {} components, model has N = {}", f.codomain_dim(), model.n)));
    }
    let amb = AmbientSpace::Euclidean { dim: model.n };
    let mut worst: Option<(Vec<f64>, f64)> = None;
    for x in samples {
        let r = cs.metric_residual(&fundamental_forms(f.as_ref(), &amb, x)?)?;
        if worst.as_ref().is_none_or(|(_, w)| r > *w) {
            worst = Some((x.clone(), r));
        }
    }
    if let Some((point, residual)) = worst {
        if residual > LIFT_METRIC_TOL {
            return Err(Error::ConformalStructure { point, residual });
        }
    }
    let lift = lift_map(f.clone(), cs, model);
    let li = LiftedImmersion { lift, parent: f, structure: cs.clone(), model: model.clone() };
    let mut total = LiftPointCheck::default();
    for x in samples {
        total.merge(&lift_invariants(&li, x)?);
    }
    Ok((li, total))
}

fn lift_map(f: MapRef, cs: &ConformalStructure, model: &ConeModel) -> MapRef {
    let m = model.clone();
    let om = cs.omega.clone();
    let dom = f.domain().clone();
    FnMap::new(dom, model.n + 2, move |x| {
        let e = (-om.eval(x).remove(0)).exp();
        m.psi_jets(&f.eval(x)).iter().map(|c| c * &e).collect()
    })
    .into_ref()
}

pub fn lift_invariants(li: &LiftedImmersion, x: &[f64]) -> Result<LiftPointCheck> {
    let ext = li.extrinsic(x)?;
    let g0 = li.structure.flat_metric(x)?;
    let gs = g0.abs().max();
    let fv = &ext.position;
    let fnorm2 = fv.norm_squared();
    let n = ext.n;
    let mut c = LiftPointCheck {
        metric: (&ext.metric - &g0).abs().max() / gs,
        cone: ext.inner(fv, fv).abs() / fnorm2,
        ..Default::default()
    };
    for i in 0..n {
        for j in 0..n {
            c.umbilic = c.umbilic.max((ext.inner(&ext.alpha(i, j), fv) + g0[(i, j)]).abs() / gs);
        }
        c.parallel = c.parallel.max(ext.normal_part(&ext.tangents[i]).norm() / ext.tangents[i].norm());
    }
    c.parallel = c.parallel.max((fv - ext.normal_part(fv)).norm() / fnorm2.sqrt());
    let om = li.structure.omega_jet(x, 0)?.value();
    c.w_defect = (li.model.inner(fv, &li.model.w) - (-om).exp()).abs() * om.exp();
    Ok(c)
}

/// Direct and predicted second fundamental form of a flat lift at a point.
#[derive(Clone, Debug)]
pub struct LiftSffCheck {
    /// `α_F(∂_i,∂_j)`, index `i * n + j`.
    pub alpha: Vec<DVector<f64>>,
    pub predicted: Vec<DVector<f64>>,
    pub residual: f64,
    /// Residual of the diagonal display for unit principal directions of `f`.
    pub diagonal_residual: f64,
}

/// Compare `α_F` with
/// `−Q(X,Y)F + e^{−ω}Ψ_*(α_f(X,Y) − ⟨X,Y⟩₀ f_* grad₀ω) − e^{ω}⟨X,Y⟩₀ w`.
pub fn lift_second_fundamental_form(li: &LiftedImmersion, x: &[f64]) -> Result<LiftSffCheck> {
    let ext_f = fundamental_forms(li.parent.as_ref(), &AmbientSpace::Euclidean { dim: li.model.n }, x)?;
    let pivot_opts = FrameOptions::default();
    let ext_l = fundamental_forms_with(li.lift.as_ref(), &li.ambient(), x, &pivot_opts)?;
    let cs = &li.structure;
    let n = ext_f.n;
    let cc = conformal_change_at(cs, x)?;
    let w1 = cs.omega_jet(x, 1)?;
    let om = w1.value();
    let g0 = cs.flat_metric(x)?;
    let g0i = g0.clone().try_inverse().ok_or_else(|| Error::LinearAlgebra("singular flat metric".into()))?;
    let dw = DVector::from_iterator(n, (0..n).map(|i| w1.d1(i)));
    let fgrad = ext_f.push(&(&g0i * &dw));
    let fx = ext_f.position.as_slice();
    let model = &li.model;
    let predict = |xv: &DVector<f64>, yv: &DVector<f64>| -> DVector<f64> {
        let q = (xv.transpose() * &cc.q * yv)[0];
        let g = (xv.transpose() * &g0 * yv)[0];
        let inner = ext_f.alpha_vec(xv, yv) - &fgrad * g;
        -&ext_l.position * q + model.psi_push(fx, inner.as_slice()) * (-om).exp() - &model.w * (om.exp() * g)
    };
    let e = |i: usize| {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    };
    let mut alpha = Vec::with_capacity(n * n);
    let mut predicted = Vec::with_capacity(n * n);
    let mut scale = 1.0f64;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let a = ext_l.alpha(i, j);
            let p = predict(&e(i), &e(j));
            scale = scale.max(a.amax());
            worst = worst.max((&a - &p).amax());
            alpha.push(a);
            predicted.push(p);
        }
    }
    let dirs = match principal_decomposition(&ext_f, &PrincipalOptions::default()) {
        Ok(dec) => {
            let mut d = DMatrix::zeros(n, n);
            let mut c = 0;
            for e in &dec.normals {
                for k in 0..e.multiplicity {
                    d.set_column(c, &e.basis.column(k));
                    c += 1;
                }
            }
            d
        }
        Err(_) => orthonormal_frame(&ext_f.metric)?,
    };
    let mut diag = 0.0f64;
    for k in 0..n {
        let xk = dirs.column(k).into_owned();
        let direct = ext_l.alpha_vec(&xk, &xk);
        let q = (xk.transpose() * &cc.q * &xk)[0];
        let inner = ext_f.alpha_vec(&xk, &xk) - &fgrad * (-2.0 * om).exp();
        let display =
            -&ext_l.position * q + model.psi_push(fx, inner.as_slice()) * (-om).exp() - &model.w * (-om).exp();
        diag = diag.max((direct - display).amax() / scale);
    }
    Ok(LiftSffCheck { alpha, predicted, residual: worst / scale, diagonal_residual: diag })
}

/// Default pole threshold for `|⟪F,w⟫|`, relative to a length scale.
pub const POLE_REL_EPS: f64 = 1e-6;

/// Projection of a cone immersion to `R^N` and its conformal factor.
#[derive(Clone)]
pub struct ProjectedImmersion {
    /// `f = Ψ⁻¹(F / ⟪F,w⟫)`.
    pub map: MapRef,
    /// `⟪F,w⟫`; the induced metric of `f` is `⟪F,w⟫^{−2}` times that of `F`.
    pub factor: MapRef,
    pub pole_eps: f64,
}

pub fn project_from_cone(f: MapRef, model: &ConeModel, pole_eps: f64) -> ProjectedImmersion {
    let m = model.clone();
    let dom = f.domain().clone();
    let fw = f.clone();
    let factor = FnMap::new(dom.clone(), 1, move |x| {
        let fx = fw.eval(x);
        vec![&fx[m.n + 1] - &fx[0]]
    })
    .into_ref();
    let nn = model.n;
    let map = FnMap::new(dom, nn, move |x| {
        let fx = f.eval(x);
        let r = (&fx[nn + 1] - &fx[0]).recip();
        fx[1..=nn].iter().map(|c| c * &r).collect()
    })
    .into_ref();
    ProjectedImmersion { map, factor, pole_eps }
}

impl ProjectedImmersion {
    /// Points of `samples` where `|⟪F,w⟫| < pole_eps`.
    pub fn pole_mask(&self, samples: &[Vec<f64>]) -> Result<Vec<bool>> {
        samples
            .iter()
            .map(|x| Ok(evaluate_jets(self.factor.as_ref(), x, 0)?[0].value().abs() < self.pole_eps))
            .collect()
    }

    pub fn eval_checked(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = evaluate_jets(self.factor.as_ref(), x, 0)?[0].value();
        if s.abs() < self.pole_eps {
            return Err(Error::Pole { point: x.to_vec(), value: s });
        }
        crate::map::evaluate(self.map.as_ref(), x)
    }
}

/// Result of projecting back and comparing metrics.
#[derive(Clone, Debug, Default)]
pub struct ProjectionCheck {
    /// `|f*δ − ⟪F,w⟫^{−2} F*⟪,⟫|` relative to the largest metric entry; over unmasked points.
    pub metric_residual: f64,
    pub masked: Vec<usize>,
    pub checked: usize,
}

pub fn check_projection(
    proj: &ProjectedImmersion,
    cone_map: &dyn SmoothMap,
    model: &ConeModel,
    samples: &[Vec<f64>],
) -> Result<ProjectionCheck> {
    let mask = proj.pole_mask(samples)?;
    let mut out = ProjectionCheck::default();
    let signs = model.form.signs();
    for (idx, x) in samples.iter().enumerate() {
        if mask[idx] {
            out.masked.push(idx);
            continue;
        }
        let fj = evaluate_jets(cone_map, x, 1)?;
        let pj = evaluate_jets(proj.map.as_ref(), x, 1)?;
        let s = evaluate_jets(proj.factor.as_ref(), x, 0)?[0].value();
        let n = x.len();
        let d = |v: &[Jet], i: usize| v.iter().map(|c| c.d1(i)).collect::<Vec<f64>>();
        let (mut diff, mut scale) = (0.0f64, 1e-300f64);
        for i in 0..n {
            for j in 0..n {
                let gf = sdot(&signs, &d(&fj, i), &d(&fj, j)) / (s * s);
                let gp: f64 = d(&pj, i).iter().zip(d(&pj, j)).map(|(a, b)| a * b).sum();
                diff = diff.max((gf - gp).abs());
                scale = scale.max(gp.abs()).max(gf.abs());
            }
        }
        out.metric_residual = out.metric_residual.max(diff / scale);
        out.checked += 1;
    }
    Ok(out)
}

/// Correspondence between `f` and its lift in the same coordinates.
#[derive(Clone, Debug)]
pub struct LiftCorrespondence {
    pub k_f: usize,
    pub k_lift: usize,
    pub multiplicities_f: Vec<usize>,
    pub multiplicities_lift: Vec<usize>,
    /// Off-diagonal `α_F` in `f`'s principal coordinates.
    pub lift_offdiag: f64,
    /// `|Q(X_i,X_i) + ⟪η_i^F, …⟫|`-type pairing residual: principal normals of
    /// `F` against the diagonal display for each principal normal of `f`.
    pub normal_residual: f64,
    pub points: usize,
}

impl LiftCorrespondence {
    pub fn matches(&self) -> bool {
        self.k_f == self.k_lift && self.multiplicities_f == self.multiplicities_lift
    }
}

/// Check that the lift is holonomic in `f`'s principal coordinates and that
/// principal normals correspond one to one.  Requires the chart to be
/// principal for `f`.  Not applicable without a conformal structure.
pub fn lift_correspondence_check(
    f: MapRef,
    cs: Option<&ConformalStructure>,
    model: &ConeModel,
    samples: &[Vec<f64>],
    opts: &PrincipalOptions,
) -> Result<LiftCorrespondence> {
    let cs = cs.ok_or_else(|| Error::NotApplicable("no explicit conformal factor".into()))?;
    let (li, _) = flat_lift(f.clone(), cs, model, samples)?;
    let amb = AmbientSpace::Euclidean { dim: model.n };
    let mut rep = LiftCorrespondence {
        k_f: 0,
        k_lift: 0,
        multiplicities_f: vec![],
        multiplicities_lift: vec![],
        lift_offdiag: 0.0,
        normal_residual: 0.0,
        points: samples.len(),
    };
    for x in samples {
        let ef = fundamental_forms(f.as_ref(), &amb, x)?;
        let el = li.extrinsic(x)?;
        let df = principal_decomposition(&ef, opts)?;
        let dl = principal_decomposition(&el, opts)?;
        rep.k_f = rep.k_f.max(df.k());
        rep.k_lift = rep.k_lift.max(dl.k());
        rep.multiplicities_f = df.multiplicities();
        rep.multiplicities_lift = dl.multiplicities();
        let n = el.n;
        let scale = (0..n).map(|i| el.alpha(i, i).amax() / el.metric[(i, i)]).fold(1.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let den = (el.metric[(i, i)] * el.metric[(j, j)]).sqrt();
                    rep.lift_offdiag = rep.lift_offdiag.max(el.alpha(i, j).amax() / den / scale);
                }
            }
        }
        let sff = lift_second_fundamental_form(&li, x)?;
        rep.normal_residual = rep.normal_residual.max(sff.diagonal_residual);
        // each principal normal of f maps to the principal normal of F along the same directions
        for e in &df.normals {
            let xk = e.basis.column(0).into_owned();
            let g0 = cs.flat_metric(x)?;
            let g = (xk.transpose() * &g0 * &xk)[0];
            let eta_l = el.alpha_vec(&xk, &xk) / g;
            let best = dl.normals.iter().map(|o| (&o.eta - &eta_l).amax()).fold(f64::INFINITY, f64::min);
            rep.normal_residual = rep.normal_residual.max(best / scale);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::seed;

    #[test]
    fn model_identities_hold_exactly() {
        let m = build_cone_model(2).unwrap();
        assert_eq!(m.invariant_defect(), 0.0);
        assert_eq!(m.psi(&[0.0, 0.0]), m.v);
        assert_eq!(m.psi_invert(&m.v, 1e-12).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn psi_jets_match_values() {
        let m = build_cone_model(3).unwrap();
        let x = [0.3, -1.2, 0.7];
        let j: Vec<f64> = m.psi_jets(&seed(&x, 1)).iter().map(Jet::value).collect();
        let v = m.psi(&x);
        for (a, b) in j.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(m.inner(&v, &v).abs() < 1e-14);
        assert!((m.inner(&v, &m.w) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn off_model_vector_is_rejected() {
        let m = build_cone_model(2).unwrap();
        let v = &m.psi(&[0.5, 0.5]) * 2.0;
        assert!(matches!(m.psi_invert(&v, 1e-9), Err(Error::ModelMembership { .. })));
    }

    #[test]
    fn psi_second_fundamental_form() {
        let m = build_cone_model(3).unwrap();
        assert!(psi_sff_residual(&m, &[0.2, -0.4, 0.9]).unwrap() < 1e-10);
    }
}
