//! Conformal changes of metric, the tensors `Q`, `Q₀`, `T`, conformal
//! flatness by the quadruple identity, and the principal-normal shift under
//! a conformal change of the ambient metric.
//!
//! For `⟨,⟩_* = e^{2ω}⟨,⟩`:
//!
//! ```text
//! ∇*_X Y = ∇_X Y + Y(ω)X + X(ω)Y − ⟨X,Y⟩ grad ω
//! R_*(X,Y)Z = R(X,Y)Z − T(X,Y)Z
//! T(X,Y)Z = (Q(Y,Z) + ⟨Y,Z⟩|grad ω|²)X − (Q(X,Z) + ⟨X,Z⟩|grad ω|²)Y + ⟨Y,Z⟩Q₀X − ⟨X,Z⟩Q₀Y
//! Q = Hess ω − dω ⊗ dω,  Q₀X = ∇_X grad ω − X(ω) grad ω
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::curvature::{riemann_from_metric, CurvaturePack, Riemann};
use crate::error::{Error, Result};
use crate::extrinsic::{fundamental_forms, AmbientSpace, ExtrinsicData};
use crate::jet::Jet;
use crate::linalg::{jet_inverse, orthonormal_frame, random_orthonormal, values};
use crate::map::{evaluate_jets, seed, MapRef, SmoothMap};
use crate::principal::{principal_decomposition, PrincipalOptions};

/// An explicit conformal factor: the immersion's metric is `e^{2ω} g₀` with
/// `g₀` the Euclidean metric of the chart, or its pullback by `flat_chart`.
#[derive(Clone)]
pub struct ConformalStructure {
    pub omega: MapRef,
    pub flat_chart: Option<MapRef>,
}

impl std::fmt::Debug for ConformalStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConformalStructure").field("flat_chart", &self.flat_chart.is_some()).finish()
    }
}

impl ConformalStructure {
    pub fn new(omega: MapRef) -> Self {
        ConformalStructure { omega, flat_chart: None }
    }

    pub fn with_flat_chart(omega: MapRef, flat_chart: MapRef) -> Self {
        ConformalStructure { omega, flat_chart: Some(flat_chart) }
    }

    /// `ω` as a jet of the given order.
    pub fn omega_jet(&self, point: &[f64], order: u8) -> Result<Jet> {
        Ok(evaluate_jets(self.omega.as_ref(), point, order)?.remove(0))
    }

    /// `ω` as a jet over caller-supplied variables (for composition).
    pub fn omega_of(&self, x: &[Jet]) -> Jet {
        self.omega.eval(x).remove(0)
    }

    /// Flat metric `g₀` as jets of the given order.
    pub fn flat_metric_jets(&self, point: &[f64], order: u8) -> Result<Vec<Vec<Jet>>> {
        let n = point.len();
        match &self.flat_chart {
            None => {
                let z = Jet::constant(0.0, n, order);
                Ok((0..n).map(|i| (0..n).map(|j| z.lift(if i == j { 1.0 } else { 0.0 })).collect()).collect())
            }
            Some(phi) => {
                let jets = evaluate_jets(phi.as_ref(), point, (order + 1).min(3))?;
                let d: Vec<Vec<Jet>> = (0..n).map(|i| jets.iter().map(|c| c.partial(i)).collect()).collect();
                Ok((0..n).map(|i| (0..n).map(|j| crate::jet::dot(&d[i], &d[j]).truncate(order)).collect()).collect())
            }
        }
    }

    pub fn flat_metric(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        Ok(values(&self.flat_metric_jets(point, 0)?))
    }

    /// Largest relative deviation of the induced metric from `e^{2ω} g₀`.
    pub fn metric_residual(&self, ext: &ExtrinsicData) -> Result<f64> {
        let w = self.omega_jet(&ext.point, 0)?.value();
        let g0 = self.flat_metric(&ext.point)?;
        let d = &ext.metric - g0 * (2.0 * w).exp();
        Ok(d.abs().max() / ext.metric.abs().max())
    }
}

/// Output of [`conformal_change`], all in the base metric's chart coordinates.
#[derive(Clone, Debug)]
pub struct ConformalChange {
    /// `(∇* − ∇)^l_ij` from the formula, index `(l * n + i) * n + j`.
    pub connection_formula: Vec<f64>,
    /// The same difference from Christoffel symbols of both metrics.
    pub connection_direct: Vec<f64>,
    pub q: DMatrix<f64>,
    /// `Q₀` as a mixed tensor `(Q₀)^l_i`, from `Q` by raising an index.
    pub q0: DMatrix<f64>,
    /// `Q₀` from differentiating `grad ω` directly.
    pub q0_direct: DMatrix<f64>,
    /// `⟨T(∂_i,∂_j)∂_k, ∂_l⟩`.
    pub t: Riemann,
    /// `⟨R(∂_i,∂_j)∂_k − T(∂_i,∂_j)∂_k, ∂_l⟩`.
    pub r_star_formula: Riemann,
    /// `⟨R_*(∂_i,∂_j)∂_k, ∂_l⟩` from the conformal metric's own jets.
    pub r_star_direct: Riemann,
    pub grad_norm2: f64,
}

impl ConformalChange {
    /// Curvature disagreement relative to the largest curvature entry.
    pub fn curvature_residual(&self) -> f64 {
        self.r_star_formula.max_diff(&self.r_star_direct) / self.r_star_direct.max_abs().max(1.0)
    }

    pub fn connection_residual(&self) -> f64 {
        let s = self.connection_direct.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        self.connection_formula.iter().zip(&self.connection_direct).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / s
    }

    /// `|Q₀ from Q − Q₀ from ∇ grad ω|`, relative.
    pub fn duality_residual(&self) -> f64 {
        (&self.q0 - &self.q0_direct).abs().max() / self.q0_direct.abs().max().max(1.0)
    }
}

fn christoffel(g: &[Vec<Jet>]) -> Result<Vec<Vec<Vec<Jet>>>> {
    // Γ^l_ij as order-(o-1) jets
    let n = g.len();
    let o = g[0][0].order();
    let low: Vec<Vec<Jet>> = g.iter().map(|r| r.iter().map(|x| x.truncate(o - 1)).collect()).collect();
    let ginv = jet_inverse(&low)?;
    let mut out = vec![vec![vec![low[0][0].lift(0.0); n]; n]; n];
    for i in 0..n {
        for j in 0..n {
            let first: Vec<Jet> =
                (0..n).map(|m| &(&(&g[j][m].partial(i) + &g[i][m].partial(j)) - &g[i][j].partial(m)) * 0.5).collect();
            for l in 0..n {
                let mut s = &ginv[l][0] * &first[0];
                for m in 1..n {
                    s = s + &ginv[l][m] * &first[m];
                }
                out[l][i][j] = s;
            }
        }
    }
    Ok(out)
}

/// The conformal change `g → e^{2ω} g` at a point, given order-2 jets of `g`
/// and of `ω`.  Order-3 jets of `ω` are not needed.
pub fn conformal_change(g: &[Vec<Jet>], omega: &Jet) -> Result<ConformalChange> {
    let n = g.len();
    if g[0][0].order() < 2 || omega.order() < 2 {
        return Err(Error::Dimension("conformal change needs order-2 jets".into()));
    }
    let gv = values(g);
    let gi = gv.clone().try_inverse().ok_or_else(|| Error::LinearAlgebra("singular metric".into()))?;
    let gam = christoffel(g)?;
    let dw: Vec<f64> = (0..n).map(|i| omega.d1(i)).collect();
    let grad: Vec<f64> = (0..n).map(|l| (0..n).map(|m| gi[(l, m)] * dw[m]).sum()).collect();
    let grad_norm2: f64 = (0..n).map(|i| dw[i] * grad[i]).sum();
    let hess =
        DMatrix::from_fn(n, n, |i, j| omega.d2(i, j) - (0..n).map(|l| gam[l][i][j].value() * dw[l]).sum::<f64>());
    let q = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] - dw[i] * dw[j]);
    let q0 = &gi * &q;
    // ∇_i grad ω from jets of grad ω
    let g1: Vec<Vec<Jet>> = g.iter().map(|r| r.iter().map(|x| x.truncate(1)).collect()).collect();
    let gi1 = jet_inverse(&g1)?;
    let w1: Vec<Jet> = (0..n).map(|m| omega.partial(m)).collect();
    let gradj: Vec<Jet> = (0..n)
        .map(|l| {
            let mut s = &gi1[l][0] * &w1[0];
            for m in 1..n {
                s = s + &gi1[l][m] * &w1[m];
            }
            s
        })
        .collect();
    let q0_direct = DMatrix::from_fn(n, n, |l, i| {
        let cov = gradj[l].d1(i) + (0..n).map(|k| gam[l][i][k].value() * grad[k]).sum::<f64>();
        cov - dw[i] * grad[l]
    });
    let t = Riemann::from_fn(n, |i, j, k, l| {
        (q[(j, k)] + gv[(j, k)] * grad_norm2) * gv[(i, l)] - (q[(i, k)] + gv[(i, k)] * grad_norm2) * gv[(j, l)]
            + gv[(j, k)] * q[(i, l)]
            - gv[(i, k)] * q[(j, l)]
    });
    let r = riemann_from_metric(g)?;
    let r_star_formula = Riemann::from_fn(n, |i, j, k, l| r.get(i, j, k, l) - t.get(i, j, k, l));
    let e2w = (omega * 2.0).exp();
    let gs: Vec<Vec<Jet>> = g.iter().map(|row| row.iter().map(|x| x * &e2w).collect()).collect();
    let rs = riemann_from_metric(&gs)?;
    let f = (-2.0 * omega.value()).exp();
    let r_star_direct = Riemann::from_fn(n, |i, j, k, l| rs.get(i, j, k, l) * f);
    let gam_s = christoffel(&gs)?;
    let mut connection_formula = vec![0.0; n * n * n];
    let mut connection_direct = vec![0.0; n * n * n];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                connection_formula[(l * n + i) * n + j] = d(l, i) * dw[j] + d(l, j) * dw[i] - gv[(i, j)] * grad[l];
                connection_direct[(l * n + i) * n + j] = gam_s[l][i][j].value() - gam[l][i][j].value();
            }
        }
    }
    Ok(ConformalChange {
        connection_formula,
        connection_direct,
        q,
        q0,
        q0_direct,
        t,
        r_star_formula,
        r_star_direct,
        grad_norm2,
    })
}

/// [`conformal_change`] of the flat metric of a [`ConformalStructure`].
pub fn conformal_change_at(cs: &ConformalStructure, point: &[f64]) -> Result<ConformalChange> {
    let g0 = cs.flat_metric_jets(point, 2)?;
    let w = cs.omega_jet(point, 2)?;
    conformal_change(&g0, &w)
}

/// Result of [`conformal_flatness_test`].
#[derive(Clone, Debug)]
pub struct FlatnessReport {
    /// `max |K₁₂ + K₃₄ − K₁₃ − K₂₄| / max|K|`.
    pub residual: f64,
    pub max_abs_k: f64,
    pub quadruples: usize,
}

/// Quadruple identity over random orthonormal 4-frames, normalized by the
/// largest sampled sectional curvature (or `floor` if that is smaller).
pub fn conformal_flatness_test<R: Rng + ?Sized>(
    packs: &[CurvaturePack],
    trials: usize,
    floor: f64,
    rng: &mut R,
) -> Result<FlatnessReport> {
    let n = packs.first().map(|p| p.dim()).unwrap_or(0);
    if n < 4 {
        return Err(Error::NotApplicable(format!("quadruple test needs n >= 4, have {n}")));
    }
    let mut worst = 0.0f64;
    let mut kmax = 0.0f64;
    for pack in packs {
        let t = orthonormal_frame(&pack.metric)?;
        for _ in 0..trials {
            let q = random_orthonormal(n, 4, rng);
            let x: Vec<DVector<f64>> = (0..4).map(|c| &t * q.column(c)).collect();
            let k = |a: usize, b: usize| pack.riemann.apply(&x[a], &x[b], &x[b], &x[a]);
            let ks = [k(0, 1), k(2, 3), k(0, 2), k(1, 3), k(0, 3), k(1, 2)];
            kmax = ks.iter().fold(kmax, |m, v| m.max(v.abs()));
            worst = worst.max((ks[0] + ks[1] - ks[2] - ks[3]).abs());
        }
    }
    Ok(FlatnessReport { residual: worst / kmax.max(floor), max_abs_k: kmax, quadruples: trials * packs.len() })
}

/// Shifted principal normal `η − (1/λ)(grad λ)^⊥` for an ambient conformal
/// factor `λ` (metric `λ² g`); `lambda` is a scalar map on the ambient space.
pub fn principal_normal_shift(ext: &ExtrinsicData, eta: &DVector<f64>, lambda: &dyn SmoothMap) -> Result<DVector<f64>> {
    let j = evaluate_jets(lambda, ext.position.as_slice(), 1)?.remove(0);
    let l = j.value();
    if l <= 0.0 {
        return Err(Error::Factor(l));
    }
    let signs = ext.ambient.signs();
    let grad = DVector::from_iterator(signs.len(), (0..signs.len()).map(|k| signs[k] * j.d1(k)));
    Ok(eta - ext.normal_part(&grad) / l)
}

/// Principal normals of `τ ∘ f` predicted from those of `f`, where `τ` is a
/// conformal diffeomorphism of Euclidean space with `τ*δ = λ² δ`.
///
/// Returns `τ_*(λ⁻² (η − (1/λ)(grad λ)^⊥))` for each principal normal.
pub fn transported_principal_normals(
    ext: &ExtrinsicData,
    tau: &dyn SmoothMap,
    lambda: &dyn SmoothMap,
    opts: &PrincipalOptions,
) -> Result<Vec<DVector<f64>>> {
    let dec = principal_decomposition(ext, opts)?;
    let x = ext.position.as_slice();
    let tj = evaluate_jets(tau, x, 1)?;
    let m = x.len();
    let dt = DMatrix::from_fn(m, m, |r, c| tj[r].d1(c));
    let l = evaluate_jets(lambda, x, 0)?[0].value();
    dec.normals.iter().map(|e| Ok(&dt * principal_normal_shift(ext, &e.eta, lambda)? / (l * l))).collect()
}

/// Residuals of the two `Q`-tensor identities for a proper immersion with flat normal bundle.
#[derive(Clone, Debug, Default)]
pub struct QTensorReport {
    /// `max |Q(X,Z)|` for `X` in an eigendistribution and `Z ⊥ X`, relative.
    pub q_offdiag: f64,
    /// `max |Q(Z,Z) + ½(‖η₁‖² + e^{−2ω}|dω|₀²)|` over unit `Z ∈ E₁`, relative;
    /// `None` when no distribution has dimension ≥ 2.
    pub q_high: Option<f64>,
    pub points: usize,
}

/// Check `Q(X,Z) = 0` and the value of `Q` on the high-multiplicity
/// distribution.  Vectors are unit length in the immersion's metric; `Q`
/// and gradients are taken with respect to the flat metric.
pub fn q_tensor_checks(
    map: &dyn SmoothMap,
    ambient: &AmbientSpace,
    cs: &ConformalStructure,
    samples: &[Vec<f64>],
    opts: &PrincipalOptions,
) -> Result<QTensorReport> {
    let mut rep = QTensorReport { points: samples.len(), ..Default::default() };
    for x in samples {
        let ext = fundamental_forms(map, ambient, x)?;
        let dec = principal_decomposition(&ext, opts)?;
        let cc = conformal_change_at(cs, x)?;
        let w = cs.omega_jet(x, 0)?.value();
        let g0 = cs.flat_metric(x)?;
        let g0i = g0.clone().try_inverse().ok_or_else(|| Error::LinearAlgebra("singular flat metric".into()))?;
        let wj = cs.omega_jet(x, 1)?;
        let dw = DVector::from_iterator(ext.n, (0..ext.n).map(|i| wj.d1(i)));
        let dw0 = (dw.transpose() * &g0i * &dw)[0];
        let cols: Vec<DVector<f64>> =
            dec.normals.iter().flat_map(|e| (0..e.multiplicity).map(move |c| e.basis.column(c).into_owned())).collect();
        let qv = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &cc.q * b)[0];
        let scale = cols.iter().map(|c| qv(c, c).abs()).fold(dec.scale * dec.scale, f64::max).max(f64::MIN_POSITIVE);
        for a in 0..cols.len() {
            for b in 0..cols.len() {
                if a != b {
                    rep.q_offdiag = rep.q_offdiag.max(qv(&cols[a], &cols[b]).abs() / scale);
                }
            }
        }
        if let Some(e1) = dec.normals.iter().find(|e| e.multiplicity >= 2) {
            let eta2 = e1.coords.iter().zip(&ext.normal_signs).map(|(c, s)| s * c * c).sum::<f64>();
            let target = -0.5 * (eta2 + (-2.0 * w).exp() * dw0);
            let mut worst = rep.q_high.unwrap_or(0.0);
            for c in 0..e1.multiplicity {
                let z = e1.basis.column(c).into_owned();
                worst = worst.max((qv(&z, &z) - target).abs() / scale);
            }
            // a diagonal direction exercises the cross terms too
            let mut z = DVector::zeros(ext.n);
            for c in 0..e1.multiplicity {
                z += e1.basis.column(c);
            }
            z /= (e1.multiplicity as f64).sqrt();
            worst = worst.max((qv(&z, &z) - target).abs() / scale);
            rep.q_high = Some(worst);
        }
    }
    Ok(rep)
}

/// The seeded flat metric variables, for callers composing jets by hand.
pub fn chart_variables(point: &[f64], order: u8) -> Vec<Jet> {
    seed(point, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, order: u8) -> Vec<Vec<Jet>> {
        let z = Jet::constant(0.0, n, order);
        (0..n).map(|i| (0..n).map(|j| z.lift(if i == j { 1.0 } else { 0.0 })).collect()).collect()
    }

    #[test]
    fn constant_factor_changes_nothing_but_scale() {
        let x = [0.1, 0.2, 0.3, 0.4];
        let w = &seed(&x, 2)[0] * 0.0 + 0.7;
        let cc = conformal_change(&flat(4, 2), &w).unwrap();
        assert_eq!(cc.t.max_abs(), 0.0);
        assert!(cc.connection_formula.iter().all(|v| *v == 0.0));
        assert!(cc.r_star_direct.max_abs() < 1e-14);
    }

    #[test]
    fn stereographic_factor_gives_unit_sphere() {
        let x = [0.3, -0.2, 0.5, 0.1];
        let v = seed(&x, 2);
        let r2 = crate::jet::dot(&v, &v);
        let w = (2.0 / (&r2 + 1.0)).ln();
        let cc = conformal_change(&flat(4, 2), &w).unwrap();
        assert!(cc.curvature_residual() < 1e-12, "{}", cc.curvature_residual());
        assert!(cc.connection_residual() < 1e-12);
        assert!(cc.duality_residual() < 1e-12);
        // R_* as a (0,4) tensor of g_* is the constant-curvature-1 tensor
        let e2w = (2.0 * w.value()).exp();
        let gs = DMatrix::identity(4, 4) * e2w;
        let c = Riemann::constant_curvature(&gs, 1.0);
        let direct = Riemann::from_fn(4, |i, j, k, l| cc.r_star_direct.get(i, j, k, l) * e2w);
        assert!(direct.max_diff(&c) < 1e-12 * c.max_abs());
    }
}
