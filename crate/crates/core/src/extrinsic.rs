//! Pointwise submanifold geometry: fundamental forms, normal frames, shape
//! operators, the normal connection and its curvature, and the intrinsic
//! curvature assembled through the Gauss equation.
//!
//! Every quantity is computed from order-3 jets of the immersion.  The normal
//! frame is built by pseudo Gram–Schmidt *on jets*, so its derivatives (and
//! hence the connection and curvature of the normal bundle) are exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvature::{CurvaturePack, Riemann};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::linalg::{jet_sdot, sdot, sym_eigen};
use crate::map::{evaluate_jets, SmoothMap};

/// Ambient space of an immersion, realized as a linear space with a
/// diagonal metric.  Lorentzian signature is `(−, +, …, +)` with time axis 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmbientSpace {
    /// `R^dim`.
    Euclidean { dim: usize },
    /// `L^dim`, total dimension `dim`, index 1.
    Lorentz { dim: usize },
    /// Sphere of curvature `c > 0` and dimension `dim`, radius `1/√c` in `R^{dim+1}`.
    Sphere { dim: usize, c: f64 },
    /// Hyperbolic space of curvature `c < 0`, the upper sheet of
    /// `⟪x,x⟫ = 1/c` in `L^{dim+1}`.
    Hyperbolic { dim: usize, c: f64 },
}

impl AmbientSpace {
    /// Dimension of the linear space the immersion lands in.
    pub fn realization_dim(&self) -> usize {
        match *self {
            AmbientSpace::Euclidean { dim } | AmbientSpace::Lorentz { dim } => dim,
            AmbientSpace::Sphere { dim, .. } | AmbientSpace::Hyperbolic { dim, .. } => dim + 1,
        }
    }

    /// Dimension of the ambient manifold itself.
    pub fn dim(&self) -> usize {
        match *self {
            AmbientSpace::Euclidean { dim }
            | AmbientSpace::Lorentz { dim }
            | AmbientSpace::Sphere { dim, .. }
            | AmbientSpace::Hyperbolic { dim, .. } => dim,
        }
    }

    pub fn signs(&self) -> Vec<f64> {
        let m = self.realization_dim();
        match self {
            AmbientSpace::Euclidean { .. } | AmbientSpace::Sphere { .. } => vec![1.0; m],
            AmbientSpace::Lorentz { .. } | AmbientSpace::Hyperbolic { .. } => {
                let mut s = vec![1.0; m];
                s[0] = -1.0;
                s
            }
        }
    }

    /// Sectional curvature of the ambient manifold.
    pub fn curvature(&self) -> f64 {
        match *self {
            AmbientSpace::Sphere { c, .. } | AmbientSpace::Hyperbolic { c, .. } => c,
            _ => 0.0,
        }
    }

    pub fn is_space_form(&self) -> bool {
        matches!(self, AmbientSpace::Sphere { .. } | AmbientSpace::Hyperbolic { .. })
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        sdot(&self.signs(), a, b)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AmbientSpace::Sphere { c, .. } if c <= 0.0 => {
                Err(Error::Parameter(format!("sphere curvature must be positive, got {c}")))
            }
            AmbientSpace::Hyperbolic { c, .. } if c >= 0.0 => {
                Err(Error::Parameter(format!("hyperbolic curvature must be negative, got {c}")))
            }
            _ => Ok(()),
        }
    }
}

/// Options controlling normal-frame construction.
#[derive(Clone, Debug, Default)]
pub struct FrameOptions {
    /// Ambient basis indices fed to Gram–Schmidt, in order.  When absent the
    /// order is chosen by largest residual at the evaluation point; pass the
    /// pivot of a nearby point to keep the frame smooth across a patch.
    pub pivot: Option<Vec<usize>>,
}

/// Pointwise extrinsic geometry at a chart point.
///
/// Index conventions: `sff[a][(i, j)] = ⟪α(∂_i, ∂_j), ξ_a⟫`, so that
/// `α = Σ_a ε_a sff[a] ξ_a` with `ε_a = ⟪ξ_a, ξ_a⟫ = ±1`.
#[derive(Clone, Debug)]
pub struct ExtrinsicData {
    pub point: Vec<f64>,
    pub ambient: AmbientSpace,
    pub n: usize,
    pub p: usize,
    pub position: DVector<f64>,
    /// Coordinate vectors `∂_i f`.
    pub tangents: Vec<DVector<f64>>,
    /// `∂_i∂_j f`, index `i * n + j`.
    pub second: Vec<DVector<f64>>,
    pub metric: DMatrix<f64>,
    pub metric_inv: DMatrix<f64>,
    /// `|∂_i f|`; these are the Lamé coefficients when the net is orthogonal.
    pub lame: Vec<f64>,
    pub normals: Vec<DVector<f64>>,
    pub normal_signs: Vec<f64>,
    pub sff: Vec<DMatrix<f64>>,
    /// Shape operators `A_a = g⁻¹ sff[a]` acting on chart coordinates.
    pub shape: Vec<DMatrix<f64>>,
    pub mean_curvature: DVector<f64>,
    /// `normal_connection[k][(a, b)] = ⟪∇⊥_{∂_k} ξ_a, ξ_b⟫`.
    pub normal_connection: Vec<DMatrix<f64>>,
    /// `∂_k g`, one matrix per `k`.
    pub dmetric: Vec<DMatrix<f64>>,
    /// `∂_k ∂_l g`, index `k * n + l`.
    pub d2metric: Vec<DMatrix<f64>>,
    /// `dsff[a][k] = ∂_k sff[a]` (with the frame differentiated too).
    pub dsff: Vec<Vec<DMatrix<f64>>>,
    /// `⟪R⊥(∂_i, ∂_j) ξ_a, ξ_b⟫` from differentiating the frame,
    /// index `((i * n + j) * p + a) * p + b`.
    pub rperp_frame: Vec<f64>,
    pub pivot: Vec<usize>,
}

impl ExtrinsicData {
    /// `α(∂_i, ∂_j)` as an ambient vector.
    pub fn alpha(&self, i: usize, j: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.position.len());
        for a in 0..self.p {
            v += &self.normals[a] * (self.normal_signs[a] * self.sff[a][(i, j)]);
        }
        v
    }

    /// `α(X, Y)` for chart-coordinate vectors.
    pub fn alpha_vec(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.position.len());
        for a in 0..self.p {
            let c = (x.transpose() * &self.sff[a] * y)[0];
            v += &self.normals[a] * (self.normal_signs[a] * c);
        }
        v
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.ambient.inner(a.as_slice(), b.as_slice())
    }

    /// Push a chart vector forward to the ambient space.
    pub fn push(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.position.len());
        for i in 0..self.n {
            v += &self.tangents[i] * x[i];
        }
        v
    }

    /// Coordinates of a normal vector in the frame: `⟪v, ξ_a⟫`.
    pub fn normal_coords(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.p, self.normals.iter().map(|x| self.inner(v, x)))
    }

    /// Normal vector with frame coordinates `⟪v, ξ_a⟫ = c_a`.
    pub fn from_normal_coords(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.position.len());
        for a in 0..self.p {
            v += &self.normals[a] * (self.normal_signs[a] * c[a]);
        }
        v
    }

    /// Projection of an ambient vector onto the normal space.
    pub fn normal_part(&self, v: &DVector<f64>) -> DVector<f64> {
        self.from_normal_coords(&self.normal_coords(v))
    }

    /// Shape operator of an arbitrary normal vector.
    pub fn shape_of(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        let c = self.normal_coords(xi);
        let mut a = DMatrix::zeros(self.n, self.n);
        for b in 0..self.p {
            a += &self.shape[b] * (self.normal_signs[b] * c[b]);
        }
        a
    }

    pub fn rperp(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.rperp_frame[((i * self.n + j) * self.p + a) * self.p + b]
    }

    /// `⟨[A_a, A_b] ∂_i, ∂_j⟩ = (h^b g⁻¹ h^a − h^a g⁻¹ h^b)_ij`.
    pub fn rperp_ricci(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        let m = &self.sff[b] * &self.metric_inv * &self.sff[a] - &self.sff[a] * &self.metric_inv * &self.sff[b];
        m[(i, j)]
    }

    /// Scale of the second fundamental form: `max_a ‖A_a‖` in an orthonormal frame.
    pub fn shape_scale(&self) -> f64 {
        let t = crate::linalg::orthonormal_frame(&self.metric).unwrap_or_else(|_| DMatrix::identity(self.n, self.n));
        self.sff.iter().map(|h| (t.transpose() * h * &t).norm()).fold(0.0, f64::max)
    }
}

#[inline]
fn jabs_sqrt(x: &Jet) -> Jet {
    if x.value() < 0.0 {
        (-x).sqrt()
    } else {
        x.sqrt()
    }
}

fn select_pivot(signs: &[f64], spanning: &[(Vec<f64>, f64)], count: usize, scale: f64) -> Result<Vec<usize>> {
    let m = signs.len();
    let mut basis: Vec<(Vec<f64>, f64)> = spanning.to_vec();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for b in (0..m).filter(|b| !chosen.contains(b)) {
            let mut r = vec![0.0; m];
            r[b] = 1.0;
            for (u, eps) in &basis {
                let c = eps * signs[b] * u[b];
                for k in 0..m {
                    r[k] -= c * u[k];
                }
            }
            let q = sdot(signs, &r, &r);
            if best.as_ref().is_none_or(|(_, bq, _)| q.abs() > bq.abs()) {
                best = Some((b, q, r));
            }
        }
        let (b, q, r) = best.ok_or_else(|| Error::Frame("ran out of ambient directions".into()))?;
        if q.abs() < 1e-10 * scale {
            return Err(Error::Frame(format!("residual norm {q:e} too small")));
        }
        let s = q.abs().sqrt();
        basis.push((r.iter().map(|x| x / s).collect(), q.signum()));
        chosen.push(b);
    }
    Ok(chosen)
}

/// Compute the extrinsic data of `map` at `point`, choosing the frame pivot locally.
pub fn fundamental_forms(map: &dyn SmoothMap, ambient: &AmbientSpace, point: &[f64]) -> Result<ExtrinsicData> {
    fundamental_forms_with(map, ambient, point, &FrameOptions::default())
}

pub fn fundamental_forms_with(
    map: &dyn SmoothMap,
    ambient: &AmbientSpace,
    point: &[f64],
    opts: &FrameOptions,
) -> Result<ExtrinsicData> {
    ambient.validate()?;
    let m = ambient.realization_dim();
    if map.codomain_dim() != m {
        return Err(Error::Dimension(format!(
            "map has {} components, ambient realization needs {m}",
            map.codomain_dim()
        )));
    }
    let jets = evaluate_jets(map, point, 3)?;
    from_jets(&jets, ambient, point, opts)
}

/// Extrinsic data from precomputed order-3 jets of an immersion.
pub fn from_jets(jets: &[Jet], ambient: &AmbientSpace, point: &[f64], opts: &FrameOptions) -> Result<ExtrinsicData> {
    let n = point.len();
    let m = ambient.realization_dim();
    let signs = ambient.signs();
    let space_form = ambient.is_space_form();
    if jets[0].order() < 3 {
        return Err(Error::Dimension("extrinsic data needs order-3 jets".into()));
    }
    let pos_val: Vec<f64> = jets.iter().map(Jet::value).collect();
    if space_form {
        let c = ambient.curvature();
        let q = sdot(&signs, &pos_val, &pos_val);
        if (q * c - 1.0).abs() > 1e-10 {
            return Err(Error::Parameter(format!(
                "immersion is off the model quadric: <<x,x>> c - 1 = {:e}",
                q * c - 1.0
            )));
        }
        if let AmbientSpace::Hyperbolic { .. } = ambient {
            if pos_val[0] <= 0.0 {
                return Err(Error::Parameter("immersion is on the lower hyperboloid sheet".into()));
            }
        }
    }
    let p = ambient.dim().checked_sub(n).ok_or_else(|| Error::Dimension("n exceeds ambient dimension".into()))?;

    // tangent jets (order 2)
    let tj: Vec<Vec<Jet>> = (0..n).map(|i| jets.iter().map(|c| c.partial(i)).collect()).collect();
    let tangents: Vec<DVector<f64>> = tj.iter().map(|t| DVector::from_iterator(m, t.iter().map(Jet::value))).collect();
    let metric = DMatrix::from_fn(n, n, |i, j| ambient.inner(tangents[i].as_slice(), tangents[j].as_slice()));
    let (ev, _) = sym_eigen(&metric);
    let scale = metric.diagonal().max().max(f64::MIN_POSITIVE);
    if ev[0] <= 1e-12 * scale {
        return Err(Error::ImmersionDegenerate { point: point.to_vec(), sigma: ev[0].max(0.0).sqrt() });
    }
    let metric_inv =
        metric.clone().try_inverse().ok_or_else(|| Error::ImmersionDegenerate { point: point.to_vec(), sigma: 0.0 })?;

    // orthonormal tangent jets, unit position jet
    let mut span: Vec<(Vec<Jet>, f64)> = Vec::with_capacity(n + 1 + p);
    for t in &tj {
        let mut r = t.clone();
        for (u, eps) in &span {
            let c = &jet_sdot(&signs, t, u) * *eps;
            for k in 0..m {
                r[k] = &r[k] - &(&c * &u[k]);
            }
        }
        let q = jet_sdot(&signs, &r, &r);
        let s = jabs_sqrt(&q).recip();
        span.push((r.iter().map(|x| x * &s).collect(), q.value().signum()));
    }
    if space_form {
        let pj: Vec<Jet> = jets.iter().map(|x| x.truncate(2)).collect();
        let q = jet_sdot(&signs, &pj, &pj);
        let s = jabs_sqrt(&q).recip();
        span.push((pj.iter().map(|x| x * &s).collect(), q.value().signum()));
    }
    let pivot = match &opts.pivot {
        Some(pv) => {
            if pv.len() != p || pv.iter().any(|&b| b >= m) {
                return Err(Error::Frame(format!("pivot {pv:?} does not fit a rank-{p} normal space")));
            }
            pv.clone()
        }
        None => {
            let spanning: Vec<(Vec<f64>, f64)> =
                span.iter().map(|(u, e)| (u.iter().map(Jet::value).collect(), *e)).collect();
            select_pivot(&signs, &spanning, p, 1.0)?
        }
    };
    let mut normal_jets: Vec<Vec<Jet>> = Vec::with_capacity(p);
    let mut normal_signs = Vec::with_capacity(p);
    let proto = tj[0][0].lift(0.0);
    for &b in &pivot {
        let mut r: Vec<Jet> = (0..m).map(|k| proto.lift(if k == b { 1.0 } else { 0.0 })).collect();
        for (u, eps) in span.iter().map(|(u, e)| (u, *e)).chain(normal_jets.iter().zip(normal_signs.iter().copied())) {
            let c = &u[b] * (eps * signs[b]);
            for k in 0..m {
                r[k] = &r[k] - &(&c * &u[k]);
            }
        }
        let q = jet_sdot(&signs, &r, &r);
        if q.value().abs() < 1e-10 {
            return Err(Error::Frame(format!("Gram-Schmidt breakdown on axis {b} (residual {:e})", q.value())));
        }
        let s = jabs_sqrt(&q).recip();
        normal_signs.push(q.value().signum());
        normal_jets.push(r.iter().map(|x| x * &s).collect());
    }
    let normals: Vec<DVector<f64>> =
        normal_jets.iter().map(|v| DVector::from_iterator(m, v.iter().map(Jet::value))).collect();

    // second derivatives (order 1), sff jets, metric jets
    let sj: Vec<Vec<Jet>> = (0..n * n).map(|ij| tj[ij / n].iter().map(|c| c.partial(ij % n)).collect()).collect();
    let second: Vec<DVector<f64>> = sj.iter().map(|s| DVector::from_iterator(m, s.iter().map(Jet::value))).collect();
    let nj1: Vec<Vec<Jet>> = normal_jets.iter().map(|v| v.iter().map(|x| x.truncate(1)).collect()).collect();
    let mut sff = vec![DMatrix::zeros(n, n); p];
    let mut dsff = vec![vec![DMatrix::zeros(n, n); n]; p];
    for a in 0..p {
        for i in 0..n {
            for j in i..n {
                let h = jet_sdot(&signs, &sj[i * n + j], &nj1[a]);
                sff[a][(i, j)] = h.value();
                sff[a][(j, i)] = h.value();
                for k in 0..n {
                    dsff[a][k][(i, j)] = h.d1(k);
                    dsff[a][k][(j, i)] = h.d1(k);
                }
            }
        }
    }
    let mut dmetric = vec![DMatrix::zeros(n, n); n];
    let mut d2metric = vec![DMatrix::zeros(n, n); n * n];
    for i in 0..n {
        for j in i..n {
            let gij = jet_sdot(&signs, &tj[i], &tj[j]);
            for k in 0..n {
                dmetric[k][(i, j)] = gij.d1(k);
                dmetric[k][(j, i)] = gij.d1(k);
                for l in 0..n {
                    d2metric[k * n + l][(i, j)] = gij.d2(k, l);
                    d2metric[k * n + l][(j, i)] = gij.d2(k, l);
                }
            }
        }
    }

    // normal connection as order-1 jets: raw[k][a][b] = ⟪∂_k ξ_a, ξ_b⟫
    let dn: Vec<Vec<Vec<Jet>>> =
        (0..n).map(|k| normal_jets.iter().map(|v| v.iter().map(|x| x.partial(k)).collect()).collect()).collect();
    let raw: Vec<Vec<Vec<Jet>>> = (0..n)
        .map(|k| (0..p).map(|a| (0..p).map(|b| jet_sdot(&signs, &dn[k][a], &nj1[b])).collect()).collect())
        .collect();
    let normal_connection: Vec<DMatrix<f64>> =
        (0..n).map(|k| DMatrix::from_fn(p, p, |a, b| raw[k][a][b].value())).collect();
    // ω_{ka}^c = ε_c raw[k][a][c]; R⊥_ij ξ_a = [∂_iω_ja^c − ∂_jω_ia^c + ω_ja^b ω_ib^c − ω_ia^b ω_jb^c] ξ_c
    let om = |k: usize, a: usize, c: usize| normal_signs[c] * raw[k][a][c].value();
    let dom = |d: usize, k: usize, a: usize, c: usize| normal_signs[c] * raw[k][a][c].d1(d);
    let mut rperp_frame = vec![0.0; n * n * p * p];
    for i in 0..n {
        for j in 0..n {
            for a in 0..p {
                for c in 0..p {
                    let mut v = dom(i, j, a, c) - dom(j, i, a, c);
                    for b in 0..p {
                        v += om(j, a, b) * om(i, b, c) - om(i, a, b) * om(j, b, c);
                    }
                    rperp_frame[((i * n + j) * p + a) * p + c] = normal_signs[c] * v;
                }
            }
        }
    }

    let shape: Vec<DMatrix<f64>> = sff.iter().map(|h| &metric_inv * h).collect();
    let mut mean_curvature = DVector::zeros(m);
    for a in 0..p {
        let tr = (&metric_inv * &sff[a]).trace() / n as f64;
        mean_curvature += &normals[a] * (normal_signs[a] * tr);
    }
    let lame = (0..n).map(|i| metric[(i, i)].sqrt()).collect();
    Ok(ExtrinsicData {
        point: point.to_vec(),
        ambient: ambient.clone(),
        n,
        p,
        position: DVector::from_vec(pos_val),
        tangents,
        second,
        metric,
        metric_inv,
        lame,
        normals,
        normal_signs,
        sff,
        shape,
        mean_curvature,
        normal_connection,
        dmetric,
        d2metric,
        dsff,
        rperp_frame,
        pivot,
    })
}

/// The two evaluations of the normal curvature and their disagreement.
#[derive(Clone, Debug)]
pub struct NormalCurvature {
    /// From differentiating the normal frame.
    pub frame: Vec<f64>,
    /// From shape-operator commutators.
    pub commutator: Vec<f64>,
    /// Largest entry of `frame` in an orthonormal tangent frame.
    pub norm: f64,
    pub disagreement: f64,
}

/// `R⊥` in an orthonormal tangent frame, computed both ways.
pub fn normal_curvature(ext: &ExtrinsicData) -> Result<NormalCurvature> {
    let (n, p) = (ext.n, ext.p);
    let t = crate::linalg::orthonormal_frame(&ext.metric)?;
    let mut frame = vec![0.0; n * n * p * p];
    let mut commutator = vec![0.0; n * n * p * p];
    let comms: Vec<Vec<DMatrix<f64>>> = (0..p)
        .map(|a| {
            (0..p)
                .map(|b| &ext.sff[b] * &ext.metric_inv * &ext.sff[a] - &ext.sff[a] * &ext.metric_inv * &ext.sff[b])
                .collect()
        })
        .collect();
    for a in 0..p {
        for b in 0..p {
            let raw = DMatrix::from_fn(n, n, |i, j| ext.rperp(i, j, a, b));
            let f = t.transpose() * raw * &t;
            let c = t.transpose() * &comms[a][b] * &t;
            for i in 0..n {
                for j in 0..n {
                    frame[((i * n + j) * p + a) * p + b] = f[(i, j)];
                    commutator[((i * n + j) * p + a) * p + b] = c[(i, j)];
                }
            }
        }
    }
    let norm = frame.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    let disagreement = frame.iter().zip(&commutator).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
    Ok(NormalCurvature { frame, commutator, norm, disagreement })
}

pub fn normal_connection_and_curvature(
    map: &dyn SmoothMap,
    ambient: &AmbientSpace,
    point: &[f64],
) -> Result<NormalCurvature> {
    normal_curvature(&fundamental_forms(map, ambient, point)?)
}

/// Riemann from the Gauss equation, Ricci both by contraction and by the
/// mean-curvature formula, scalar and Schouten curvature.
pub fn intrinsic_curvatures(ext: &ExtrinsicData) -> Result<CurvaturePack> {
    let n = ext.n;
    let c = ext.ambient.curvature();
    let g = &ext.metric;
    let alpha: Vec<DVector<f64>> = (0..n * n).map(|ij| ext.alpha(ij / n, ij % n)).collect();
    let a = |i: usize, j: usize| &alpha[i * n + j];
    let ip = |x: &DVector<f64>, y: &DVector<f64>| ext.inner(x, y);
    let riemann = Riemann::from_fn(n, |i, j, k, l| {
        ip(a(i, l), a(j, k)) - ip(a(i, k), a(j, l)) + c * (g[(i, l)] * g[(j, k)] - g[(i, k)] * g[(j, l)])
    });
    let h = &ext.mean_curvature;
    let gi = &ext.metric_inv;
    let formula = DMatrix::from_fn(n, n, |i, j| {
        let mut s = n as f64 * ip(a(i, j), h) + (n as f64 - 1.0) * c * g[(i, j)];
        for k in 0..n {
            for l in 0..n {
                s -= gi[(k, l)] * ip(a(i, k), a(j, l));
            }
        }
        s
    });
    CurvaturePack::new(g.clone(), riemann, Some(formula))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{ChartDomain, FnMap};

    fn sphere4() -> FnMap {
        // round unit S^4 by spherical angles
        FnMap::new(ChartDomain::around(&[1.0, 1.1, 1.2, 0.4], 0.3), 5, |x| {
            let (s0, c0) = (x[0].sin(), x[0].cos());
            let (s1, c1) = (x[1].sin(), x[1].cos());
            let (s2, c2) = (x[2].sin(), x[2].cos());
            let (s3, c3) = (x[3].sin(), x[3].cos());
            vec![c0.clone(), &s0 * &c1, &(&s0 * &s1) * &c2, &(&(&s0 * &s1) * &s2) * &c3, &(&(&s0 * &s1) * &s2) * &s3]
        })
    }

    #[test]
    fn round_sphere_is_umbilical() {
        let e = fundamental_forms(&sphere4(), &AmbientSpace::Euclidean { dim: 5 }, &[1.0, 1.1, 1.2, 0.4]).unwrap();
        assert_eq!(e.p, 1);
        let eta = &e.alpha(0, 0) / e.metric[(0, 0)];
        assert!((eta.norm() - 1.0).abs() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                let d = e.alpha(i, j) - &eta * e.metric[(i, j)];
                assert!(d.norm() < 1e-12);
            }
        }
        // inward normal
        assert!((eta + &e.position).norm() < 1e-12);
        let k = intrinsic_curvatures(&e).unwrap();
        assert!((k.scalar - 12.0).abs() < 1e-10);
        assert!(k.ricci_disagreement().unwrap() < 1e-10);
        let l = k.schouten().unwrap();
        assert!((l - &e.metric * 0.5).iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn flat_inclusion_has_no_curvature() {
        let f = FnMap::new(ChartDomain::around(&[0.0; 4], 1.0), 6, |x| {
            let z = x[0].lift(0.0);
            vec![x[0].clone(), x[1].clone(), x[2].clone(), x[3].clone(), z.clone(), z]
        });
        let e = fundamental_forms(&f, &AmbientSpace::Euclidean { dim: 6 }, &[0.1, 0.2, -0.3, 0.4]).unwrap();
        assert!(e.sff.iter().all(|h| h.norm() == 0.0));
        assert_eq!(e.mean_curvature.norm(), 0.0);
        let k = intrinsic_curvatures(&e).unwrap();
        assert_eq!(k.riemann.max_abs(), 0.0);
    }

    #[test]
    fn normal_curvature_routes_agree_with_nonflat_bundle() {
        // holomorphic curve z -> (z, z^2) in R^4 has nonzero normal curvature
        let f = FnMap::new(ChartDomain::around(&[0.0, 0.0], 1.0), 4, |x| {
            let (u, v) = (&x[0], &x[1]);
            vec![u.clone(), v.clone(), &(u * u) - &(v * v), &(u * v) * 2.0]
        });
        let e = fundamental_forms(&f, &AmbientSpace::Euclidean { dim: 4 }, &[0.3, -0.2]).unwrap();
        let r = normal_curvature(&e).unwrap();
        assert!(r.norm > 0.1, "expected a curved normal bundle, got {}", r.norm);
        assert!(r.disagreement < 1e-10 * r.norm, "routes disagree by {}", r.disagreement);
    }

    #[test]
    fn hypersurface_has_flat_normal_bundle() {
        let e = fundamental_forms(&sphere4(), &AmbientSpace::Euclidean { dim: 5 }, &[1.0, 1.1, 1.2, 0.4]).unwrap();
        assert!(normal_curvature(&e).unwrap().norm < 1e-12);
    }

    #[test]
    fn clifford_torus_in_sphere_uses_space_form_reduction() {
        // S^1(1/√2) × S^1(1/√2) ⊂ S^3 is minimal with |A|^2 = 2
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let f = FnMap::new(ChartDomain::around(&[0.3, 0.7], 0.5), 4, move |x| {
            vec![x[0].cos() * r, x[0].sin() * r, x[1].cos() * r, x[1].sin() * r]
        });
        let e = fundamental_forms(&f, &AmbientSpace::Sphere { dim: 3, c: 1.0 }, &[0.3, 0.7]).unwrap();
        assert_eq!(e.p, 1);
        assert!(e.mean_curvature.norm() < 1e-12);
        let t = e.shape[0].clone();
        assert!(((&t * &t).trace() - 2.0).abs() < 1e-12);
        let k = intrinsic_curvatures(&e).unwrap();
        assert!(k.riemann.max_abs() < 1e-12);
        assert!(k.ricci_disagreement().unwrap() < 1e-12);
    }
}
