//! Ribaucour transforms of flat holonomic submanifolds of the light cone.
//!
//! Data `(φ, β)` with `β` normal satisfy the condition
//! `α_F(grad φ, X) + ∇⊥_X β = 0` for all `X`.  Writing `β = Σ ε_a b_a ξ_a`
//! in a parallel normal frame, the condition becomes the linear system
//! `∂_i b_a + Σ_j (grad φ)^j ⟪α(∂_j, ∂_i), ξ_a⟫ = 0`, discretized here on the
//! chart grid.  The transform is `F̃ = F − 2 ν φ ℱ` with `ℱ = F_* grad φ + β`
//! and `ν⁻¹ = ⟪ℱ, ℱ⟫`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::CatalogItem;
use crate::conformal::conformal_flatness_test;
use crate::curvature::{riemann_from_metric, CurvaturePack, Riemann};
use crate::error::{Error, Result};
use crate::extrinsic::{
    fundamental_forms, fundamental_forms_with, intrinsic_curvatures, AmbientSpace, ExtrinsicData, FrameOptions,
};
use crate::jet::Jet;
use crate::lightcone::{build_cone_model, flat_lift, project_from_cone, ConeModel, POLE_REL_EPS};
use crate::linalg::{jet_sdot, orthonormal_frame, sdot, singular_values, sym_eigen};
use crate::map::{evaluate_jets, ChartDomain, FnMap, MapRef, SmoothMap};
use crate::principal::{holonomicity_check, principal_decomposition, PrincipalOptions};

/// Solver and check settings.
#[derive(Clone, Debug)]
pub struct RibaucourOptions {
    /// Null-space threshold is `threshold_factor · h² · σ_max`.
    pub threshold_factor: f64,
    /// Singular values within this factor of the threshold make the dimension ambiguous.
    pub ambiguity_ratio: f64,
    /// RK4 substeps per grid edge when transporting the normal frame.
    pub substeps: usize,
    /// Allowed finite-difference parallelism defect of the frame, in units of `h²`.
    pub frame_tol: f64,
    /// `|⟪ℱ,ℱ⟫| < singular_eps · scale` is a singular transform.
    pub singular_eps: f64,
    /// `σ_min(dF̃) < rank_tol · σ_max(dF)` is a degenerate transform.
    pub rank_tol: f64,
    /// Largest unknown count handled by the dense eigensolver.
    pub dense_limit: usize,
    /// Minimal normalized principal-normal gap for the solver's precondition.
    pub min_normal_gap: f64,
    /// Refuse inputs on which the condition loses rigidity (one principal
    /// normal, or nearly coincident ones).  Transforms alone do not need this.
    pub check_rigidity: bool,
    pub principal: PrincipalOptions,
}

impl Default for RibaucourOptions {
    fn default() -> Self {
        RibaucourOptions {
            threshold_factor: 100.0,
            ambiguity_ratio: 3.0,
            substeps: 2,
            frame_tol: 50.0,
            singular_eps: 1e-8,
            rank_tol: 1e-8,
            dense_limit: 50_000,
            min_normal_gap: 1e-4,
            check_rigidity: true,
            principal: PrincipalOptions::default(),
        }
    }
}

/// Finite-difference weights along one axis: centered inside, second-order
/// one-sided on the two boundary layers.
fn stencil(i: usize, len: usize, h: f64) -> [(usize, f64); 3] {
    let c = 0.5 / h;
    if i == 0 {
        [(0, -3.0 * c), (1, 4.0 * c), (2, -c)]
    } else if i + 1 == len {
        [(i, 3.0 * c), (i - 1, -4.0 * c), (i - 2, c)]
    } else {
        [(i - 1, -c), (i + 1, c), (i, 0.0)]
    }
}

/// Flat grid indices and weights of `∂_axis` at grid point `pt`.
fn derivative_stencil(domain: &ChartDomain, pt: usize, axis: usize) -> [(usize, f64); 3] {
    let idx = domain.multi_index(pt);
    let h = domain.spacing()[axis];
    let mut out = stencil(idx[axis], domain.grid_shape[axis], h);
    for e in out.iter_mut() {
        let mut j = idx.clone();
        j[axis] = e.0;
        e.0 = domain.flat_index(&j);
    }
    out
}

fn fd_scalar(domain: &ChartDomain, f: &[f64], pt: usize, axis: usize) -> f64 {
    derivative_stencil(domain, pt, axis).iter().map(|(q, w)| w * f[*q]).sum()
}

fn fd_vector(domain: &ChartDomain, f: &[DVector<f64>], pt: usize, axis: usize) -> DVector<f64> {
    let mut out = DVector::zeros(f[pt].len());
    for (q, w) in derivative_stencil(domain, pt, axis) {
        if w != 0.0 {
            out.axpy(w, &f[q], 1.0);
        }
    }
    out
}

/// Geometry of a cone immersion sampled on its chart grid, with a parallel
/// orthonormal normal frame.
#[derive(Clone, Debug)]
pub struct GridGeometry {
    pub domain: ChartDomain,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub signs: Vec<f64>,
    pub normal_signs: Vec<f64>,
    pub position: Vec<DVector<f64>>,
    pub tangents: Vec<Vec<DVector<f64>>>,
    pub metric: Vec<DMatrix<f64>>,
    pub metric_inv: Vec<DMatrix<f64>>,
    /// Christoffel symbols `Γ^l_ij`, index `(l * n + i) * n + j`.
    pub christoffel: Vec<Vec<f64>>,
    /// Parallel normal frame `ξ_a`.
    pub frame: Vec<Vec<DVector<f64>>>,
    /// `⟪α(∂_j, ∂_i), ξ_a⟫`, index `(j * n + i) * p + a`.
    pub alpha: Vec<Vec<f64>>,
    /// Principal distribution of each coordinate axis at the grid center.
    pub axis_cluster: Vec<usize>,
    /// Finite-difference parallelism defect `max |⟪∂_k ξ_a, ξ_b⟫|`.
    pub frame_residual: f64,
    /// Smallest normalized principal-normal gap seen on the grid.
    pub normal_gap: f64,
    pub center: usize,
}

impl GridGeometry {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        sdot(&self.signs, a.as_slice(), b.as_slice())
    }

    pub fn spacing(&self) -> f64 {
        self.domain.spacing().iter().cloned().fold(0.0, f64::max)
    }

    /// Chart gradient `g⁻¹ Dφ` of a scalar grid field.
    pub fn gradient(&self, f: &[f64], pt: usize) -> DVector<f64> {
        let d = DVector::from_iterator(self.n, (0..self.n).map(|k| fd_scalar(&self.domain, f, pt, k)));
        &self.metric_inv[pt] * d
    }

    /// `Σ ε_a b_a ξ_a`.
    pub fn normal_vector(&self, b: &[f64], pt: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for a in 0..self.p {
            out.axpy(self.normal_signs[a] * b[a], &self.frame[pt][a], 1.0);
        }
        out
    }

    pub fn push(&self, x: &DVector<f64>, pt: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for i in 0..self.n {
            out.axpy(x[i], &self.tangents[pt][i], 1.0);
        }
        out
    }
}

/// Transport matrix step: `dR/dt = −K R` with `K[b][a] = ε_b raw(a, b)`.
fn connection_matrix(ext: &ExtrinsicData, axis: usize, dir: f64) -> DMatrix<f64> {
    let p = ext.p;
    let raw = &ext.normal_connection[axis];
    DMatrix::from_fn(p, p, |b, a| dir * ext.normal_signs[b] * raw[(a, b)])
}

fn rk4_step(r: &DMatrix<f64>, k0: &DMatrix<f64>, kh: &DMatrix<f64>, k1: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let f = |k: &DMatrix<f64>, x: &DMatrix<f64>| -(k * x);
    let a = f(k0, r);
    let b = f(kh, &(r + &a * (0.5 * dt)));
    let c = f(kh, &(r + &b * (0.5 * dt)));
    let d = f(k1, &(r + &c * dt));
    r + (a + b * 2.0 + c * 2.0 + d) * (dt / 6.0)
}

/// Sample `lift` on the grid of `domain`, build a parallel normal frame by
/// transporting a pointwise frame from the grid center, and check the
/// solver's preconditions.
pub fn grid_geometry(
    lift: &dyn SmoothMap,
    ambient: &AmbientSpace,
    domain: &ChartDomain,
    opts: &RibaucourOptions,
) -> Result<GridGeometry> {
    let n = domain.dim();
    if domain.grid_shape.iter().any(|&s| s < 5) {
        return Err(Error::Parameter(format!(
            "Ribaucour grid needs at least 5 points per axis, got {:?}",
            domain.grid_shape
        )));
    }
    let shape = &domain.grid_shape;
    let cidx: Vec<usize> = shape.iter().map(|s| s / 2).collect();
    let center = domain.flat_index(&cidx);
    let ext0 = fundamental_forms_with(lift, ambient, &domain.grid_point(center), &FrameOptions::default())?;
    let fo = FrameOptions { pivot: Some(ext0.pivot.clone()) };
    let (p, m) = (ext0.p, ambient.realization_dim());
    let len = domain.grid_len();

    let exts: Vec<ExtrinsicData> = (0..len)
        .into_par_iter()
        .map(|q| fundamental_forms_with(lift, ambient, &domain.grid_point(q), &fo))
        .collect::<Result<_>>()?;

    let mut normal_gap = f64::INFINITY;
    let mut axis_cluster = vec![0; n];
    for (q, ext) in exts.iter().enumerate() {
        let dec = principal_decomposition(ext, &opts.principal)?;
        if opts.check_rigidity && dec.k() < 2 {
            return Err(Error::DegenerateInput(format!(
                "umbilical at grid point {q}: one principal normal, condition has infinitely many solutions"
            )));
        }
        normal_gap = normal_gap.min(dec.min_gap / dec.scale.max(f64::MIN_POSITIVE));
        if q == center {
            for (a, slot) in axis_cluster.iter_mut().enumerate() {
                let mut e = DVector::zeros(n);
                e[a] = 1.0;
                *slot = dec.cluster_of(&e, &ext.metric);
            }
        }
    }
    if opts.check_rigidity && normal_gap <= opts.min_normal_gap {
        return Err(Error::DegenerateInput(format!(
            "principal normals nearly coincide (normalized gap {normal_gap:e})"
        )));
    }

    // transport tree: parent is one step toward the center on the last differing axis
    let mut order: Vec<usize> = (0..len).collect();
    let dist = |q: usize| -> usize { domain.multi_index(q).iter().zip(&cidx).map(|(a, b)| a.abs_diff(*b)).sum() };
    order.sort_by_key(|&q| (dist(q), q));
    let parent = |q: usize| -> Option<(usize, usize, f64)> {
        let idx = domain.multi_index(q);
        let d = (0..n).rev().find(|&d| idx[d] != cidx[d])?;
        let mut j = idx.clone();
        let dir = if idx[d] > cidx[d] { 1.0 } else { -1.0 };
        j[d] = if idx[d] > cidx[d] { idx[d] - 1 } else { idx[d] + 1 };
        Some((domain.flat_index(&j), d, dir))
    };

    let s = opts.substeps.max(1);
    let hs = domain.spacing();
    // connection matrices at the intermediate points of every tree edge
    let mids: Vec<Vec<DMatrix<f64>>> = (0..len)
        .into_par_iter()
        .map(|q| -> Result<Vec<DMatrix<f64>>> {
            let Some((par, d, dir)) = parent(q) else { return Ok(Vec::new()) };
            let x0 = domain.grid_point(par);
            (1..2 * s)
                .map(|j| {
                    let mut x = x0.clone();
                    x[d] += dir * hs[d] * j as f64 / (2 * s) as f64;
                    let e = fundamental_forms_with(lift, ambient, &x, &fo)?;
                    Ok(connection_matrix(&e, d, dir * hs[d]))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rot: Vec<Option<DMatrix<f64>>> = vec![None; len];
    rot[center] = Some(DMatrix::identity(p, p));
    for &q in &order {
        let Some((par, d, dir)) = parent(q) else { continue };
        let mut r = rot[par].clone().ok_or_else(|| Error::Frame("transport order broken".into()))?;
        let ks: Vec<DMatrix<f64>> = std::iter::once(connection_matrix(&exts[par], d, dir * hs[d]))
            .chain(mids[q].iter().cloned())
            .chain(std::iter::once(connection_matrix(&exts[q], d, dir * hs[d])))
            .collect();
        let dt = 1.0 / s as f64;
        for j in 0..s {
            r = rk4_step(&r, &ks[2 * j], &ks[2 * j + 1], &ks[2 * j + 2], dt);
        }
        rot[q] = Some(r);
    }

    let normal_signs = ext0.normal_signs.clone();
    let mut frame = Vec::with_capacity(len);
    let mut alpha = Vec::with_capacity(len);
    let mut christoffel = Vec::with_capacity(len);
    for (q, ext) in exts.iter().enumerate() {
        let r = rot[q].as_ref().expect("every grid point is reached");
        let xi: Vec<DVector<f64>> = (0..p)
            .map(|c| {
                let mut v = DVector::zeros(m);
                for a in 0..p {
                    v.axpy(r[(a, c)], &ext.normals[a], 1.0);
                }
                v
            })
            .collect();
        let mut al = vec![0.0; n * n * p];
        for j in 0..n {
            for i in 0..n {
                for c in 0..p {
                    al[(j * n + i) * p + c] = (0..p).map(|a| r[(a, c)] * ext.sff[a][(j, i)]).sum();
                }
            }
        }
        let mut gam = vec![0.0; n * n * n];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    gam[(l * n + i) * n + j] = (0..n)
                        .map(|k| {
                            ext.metric_inv[(l, k)]
                                * 0.5
                                * (ext.dmetric[i][(j, k)] + ext.dmetric[j][(i, k)] - ext.dmetric[k][(i, j)])
                        })
                        .sum();
                }
            }
        }
        frame.push(xi);
        alpha.push(al);
        christoffel.push(gam);
    }

    let mut geo = GridGeometry {
        domain: domain.clone(),
        n,
        p,
        m,
        signs: ambient.signs(),
        normal_signs,
        position: exts.iter().map(|e| e.position.clone()).collect(),
        tangents: exts.iter().map(|e| e.tangents.clone()).collect(),
        metric: exts.iter().map(|e| e.metric.clone()).collect(),
        metric_inv: exts.iter().map(|e| e.metric_inv.clone()).collect(),
        christoffel,
        frame,
        alpha,
        axis_cluster,
        frame_residual: 0.0,
        normal_gap,
        center,
    };

    // parallelism defect of the transported frame
    let scale = exts.iter().flat_map(|e| e.normal_connection.iter().map(|c| c.amax())).fold(0.0, f64::max).max(1.0);
    let mut worst = 0.0f64;
    for q in 0..len {
        for k in 0..n {
            for a in 0..p {
                let col: Vec<DVector<f64>> = geo.frame.iter().map(|f| f[a].clone()).collect();
                let d = fd_vector(domain, &col, q, k);
                for b in 0..p {
                    worst = worst.max(geo.inner(&d, &geo.frame[q][b]).abs());
                }
            }
        }
    }
    geo.frame_residual = worst;
    let h = geo.spacing();
    if worst > opts.frame_tol * h * h * scale {
        return Err(Error::Frame(format!(
            "transported frame is not parallel: defect {worst:e} exceeds {:e}",
            opts.frame_tol * h * h * scale
        )));
    }
    Ok(geo)
}

/// Sparse discretization of the condition, one row per grid edge and
/// normal index `a`, centered at the edge midpoint.
#[derive(Clone, Debug)]
pub struct ConditionOperator {
    pub rows: usize,
    pub cols: usize,
    /// `(column, value)` pairs of each row.
    pub entries: Vec<Vec<(usize, f64)>>,
    /// Lower endpoint of each row's edge.
    pub row_point: Vec<usize>,
    pub unknowns_per_point: usize,
}

impl ConditionOperator {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.entries.par_iter().map(|r| r.iter().map(|(c, v)| v * x[*c]).sum()).collect()
    }

    /// Dense `AᵀA`.
    pub fn gram(&self) -> faer::Mat<f64> {
        let mut g = faer::Mat::<f64>::zeros(self.cols, self.cols);
        for row in &self.entries {
            for &(i, vi) in row {
                for &(j, vj) in row {
                    g[(i, j)] += vi * vj;
                }
            }
        }
        g
    }
}

fn col(p: usize, pt: usize, q: usize) -> usize {
    pt * (1 + p) + q
}

/// Assemble the discrete condition operator.
///
/// On the edge from `x` to `x + h e_i` the equation reads
/// `(b_a(x+h e_i) − b_a(x))/h + Σ_k C_k (D_k φ)_mid = 0` with
/// `C_k = Σ_j g^{jk} ⟪α(∂_j,∂_i), ξ_a⟫` averaged over the endpoints,
/// `(D_i φ)_mid` the edge difference and the other derivatives averaged
/// nodal stencils.  Equations on edges couple neighbours directly, which
/// rules out the odd-even modes of nodal centered differences.
pub fn condition_operator(geo: &GridGeometry) -> ConditionOperator {
    let (n, p) = (geo.n, geo.p);
    let dom = &geo.domain;
    let hs = dom.spacing();
    let coeff = |pt: usize, i: usize, a: usize, k: usize| -> f64 {
        let gi = &geo.metric_inv[pt];
        (0..n).map(|j| gi[(j, k)] * geo.alpha[pt][(j * n + i) * p + a]).sum()
    };
    let rows: Vec<(usize, Vec<(usize, f64)>)> = (0..geo.len())
        .into_par_iter()
        .flat_map_iter(|pt| {
            let idx = dom.multi_index(pt);
            let mut rows = Vec::new();
            for i in 0..n {
                if idx[i] + 1 >= dom.grid_shape[i] {
                    continue;
                }
                let mut j = idx.clone();
                j[i] += 1;
                let up = dom.flat_index(&j);
                let hi = hs[i];
                for a in 0..p {
                    let mut r: Vec<(usize, f64)> = vec![(col(p, up, 1 + a), 1.0 / hi), (col(p, pt, 1 + a), -1.0 / hi)];
                    for k in 0..n {
                        let c = 0.5 * (coeff(pt, i, a, k) + coeff(up, i, a, k));
                        if k == i {
                            r.push((col(p, up, 0), c / hi));
                            r.push((col(p, pt, 0), -c / hi));
                        } else {
                            for end in [pt, up] {
                                for (q, w) in derivative_stencil(dom, end, k) {
                                    if w != 0.0 {
                                        r.push((col(p, q, 0), 0.5 * c * w));
                                    }
                                }
                            }
                        }
                    }
                    rows.push((pt, r));
                }
            }
            rows
        })
        .collect();
    let (row_point, entries): (Vec<usize>, Vec<Vec<(usize, f64)>>) = rows.into_iter().unzip();
    ConditionOperator { rows: entries.len(), cols: geo.len() * (1 + p), entries, row_point, unknowns_per_point: 1 + p }
}

/// Grid fields `(φ, β)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RibaucourData {
    pub phi: Vec<f64>,
    /// `b_a = ⟪β, ξ_a⟫` at each grid point.
    pub b: Vec<Vec<f64>>,
    /// Mean of `⟪F,β⟫ − φ`.
    pub c: f64,
    /// Spread of `⟪F,β⟫ − φ` over the grid.
    pub c_spread: f64,
    pub condition_residual: f64,
}

impl RibaucourData {
    pub fn from_fields(geo: &GridGeometry, op: &ConditionOperator, phi: Vec<f64>, b: Vec<Vec<f64>>) -> Self {
        let mut d = RibaucourData { phi, b, c: 0.0, c_spread: 0.0, condition_residual: 0.0 };
        d.refresh(geo, op);
        d
    }

    pub fn from_vector(geo: &GridGeometry, op: &ConditionOperator, x: &[f64]) -> Self {
        let k = 1 + geo.p;
        let phi = (0..geo.len()).map(|q| x[q * k]).collect();
        let b = (0..geo.len()).map(|q| x[q * k + 1..(q + 1) * k].to_vec()).collect();
        Self::from_fields(geo, op, phi, b)
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.phi.iter().zip(&self.b).flat_map(|(f, b)| std::iter::once(*f).chain(b.iter().copied())).collect()
    }

    /// Recompute `c`, its spread and the condition residual.
    pub fn refresh(&mut self, geo: &GridGeometry, op: &ConditionOperator) {
        let cs: Vec<f64> = (0..geo.len())
            .map(|q| geo.inner(&geo.position[q], &geo.normal_vector(&self.b[q], q)) - self.phi[q])
            .collect();
        let (lo, hi) = cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        self.c = cs.iter().sum::<f64>() / cs.len() as f64;
        self.c_spread = hi - lo;
        self.condition_residual = check_condition(geo, op, self).relative;
    }

    /// `(φ + t, β)`, which solves the condition whenever `(φ, β)` does.
    pub fn shifted(&self, geo: &GridGeometry, op: &ConditionOperator, t: f64) -> Self {
        Self::from_fields(geo, op, self.phi.iter().map(|f| f + t).collect(), self.b.clone())
    }

    pub fn scaled(&self, geo: &GridGeometry, op: &ConditionOperator, t: f64) -> Self {
        Self::from_fields(
            geo,
            op,
            self.phi.iter().map(|f| f * t).collect(),
            self.b.iter().map(|b| b.iter().map(|x| x * t).collect()).collect(),
        )
    }

    pub fn combine(&self, other: &Self, geo: &GridGeometry, op: &ConditionOperator, s: f64, t: f64) -> Self {
        Self::from_fields(
            geo,
            op,
            self.phi.iter().zip(&other.phi).map(|(a, b)| s * a + t * b).collect(),
            self.b.iter().zip(&other.b).map(|(a, b)| a.iter().zip(b).map(|(x, y)| s * x + t * y).collect()).collect(),
        )
    }
}

/// Per-point condition residual.
#[derive(Clone, Debug)]
pub struct ResidualField {
    /// Largest condition component over the edges leaving each grid point.
    pub per_point: Vec<f64>,
    pub max: f64,
    /// `max` divided by the largest data component.
    pub relative: f64,
}

pub fn check_condition(geo: &GridGeometry, op: &ConditionOperator, data: &RibaucourData) -> ResidualField {
    let x = data.to_vector();
    let r = op.apply(&x);
    let mut per_point = vec![0.0f64; geo.len()];
    for (v, &q) in r.iter().zip(&op.row_point) {
        per_point[q] = per_point[q].max(v.abs());
    }
    let max = per_point.iter().cloned().fold(0.0, f64::max);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    ResidualField { per_point, max, relative: max / scale }
}

/// Grid data of the constant-vector family `φ = ⟪F,z⟫ + t`, `β = z^⊥ + sF`.
pub fn constant_vector_data(
    geo: &GridGeometry,
    op: &ConditionOperator,
    z: &DVector<f64>,
    t: f64,
    s: f64,
) -> RibaucourData {
    let phi = geo.position.iter().map(|f| geo.inner(f, z) + t).collect();
    let b = (0..geo.len())
        .map(|q| {
            let v = z + &geo.position[q] * s;
            geo.frame[q].iter().map(|xi| geo.inner(&v, xi)).collect()
        })
        .collect();
    RibaucourData::from_fields(geo, op, phi, b)
}

/// The analytic solutions `(⟪F,e_k⟫, e_k^⊥)`, `(1, 0)` and `(0, F)`.
pub fn analytic_family(geo: &GridGeometry, op: &ConditionOperator) -> Vec<(String, RibaucourData)> {
    let mut out = Vec::with_capacity(geo.m + 2);
    for k in 0..geo.m {
        let mut z = DVector::zeros(geo.m);
        z[k] = 1.0;
        out.push((format!("e{k}"), constant_vector_data(geo, op, &z, 0.0, 0.0)));
    }
    let zero = DVector::zeros(geo.m);
    out.push(("shift".into(), constant_vector_data(geo, op, &zero, 1.0, 0.0)));
    out.push(("position".into(), constant_vector_data(geo, op, &zero, 0.0, 1.0)));
    out
}

/// Computed null space of the condition operator.
#[derive(Clone, Debug)]
pub struct NullSpace {
    /// Orthonormal basis vectors in the operator's unknown layout.
    pub basis: Vec<Vec<f64>>,
    /// Ascending singular values (all of them on the dense path).
    pub spectrum: Vec<f64>,
    pub sigma_max: f64,
    pub threshold: f64,
}

impl NullSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `‖P v‖ / ‖v‖` for the orthogonal projector onto the span.
    pub fn capture(&self, v: &[f64]) -> f64 {
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let p2: f64 = self.basis.iter().map(|b| b.iter().zip(v).map(|(x, y)| x * y).sum::<f64>().powi(2)).sum();
        p2.sqrt() / nv.max(f64::MIN_POSITIVE)
    }
}

/// Null space by singular-value thresholding at `threshold_factor · h² · σ_max`.
pub fn solve_condition_nullspace(
    geo: &GridGeometry,
    op: &ConditionOperator,
    opts: &RibaucourOptions,
) -> Result<NullSpace> {
    if op.cols > opts.dense_limit {
        return solve_nullspace_iterative(geo, op, opts);
    }
    let g = op.gram();
    let eig = g
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let spectrum: Vec<f64> = (0..op.cols).map(|i| s[i].max(0.0).sqrt()).collect();
    let sigma_max = *spectrum.last().unwrap_or(&0.0);
    let h = geo.spacing();
    let threshold = opts.threshold_factor * h * h * sigma_max;
    if spectrum.iter().any(|&x| x > threshold / opts.ambiguity_ratio && x < threshold * opts.ambiguity_ratio) {
        return Err(Error::DimensionAmbiguity { threshold, spectrum: spectrum.iter().take(32).cloned().collect() });
    }
    let d = spectrum.iter().filter(|&&x| x < threshold).count();
    let basis = (0..d).map(|c| (0..op.cols).map(|r| u[(r, c)]).collect()).collect();
    Ok(NullSpace { basis, spectrum, sigma_max, threshold })
}

/// Null space for large grids: shift-inverted block subspace iteration on
/// `AᵀA` with a sparse Cholesky factorization.
fn solve_nullspace_iterative(geo: &GridGeometry, op: &ConditionOperator, opts: &RibaucourOptions) -> Result<NullSpace> {
    use faer::sparse::{SparseColMat, Triplet};
    let nc = op.cols;
    // AᵀA in sparse form
    let mut acc: std::collections::BTreeMap<(usize, usize), f64> = std::collections::BTreeMap::new();
    let mut rowsum = vec![0.0f64; nc];
    for row in &op.entries {
        for &(i, vi) in row {
            for &(j, vj) in row {
                *acc.entry((i, j)).or_insert(0.0) += vi * vj;
                rowsum[i] += (vi * vj).abs();
            }
        }
    }
    // Gershgorin bound on ‖A‖²
    let sigma_max = rowsum.iter().cloned().fold(0.0, f64::max).sqrt();
    let h = geo.spacing();
    let threshold = opts.threshold_factor * h * h * sigma_max;
    let mu = 1e-3 * threshold * threshold;
    let trips: Vec<Triplet<usize, usize, f64>> =
        acc.iter().map(|(&(i, j), &v)| Triplet::new(i, j, if i == j { v + mu } else { v })).collect();
    let gm = SparseColMat::<usize, f64>::try_new_from_triplets(nc, nc, &trips)
        .map_err(|e| Error::LinearAlgebra(format!("sparse assembly failed: {e:?}")))?;
    let llt = gm
        .sp_cholesky(faer::Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("sparse Cholesky failed: {e:?}")))?;
    let gram_apply = |x: &faer::Mat<f64>| -> faer::Mat<f64> {
        let mut out = faer::Mat::<f64>::zeros(nc, x.ncols());
        for c in 0..x.ncols() {
            let xs: Vec<f64> = (0..nc).map(|r| x[(r, c)]).collect();
            let ax = op.apply(&xs);
            for (row, v) in op.entries.iter().zip(&ax) {
                for &(i, w) in row {
                    out[(i, c)] += w * v;
                }
            }
        }
        out
    };
    let mut block = 2 * (geo.m + geo.p + 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b1a5);
    loop {
        let mut q = faer::Mat::<f64>::from_fn(nc, block, |_, _| {
            rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
        });
        for _ in 0..8 {
            use faer::linalg::solvers::Solve;
            llt.solve_in_place(q.as_mut());
            q = q.qr().compute_thin_Q();
        }
        // Rayleigh–Ritz
        let gq = gram_apply(&q);
        let small = q.transpose() * &gq;
        let eig = small
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("Ritz eigensolver failed: {e:?}")))?;
        let s = eig.S().column_vector();
        let spectrum: Vec<f64> = (0..block).map(|i| s[i].max(0.0).sqrt()).collect();
        let d = spectrum.iter().filter(|&&x| x < threshold).count();
        if d + 4 > block && block < nc / 2 {
            block *= 2;
            continue;
        }
        if spectrum.iter().any(|&x| x > threshold / opts.ambiguity_ratio && x < threshold * opts.ambiguity_ratio) {
            return Err(Error::DimensionAmbiguity { threshold, spectrum });
        }
        let vecs = &q * eig.U();
        let basis = (0..d).map(|c| (0..nc).map(|r| vecs[(r, c)]).collect()).collect();
        return Ok(NullSpace { basis, spectrum, sigma_max, threshold });
    }
}

/// Transform of grid data.
#[derive(Clone, Debug)]
pub struct TransformResult {
    pub values: Vec<DVector<f64>>,
    /// `ν_R = 1/⟪ℱ,ℱ⟫`.
    pub rib_scale: Vec<f64>,
    pub frame_field: Vec<DVector<f64>>,
    /// `max |⟪F̃,F̃⟫|`.
    pub cone_defect: f64,
    /// `max |⟪F̃,F̃⟫ − 4ν_R φ(φ − ⟪F,β⟫)|`.
    pub defect_identity: f64,
    /// `σ_min(dF̃) / σ_max(dF)`, smallest over the grid.
    pub rank_margin: f64,
    /// Largest relative difference of the induced metrics of `F̃` and `F`.
    pub metric_residual: f64,
    /// Finite-difference curvature of `F̃` in an orthonormal frame.
    pub curvature_residual: f64,
}

fn max_rel_metric(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

/// Induced metrics of grid values, by finite differences.
fn grid_metrics(domain: &ChartDomain, signs: &[f64], values: &[DVector<f64>]) -> Vec<DMatrix<f64>> {
    let n = domain.dim();
    (0..values.len())
        .map(|q| {
            let d: Vec<DVector<f64>> = (0..n).map(|k| fd_vector(domain, values, q, k)).collect();
            DMatrix::from_fn(n, n, |i, j| sdot(signs, d[i].as_slice(), d[j].as_slice()))
        })
        .collect()
}

/// Riemann tensor of a grid metric by nested finite differences, and the
/// largest component in an orthonormal frame over the points at least two
/// steps from the boundary.
pub fn grid_curvature(domain: &ChartDomain, metrics: &[DMatrix<f64>]) -> Result<(Vec<Riemann>, f64)> {
    let n = domain.dim();
    let len = metrics.len();
    let inv: Vec<DMatrix<f64>> = metrics
        .iter()
        .map(|g| g.clone().try_inverse().ok_or_else(|| Error::LinearAlgebra("singular grid metric".into())))
        .collect::<Result<_>>()?;
    let comp = |i: usize, j: usize| -> Vec<f64> { metrics.iter().map(|g| g[(i, j)]).collect() };
    let gcomp: Vec<Vec<f64>> = (0..n * n).map(|ij| comp(ij / n, ij % n)).collect();
    // dg[q][k][(i,j)]
    let dg: Vec<Vec<DMatrix<f64>>> = (0..len)
        .map(|q| (0..n).map(|k| DMatrix::from_fn(n, n, |i, j| fd_scalar(domain, &gcomp[i * n + j], q, k))).collect())
        .collect();
    // Γ^l_ij as grid fields
    let mut gam = vec![vec![0.0; len]; n * n * n];
    for q in 0..len {
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    gam[(l * n + i) * n + j][q] = (0..n)
                        .map(|k| inv[q][(l, k)] * 0.5 * (dg[q][i][(j, k)] + dg[q][j][(i, k)] - dg[q][k][(i, j)]))
                        .sum();
                }
            }
        }
    }
    let g3 = |l: usize, i: usize, j: usize, q: usize| gam[(l * n + i) * n + j][q];
    // points whose nested stencils are all centered, when the grid has any
    let deep = domain.grid_shape.iter().all(|&s| s >= 5);
    let inner =
        |q: usize| !deep || domain.multi_index(q).iter().zip(&domain.grid_shape).all(|(i, s)| *i >= 2 && *i + 2 < *s);
    let mut out = Vec::with_capacity(len);
    let mut worst = 0.0f64;
    for q in 0..len {
        let mut r = Riemann::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let up: Vec<f64> = (0..n)
                        .map(|l| {
                            let mut v = fd_scalar(domain, &gam[(l * n + j) * n + k], q, i)
                                - fd_scalar(domain, &gam[(l * n + i) * n + k], q, j);
                            for mm in 0..n {
                                v += g3(l, i, mm, q) * g3(mm, j, k, q) - g3(l, j, mm, q) * g3(mm, i, k, q);
                            }
                            v
                        })
                        .collect();
                    for l in 0..n {
                        r.set(i, j, k, l, (0..n).map(|mm| metrics[q][(l, mm)] * up[mm]).sum());
                    }
                }
            }
        }
        if inner(q) {
            worst = worst.max(orthonormal_riemann_max(&r, &metrics[q])?);
        }
        out.push(r);
    }
    Ok((out, worst))
}

fn orthonormal_riemann_max(r: &Riemann, g: &DMatrix<f64>) -> Result<f64> {
    let t = orthonormal_frame(g)?;
    let n = r.n;
    let cols: Vec<DVector<f64>> = (0..n).map(|c| t.column(c).into_owned()).collect();
    let mut m = 0.0f64;
    for a in 0..n {
        for b in a + 1..n {
            for c in 0..n {
                for d in c + 1..n {
                    m = m.max(r.apply(&cols[a], &cols[b], &cols[c], &cols[d]).abs());
                }
            }
        }
    }
    Ok(m)
}

/// `F̃ = F − 2νφℱ` on the grid.
///
/// `ℱ = F_* grad φ + β` uses the finite-difference gradient of `φ`.
pub fn transform(geo: &GridGeometry, data: &RibaucourData, opts: &RibaucourOptions) -> Result<TransformResult> {
    let ff: Vec<DVector<f64>> =
        (0..geo.len()).map(|q| geo.push(&geo.gradient(&data.phi, q), q) + geo.normal_vector(&data.b[q], q)).collect();
    transform_with_frame(geo, data, ff, opts)
}

/// `ℱ = z + sF` for the constant-vector data, exactly.
pub fn constant_vector_frame(geo: &GridGeometry, z: &DVector<f64>, s: f64) -> Vec<DVector<f64>> {
    geo.position.iter().map(|f| z + f * s).collect()
}

/// Transform with a caller-supplied `ℱ` field.
pub fn transform_with_frame(
    geo: &GridGeometry,
    data: &RibaucourData,
    frame_field: Vec<DVector<f64>>,
    opts: &RibaucourOptions,
) -> Result<TransformResult> {
    let len = geo.len();
    let mut rib = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(len);
    let fscale = geo.position.iter().map(|f| f.amax()).fold(0.0, f64::max);
    for (q, ff) in frame_field.iter().enumerate() {
        let nn = geo.inner(ff, ff);
        let sc = ff.norm_squared().max(f64::MIN_POSITIVE);
        if nn.abs() < opts.singular_eps * sc {
            return Err(Error::SingularTransform { index: q, value: nn });
        }
        let nu = 1.0 / nn;
        values.push(&geo.position[q] - ff * (2.0 * nu * data.phi[q]));
        rib.push(nu);
    }
    let mut cone_defect = 0.0f64;
    let mut defect_identity = 0.0f64;
    for q in 0..len {
        let d = geo.inner(&values[q], &values[q]);
        let fb = geo.inner(&geo.position[q], &geo.normal_vector(&data.b[q], q));
        let pred = 4.0 * rib[q] * data.phi[q] * (data.phi[q] - fb);
        cone_defect = cone_defect.max(d.abs() / fscale.powi(2).max(f64::MIN_POSITIVE));
        defect_identity = defect_identity.max((d - pred).abs() / (fscale.powi(2) + pred.abs()));
    }
    let n = geo.n;
    let mut rank_margin = f64::INFINITY;
    for q in 0..len {
        let d = DMatrix::from_fn(geo.m, n, |r, k| fd_vector(&geo.domain, &values, q, k)[r]);
        let t = DMatrix::from_fn(geo.m, n, |r, k| geo.tangents[q][k][r]);
        let sd = singular_values(&d);
        let st = singular_values(&t);
        let smin = sd.iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = st.iter().cloned().fold(0.0, f64::max);
        let margin = smin / smax.max(f64::MIN_POSITIVE);
        if margin < opts.rank_tol {
            return Err(Error::DegenerateTransform { index: q, margin });
        }
        rank_margin = rank_margin.min(margin);
    }
    let gt = grid_metrics(&geo.domain, &geo.signs, &values);
    let metric_residual = gt.iter().zip(&geo.metric).map(|(a, b)| max_rel_metric(a, b)).fold(0.0, f64::max);
    let curvature_residual = grid_curvature(&geo.domain, &gt).map(|(_, w)| w).unwrap_or(f64::INFINITY);
    Ok(TransformResult {
        values,
        rib_scale: rib,
        frame_field,
        cone_defect,
        defect_identity,
        rank_margin,
        metric_residual,
        curvature_residual,
    })
}

/// `max |⟪F̃,F̃⟫|`; errors when this is small while `|c|` is not, or conversely.
pub fn cone_preservation_check(data: &RibaucourData, result: &TransformResult, tol: f64) -> Result<f64> {
    let inside = result.cone_defect <= tol;
    let c_zero = data.c.abs() <= tol.sqrt() && data.c_spread <= tol.sqrt();
    if inside != c_zero && data.phi.iter().any(|f| f.abs() > tol) {
        return Err(Error::NotApplicable(format!(
            "cone defect {:e} inconsistent with light-cone constant {:e}",
            result.cone_defect, data.c
        )));
    }
    Ok(result.cone_defect)
}

/// Exact transform map for the constant-vector data `(⟪F,z⟫ + t, z^⊥ + sF)`,
/// for which `ℱ = z + sF`.
pub fn analytic_transform(lift: MapRef, signs: Vec<f64>, z: DVector<f64>, t: f64, s: f64) -> MapRef {
    let m = lift.codomain_dim();
    let dom = lift.domain().clone();
    FnMap::new(dom, m, move |x| {
        let f = lift.eval(x);
        let proto = &f[0];
        let zj: Vec<Jet> = z.iter().map(|v| proto.lift(*v)).collect();
        let phi = &jet_sdot(&signs, &f, &zj) + t;
        let ff: Vec<Jet> = zj.iter().zip(&f).map(|(a, b)| a + &(b * s)).collect();
        let nn = jet_sdot(&signs, &ff, &ff);
        let k = &(&phi * 2.0) / &nn;
        f.iter().zip(&ff).map(|(a, b)| a - &(&k * b)).collect()
    })
    .into_ref()
}

/// Exact diagnostics of an analytic transform at sample points.
#[derive(Clone, Debug, Default)]
pub struct AnalyticDiagnostics {
    pub cone_defect: f64,
    pub metric_residual: f64,
    /// Largest Riemann component in an orthonormal frame.
    pub curvature_residual: f64,
    pub min_frame_norm: f64,
}

pub fn analytic_diagnostics(
    lift: &dyn SmoothMap,
    transformed: &dyn SmoothMap,
    signs: &[f64],
    points: &[Vec<f64>],
    z: &DVector<f64>,
    s: f64,
) -> Result<AnalyticDiagnostics> {
    let mut out = AnalyticDiagnostics { min_frame_norm: f64::INFINITY, ..Default::default() };
    for x in points {
        let fj = evaluate_jets(lift, x, 1)?;
        let tj = evaluate_jets(transformed, x, 3)?;
        let n = x.len();
        let fv: Vec<f64> = fj.iter().map(Jet::value).collect();
        let tv: Vec<f64> = tj.iter().map(Jet::value).collect();
        let scale = fv.iter().fold(0.0f64, |a, b| a.max(b.abs())).powi(2);
        out.cone_defect = out.cone_defect.max(sdot(signs, &tv, &tv).abs() / scale);
        let ff: Vec<f64> = z.iter().zip(&fv).map(|(a, b)| a + s * b).collect();
        out.min_frame_norm = out.min_frame_norm.min(sdot(signs, &ff, &ff).abs());
        let d1 = |v: &[Jet], i: usize| v.iter().map(|c| c.d1(i)).collect::<Vec<f64>>();
        let g = DMatrix::from_fn(n, n, |i, j| sdot(signs, &d1(&fj, i), &d1(&fj, j)));
        let gt = DMatrix::from_fn(n, n, |i, j| sdot(signs, &d1(&tj, i), &d1(&tj, j)));
        out.metric_residual = out.metric_residual.max(max_rel_metric(&gt, &g));
        let tan: Vec<Vec<Jet>> = (0..n).map(|i| tj.iter().map(|c| c.partial(i)).collect()).collect();
        let gj: Vec<Vec<Jet>> = (0..n).map(|i| (0..n).map(|j| jet_sdot(signs, &tan[i], &tan[j])).collect()).collect();
        let r = riemann_from_metric(&gj)?;
        out.curvature_residual = out.curvature_residual.max(orthonormal_riemann_max(&r, &gt)?);
    }
    Ok(out)
}

/// One candidate for the flatness filter.
#[derive(Clone, Debug)]
pub enum Candidate {
    Analytic { label: String, z: DVector<f64>, t: f64, s: f64 },
    Grid { label: String, data: RibaucourData },
}

impl Candidate {
    pub fn label(&self) -> &str {
        match self {
            Candidate::Analytic { label, .. } | Candidate::Grid { label, .. } => label,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub label: String,
    pub curvature_residual: f64,
    pub retained: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub outcomes: Vec<FilterOutcome>,
    /// Tolerance used for grid candidates (analytic ones use `analytic_tol`).
    pub grid_tol: f64,
    pub analytic_tol: f64,
    /// Finite-difference curvature of `F` itself, the grid noise floor.
    pub grid_floor: f64,
    pub retained: usize,
}

/// Keep candidates whose transform has flat induced metric.  Grid candidates
/// are also combined pairwise at a few angles.
pub fn flatness_filter(
    geo: &GridGeometry,
    op: &ConditionOperator,
    lift: &MapRef,
    candidates: &[Candidate],
    analytic_tol: f64,
    opts: &RibaucourOptions,
) -> Result<FilterReport> {
    let (_, floor) = grid_curvature(&geo.domain, &geo.metric)?;
    let grid_tol = (10.0 * floor).max(analytic_tol);
    let points: Vec<Vec<f64>> = geo.domain.grid_points();
    let mut outcomes = Vec::new();
    let mut grid_data: Vec<(&str, &RibaucourData)> = Vec::new();
    for c in candidates {
        let res = match c {
            Candidate::Analytic { z, t, s, .. } => {
                let map = analytic_transform(lift.clone(), geo.signs.clone(), z.clone(), *t, *s);
                analytic_diagnostics(lift.as_ref(), map.as_ref(), &geo.signs, &points, z, *s)
                    .map(|d| (d.curvature_residual, analytic_tol))
            }
            Candidate::Grid { data, label } => {
                grid_data.push((label.as_str(), data));
                transform(geo, data, opts).map(|r| (r.curvature_residual, grid_tol))
            }
        };
        outcomes.push(match res {
            Ok((r, tol)) => {
                FilterOutcome { label: c.label().into(), curvature_residual: r, retained: r <= tol, error: None }
            }
            Err(e) => FilterOutcome {
                label: c.label().into(),
                curvature_residual: f64::NAN,
                retained: false,
                error: Some(e.to_string()),
            },
        });
    }
    for a in 0..grid_data.len() {
        for b in a + 1..grid_data.len() {
            for j in [1, 2, 3, 5, 6, 7] {
                let th = std::f64::consts::PI * j as f64 / 8.0;
                let d = grid_data[a].1.combine(grid_data[b].1, geo, op, th.cos(), th.sin());
                let label = format!("{}*cos({j}pi/8)+{}*sin({j}pi/8)", grid_data[a].0, grid_data[b].0);
                outcomes.push(match transform(geo, &d, opts) {
                    Ok(r) => FilterOutcome {
                        label,
                        curvature_residual: r.curvature_residual,
                        retained: r.curvature_residual <= grid_tol,
                        error: None,
                    },
                    Err(e) => FilterOutcome {
                        label,
                        curvature_residual: f64::NAN,
                        retained: false,
                        error: Some(e.to_string()),
                    },
                });
            }
        }
    }
    let retained = outcomes.iter().filter(|o| o.retained).count();
    Ok(FilterReport { outcomes, grid_tol, analytic_tol, grid_floor: floor, retained })
}

/// Compatibility residual: off-diagonal Hessian blocks of `φ` between
/// different principal distributions, relative to the Hessian and to the
/// size of the data and the gradient of `φ` over the box.
pub fn compatibility_residual(geo: &GridGeometry, data: &RibaucourData) -> f64 {
    let n = geo.n;
    let dphi: Vec<Vec<f64>> =
        (0..n).map(|k| (0..geo.len()).map(|q| fd_scalar(&geo.domain, &data.phi, q, k)).collect()).collect();
    let mut cross = 0.0f64;
    let mut scale = 0.0f64;
    for q in 0..geo.len() {
        for i in 0..n {
            for j in 0..n {
                let mut h = fd_scalar(&geo.domain, &dphi[j], q, i);
                for k in 0..n {
                    h -= geo.christoffel[q][(k * n + i) * n + j] * dphi[k][q];
                }
                scale = scale.max(h.abs());
                if geo.axis_cluster[i] != geo.axis_cluster[j] {
                    cross = cross.max(h.abs());
                }
            }
        }
    }
    let width = geo.spacing() * (geo.domain.grid_shape.iter().cloned().max().unwrap_or(2) - 1) as f64;
    let grad = dphi.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let size = data.phi.iter().chain(data.b.iter().flatten()).fold(0.0f64, |m, v| m.max(v.abs()));
    cross / scale.max(grad / width).max(size / (width * width)).max(f64::MIN_POSITIVE)
}

/// Settings of [`conformally_flat_family`].
#[derive(Clone, Debug)]
pub struct FamilyOptions {
    /// Number of reflection members; zero stops after the null space.
    pub count: usize,
    /// Number of non-analytic null-space directions tried as grid members.
    pub grid_candidates: usize,
    /// Half-width of the chart box around the item's center.
    pub half_width: f64,
    pub grid: usize,
    pub seed: u64,
    /// Curvature tolerance for analytic candidates.
    pub analytic_tol: f64,
    pub quadruple_trials: usize,
    pub ribaucour: RibaucourOptions,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            count: 6,
            grid_candidates: 3,
            half_width: 0.02,
            grid: 5,
            seed: 7,
            analytic_tol: 1e-8,
            quadruple_trials: 20,
            ribaucour: RibaucourOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NullSpaceReport {
    pub unknowns: usize,
    pub equations: usize,
    pub dim: usize,
    /// `N + 3`, the guaranteed lower bound.
    pub lower_bound: usize,
    pub threshold: f64,
    pub sigma_max: f64,
    pub spectrum_head: Vec<f64>,
    /// Projection of each analytic solution onto the span.
    pub analytic_capture: Vec<(String, f64)>,
    /// Largest relative condition residual over the analytic family.
    pub analytic_residual: f64,
    pub spacing: f64,
    pub frame_residual: f64,
    /// Compatibility residual over the basis.
    pub compatibility: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyMember {
    pub label: String,
    /// `identity`, `reflection` or `grid`.
    pub kind: String,
    pub c: f64,
    pub cone_defect: f64,
    pub defect_identity: Option<f64>,
    pub metric_residual: f64,
    pub curvature_residual: f64,
    pub retained: bool,
    /// Quadruple identity of the projected immersion.
    pub quadruple_residual: Option<f64>,
    pub holonomic_offdiag: Option<f64>,
    /// Largest `|f̃ − f|` on the grid (identity member only).
    pub identity_defect: Option<f64>,
    pub poles: usize,
    /// Projected immersion sampled on the grid (row-major, `N` values per point).
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
    pub error: Option<String>,
}

impl FamilyMember {
    fn failed(label: String, kind: &str, e: Error) -> Self {
        FamilyMember {
            label,
            kind: kind.into(),
            c: f64::NAN,
            cone_defect: f64::NAN,
            defect_identity: None,
            metric_residual: f64::NAN,
            curvature_residual: f64::NAN,
            retained: false,
            quadruple_residual: None,
            holonomic_offdiag: None,
            identity_defect: None,
            poles: 0,
            samples: Vec::new(),
            error: Some(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyReport {
    pub item: String,
    pub n: usize,
    pub ambient_dim: usize,
    pub domain: ChartDomain,
    pub nullspace: NullSpaceReport,
    pub filter: FilterReport,
    pub algebra: AlgebraChecks,
    pub members: Vec<FamilyMember>,
}

/// Algebraic identities of the transform on reflection data `z = e₁`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AlgebraChecks {
    /// Cone defect of the grid reflection (`c = 0`).
    pub reflection_cone_defect: f64,
    /// Cone defect of the shifted data `(φ + 1, β)`, which leaves the cone.
    pub shifted_cone_defect: f64,
    /// `⟪F̃,F̃⟫` against `4ν_R φ(φ − ⟪F,β⟫)` for the shifted data.
    pub shifted_defect_identity: f64,
    /// `max |F̃(tφ, tβ) − F̃(φ, β)|`, relative, for `t = 2.5`.
    pub scaling_invariance: f64,
}

fn algebra_checks(geo: &GridGeometry, op: &ConditionOperator, opts: &RibaucourOptions) -> Result<AlgebraChecks> {
    let mut z = DVector::zeros(geo.m);
    z[1] = 1.0;
    let fr = constant_vector_frame(geo, &z, 0.0);
    let d = constant_vector_data(geo, op, &z, 0.0, 0.0);
    let r = transform_with_frame(geo, &d, fr.clone(), opts)?;
    let ds = constant_vector_data(geo, op, &z, 1.0, 0.0);
    let rs = transform_with_frame(geo, &ds, fr.clone(), opts)?;
    let t = 2.5;
    let dt = d.scaled(geo, op, t);
    let rt = transform_with_frame(geo, &dt, fr.iter().map(|v| v * t).collect(), opts)?;
    let scaling = r
        .values
        .iter()
        .zip(&rt.values)
        .map(|(a, b)| (a - b).amax() / a.amax().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(AlgebraChecks {
        reflection_cone_defect: r.cone_defect,
        shifted_cone_defect: rs.cone_defect,
        shifted_defect_identity: rs.defect_identity,
        scaling_invariance: scaling,
    })
}

/// Sample `map` on the grid, masking poles.
fn project_samples(
    map: &dyn SmoothMap,
    factor: &dyn SmoothMap,
    points: &[Vec<f64>],
    eps: f64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut poles = 0;
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        let s = evaluate_jets(factor, x, 0)?[0].value();
        if s.abs() < eps {
            poles += 1;
            out.push(vec![f64::NAN; map.codomain_dim()]);
        } else {
            out.push(crate::map::evaluate(map, x)?);
        }
    }
    Ok((out, poles))
}

fn projected_checks(
    proj: &MapRef,
    big_n: usize,
    points: &[Vec<f64>],
    trials: usize,
    seed: u64,
    opts: &RibaucourOptions,
) -> Result<(f64, f64)> {
    let amb = AmbientSpace::Euclidean { dim: big_n };
    let mut packs: Vec<CurvaturePack> = Vec::with_capacity(points.len());
    let mut pivot: Option<Vec<usize>> = None;
    for x in points {
        let ext = fundamental_forms_with(proj.as_ref(), &amb, x, &FrameOptions { pivot: pivot.clone() })
            .or_else(|_| fundamental_forms_with(proj.as_ref(), &amb, x, &FrameOptions::default()))?;
        pivot = Some(ext.pivot.clone());
        packs.push(intrinsic_curvatures(&ext)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fl = conformal_flatness_test(&packs, trials, 1e-12, &mut rng)?;
    let hol = holonomicity_check(proj.as_ref(), &amb, points, 1e-6, &opts.principal)?;
    Ok((fl.residual, hol.offdiag))
}

/// Lift → null space → `c = 0` slice → transform → flatness filter →
/// projection, with per-member checks.
pub fn conformally_flat_family(item: &CatalogItem, opts: &FamilyOptions) -> Result<FamilyReport> {
    let cs = item
        .conformal
        .as_ref()
        .ok_or_else(|| Error::NotApplicable(format!("{} has no known conformal factor", item.name)))?;
    let AmbientSpace::Euclidean { dim: big_n } = item.ambient else {
        return Err(Error::NotApplicable("family construction needs a Euclidean ambient".into()));
    };
    let n = item.dim();
    if n < 4 {
        return Err(Error::NotApplicable(format!("family construction needs n >= 4, have {n}")));
    }
    let center = fundamental_forms(item.map.as_ref(), &item.ambient, &item.domain().center())?;
    if principal_decomposition(&center, &opts.ribaucour.principal)?.k() < 2 {
        return Err(Error::NotApplicable(
            "totally umbilical: the construction needs a principal net with at least two principal normals".into(),
        ));
    }
    let domain = ChartDomain::around(&item.domain().center(), opts.half_width).with_uniform_grid(opts.grid);
    let item = item.with_domain(domain.clone());
    let cs = item.conformal.clone().unwrap_or_else(|| cs.clone());
    let model: ConeModel = build_cone_model(big_n)?;
    let points = domain.grid_points();
    let (li, _) = flat_lift(item.map.clone(), &cs, &model, &points)?;
    let geo = grid_geometry(li.lift.as_ref(), &model.ambient(), &domain, &opts.ribaucour)?;
    let op = condition_operator(&geo);
    let ns = solve_condition_nullspace(&geo, &op, &opts.ribaucour)?;
    let fam = analytic_family(&geo, &op);
    let capture: Vec<(String, f64)> = fam.iter().map(|(l, d)| (l.clone(), ns.capture(&d.to_vector()))).collect();
    let analytic_residual = fam.iter().map(|(_, d)| d.condition_residual).fold(0.0, f64::max);
    let basis_data: Vec<RibaucourData> = ns.basis.iter().map(|b| RibaucourData::from_vector(&geo, &op, b)).collect();
    let compatibility = basis_data.iter().map(|d| compatibility_residual(&geo, d)).fold(0.0, f64::max);
    let nullspace = NullSpaceReport {
        unknowns: op.cols,
        equations: op.rows,
        dim: ns.dim(),
        lower_bound: big_n + 3,
        threshold: ns.threshold,
        sigma_max: ns.sigma_max,
        spectrum_head: ns.spectrum.iter().take(24).cloned().collect(),
        analytic_capture: capture,
        analytic_residual,
        spacing: geo.spacing(),
        frame_residual: geo.frame_residual,
        compatibility,
    };

    let algebra = algebra_checks(&geo, &op, &opts.ribaucour)?;
    if opts.count == 0 {
        return Ok(FamilyReport {
            item: item.name.clone(),
            n,
            ambient_dim: big_n,
            domain,
            nullspace,
            filter: FilterReport::default(),
            algebra,
            members: Vec::new(),
        });
    }

    let pole_eps = POLE_REL_EPS;
    let mut members = Vec::new();

    // identity: φ = 0, β a parallel normal, F̃ = F
    let unit = vec![identity_normal(&geo); geo.len()];
    let idd = RibaucourData::from_fields(&geo, &op, vec![0.0; geo.len()], unit);
    members.push(match transform(&geo, &idd, &opts.ribaucour) {
        Ok(r) => {
            let proj = project_from_cone(li.lift.clone(), &model, pole_eps);
            let (samples, poles) = project_samples(proj.map.as_ref(), proj.factor.as_ref(), &points, pole_eps)?;
            let orig: Vec<Vec<f64>> =
                points.iter().map(|x| crate::map::evaluate(item.map.as_ref(), x)).collect::<Result<_>>()?;
            let mut defect = 0.0f64;
            for (q, (a, b)) in samples.iter().zip(&orig).enumerate() {
                let fv = proj.factor.eval(&crate::map::seed(&points[q], 0))[0].value();
                let tv: Vec<f64> = (1..=big_n).map(|k| r.values[q][k] / fv).collect();
                for k in 0..big_n {
                    defect = defect.max((a[k] - b[k]).abs()).max((tv[k] - b[k]).abs());
                }
            }
            FamilyMember {
                label: "identity".into(),
                kind: "identity".into(),
                c: idd.c,
                cone_defect: r.cone_defect,
                defect_identity: Some(r.defect_identity),
                metric_residual: r.metric_residual,
                curvature_residual: r.curvature_residual,
                retained: true,
                quadruple_residual: None,
                holonomic_offdiag: None,
                identity_defect: Some(defect),
                poles,
                samples,
                error: None,
            }
        }
        Err(e) => FamilyMember::failed("identity".into(), "identity", e),
    });

    // reflections through coordinate hyperplanes, then seeded spacelike z
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for j in 0..opts.count {
        let mut z = DVector::zeros(geo.m);
        if j < big_n {
            z[1 + j] = 1.0;
        } else {
            loop {
                for k in 0..geo.m {
                    z[k] = rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
                }
                if geo.inner(&z, &z) > 0.5 * z.norm_squared() {
                    break;
                }
            }
            z /= geo.inner(&z, &z).sqrt();
        }
        candidates.push(Candidate::Analytic { label: format!("reflection{j}"), z, t: 0.0, s: 0.0 });
    }
    // non-analytic null-space directions, shifted to c = 0
    let fam_vecs: Vec<Vec<f64>> = fam.iter().map(|(_, d)| d.to_vector()).collect();
    let residual_dirs = complement_directions(&ns.basis, &fam_vecs, opts.grid_candidates);
    for (j, v) in residual_dirs.iter().enumerate() {
        let d = RibaucourData::from_vector(&geo, &op, v);
        let d = d.shifted(&geo, &op, d.c);
        candidates.push(Candidate::Grid { label: format!("nullspace{j}"), data: d });
    }
    let filter = flatness_filter(&geo, &op, &li.lift, &candidates, opts.analytic_tol, &opts.ribaucour)?;

    for (cand, out) in candidates.iter().zip(&filter.outcomes) {
        let member = match cand {
            Candidate::Analytic { label, z, t, s } => {
                let run = || -> Result<FamilyMember> {
                    let map = analytic_transform(li.lift.clone(), geo.signs.clone(), z.clone(), *t, *s);
                    let diag = analytic_diagnostics(li.lift.as_ref(), map.as_ref(), &geo.signs, &points, z, *s)?;
                    let data = constant_vector_data(&geo, &op, z, *t, *s);
                    let proj = project_from_cone(map, &model, pole_eps);
                    let (samples, poles) = project_samples(proj.map.as_ref(), proj.factor.as_ref(), &points, pole_eps)?;
                    let ok: Vec<Vec<f64>> =
                        points.iter().zip(&samples).filter(|(_, s)| s[0].is_finite()).map(|(x, _)| x.clone()).collect();
                    let (p2, hol) =
                        projected_checks(&proj.map, big_n, &ok, opts.quadruple_trials, opts.seed, &opts.ribaucour)?;
                    Ok(FamilyMember {
                        label: label.clone(),
                        kind: "reflection".into(),
                        c: data.c,
                        cone_defect: diag.cone_defect,
                        defect_identity: None,
                        metric_residual: diag.metric_residual,
                        curvature_residual: diag.curvature_residual,
                        retained: out.retained,
                        quadruple_residual: Some(p2),
                        holonomic_offdiag: Some(hol),
                        identity_defect: None,
                        poles,
                        samples,
                        error: None,
                    })
                };
                run().unwrap_or_else(|e| FamilyMember::failed(label.clone(), "reflection", e))
            }
            Candidate::Grid { label, data } => match transform(&geo, data, &opts.ribaucour) {
                Ok(r) => {
                    let samples = r
                        .values
                        .iter()
                        .map(|v| {
                            let s = v[big_n + 1] - v[0];
                            (1..=big_n).map(|k| v[k] / s).collect()
                        })
                        .collect();
                    FamilyMember {
                        label: label.clone(),
                        kind: "grid".into(),
                        c: data.c,
                        cone_defect: r.cone_defect,
                        defect_identity: Some(r.defect_identity),
                        metric_residual: r.metric_residual,
                        curvature_residual: r.curvature_residual,
                        retained: out.retained,
                        quadruple_residual: None,
                        holonomic_offdiag: None,
                        identity_defect: None,
                        poles: 0,
                        samples,
                        error: None,
                    }
                }
                Err(e) => FamilyMember::failed(label.clone(), "grid", e),
            },
        };
        members.push(member);
    }
    Ok(FamilyReport { item: item.name.clone(), n, ambient_dim: big_n, domain, nullspace, filter, algebra, members })
}

/// Frame coefficients of a parallel normal `β` with `⟪F,β⟫ = 0` and
/// `⟪β,β⟫ ≠ 0`, preferring the largest `|⟪β,β⟫|`.
fn identity_normal(geo: &GridGeometry) -> Vec<f64> {
    let q = geo.center;
    let f: DVector<f64> = DVector::from_iterator(
        geo.p,
        (0..geo.p).map(|a| geo.normal_signs[a] * geo.inner(&geo.position[q], &geo.frame[q][a])),
    );
    let fu = f.normalize();
    let mut best = (vec![0.0; geo.p], 0.0);
    for a in 0..geo.p {
        let mut b = DVector::zeros(geo.p);
        b[a] = 1.0;
        let b = &b - &fu * fu[a];
        let nb = b.norm();
        if nb < 1e-8 {
            continue;
        }
        let b = b / nb;
        let sq: f64 = (0..geo.p).map(|c| geo.normal_signs[c] * b[c] * b[c]).sum();
        if sq.abs() > best.1 {
            best = (b.iter().cloned().collect(), sq.abs());
        }
    }
    best.0
}

/// Up to `count` orthonormal directions of `span(basis)` orthogonal to `exclude`.
fn complement_directions(basis: &[Vec<f64>], exclude: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    if basis.is_empty() || count == 0 {
        return Vec::new();
    }
    let d = basis.len();
    // coordinates of the excluded vectors in the basis
    let ex =
        DMatrix::from_fn(d, exclude.len(), |i, j| basis[i].iter().zip(&exclude[j]).map(|(a, b)| a * b).sum::<f64>());
    let (ev, vecs) = sym_eigen(&(&ex * ex.transpose()));
    let top = ev.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for c in 0..d {
        if ev[c] > 1e-6 * top || out.len() >= count {
            continue;
        }
        let coeff = vecs.column(c);
        let len = basis[0].len();
        let v: Vec<f64> = (0..len).map(|r| (0..d).map(|i| coeff[i] * basis[i][r]).sum()).collect();
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sided_stencils_are_exact_on_quadratics() {
        let h = 0.1;
        let f = |x: f64| 3.0 * x * x - x + 2.0;
        let df = |x: f64| 6.0 * x - 1.0;
        for i in 0..5 {
            let st = stencil(i, 5, h);
            let v: f64 = st.iter().map(|(q, w)| w * f(*q as f64 * h)).sum();
            assert!((v - df(i as f64 * h)).abs() < 1e-10, "{i}: {v}");
        }
    }
}
