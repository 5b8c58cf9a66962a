//! Principal normals and the structural checks built on them.
//!
//! For a submanifold with flat normal bundle the shape operators commute and
//! share an eigenbasis; tangent directions sharing the same eigenvalue
//! signature `(⟪α(v,v), ξ_a⟫)_a` span an eigendistribution `E_i`, and that
//! common value of `α(v,v)` for unit `v ∈ E_i` is the principal normal `η_i`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::extrinsic::{fundamental_forms_with, AmbientSpace, ExtrinsicData, FrameOptions};
use crate::linalg::{orthonormal_frame, singular_values, sym_eigen};
use crate::map::SmoothMap;

#[derive(Clone, Debug)]
pub struct PrincipalOptions {
    /// Cluster gap relative to the largest shape operator norm.
    pub cluster_rel_tol: f64,
    /// Allowed commutator norm relative to the squared shape scale.
    pub flat_rel_tol: f64,
    /// Principal normals shorter than this (relative) are treated as zero.
    pub null_rel_tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for PrincipalOptions {
    fn default() -> Self {
        PrincipalOptions { cluster_rel_tol: 1e-6, flat_rel_tol: 1e-8, null_rel_tol: 1e-7, max_sweeps: 50, seed: 0x5eed }
    }
}

#[derive(Clone, Debug)]
pub struct PrincipalNormal {
    /// Ambient vector.
    pub eta: DVector<f64>,
    /// Normal-frame coordinates `⟪η, ξ_a⟫`.
    pub coords: DVector<f64>,
    /// Chart-coordinate columns forming a `g`-orthonormal basis of `E_i`.
    pub basis: DMatrix<f64>,
    /// The same basis in the orthonormal tangent frame.
    pub ortho_basis: DMatrix<f64>,
    pub multiplicity: usize,
}

#[derive(Clone, Debug)]
pub struct PrincipalDecomposition {
    pub normals: Vec<PrincipalNormal>,
    pub cluster_tol: f64,
    /// `max_a ‖A_a‖` in an orthonormal tangent frame.
    pub scale: f64,
    pub commutator: f64,
    /// Off-diagonal energy left after joint diagonalization.
    pub offdiag: f64,
    /// Shortest link between distinct clusters (infinite when k = 1).
    pub min_gap: f64,
    /// `max_a ‖A_a − Σ_i ⟪ξ_a, η_i⟫ P_i‖` in an orthonormal frame.
    pub reconstruction: f64,
    pub normal_signs: Vec<f64>,
    /// Orthonormal tangent frame in chart coordinates.
    pub frame: DMatrix<f64>,
    /// Shape operators expressed in `frame`.
    pub shape_ortho: Vec<DMatrix<f64>>,
    pub n: usize,
}

impl PrincipalDecomposition {
    pub fn k(&self) -> usize {
        self.normals.len()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.normals.iter().map(|e| e.multiplicity).collect()
    }

    pub fn riemannian_normal(&self) -> bool {
        self.normal_signs.iter().all(|s| *s > 0.0)
    }

    /// `g`-orthogonal projector onto `E_i` acting on chart coordinates.
    pub fn projector(&self, i: usize, metric: &DMatrix<f64>) -> DMatrix<f64> {
        let c = &self.normals[i].basis;
        c * c.transpose() * metric
    }

    /// `‖A_ξ − Σ_i ⟪ξ, η_i⟫ P_i‖` for an arbitrary normal `ξ`, relative to `|ξ|·scale`.
    pub fn reconstruction_residual(&self, ext: &ExtrinsicData, xi: &DVector<f64>) -> f64 {
        let a = ext.shape_of(xi);
        let mut r = a.clone();
        for (i, e) in self.normals.iter().enumerate() {
            r -= self.projector(i, &ext.metric) * ext.inner(xi, &e.eta);
        }
        let t = &self.frame;
        let ro = t.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(self.n, self.n)) * r * t;
        ro.norm() / (xi.norm() * self.scale).max(f64::MIN_POSITIVE)
    }

    /// Index of the principal normal whose distribution contains chart vector `x`.
    pub fn cluster_of(&self, x: &DVector<f64>, metric: &DMatrix<f64>) -> usize {
        let mut best = (0, -1.0);
        for i in 0..self.k() {
            let v = self.projector(i, metric) * x;
            let w = (v.transpose() * metric * &v)[0];
            if w > best.1 {
                best = (i, w);
            }
        }
        best.0
    }
}

fn off_energy(ms: &[DMatrix<f64>]) -> f64 {
    let mut s = 0.0;
    for m in ms {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
    }
    s.sqrt()
}

/// Approximate joint diagonalization of symmetric matrices by Jacobi
/// rotations (Cardoso–Souloumiac), started from the eigenbasis of a random
/// combination.  Returns the orthogonal basis.
pub fn joint_diagonalize(ms: &[DMatrix<f64>], seed: u64, max_sweeps: usize) -> DMatrix<f64> {
    let n = ms.first().map(|m| m.nrows()).unwrap_or(0);
    if ms.is_empty() {
        return DMatrix::identity(n, n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comb = DMatrix::zeros(n, n);
    for m in ms {
        let c: f64 = StandardNormal.sample(&mut rng);
        comb += m * c;
    }
    let (_, mut v) = sym_eigen(&comb);
    let mut d: Vec<DMatrix<f64>> = ms.iter().map(|m| v.transpose() * m * &v).collect();
    let total: f64 = ms.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut g = nalgebra::Matrix2::<f64>::zeros();
                for m in &d {
                    let h = nalgebra::Vector2::new(m[(p, p)] - m[(q, q)], m[(p, q)] + m[(q, p)]);
                    g += h * h.transpose();
                }
                let eig = g.symmetric_eigen();
                let top = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
                let mut ang = eig.eigenvectors.column(top).into_owned();
                if ang[0] < 0.0 {
                    ang = -ang;
                }
                let c = (0.5 + 0.5 * ang[0]).sqrt();
                let s = 0.5 * ang[1] / c;
                if s.abs() <= 1e-15 {
                    continue;
                }
                rotated = true;
                let mut r = DMatrix::identity(n, n);
                r[(p, p)] = c;
                r[(q, q)] = c;
                r[(p, q)] = -s;
                r[(q, p)] = s;
                v = &v * &r;
                for m in d.iter_mut() {
                    *m = r.transpose() * &*m * &r;
                }
            }
        }
        if !rotated || off_energy(&d) <= 1e-15 * total {
            break;
        }
    }
    v
}

/// Single-linkage clusters of points under threshold `tol`, plus the MST
/// edge lengths.
fn single_linkage(points: &[DVector<f64>], tol: f64) -> (Vec<usize>, Vec<f64>) {
    let k = points.len();
    let mut in_tree = vec![false; k];
    let mut best = vec![f64::INFINITY; k];
    let mut parent = vec![usize::MAX; k];
    let mut edges = Vec::new();
    let mut labels: Vec<usize> = (0..k).collect();
    if k == 0 {
        return (labels, edges);
    }
    best[0] = 0.0;
    let mut tree_edges = Vec::new();
    for _ in 0..k {
        let u = (0..k).filter(|&i| !in_tree[i]).min_by(|&a, &b| best[a].total_cmp(&best[b])).unwrap();
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            edges.push(best[u]);
            tree_edges.push((parent[u], u, best[u]));
        }
        for v in 0..k {
            if !in_tree[v] {
                let d = (&points[u] - &points[v]).norm();
                if d < best[v] {
                    best[v] = d;
                    parent[v] = u;
                }
            }
        }
    }
    // union along short MST edges
    fn find(l: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while l[r] != r {
            r = l[r];
        }
        let mut y = x;
        while l[y] != r {
            let nx = l[y];
            l[y] = r;
            y = nx;
        }
        r
    }
    for (a, b, d) in tree_edges {
        if d <= tol {
            let ra = find(&mut labels, a);
            let rb = find(&mut labels, b);
            labels[ra.max(rb)] = ra.min(rb);
        }
    }
    let roots: Vec<usize> = (0..k).map(|i| find(&mut labels, i)).collect();
    (roots, edges)
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Decompose the tangent space into eigendistributions of the shape operators.
pub fn principal_decomposition(ext: &ExtrinsicData, opts: &PrincipalOptions) -> Result<PrincipalDecomposition> {
    let n = ext.n;
    let p = ext.p;
    let t = orthonormal_frame(&ext.metric)?;
    let so: Vec<DMatrix<f64>> = ext.sff.iter().map(|h| t.transpose() * h * &t).collect();
    let scale = so.iter().map(|m| m.norm()).fold(0.0, f64::max);
    let mut commutator = 0.0f64;
    for a in 0..p {
        for b in a + 1..p {
            commutator = commutator.max((&so[a] * &so[b] - &so[b] * &so[a]).norm());
        }
    }
    let flat_tol = opts.flat_rel_tol * scale * scale;
    if commutator > flat_tol {
        return Err(Error::NotFlatNormalBundle { commutator, tol: flat_tol });
    }
    let v = joint_diagonalize(&so, opts.seed, opts.max_sweeps);
    let d: Vec<DMatrix<f64>> = so.iter().map(|m| v.transpose() * m * &v).collect();
    let offdiag = off_energy(&d);
    let sig: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_iterator(p, d.iter().map(|m| m[(i, i)]))).collect();
    let cluster_tol = opts.cluster_rel_tol * scale.max(f64::MIN_POSITIVE);
    let (labels, edges) = single_linkage(&sig, cluster_tol);
    for &e in &edges {
        if e >= 0.1 * cluster_tol && e <= 10.0 * cluster_tol {
            return Err(Error::ClusterResolution { gap: e, tol: cluster_tol });
        }
    }
    let min_gap = edges.iter().copied().filter(|e| *e > cluster_tol).fold(f64::INFINITY, f64::min);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(*l).or_default().push(i);
    }
    let mut normals: Vec<PrincipalNormal> = groups
        .values()
        .map(|members| {
            let m = members.len();
            let mut coords = DVector::zeros(p);
            for &i in members {
                coords += &sig[i];
            }
            coords /= m as f64;
            let mut ortho_basis = DMatrix::zeros(n, m);
            for (c, &i) in members.iter().enumerate() {
                ortho_basis.set_column(c, &v.column(i));
            }
            let basis = &t * &ortho_basis;
            PrincipalNormal { eta: ext.from_normal_coords(&coords), coords, basis, ortho_basis, multiplicity: m }
        })
        .collect();
    normals.sort_by(|a, b| b.multiplicity.cmp(&a.multiplicity).then_with(|| lex_cmp(&a.eta, &b.eta)));
    let mut reconstruction = 0.0f64;
    for a in 0..p {
        let mut r = so[a].clone();
        for e in &normals {
            r -= &e.ortho_basis * e.ortho_basis.transpose() * e.coords[a];
        }
        reconstruction = reconstruction.max(r.norm());
    }
    Ok(PrincipalDecomposition {
        normals,
        cluster_tol,
        scale,
        commutator,
        offdiag,
        min_gap,
        reconstruction,
        normal_signs: ext.normal_signs.clone(),
        frame: t,
        shape_ortho: so,
        n,
    })
}

/// Normal-frame coordinates of `∇⊥_{∂_k} η_i`, indexed `[i][k]`.
///
/// The derivative of each cluster's common eigenvalue follows from
/// first-order perturbation of the generalized eigenproblem `h^a v = s g v`
/// restricted to `E_i`.
pub fn normal_derivatives(ext: &ExtrinsicData, dec: &PrincipalDecomposition) -> Vec<Vec<DVector<f64>>> {
    let (n, p) = (ext.n, ext.p);
    dec.normals
        .iter()
        .map(|e| {
            let c = &e.basis;
            let m = e.multiplicity as f64;
            (0..n)
                .map(|k| {
                    let ds: Vec<f64> = (0..p)
                        .map(|a| (c.transpose() * (&ext.dsff[a][k] - &ext.dmetric[k] * e.coords[a]) * c).trace() / m)
                        .collect();
                    DVector::from_fn(p, |cc, _| {
                        let mut v = ds[cc];
                        for a in 0..p {
                            v += ext.normal_signs[a] * e.coords[a] * ext.normal_connection[k][(a, cc)];
                        }
                        v
                    })
                })
                .collect()
        })
        .collect()
}

/// Largest `‖∇⊥_X η_i‖ / scale²` over unit `X ∈ E_i` with `m_i ≥ 2`.
pub fn dupin_residual(ext: &ExtrinsicData, dec: &PrincipalDecomposition) -> f64 {
    let der = normal_derivatives(ext, dec);
    let mut worst = 0.0f64;
    for (i, e) in dec.normals.iter().enumerate() {
        if e.multiplicity < 2 {
            continue;
        }
        for col in 0..e.multiplicity {
            let mut v = DVector::zeros(ext.p);
            for k in 0..ext.n {
                v += &der[i][k] * e.basis[(k, col)];
            }
            worst = worst.max(v.norm());
        }
    }
    worst / (dec.scale * dec.scale).max(f64::MIN_POSITIVE)
}

/// Result of [`properness_and_census`].
#[derive(Clone, Debug)]
pub struct Census {
    pub k: usize,
    /// Multiplicity lists (descending) and how many samples had each.
    pub census: BTreeMap<Vec<usize>, usize>,
    /// True when no sample has two principal normals of multiplicity ≥ 2.
    pub at_most_one_high: bool,
    pub dupin: f64,
    pub samples: usize,
}

pub fn properness_and_census(
    map: &dyn SmoothMap,
    ambient: &AmbientSpace,
    samples: &[Vec<f64>],
    opts: &PrincipalOptions,
) -> Result<Census> {
    let mut strata: BTreeMap<usize, usize> = BTreeMap::new();
    let mut census: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut dupin = 0.0f64;
    let mut at_most_one_high = true;
    for x in samples {
        let ext = fundamental_forms_with(map, ambient, x, &FrameOptions::default())?;
        let dec = principal_decomposition(&ext, opts)?;
        *strata.entry(dec.k()).or_default() += 1;
        let ms = dec.multiplicities();
        if ms.iter().filter(|m| **m >= 2).count() > 1 {
            at_most_one_high = false;
        }
        *census.entry(ms).or_default() += 1;
        dupin = dupin.max(dupin_residual(&ext, &dec));
    }
    if strata.len() > 1 {
        return Err(Error::NonProper { strata: strata.into_iter().collect() });
    }
    let k = strata.keys().next().copied().unwrap_or(0);
    Ok(Census { k, census, at_most_one_high, dupin, samples: samples.len() })
}

/// Result of [`separation_check`].
#[derive(Clone, Debug)]
pub struct Separation {
    pub min_singular: f64,
    pub worst: (usize, usize, usize),
}

/// Smallest singular value of `[η_j − η_m, η_j − η_ℓ]` (columns normalized)
/// over all triples of distinct principal normals.
pub fn separation_check(dec: &PrincipalDecomposition) -> Result<Separation> {
    let k = dec.k();
    if k < 3 {
        return Err(Error::NotApplicable(format!("separation needs k >= 3, have {k}")));
    }
    let c = |i: usize| &dec.normals[i].coords;
    let mut best = Separation { min_singular: f64::INFINITY, worst: (0, 0, 0) };
    for j in 0..k {
        for m in 0..k {
            for l in m + 1..k {
                if m == j || l == j {
                    continue;
                }
                let a = c(j) - c(m);
                let b = c(j) - c(l);
                let mat = DMatrix::from_columns(&[a.normalize(), b.normalize()]);
                let s = singular_values(&mat);
                let smin = s[s.len() - 1];
                if smin < best.min_singular {
                    best = Separation { min_singular: smin, worst: (j, m, l) };
                }
            }
        }
    }
    Ok(best)
}

/// Result of [`holonomicity_check`].
#[derive(Clone, Debug, Default)]
pub struct Holonomicity {
    /// `max ‖α(∂_i,∂_j)‖ / (h_i h_j scale)`, `i ≠ j`.
    pub offdiag: f64,
    /// Largest `|g_ij| / (h_i h_j)`, `i ≠ j`.
    pub net_cosine: f64,
    /// Largest `|⟨∇_{∂_i}∂_j, ∂_k⟩| / (h_i h_j h_k)` over distinct `i, j, k`.
    pub christoffel: f64,
    /// Codazzi residual `‖g_aa ∇⊥_{∂_b} η_i + ½ ∂_b g_aa (η_i − η_j)‖`, normalized.
    pub codazzi_c1: f64,
    /// `|⟨∇_{∂_a}∂_c, ∂_b⟩| ‖η_i − η_ℓ‖` over three distinct distributions, normalized.
    pub codazzi_c2: f64,
    pub points: usize,
}

/// Check that the chart's coordinate net is orthogonal and diagonalizes
/// the second fundamental form at each point.
pub fn holonomicity_check(
    map: &dyn SmoothMap,
    ambient: &AmbientSpace,
    points: &[Vec<f64>],
    net_tol: f64,
    opts: &PrincipalOptions,
) -> Result<Holonomicity> {
    let mut rep = Holonomicity { points: points.len(), ..Default::default() };
    let mut pivot: Option<Vec<usize>> = None;
    for x in points {
        let ext = fundamental_forms_with(map, ambient, x, &FrameOptions { pivot: pivot.clone() })
            .or_else(|_| fundamental_forms_with(map, ambient, x, &FrameOptions::default()))?;
        pivot = Some(ext.pivot.clone());
        let n = ext.n;
        let h = &ext.lame;
        let mut cosine = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                cosine = cosine.max(ext.metric[(i, j)].abs() / (h[i] * h[j]));
            }
        }
        if cosine > net_tol {
            return Err(Error::Net { point: x.clone(), cosine });
        }
        rep.net_cosine = rep.net_cosine.max(cosine);
        let dec = principal_decomposition(&ext, opts)?;
        let scale = dec.scale.max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i + 1..n {
                let c = DVector::from_iterator(ext.p, ext.sff.iter().map(|s| s[(i, j)]));
                rep.offdiag = rep.offdiag.max(c.norm() / (h[i] * h[j] * scale));
            }
        }
        let gam = |i: usize, j: usize, k: usize| {
            0.5 * (ext.dmetric[i][(j, k)] + ext.dmetric[j][(i, k)] - ext.dmetric[k][(i, j)])
        };
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i != j && j != k && i != k {
                        rep.christoffel = rep.christoffel.max(gam(i, j, k).abs() / (h[i] * h[j] * h[k]));
                    }
                }
            }
        }
        let cl: Vec<usize> = (0..n)
            .map(|a| {
                let mut e = DVector::zeros(n);
                e[a] = 1.0;
                dec.cluster_of(&e, &ext.metric)
            })
            .collect();
        let der = normal_derivatives(&ext, &dec);
        let coords = |i: usize| &dec.normals[i].coords;
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let (i, j) = (cl[a], cl[b]);
                let lhs = &der[i][b] * ext.metric[(a, a)];
                let rhs = (coords(i) - coords(j)) * gam(a, a, b);
                let r = (lhs - rhs).norm() / (h[a] * h[a] * h[b] * scale * scale);
                rep.codazzi_c1 = rep.codazzi_c1.max(r);
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let (i, j, l) = (cl[a], cl[b], cl[c]);
                    if i != j && j != l && i != l {
                        let r = gam(a, c, b).abs() * (coords(i) - coords(l)).norm() / (h[a] * h[b] * h[c] * scale);
                        rep.codazzi_c2 = rep.codazzi_c2.max(r);
                    }
                }
            }
        }
    }
    Ok(rep)
}

fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Ok(0);
    }
    let s = singular_values(m);
    for &x in s.iter() {
        if x > tol * 1e-2 && x < tol * 1e2 {
            return Err(Error::Rank { gap: x });
        }
    }
    Ok(s.iter().filter(|x| **x > tol).count())
}

/// Result of [`span_structure`].
#[derive(Clone, Debug)]
pub struct SpanStructure {
    pub d: usize,
    pub dim_sf: usize,
    /// Unit normal orthogonal to `S_f` within the span of the principal
    /// normals (frame coordinates), when `dim S_f = d − 1`.
    pub delta: Option<DVector<f64>>,
    /// `‖A_δ − aI‖ / scale` with `a = tr A_δ / n`.
    pub umbilic_residual: Option<f64>,
    /// `dim S_f ≤ k − 1` and `d − 1 ≤ dim S_f ≤ d`.
    pub bounds_hold: bool,
}

/// Ranks of the spans of the principal normals and their differences.
pub fn span_structure(dec: &PrincipalDecomposition) -> Result<SpanStructure> {
    if !dec.riemannian_normal() {
        return Err(Error::NotApplicable("span structure needs a Riemannian normal space".into()));
    }
    let k = dec.k();
    let p = dec.normal_signs.len();
    let tol = dec.cluster_tol.max(1e-6 * dec.normals.iter().map(|e| e.coords.norm()).fold(0.0, f64::max));
    let etas = DMatrix::from_columns(&dec.normals.iter().map(|e| e.coords.clone()).collect::<Vec<_>>());
    let d = numerical_rank(&etas, tol)?;
    let diffs: Vec<DVector<f64>> = (1..k).map(|j| &dec.normals[0].coords - &dec.normals[j].coords).collect();
    let dim_sf = if diffs.is_empty() { 0 } else { numerical_rank(&DMatrix::from_columns(&diffs), tol)? };
    let bounds_hold = dim_sf < k.max(1) && dim_sf + 1 >= d && dim_sf <= d;
    let (mut delta, mut umbilic_residual) = (None, None);
    if d >= 1 && dim_sf + 1 == d {
        let u = etas.clone().svd(true, false).u.unwrap();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        if !diffs.is_empty() && dim_sf > 0 {
            let su = DMatrix::from_columns(&diffs).svd(true, false).u.unwrap();
            basis.extend((0..dim_sf).map(|c| su.column(c).into_owned()));
        }
        let mut best: Option<DVector<f64>> = None;
        for c in 0..d {
            let mut r = u.column(c).into_owned();
            for b in &basis {
                r -= b * b.dot(&r);
            }
            if best.as_ref().is_none_or(|x| r.norm() > x.norm()) {
                best = Some(r);
            }
        }
        let mut dl = best.unwrap().normalize();
        // orient toward the principal normals
        if dl.dot(&dec.normals[0].coords) < 0.0 {
            dl = -dl;
        }
        let mut a = DMatrix::zeros(dec.n, dec.n);
        for c in 0..p {
            a += &dec.shape_ortho[c] * dl[c];
        }
        let tr = a.trace() / dec.n as f64;
        let r = (a - DMatrix::identity(dec.n, dec.n) * tr).norm() / dec.scale.max(f64::MIN_POSITIVE);
        delta = Some(dl);
        umbilic_residual = Some(r);
    }
    Ok(SpanStructure { d, dim_sf, delta, umbilic_residual, bounds_hold })
}

/// Result of [`quasiumbilical_frame`].
#[derive(Clone, Debug)]
pub struct QuasiumbilicalFrame {
    /// Orthonormal normal frame in normal-frame coordinates.
    pub frame: Vec<DVector<f64>>,
    /// Largest eigenvalue multiplicity of each frame vector's shape operator.
    pub multiplicities: Vec<usize>,
    /// Largest `|⟨ξ_i, ξ_j⟩|`, `i ≠ j`, among the difference directions.
    pub max_cross: f64,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub includes_delta: bool,
}

impl QuasiumbilicalFrame {
    pub fn multiplicity_ok(&self) -> bool {
        self.multiplicities.iter().all(|&m| m + 1 >= self.n)
    }

    pub fn codimension_ok(&self) -> bool {
        self.p + self.m >= self.n
    }
}

fn max_eigen_multiplicity(a: &DMatrix<f64>, tol: f64) -> usize {
    let (ev, _) = sym_eigen(a);
    let mut best = 1;
    let mut run = 1;
    for i in 1..ev.len() {
        if ev[i] - ev[i - 1] <= tol {
            run += 1;
        } else {
            run = 1;
        }
        best = best.max(run);
    }
    best
}

/// The quasiumbilical normal frame built from differences of principal normals.
pub fn quasiumbilical_frame(dec: &PrincipalDecomposition, tol: f64) -> Result<QuasiumbilicalFrame> {
    if !dec.riemannian_normal() {
        return Err(Error::NotApplicable("quasiumbilical frame needs a Riemannian normal space".into()));
    }
    let high = dec.normals.iter().filter(|e| e.multiplicity >= 2).count();
    if high != 1 || dec.n < 4 {
        return Err(Error::NotApplicable(format!(
            "needs n >= 4 and exactly one multiplicity >= 2 (n = {}, multiplicities {:?})",
            dec.n,
            dec.multiplicities()
        )));
    }
    let p = dec.normal_signs.len();
    let e1 = &dec.normals[0].coords;
    let xis: Vec<DVector<f64>> = dec.normals[1..].iter().map(|e| (e1 - &e.coords).normalize()).collect();
    let mut max_cross = 0.0f64;
    for i in 0..xis.len() {
        for j in i + 1..xis.len() {
            let v = xis[i].dot(&xis[j]);
            if v.abs() > max_cross {
                max_cross = v.abs();
            }
            if v.abs() > tol {
                return Err(Error::Quasiumbilicity { i: i + 2, j: j + 2, value: v });
            }
        }
    }
    let mut frame = xis.clone();
    let span = span_structure(dec)?;
    let includes_delta = span.delta.is_some();
    if let Some(dl) = span.delta {
        frame.push(dl);
    }
    // complete with standard directions
    for b in 0..p {
        if frame.len() == p {
            break;
        }
        let mut r = DVector::zeros(p);
        r[b] = 1.0;
        for f in &frame {
            r -= f * f.dot(&r);
        }
        if r.norm() > 1e-6 {
            // second pass for stability
            for f in &frame {
                let c = f.dot(&r);
                r -= f * c;
            }
            frame.push(r.normalize());
        }
    }
    let multiplicities = frame
        .iter()
        .map(|z| {
            let mut a = DMatrix::zeros(dec.n, dec.n);
            for c in 0..p {
                a += &dec.shape_ortho[c] * z[c];
            }
            max_eigen_multiplicity(&a, dec.cluster_tol)
        })
        .collect();
    Ok(QuasiumbilicalFrame {
        frame,
        multiplicities,
        max_cross,
        n: dec.n,
        m: dec.normals[0].multiplicity,
        p,
        includes_delta,
    })
}

/// Relative nullity at one point.
#[derive(Clone, Debug)]
pub struct NullityData {
    pub nu0: usize,
    /// `g`-orthonormal basis of the nullity distribution, chart coordinates.
    pub basis: DMatrix<f64>,
}

/// Which branch of the relative-nullity structure a sample falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullityBranch {
    /// `λ = 0` (or `ν₀ ≥ 2`): constant sectional curvature.
    ConstantCurvature,
    /// `λ ≠ 0`: 1-generalized cone.
    Cone,
}

/// Result of [`nullity_and_leaf_invariants`].
#[derive(Clone, Debug)]
pub struct LeafInvariants {
    pub nu0: usize,
    /// `leaf_lambda` at each sample.
    pub lambda: Vec<f64>,
    /// Largest `|⟨η_i,η_j⟩ − λ|` over pairs of nonzero principal normals.
    pub pair_spread: f64,
    /// Largest `|‖η_r‖² − λ|` for the high-multiplicity normal when `k < n`.
    pub high_defect: Option<f64>,
    /// Largest `|X(λ)|` for unit `X` tangent to the conullity leaves.
    pub leaf_derivative: f64,
    /// Largest `|Z(λ)|` for unit `Z` in the nullity distribution (along rulings).
    pub ruling_derivative: f64,
    /// Largest `|λ|` seen, for scaling.
    pub lambda_scale: f64,
    pub branch: NullityBranch,
}

pub fn nullity(dec: &PrincipalDecomposition, opts: &PrincipalOptions) -> Option<(usize, NullityData)> {
    let thr = opts.null_rel_tol * dec.scale;
    dec.normals
        .iter()
        .position(|e| e.coords.norm() <= thr)
        .map(|i| (i, NullityData { nu0: dec.normals[i].multiplicity, basis: dec.normals[i].basis.clone() }))
}

/// Relative nullity, the inner products `λ = ⟨η_i, η_j⟩` between the
/// nonzero principal normals, and derivatives of `λ` along the conullity
/// leaves and along the rulings.
pub fn nullity_and_leaf_invariants(
    map: &dyn SmoothMap,
    ambient: &AmbientSpace,
    samples: &[Vec<f64>],
    opts: &PrincipalOptions,
) -> Result<LeafInvariants> {
    let mut out = LeafInvariants {
        nu0: 0,
        lambda: Vec::new(),
        pair_spread: 0.0,
        high_defect: None,
        leaf_derivative: 0.0,
        ruling_derivative: 0.0,
        lambda_scale: 0.0,
        branch: NullityBranch::ConstantCurvature,
    };
    let mut cone_seen = false;
    for x in samples {
        let ext = fundamental_forms_with(map, ambient, x, &FrameOptions::default())?;
        let dec = principal_decomposition(&ext, opts)?;
        let (zero, null) =
            nullity(&dec, opts).ok_or_else(|| Error::NotApplicable("no vanishing principal normal".into()))?;
        if out.nu0 != 0 && out.nu0 != null.nu0 {
            return Err(Error::NonProper { strata: vec![(out.nu0, 0), (null.nu0, 1)] });
        }
        out.nu0 = null.nu0;
        let nz: Vec<usize> = (0..dec.k()).filter(|&i| i != zero).collect();
        let der = normal_derivatives(&ext, &dec);
        let ipc = |a: &DVector<f64>, b: &DVector<f64>| {
            a.iter().zip(b.iter()).zip(&ext.normal_signs).map(|((x, y), s)| s * x * y).sum::<f64>()
        };
        // λ and its chart gradient
        let (lambda, grad): (f64, Vec<f64>) = if nz.len() >= 2 {
            let (i, j) = (nz[0], nz[1]);
            let (ci, cj) = (&dec.normals[i].coords, &dec.normals[j].coords);
            (ipc(ci, cj), (0..ext.n).map(|k| ipc(&der[i][k], cj) + ipc(ci, &der[j][k])).collect())
        } else if nz.len() == 1 {
            let c = &dec.normals[nz[0]].coords;
            (ipc(c, c), (0..ext.n).map(|k| 2.0 * ipc(&der[nz[0]][k], c)).collect())
        } else {
            (0.0, vec![0.0; ext.n])
        };
        for (a, &i) in nz.iter().enumerate() {
            for &j in &nz[a + 1..] {
                let v = ipc(&dec.normals[i].coords, &dec.normals[j].coords);
                out.pair_spread = out.pair_spread.max((v - lambda).abs());
            }
        }
        if dec.k() < ext.n {
            if let Some(r) = nz.iter().find(|&&i| dec.normals[i].multiplicity >= 2) {
                let c = &dec.normals[*r].coords;
                let d = (ipc(c, c) - lambda).abs();
                out.high_defect = Some(out.high_defect.unwrap_or(0.0).max(d));
            }
        }
        let gv = DVector::from_vec(grad);
        for &i in &nz {
            let b = &dec.normals[i].basis;
            for c in 0..b.ncols() {
                out.leaf_derivative = out.leaf_derivative.max(gv.dot(&b.column(c)).abs());
            }
        }
        for c in 0..null.basis.ncols() {
            out.ruling_derivative = out.ruling_derivative.max(gv.dot(&null.basis.column(c)).abs());
        }
        out.lambda_scale = out.lambda_scale.max(lambda.abs());
        if null.nu0 < 2 && lambda.abs() > opts.null_rel_tol * dec.scale * dec.scale {
            cone_seen = true;
        }
        out.lambda.push(lambda);
    }
    out.branch = if cone_seen { NullityBranch::Cone } else { NullityBranch::ConstantCurvature };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;

    #[test]
    fn joint_diagonalization_recovers_common_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthonormal(5, 5, &mut rng);
        let diags = [
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0, 3.0, 3.0])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 1.0, -1.0, -1.0])),
        ];
        let ms: Vec<DMatrix<f64>> = diags.iter().map(|d| &q * d * q.transpose()).collect();
        let v = joint_diagonalize(&ms, 1, 50);
        let d: Vec<DMatrix<f64>> = ms.iter().map(|m| v.transpose() * m * &v).collect();
        assert!(off_energy(&d) < 1e-12);
    }

    #[test]
    fn single_linkage_chains() {
        let pts: Vec<DVector<f64>> = [0.0, 0.5e-7, 1.0e-7, 1.0].iter().map(|x| DVector::from_vec(vec![*x])).collect();
        let (l, e) = single_linkage(&pts, 1e-6);
        assert_eq!(l[0], l[1]);
        assert_eq!(l[1], l[2]);
        assert_ne!(l[2], l[3]);
        assert_eq!(e.len(), 3);
    }
}
