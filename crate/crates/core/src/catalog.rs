//! Closed-form immersions with known invariants: unit-normal-bundle
//! submanifolds over products of spherical curves, generalized cylinders and
//! cones, products with explicit conformal factors, baselines, and negative
//! controls.

use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conformal::ConformalStructure;
use crate::error::{Error, Result};
use crate::extrinsic::AmbientSpace;
use crate::jet::{dot, Jet};
use crate::linalg::jet_sdot;
use crate::map::{evaluate_jets, seed, ChartDomain, FnMap, MapRef};
use crate::principal::NullityBranch;

/// Properties a catalog item is built to have.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub conformally_flat: bool,
    pub flat_normal_bundle: bool,
    /// Chart coordinates are principal (diagonalize the second fundamental form).
    pub principal_chart: bool,
    pub k: Option<usize>,
    /// Sorted descending.
    pub multiplicities: Option<Vec<usize>>,
    pub nu0: Option<usize>,
    /// Branch of the leaf-invariant dichotomy, for items with relative nullity.
    pub branch: Option<NullityBranch>,
    /// Constant sectional curvature of the induced metric, when it has one.
    pub constant_curvature: Option<f64>,
    /// Suite this item is a negative control for.
    pub negative_control: Option<String>,
}

/// A named immersion with its ambient space and declared invariants.
#[derive(Clone)]
pub struct CatalogItem {
    pub name: String,
    pub map: MapRef,
    pub ambient: AmbientSpace,
    pub conformal: Option<ConformalStructure>,
    pub expected: Expected,
    pub params: Value,
}

impl std::fmt::Debug for CatalogItem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CatalogItem")
            .field("name", &self.name)
            .field("ambient", &self.ambient)
            .field("expected", &self.expected)
            .field("params", &self.params)
            .finish()
    }
}

impl CatalogItem {
    pub fn dim(&self) -> usize {
        self.map.domain().dim()
    }

    pub fn domain(&self) -> &ChartDomain {
        self.map.domain()
    }

    /// `count` deterministic points in the middle 80% of the chart box.
    pub fn samples(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        interior_samples(self.domain(), count, seed, 0.8)
    }

    /// Same map and factor on a different chart box.
    pub fn with_domain(&self, domain: ChartDomain) -> CatalogItem {
        let mut out = self.clone();
        out.map = crate::map::restrict(self.map.clone(), domain.clone());
        if let Some(cs) = &self.conformal {
            out.conformal = Some(ConformalStructure {
                omega: crate::map::restrict(cs.omega.clone(), domain.clone()),
                flat_chart: cs.flat_chart.as_ref().map(|p| crate::map::restrict(p.clone(), domain.clone())),
            });
        }
        out
    }

    /// Which `points` are regular: the induced metric's smallest eigenvalue
    /// exceeds `tol` times its largest.
    pub fn regular_mask(&self, points: &[Vec<f64>], tol: f64) -> Result<Vec<bool>> {
        let signs = self.ambient.signs();
        points
            .iter()
            .map(|x| {
                let j = evaluate_jets(self.map.as_ref(), x, 1)?;
                let n = x.len();
                let d: Vec<Vec<f64>> = (0..n).map(|i| j.iter().map(|c| c.d1(i)).collect()).collect();
                let g = nalgebra::DMatrix::from_fn(n, n, |a, b| crate::linalg::sdot(&signs, &d[a], &d[b]));
                let (ev, _) = crate::linalg::sym_eigen(&g);
                Ok(ev[0] > tol * ev[n - 1].abs())
            })
            .collect()
    }
}

/// Deterministic uniform samples in the box shrunk about its center by `shrink`.
pub fn interior_samples(domain: &ChartDomain, count: usize, seed: u64, shrink: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = domain.center();
    (0..count)
        .map(|_| {
            (0..domain.dim())
                .map(|i| {
                    let half = 0.5 * (domain.upper[i] - domain.lower[i]) * shrink;
                    c[i] + half * (2.0 * rng.random::<f64>() - 1.0)
                })
                .collect()
        })
        .collect()
}

fn chart(center: &[f64], half: &[f64]) -> ChartDomain {
    ChartDomain::new(
        center.iter().zip(half).map(|(c, h)| c - h).collect(),
        center.iter().zip(half).map(|(c, h)| c + h).collect(),
    )
}

fn scalar(domain: ChartDomain, f: impl Fn(&[Jet]) -> Jet + Send + Sync + 'static) -> MapRef {
    FnMap::new(domain, 1, move |x| vec![f(x)]).into_ref()
}

fn parse<T: for<'de> Deserialize<'de> + Default>(params: &Value) -> Result<T> {
    if params.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(params.clone()).map_err(|e| Error::Parameter(e.to_string()))
}

/// `(r cos η cos ξ₁, r cos η sin ξ₁, r sin η cos ξ₂, r sin η sin ξ₂)`: orthogonal
/// coordinates on `S³(r)`.
pub fn hopf(r: f64, eta: &Jet, xi1: &Jet, xi2: &Jet) -> Vec<Jet> {
    let (ce, se) = (eta.cos() * r, eta.sin() * r);
    vec![&ce * &xi1.cos(), &ce * &xi1.sin(), &se * &xi2.cos(), &se * &xi2.sin()]
}

/// `(r sin θ cos φ, r sin θ sin φ, r cos θ)`.
fn spherical2(r: f64, th: &Jet, ph: &Jet) -> Vec<Jet> {
    let s = th.sin() * r;
    vec![&s * &ph.cos(), &s * &ph.sin(), th.cos() * r]
}

/// Geodesic `exp_x(v)` of the space form of curvature `c`, realized
/// extrinsically: `cos(√c|v|) x + sin(√c|v|)/√c|v| · v`, continued to `c ≤ 0`.
/// For `c = 0` this is `x + v`.  `signs` is the ambient bilinear form.
pub fn space_form_exp(c: f64, signs: &[f64], x: &[Jet], v: &[Jet]) -> Vec<Jet> {
    if c == 0.0 {
        return x.iter().zip(v).map(|(a, b)| a + b).collect();
    }
    let q = jet_sdot(signs, v, v) * c;
    let cc = q.cos_sqrt();
    let ss = q.sinc_sqrt();
    x.iter().zip(v).map(|(a, b)| &(&cc * a) + &(&ss * b)).collect()
}

// ---------------------------------------------------------------------------
// Spherical curves and unit-normal-bundle submanifolds

/// A unit-speed curve on `S²(radius) ⊂ R³`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SphericalCurve {
    /// Circle at height `height` (|height| < radius), constant geodesic curvature.
    Latitude { radius: f64, height: f64 },
    /// Constant-bearing curve: latitude grows linearly in arc length, so the
    /// geodesic curvature varies.
    Loxodrome { radius: f64, bearing: f64, lat0: f64 },
}

impl SphericalCurve {
    pub fn radius(&self) -> f64 {
        match *self {
            SphericalCurve::Latitude { radius, .. } | SphericalCurve::Loxodrome { radius, .. } => radius,
        }
    }

    /// Position and velocity at arc length `u`.
    pub fn frame(&self, u: &Jet) -> ([Jet; 3], [Jet; 3]) {
        match *self {
            SphericalCurve::Latitude { radius, height } => {
                let rho = (radius * radius - height * height).sqrt();
                let t = u / rho;
                let (c, s) = (t.cos(), t.sin());
                ([&c * rho, &s * rho, u.lift(height)], [-&s, c.clone(), u.lift(0.0)])
            }
            SphericalCurve::Loxodrome { radius: r, bearing, lat0 } => {
                let phi = u * (bearing.cos() / r) + lat0;
                let sp = phi.sin();
                let lam = ((&sp + 1.0) / (-&sp + 1.0)).ln() * (0.5 * bearing.tan());
                let (cp, cl, sl) = (phi.cos(), lam.cos(), lam.sin());
                let dphi = bearing.cos() / r;
                let dlam = cp.recip() * (bearing.sin() / r);
                let pos = [&(&cp * &cl) * r, &(&cp * &sl) * r, &sp * r];
                let vel = [
                    (-(&(&sp * &cl) * dphi) - &(&cp * &sl) * &dlam) * r,
                    (-(&(&sp * &sl) * dphi) + &(&cp * &cl) * &dlam) * r,
                    &cp * (dphi * r),
                ];
                (pos, vel)
            }
        }
    }

    /// Check radius, unit speed and that the velocity is the derivative of
    /// the position at points of `[a, b]`.
    pub fn validate(&self, a: f64, b: f64) -> Result<()> {
        let r = self.radius();
        if let SphericalCurve::Latitude { height, .. } = self {
            if height.abs() >= r {
                return Err(Error::Curve(format!("latitude height {height} outside sphere of radius {r}")));
            }
        }
        for k in 0..=20 {
            let u = Jet::variable(a + (b - a) * k as f64 / 20.0, 0, 1, 1);
            let (p, v) = self.frame(&u);
            let pr = dot(&p, &p).value().sqrt();
            let sp = dot(&v, &v).value().sqrt();
            let drift = (0..3).map(|i| (p[i].d1(0) - v[i].value()).abs()).fold(0.0, f64::max);
            let bad = (pr - r).abs() > 1e-10 * r || (sp - 1.0).abs() > 1e-10 || drift > 1e-10;
            if bad || !pr.is_finite() {
                return Err(Error::Curve(format!(
                    "curve fails validation at u = {}: |γ| = {pr}, |γ'| = {sp}, derivative drift {drift:e}",
                    u.value()
                )));
            }
        }
        Ok(())
    }
}

fn cross(a: &[Jet; 3], b: &[Jet; 3]) -> [Jet; 3] {
    [&a[1] * &b[2] - &a[2] * &b[1], &a[2] * &b[0] - &a[0] * &b[2], &a[0] * &b[1] - &a[1] * &b[0]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Example2Params {
    pub r1: f64,
    pub r2: f64,
    pub curve1: SphericalCurve,
    pub curve2: SphericalCurve,
    /// Chart center `(u, v, a, b)` and half-widths; `a, b` are fiber angles.
    pub center: [f64; 4],
    pub half_width: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Example2Params {
            r1: 0.8,
            r2: 0.6,
            curve1: SphericalCurve::Latitude { radius: 0.8, height: 0.4 },
            curve2: SphericalCurve::Latitude { radius: 0.6, height: 0.2 },
            center: [0.0, 0.0, 0.3, 0.6],
            half_width: 0.2,
        }
    }
}

/// The unit normal bundle of `h(u,v) = (γ₁(u), γ₂(v)) ⊂ S⁵ ⊂ R⁶`, mapped by
/// `(u, v, a, b) ↦ h + cos a cos b ξ₁ + cos a sin b ξ₂ + sin a ξ₃`.
///
/// `ξ₁ = (γ₁ × γ₁'/r₁, 0)`, `ξ₂ = (0, γ₂ × γ₂'/r₂)` and
/// `ξ₃ = (r₂/r₁ γ₁, −r₁/r₂ γ₂)` form a parallel normal frame of `h` in `S⁵`,
/// so the coordinates are principal.
///
/// The principal normals are `−w` on the fiber spheres and
/// `(κ w − h)/(1 − κ)` along each curve direction.  Both differences
/// `η_fiber − η_u` and `η_fiber − η_v` are multiples of `h − w`, so the
/// quadruple identity fails by `2/((1−κ_u)(1−κ_v))` and the item is
/// declared not conformally flat.
pub fn build_example2(params: &Example2Params) -> Result<CatalogItem> {
    let Example2Params { r1, r2, .. } = *params;
    if ((r1 * r1 + r2 * r2) - 1.0).abs() > 1e-12 || r1 <= 0.0 || r2 <= 0.0 {
        return Err(Error::Parameter(format!("need r1² + r2² = 1 with r1, r2 > 0, got {r1}, {r2}")));
    }
    for (c, r) in [(&params.curve1, r1), (&params.curve2, r2)] {
        if (c.radius() - r).abs() > 1e-12 {
            return Err(Error::Curve(format!("curve radius {} does not match {r}", c.radius())));
        }
    }
    let hw = params.half_width;
    let c = params.center;
    params.curve1.validate(c[0] - hw, c[0] + hw)?;
    params.curve2.validate(c[1] - hw, c[1] + hw)?;
    let domain = chart(&c, &[hw; 4]);
    let (g1, g2) = (params.curve1.clone(), params.curve2.clone());
    let map = FnMap::new(domain, 6, move |x| {
        let (p1, t1) = g1.frame(&x[0]);
        let (p2, t2) = g2.frame(&x[1]);
        let n1: Vec<Jet> = cross(&p1, &t1).iter().map(|e| e / r1).collect();
        let n2: Vec<Jet> = cross(&p2, &t2).iter().map(|e| e / r2).collect();
        let (ca, sa) = (x[2].cos(), x[2].sin());
        let (cb, sb) = (x[3].cos(), x[3].sin());
        let (k1, k2) = (&ca * &cb, &ca * &sb);
        let mut out = Vec::with_capacity(6);
        for i in 0..3 {
            out.push(&p1[i] + &(&k1 * &n1[i]) + &sa * &(&p1[i] * (r2 / r1)));
        }
        for i in 0..3 {
            out.push(&p2[i] + &(&k2 * &n2[i]) - &sa * &(&p2[i] * (r1 / r2)));
        }
        out
    })
    .into_ref();
    Ok(CatalogItem {
        name: "example2".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        conformal: None,
        expected: Expected {
            conformally_flat: false,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(3),
            multiplicities: Some(vec![2, 1, 1]),
            nu0: Some(0),
            ..Default::default()
        },
        params: serde_json::to_value(params).unwrap_or(Value::Null),
    })
}

// ---------------------------------------------------------------------------
// Generalized cylinders and cones

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneralizedKind {
    Cylinder,
    Cone,
}

type RulingFn = dyn Fn(&[Jet], &[Jet]) -> Vec<Vec<Jet>> + Send + Sync;

/// Input to [`build_generalized`].
#[derive(Clone)]
pub struct GeneralizedData {
    pub name: String,
    pub kind: GeneralizedKind,
    /// `g: L → Q_c^N`, on the base chart.
    pub base: MapRef,
    pub ambient: AmbientSpace,
    /// Given base chart variables and `g(x)`, ambient vectors spanning the
    /// ruling subbundle (a parallel flat normal subbundle for cylinders, the
    /// normal bundle of the umbilical inclusion for cones).
    pub rulings: Arc<RulingFn>,
    /// Box for the ruling coordinates.
    pub ruling_lower: Vec<f64>,
    pub ruling_upper: Vec<f64>,
    pub expected: Expected,
}

/// `f(x, t) = exp_{g(x)}(Σ t_a ξ_a(x))` over the product chart.
pub fn build_generalized(data: GeneralizedData) -> Result<CatalogItem> {
    data.ambient.validate()?;
    let bd = data.base.domain();
    let mut lower = bd.lower.clone();
    let mut upper = bd.upper.clone();
    lower.extend(&data.ruling_lower);
    upper.extend(&data.ruling_upper);
    let m = bd.dim();
    let nu = data.ruling_lower.len();
    let c = data.ambient.curvature();
    let signs = data.ambient.signs();
    let dim = data.ambient.realization_dim();
    let base = data.base.clone();
    let rulings = data.rulings.clone();
    let map = FnMap::new(ChartDomain::new(lower, upper), dim, move |x| {
        let g = base.eval(&x[..m]);
        let xi = rulings(&x[..m], &g);
        let mut v: Vec<Jet> = g.iter().map(|e| e.lift(0.0)).collect();
        for a in 0..nu {
            for (k, vk) in v.iter_mut().enumerate() {
                *vk = &*vk + &(&x[m + a] * &xi[a][k]);
            }
        }
        space_form_exp(c, &signs, &g, &v)
    })
    .into_ref();
    Ok(CatalogItem {
        name: data.name,
        map,
        ambient: data.ambient,
        conformal: None,
        expected: data.expected,
        params: serde_json::json!({ "kind": data.kind }),
    })
}

/// Flat product torus `Π S¹(rᵢ) ⊂ R^{2k}` on angle coordinates.
fn torus(radii: Vec<f64>, domain: ChartDomain) -> MapRef {
    let k = radii.len();
    FnMap::new(domain, 2 * k, move |x| {
        let mut out = Vec::with_capacity(2 * k);
        for (i, r) in radii.iter().enumerate() {
            out.push(x[i].cos() * *r);
            out.push(x[i].sin() * *r);
        }
        out
    })
    .into_ref()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeParams {
    /// Ruling parameter `s` of `f = s·g` is centered at `s0`.
    pub s0: f64,
    pub half_width: f64,
}

impl Default for ConeParams {
    fn default() -> Self {
        ConeParams { s0: 1.0, half_width: 0.2 }
    }
}

/// 1-generalized cone in `R⁶` over the flat torus `S¹(1/√3)³ ⊂ S⁵`:
/// `f(x, t) = (1+t) g(x)`.  Leaf invariant `λ = −1/(1+t)²`.
pub fn build_torus_cone(p: &ConeParams) -> Result<CatalogItem> {
    let hw = p.half_width;
    let r = 1.0 / 3f64.sqrt();
    let base = torus(vec![r; 3], chart(&[0.0; 3], &[hw; 3]));
    let mut item = build_generalized(GeneralizedData {
        name: "torus_cone".into(),
        kind: GeneralizedKind::Cone,
        base,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        rulings: Arc::new(|_, g| vec![g.to_vec()]),
        ruling_lower: vec![p.s0 - 1.0 - hw],
        ruling_upper: vec![p.s0 - 1.0 + hw],
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(4),
            multiplicities: Some(vec![1, 1, 1, 1]),
            nu0: Some(1),
            branch: Some(NullityBranch::Cone),
            ..Default::default()
        },
    })?;
    if p.s0 - hw <= 0.0 {
        return Err(Error::Parameter("cone chart must stay away from the vertex".into()));
    }
    item.params = serde_json::to_value(p).unwrap_or(Value::Null);
    Ok(item)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CylinderParams {
    pub radii: [f64; 3],
    pub half_width: f64,
}

impl Default for CylinderParams {
    fn default() -> Self {
        CylinderParams { radii: [1.0, 0.7, 0.5], half_width: 0.2 }
    }
}

/// `R × S¹(r₁) × S¹(r₂) × S¹(r₃) ⊂ R⁷`: flat, ruled by the parallel normal `e₇`.
pub fn build_flat_cylinder(p: &CylinderParams) -> Result<CatalogItem> {
    let hw = p.half_width;
    let base = torus(p.radii.to_vec(), chart(&[0.0; 3], &[hw; 3]));
    let base7 = FnMap::new(base.domain().clone(), 7, move |x| {
        let mut v = base.eval(x);
        v.push(x[0].lift(0.0));
        v
    })
    .into_ref();
    let mut item = build_generalized(GeneralizedData {
        name: "flat_cylinder".into(),
        kind: GeneralizedKind::Cylinder,
        base: base7,
        ambient: AmbientSpace::Euclidean { dim: 7 },
        rulings: Arc::new(|x, _| {
            let z = x[0].lift(0.0);
            let mut e = vec![z.clone(); 7];
            e[6] = z.lift(1.0);
            vec![e]
        }),
        ruling_lower: vec![-hw],
        ruling_upper: vec![hw],
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(4),
            multiplicities: Some(vec![1, 1, 1, 1]),
            nu0: Some(1),
            branch: Some(NullityBranch::ConstantCurvature),
            constant_curvature: Some(0.0),
            ..Default::default()
        },
    })?;
    item.params = serde_json::to_value(p).unwrap_or(Value::Null);
    Ok(item)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiusParams {
    pub radius: f64,
    pub half_width: f64,
}

impl Default for RadiusParams {
    fn default() -> Self {
        RadiusParams { radius: 1.0, half_width: 0.2 }
    }
}

/// `R × S³(r) ⊂ R⁵` in Hopf coordinates on the sphere.
pub fn build_sphere_cylinder(p: &RadiusParams) -> Result<CatalogItem> {
    let hw = p.half_width;
    let r = p.radius;
    let base = FnMap::new(chart(&[FRAC_PI_4, 0.0, 0.0], &[hw; 3]), 5, move |x| {
        let mut v = hopf(r, &x[0], &x[1], &x[2]);
        v.push(x[0].lift(0.0));
        v
    })
    .into_ref();
    let mut item = build_generalized(GeneralizedData {
        name: "sphere_cylinder".into(),
        kind: GeneralizedKind::Cylinder,
        base,
        ambient: AmbientSpace::Euclidean { dim: 5 },
        rulings: Arc::new(|x, _| {
            let z = x[0].lift(0.0);
            let mut e = vec![z.clone(); 5];
            e[4] = z.lift(1.0);
            vec![e]
        }),
        ruling_lower: vec![-hw],
        ruling_upper: vec![hw],
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(2),
            multiplicities: Some(vec![3, 1]),
            nu0: Some(1),
            branch: Some(NullityBranch::Cone),
            ..Default::default()
        },
    })?;
    item.params = serde_json::to_value(p).unwrap_or(Value::Null);
    Ok(item)
}

// ---------------------------------------------------------------------------
// Products

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct S3S1Params {
    pub r1: f64,
    pub r2: f64,
    pub half_width: f64,
}

impl Default for S3S1Params {
    fn default() -> Self {
        S3S1Params { r1: 0.8, r2: 0.6, half_width: 0.25 }
    }
}

fn s3s1_expected(principal: bool) -> Expected {
    Expected {
        conformally_flat: true,
        flat_normal_bundle: true,
        principal_chart: principal,
        k: Some(2),
        multiplicities: Some(vec![3, 1]),
        nu0: Some(0),
        ..Default::default()
    }
}

/// `S³(r₁) × S¹(r₂) ⊂ R⁶` on `(η, ξ₁, ξ₂, θ)`: Hopf coordinates on the
/// sphere and arc angle on the circle.  These are principal.  The flat chart
/// is `Φ = e^{(r₂/r₁)θ} · hopf(1; η, ξ₁, ξ₂)` with `ω = log r₁ − (r₂/r₁)θ`.
pub fn build_s3xs1(p: &S3S1Params) -> Result<CatalogItem> {
    let S3S1Params { r1, r2, half_width: hw } = *p;
    if r1 <= 0.0 || r2 <= 0.0 {
        return Err(Error::Parameter("radii must be positive".into()));
    }
    let domain = chart(&[FRAC_PI_4, 0.0, 0.0, 0.0], &[hw; 4]);
    let map = FnMap::new(domain.clone(), 6, move |x| {
        let mut v = hopf(r1, &x[0], &x[1], &x[2]);
        v.push(x[3].cos() * r2);
        v.push(x[3].sin() * r2);
        v
    })
    .into_ref();
    let k = r2 / r1;
    let omega = scalar(domain.clone(), move |x| -(&x[3] * k) + r1.ln());
    let flat = FnMap::new(domain, 4, move |x| {
        let e = (&x[3] * k).exp();
        hopf(1.0, &x[0], &x[1], &x[2]).iter().map(|c| c * &e).collect()
    })
    .into_ref();
    Ok(CatalogItem {
        name: "s3xs1".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        conformal: Some(ConformalStructure::with_flat_chart(omega, flat)),
        expected: s3s1_expected(true),
        params: serde_json::to_value(p).unwrap_or(Value::Null),
    })
}

/// `S³(r₁) × S¹(r₂)` on `R⁴ ∖ {0}`:
/// `x ↦ (r₁ x/|x|, r₂ cos((r₁/r₂) log|x|), r₂ sin((r₁/r₂) log|x|))`,
/// conformal to the Euclidean chart metric with `ω = log(r₁/|x|)`.
pub fn build_s3xs1_cone_chart(p: &S3S1Params) -> Result<CatalogItem> {
    let S3S1Params { r1, r2, half_width: hw } = *p;
    if r1 <= 0.0 || r2 <= 0.0 {
        return Err(Error::Parameter("radii must be positive".into()));
    }
    let domain = chart(&[0.6, 0.5, -0.4, 0.3], &[hw; 4]);
    let map = FnMap::new(domain.clone(), 6, move |x| {
        let rr = dot(x, x).sqrt();
        let inv = rr.recip() * r1;
        let t = rr.ln() * (r1 / r2);
        let mut v: Vec<Jet> = x.iter().map(|c| c * &inv).collect();
        v.push(t.cos() * r2);
        v.push(t.sin() * r2);
        v
    })
    .into_ref();
    let omega = scalar(domain, move |x| -(dot(x, x).ln() * 0.5) + r1.ln());
    Ok(CatalogItem {
        name: "s3xs1_cone_chart".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        conformal: Some(ConformalStructure::new(omega)),
        expected: s3s1_expected(false),
        params: serde_json::to_value(p).unwrap_or(Value::Null),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudosphereParams {
    /// Center of the tractrix parameter `t > 0`.
    pub t0: f64,
    pub half_width: f64,
}

impl Default for PseudosphereParams {
    fn default() -> Self {
        PseudosphereParams { t0: 1.0, half_width: 0.2 }
    }
}

/// Pseudosphere `(sech t cos s, sech t sin s, t − tanh t)`, curvature −1.
fn pseudosphere(t: &Jet, s: &Jet) -> Vec<Jet> {
    let sech = t.cosh().recip();
    vec![&sech * &s.cos(), &sech * &s.sin(), t - &t.tanh()]
}

/// Gaussian curvature of the pseudosphere patch at `(t, s)`, from its metric.
pub fn pseudosphere_curvature(t: f64, s: f64) -> Result<f64> {
    let x = seed(&[t, s], 3);
    let p = pseudosphere(&x[0], &x[1]);
    let d: Vec<Vec<Jet>> = (0..2).map(|i| p.iter().map(|c| c.partial(i)).collect()).collect();
    let g3: Vec<Vec<Jet>> = (0..2).map(|i| (0..2).map(|j| dot(&d[i], &d[j])).collect()).collect();
    let r = crate::curvature::riemann_from_metric(&g3)?;
    let gv = crate::linalg::values(&g3);
    Ok(r.get(0, 1, 1, 0) / gv.determinant())
}

/// `S²(1) × pseudosphere ⊂ R³ × R³` on `(θ, φ, t, s)`.  Conformally flat with
/// `ω = −log cosh t` against the flat chart `Φ = (cosh t · S²(θ, φ), s)`.
pub fn build_s2_pseudosphere(p: &PseudosphereParams) -> Result<CatalogItem> {
    let hw = p.half_width;
    if p.t0 - hw <= 0.05 {
        return Err(Error::Parameter("pseudosphere chart must avoid the cusp edge t = 0".into()));
    }
    for (t, s) in [(p.t0 - hw, -hw), (p.t0, 0.0), (p.t0 + hw, hw)] {
        let k = pseudosphere_curvature(t, s)?;
        if (k + 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("pseudosphere curvature {k} at t = {t}")));
        }
    }
    let domain = chart(&[1.2, 0.0, p.t0, 0.0], &[hw; 4]);
    let map = FnMap::new(domain.clone(), 6, |x| {
        let mut v = spherical2(1.0, &x[0], &x[1]);
        v.extend(pseudosphere(&x[2], &x[3]));
        v
    })
    .into_ref();
    let omega = scalar(domain.clone(), |x| -x[2].cosh().ln());
    let flat = FnMap::new(domain, 4, |x| {
        let ch = x[2].cosh();
        let mut v: Vec<Jet> = spherical2(1.0, &x[0], &x[1]).iter().map(|c| c * &ch).collect();
        v.push(x[3].clone());
        v
    })
    .into_ref();
    Ok(CatalogItem {
        name: "s2_pseudosphere".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        conformal: Some(ConformalStructure::with_flat_chart(omega, flat)),
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(3),
            multiplicities: Some(vec![2, 1, 1]),
            nu0: Some(0),
            ..Default::default()
        },
        params: serde_json::to_value(p).unwrap_or(Value::Null),
    })
}

/// `S²(1) × S²(1) ⊂ R⁶`: flat normal bundle, holonomic, not conformally flat.
pub fn build_s2xs2_control() -> Result<CatalogItem> {
    let domain = chart(&[1.2, 0.0, 1.0, 0.5], &[0.2; 4]);
    let map = FnMap::new(domain, 6, |x| {
        let mut v = spherical2(1.0, &x[0], &x[1]);
        v.extend(spherical2(1.0, &x[2], &x[3]));
        v
    })
    .into_ref();
    Ok(CatalogItem {
        name: "s2xs2_control".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        conformal: None,
        expected: Expected {
            conformally_flat: false,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(2),
            multiplicities: Some(vec![2, 2]),
            nu0: Some(0),
            negative_control: Some("conformal".into()),
            ..Default::default()
        },
        params: Value::Null,
    })
}

// ---------------------------------------------------------------------------
// Baselines

fn flat_omega(domain: ChartDomain) -> ConformalStructure {
    ConformalStructure::new(scalar(domain, |x| x[0].lift(0.0)))
}

/// `R⁴ → R⁶`, `x ↦ (x, 1, 0)`.
pub fn build_flat_inclusion() -> Result<CatalogItem> {
    let domain = chart(&[0.1, -0.2, 0.3, 0.2], &[0.25; 4]);
    let map = FnMap::new(domain.clone(), 6, |x| {
        let mut v = x.to_vec();
        v.push(x[0].lift(1.0));
        v.push(x[0].lift(0.0));
        v
    })
    .into_ref();
    Ok(CatalogItem {
        name: "flat_inclusion".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        conformal: Some(flat_omega(domain)),
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(1),
            multiplicities: Some(vec![4]),
            nu0: Some(4),
            constant_curvature: Some(0.0),
            ..Default::default()
        },
        params: Value::Null,
    })
}

/// Inverse stereographic projection `R⁴ → S⁴ ⊂ R⁵`, `ω = log(2/(1+|x|²))`.
pub fn build_stereographic_sphere() -> Result<CatalogItem> {
    let domain = chart(&[0.3, -0.2, 0.1, 0.4], &[0.25; 4]);
    let map = FnMap::new(domain.clone(), 5, |x| {
        let r2 = dot(x, x);
        let d = (&r2 + 1.0).recip();
        let mut v: Vec<Jet> = x.iter().map(|c| &(c * &d) * 2.0).collect();
        v.push(&(-&r2 + 1.0) * &d);
        v
    })
    .into_ref();
    let omega = scalar(domain, |x| (2.0 / (dot(x, x) + 1.0)).ln());
    Ok(CatalogItem {
        name: "stereographic_sphere".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 5 },
        conformal: Some(ConformalStructure::new(omega)),
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(1),
            multiplicities: Some(vec![4]),
            nu0: Some(0),
            constant_curvature: Some(1.0),
            ..Default::default()
        },
        params: Value::Null,
    })
}

/// `τ(y) = y/|y|²` on `R⁶`.
pub fn inversion(dim: usize) -> MapRef {
    FnMap::new(ChartDomain::around(&vec![0.0; dim], 1e6), dim, |y| {
        let r = dot(y, y).recip();
        y.iter().map(|c| c * &r).collect()
    })
    .into_ref()
}

/// Conformal factor of [`inversion`]: `τ*δ = λ² δ` with `λ = 1/|y|²`.
pub fn inversion_factor(dim: usize) -> MapRef {
    scalar(ChartDomain::around(&vec![0.0; dim], 1e6), |y| dot(y, y).recip())
}

/// Inversion of the flat inclusion: a round 4-sphere through the origin,
/// with `ω = −log(1 + |x|²)`.
pub fn build_inverted_flat() -> Result<CatalogItem> {
    let flat = build_flat_inclusion()?;
    let domain = flat.domain().clone();
    let inner = flat.map.clone();
    let map = FnMap::new(domain.clone(), 6, move |x| {
        let y = inner.eval(x);
        let r = dot(&y, &y).recip();
        y.iter().map(|c| c * &r).collect()
    })
    .into_ref();
    let omega = scalar(domain, |x| -(dot(x, x) + 1.0).ln());
    Ok(CatalogItem {
        name: "inverted_flat".into(),
        map,
        ambient: AmbientSpace::Euclidean { dim: 6 },
        conformal: Some(ConformalStructure::new(omega)),
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(1),
            multiplicities: Some(vec![4]),
            nu0: Some(0),
            constant_curvature: Some(4.0),
            ..Default::default()
        },
        params: Value::Null,
    })
}

/// Flat torus `S¹(1/√3)³ ⊂ S⁵`.
pub fn build_torus_in_s5() -> Result<CatalogItem> {
    let r = 1.0 / 3f64.sqrt();
    let map = torus(vec![r; 3], chart(&[0.0; 3], &[0.25; 3]));
    Ok(CatalogItem {
        name: "torus_s5".into(),
        map,
        ambient: AmbientSpace::Sphere { dim: 5, c: 1.0 },
        conformal: None,
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(3),
            multiplicities: Some(vec![1, 1, 1]),
            nu0: Some(0),
            constant_curvature: Some(0.0),
            ..Default::default()
        },
        params: Value::Null,
    })
}

/// Geodesic sphere of radius `ρ` in `H⁴ ⊂ L⁵`, Hopf coordinates.
pub fn build_sphere_in_h4(p: &RadiusParams) -> Result<CatalogItem> {
    let rho = p.radius;
    let map = FnMap::new(chart(&[FRAC_PI_4, 0.0, 0.0], &[p.half_width; 3]), 5, move |x| {
        let mut v = vec![x[0].lift(rho.cosh())];
        v.extend(hopf(rho.sinh(), &x[0], &x[1], &x[2]));
        v
    })
    .into_ref();
    let k = 1.0 / rho.sinh().powi(2);
    Ok(CatalogItem {
        name: "sphere_h4".into(),
        map,
        ambient: AmbientSpace::Hyperbolic { dim: 4, c: -1.0 },
        conformal: None,
        expected: Expected {
            conformally_flat: true,
            flat_normal_bundle: true,
            principal_chart: true,
            k: Some(1),
            multiplicities: Some(vec![3]),
            nu0: Some(0),
            constant_curvature: Some(k),
            ..Default::default()
        },
        params: serde_json::to_value(p).unwrap_or(Value::Null),
    })
}

// ---------------------------------------------------------------------------
// Registry

/// Names accepted by [`build`].
pub const NAMES: &[&str] = &[
    "flat_inclusion",
    "stereographic_sphere",
    "inverted_flat",
    "torus_s5",
    "sphere_h4",
    "example2",
    "s3xs1",
    "s3xs1_cone_chart",
    "s2_pseudosphere",
    "s2xs2_control",
    "torus_cone",
    "flat_cylinder",
    "sphere_cylinder",
];

/// Build a catalog item by name from a JSON parameter record (`null` for defaults).
pub fn build(name: &str, params: &Value) -> Result<CatalogItem> {
    match name {
        "flat_inclusion" => build_flat_inclusion(),
        "stereographic_sphere" => build_stereographic_sphere(),
        "inverted_flat" => build_inverted_flat(),
        "torus_s5" => build_torus_in_s5(),
        "sphere_h4" => build_sphere_in_h4(&parse(params)?),
        "example2" => build_example2(&parse(params)?),
        "s3xs1" => build_s3xs1(&parse(params)?),
        "s3xs1_cone_chart" => build_s3xs1_cone_chart(&parse(params)?),
        "s2_pseudosphere" => build_s2_pseudosphere(&parse(params)?),
        "s2xs2_control" => build_s2xs2_control(),
        "torus_cone" => build_torus_cone(&parse(params)?),
        "flat_cylinder" => build_flat_cylinder(&parse(params)?),
        "sphere_cylinder" => build_sphere_cylinder(&parse(params)?),
        other => Err(Error::Parameter(format!("unknown catalog item {other:?}"))),
    }
}

/// Every item with default parameters.
pub fn all() -> Result<Vec<CatalogItem>> {
    NAMES.iter().map(|n| build(n, &Value::Null)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_every_name() {
        let items = all().unwrap();
        assert_eq!(items.len(), NAMES.len());
        for (it, n) in items.iter().zip(NAMES) {
            assert_eq!(it.name, *n);
            assert_eq!(it.map.codomain_dim(), it.ambient.realization_dim());
        }
    }

    #[test]
    fn example2_rejects_bad_radii() {
        let p = Example2Params { r1: 0.8, r2: 0.8, ..Default::default() };
        assert!(matches!(build_example2(&p), Err(Error::Parameter(_))));
    }

    #[test]
    fn loxodrome_is_unit_speed() {
        SphericalCurve::Loxodrome { radius: 0.8, bearing: 0.7, lat0: 0.3 }.validate(-0.3, 0.3).unwrap();
    }

    #[test]
    fn spherical_exponential_is_a_geodesic() {
        let x = [1.0, 0.0, 0.0];
        let dir = [0.0, 0.6, 0.8];
        for k in 0..=10 {
            let t = 0.3 * k as f64;
            let xs: Vec<Jet> = x.iter().map(|c| Jet::constant(*c, 1, 0)).collect();
            let vs: Vec<Jet> = dir.iter().map(|c| Jet::constant(c * t, 1, 0)).collect();
            let out = space_form_exp(1.0, &[1.0; 3], &xs, &vs);
            let expect = [t.cos(), t.sin() * 0.6, t.sin() * 0.8];
            for i in 0..3 {
                assert!((out[i].value() - expect[i]).abs() < 1e-10);
            }
        }
    }
}
