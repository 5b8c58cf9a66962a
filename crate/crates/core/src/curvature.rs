//! Riemann, Ricci, scalar, Schouten and sectional curvature.
//!
//! Convention: `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`,
//! `R(X,Y,Z,W) = ⟨R(X,Y)Z, W⟩`, so the sectional curvature of an orthonormal
//! pair is `K(X,Y) = R(X,Y,Y,X)` and the round unit sphere has `K = 1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::linalg::{jet_inverse, values};

/// Fully covariant Riemann tensor in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Riemann {
    pub n: usize,
    data: Vec<f64>,
}

impl Riemann {
    pub fn zeros(n: usize) -> Self {
        Riemann { n, data: vec![0.0; n * n * n * n] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.n + j) * self.n + k) * self.n + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.idx(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let t = self.idx(i, j, k, l);
        self.data[t] = v;
    }

    /// Build from a closure over index quadruples.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut r = Riemann::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        r.set(i, j, k, l, f(i, j, k, l));
                    }
                }
            }
        }
        r
    }

    /// `R(X,Y,Z,W)` for chart-coordinate vectors.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let xy = x[i] * y[j];
                if xy == 0.0 {
                    continue;
                }
                for k in 0..n {
                    let xyz = xy * z[k];
                    for l in 0..n {
                        acc += xyz * w[l] * self.get(i, j, k, l);
                    }
                }
            }
        }
        acc
    }

    /// Sectional curvature of the plane spanned by `x, y`.
    pub fn sectional(&self, g: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let gxx = (x.transpose() * g * x)[0];
        let gyy = (y.transpose() * g * y)[0];
        let gxy = (x.transpose() * g * y)[0];
        self.apply(x, y, y, x) / (gxx * gyy - gxy * gxy)
    }

    /// `Ric(Y,Z) = g^{il} R(∂_i, Y, Z, ∂_l)`.
    pub fn ricci(&self, ginv: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |j, k| {
            let mut s = 0.0;
            for i in 0..n {
                for l in 0..n {
                    s += ginv[(i, l)] * self.get(i, j, k, l);
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |s, x| s.max(x.abs()))
    }

    pub fn max_diff(&self, other: &Riemann) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |s, (a, b)| s.max((a - b).abs()))
    }

    /// Largest violation of the algebraic symmetries (antisymmetry in each
    /// pair, pair symmetry, first Bianchi identity).
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut d = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let r = self.get(i, j, k, l);
                        d = d.max((r + self.get(j, i, k, l)).abs());
                        d = d.max((r + self.get(i, j, l, k)).abs());
                        d = d.max((r - self.get(k, l, i, j)).abs());
                        d = d.max((r + self.get(j, k, i, l) + self.get(k, i, j, l)).abs());
                    }
                }
            }
        }
        d
    }

    /// Constant-curvature tensor `c (g_il g_jk − g_ik g_jl)`.
    pub fn constant_curvature(g: &DMatrix<f64>, c: f64) -> Self {
        Riemann::from_fn(g.nrows(), |i, j, k, l| c * (g[(i, l)] * g[(j, k)] - g[(i, k)] * g[(j, l)]))
    }
}

/// Riemann tensor of a metric given as order-2 jets `g[i][j]`.
pub fn riemann_from_metric(g: &[Vec<Jet>]) -> Result<Riemann> {
    let n = g.len();
    if g[0][0].order() < 2 {
        return Err(Error::Dimension("metric curvature needs second derivatives".into()));
    }
    let g1: Vec<Vec<Jet>> = g.iter().map(|r| r.iter().map(|x| x.truncate(1)).collect()).collect();
    let ginv = jet_inverse(&g1)?;
    // first-kind symbols [ij, m] as order-1 jets
    let dg = |i: usize, j: usize, m: usize| g[i][j].partial(m);
    let mut gamma = vec![vec![vec![g1[0][0].lift(0.0); n]; n]; n]; // gamma[l][i][j]
    for i in 0..n {
        for j in i..n {
            let first: Vec<Jet> = (0..n).map(|m| &(&(&dg(j, m, i) + &dg(i, m, j)) - &dg(i, j, m)) * 0.5).collect();
            for l in 0..n {
                let mut s = &ginv[l][0] * &first[0];
                for m in 1..n {
                    s = s + &ginv[l][m] * &first[m];
                }
                gamma[l][j][i] = s.clone();
                gamma[l][i][j] = s;
            }
        }
    }
    let gv = values(g);
    let mut r = Riemann::zeros(n);
    // R_ijk^l = ∂_i Γ^l_jk − ∂_j Γ^l_ik + Γ^l_im Γ^m_jk − Γ^l_jm Γ^m_ik
    let mut up = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for (l, slot) in up.iter_mut().enumerate() {
                    let mut v = gamma[l][j][k].d1(i) - gamma[l][i][k].d1(j);
                    for m in 0..n {
                        v += gamma[l][i][m].value() * gamma[m][j][k].value()
                            - gamma[l][j][m].value() * gamma[m][i][k].value();
                    }
                    *slot = v;
                }
                for l in 0..n {
                    let low: f64 = (0..n).map(|m| gv[(l, m)] * up[m]).sum();
                    r.set(i, j, k, l, low);
                }
            }
        }
    }
    Ok(r)
}

/// Intrinsic curvature quantities at a point.
#[derive(Clone, Debug)]
pub struct CurvaturePack {
    pub metric: DMatrix<f64>,
    pub metric_inv: DMatrix<f64>,
    pub riemann: Riemann,
    /// Ricci by contraction of `riemann`.
    pub ricci: DMatrix<f64>,
    /// Ricci from an independent closed formula, when the caller has one.
    pub ricci_formula: Option<DMatrix<f64>>,
    pub scalar: f64,
    schouten: Option<DMatrix<f64>>,
}

impl CurvaturePack {
    pub fn new(metric: DMatrix<f64>, riemann: Riemann, ricci_formula: Option<DMatrix<f64>>) -> Result<Self> {
        let metric_inv = metric.clone().try_inverse().ok_or_else(|| Error::LinearAlgebra("singular metric".into()))?;
        let ricci = riemann.ricci(&metric_inv);
        let scalar = (&metric_inv * &ricci).trace();
        let n = metric.nrows();
        let schouten = (n >= 3).then(|| (&ricci - &metric * (scalar / (2.0 * (n as f64 - 1.0)))) / (n as f64 - 2.0));
        Ok(CurvaturePack { metric, metric_inv, riemann, ricci, ricci_formula, scalar, schouten })
    }

    pub fn dim(&self) -> usize {
        self.metric.nrows()
    }

    pub fn schouten(&self) -> Result<&DMatrix<f64>> {
        self.schouten.as_ref().ok_or_else(|| Error::Dimension("Schouten tensor needs n >= 3".into()))
    }

    pub fn sectional(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.riemann.sectional(&self.metric, x, y)
    }

    /// Largest deviation between the two Ricci computations, if both exist.
    pub fn ricci_disagreement(&self) -> Option<f64> {
        self.ricci_formula.as_ref().map(|f| (f - &self.ricci).iter().fold(0.0f64, |s, x| s.max(x.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::seed;

    /// Round metric of curvature 1 in stereographic coordinates.
    fn stereo_metric(x: &[f64]) -> Vec<Vec<Jet>> {
        let v = seed(x, 2);
        let r2 = crate::jet::dot(&v, &v);
        let f = (4.0 / (&r2 + 1.0).square()).clone();
        (0..x.len()).map(|i| (0..x.len()).map(|j| if i == j { f.clone() } else { f.lift(0.0) }).collect()).collect()
    }

    #[test]
    fn stereographic_sphere_has_unit_curvature() {
        let g = stereo_metric(&[0.3, -0.2, 0.1, 0.5]);
        let r = riemann_from_metric(&g).unwrap();
        let gv = values(&g);
        let c = Riemann::constant_curvature(&gv, 1.0);
        assert!(r.max_diff(&c) < 1e-12 * c.max_abs());
        assert!(r.symmetry_defect() < 1e-12);
        let pack = CurvaturePack::new(gv.clone(), r, None).unwrap();
        assert!((pack.scalar - 12.0).abs() < 1e-11);
        let l = pack.schouten().unwrap();
        assert!((l - &gv * 0.5).iter().all(|x| x.abs() < 1e-11));
    }

    #[test]
    fn schouten_needs_three_dimensions() {
        let g = stereo_metric(&[0.1, 0.2]);
        let r = riemann_from_metric(&g).unwrap();
        let pack = CurvaturePack::new(values(&g), r, None).unwrap();
        assert!(matches!(pack.schouten(), Err(Error::Dimension(_))));
    }
}
