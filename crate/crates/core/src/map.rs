//! Smooth maps on rectangular chart domains and their evaluation to jets.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;

/// A coordinate box `[lower, upper]` in `R^n`, optionally with a sample grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub grid_shape: Vec<usize>,
}

impl ChartDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        let n = lower.len();
        ChartDomain { lower, upper, grid_shape: vec![5; n] }
    }

    /// Box of half-width `r` around `center`.
    pub fn around(center: &[f64], r: f64) -> Self {
        Self::new(center.iter().map(|c| c - r).collect(), center.iter().map(|c| c + r).collect())
    }

    pub fn with_grid(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.len(), self.dim());
        self.grid_shape = shape;
        self
    }

    pub fn with_uniform_grid(self, per_axis: usize) -> Self {
        let n = self.dim();
        self.with_grid(vec![per_axis; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Smallest distance from `x` to the boundary, negative outside.
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (a, b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| (self.upper[i] - self.lower[i]) / (self.grid_shape[i].max(2) - 1) as f64).collect()
    }

    pub fn grid_len(&self) -> usize {
        self.grid_shape.iter().product()
    }

    /// Row-major multi-index (last axis fastest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.grid_shape[a];
            flat /= self.grid_shape[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.grid_shape).fold(0, |acc, (i, s)| acc * s + i)
    }

    pub fn grid_point_at(&self, idx: &[usize]) -> Vec<f64> {
        let h = self.spacing();
        (0..self.dim()).map(|a| self.lower[a] + h[a] * idx[a] as f64).collect()
    }

    pub fn grid_point(&self, flat: usize) -> Vec<f64> {
        self.grid_point_at(&self.multi_index(flat))
    }

    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        (0..self.grid_len()).map(|i| self.grid_point(i)).collect()
    }
}

/// A smooth map from a chart domain into `R^m`, evaluated on jets.
pub trait SmoothMap: Send + Sync {
    fn domain(&self) -> &ChartDomain;
    fn codomain_dim(&self) -> usize;
    fn eval(&self, x: &[Jet]) -> Vec<Jet>;
}

pub type MapRef = Arc<dyn SmoothMap>;

type JetFn = dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync;

/// A [`SmoothMap`] backed by a closure.
#[derive(Clone)]
pub struct FnMap {
    domain: ChartDomain,
    m: usize,
    f: Arc<JetFn>,
}

impl FnMap {
    pub fn new(
        domain: ChartDomain,
        codomain_dim: usize,
        f: impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static,
    ) -> Self {
        FnMap { domain, m: codomain_dim, f: Arc::new(f) }
    }

    pub fn into_ref(self) -> MapRef {
        Arc::new(self)
    }
}

impl fmt::Debug for FnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMap").field("domain", &self.domain).field("codomain_dim", &self.m).finish()
    }
}

impl SmoothMap for FnMap {
    fn domain(&self) -> &ChartDomain {
        &self.domain
    }
    fn codomain_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, x: &[Jet]) -> Vec<Jet> {
        (self.f)(x)
    }
}

/// A map restricted to a different domain (same formula).
pub fn restrict(map: MapRef, domain: ChartDomain) -> MapRef {
    let m = map.codomain_dim();
    FnMap::new(domain, m, move |x| map.eval(x)).into_ref()
}

/// Dense derivative tensors of a vector-valued map at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet3 {
    pub order: u8,
    pub value: Vec<f64>,
    /// `d1[c][i]`
    pub d1: Vec<Vec<f64>>,
    /// `d2[c][i * n + j]`
    pub d2: Vec<Vec<f64>>,
    /// `d3[c][(i * n + j) * n + k]`
    pub d3: Vec<Vec<f64>>,
    pub n: usize,
}

impl Jet3 {
    pub fn from_jets(jets: &[Jet], order: u8) -> Self {
        let n = jets.first().map(|j| j.nvars()).unwrap_or(0);
        let mut out = Jet3 {
            order,
            value: jets.iter().map(|j| j.value()).collect(),
            d1: Vec::new(),
            d2: Vec::new(),
            d3: Vec::new(),
            n,
        };
        for j in jets {
            if order >= 1 {
                out.d1.push((0..n).map(|i| j.d1(i)).collect());
            }
            if order >= 2 {
                out.d2.push((0..n * n).map(|ij| j.d2(ij / n, ij % n)).collect());
            }
            if order >= 3 {
                out.d3.push((0..n * n * n).map(|t| j.d3(t / (n * n), (t / n) % n, t % n)).collect());
            }
        }
        out
    }

    /// Largest entry-wise relative deviation in each derivative block:
    /// `|a - b| / max(1, |a|, |b|)`.
    pub fn max_rel_diff(&self, other: &Jet3) -> [f64; 4] {
        fn block(a: &[f64], b: &[f64]) -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs())).fold(0.0, f64::max)
        }
        fn nested(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
            a.iter().zip(b).map(|(x, y)| block(x, y)).fold(0.0, f64::max)
        }
        [
            block(&self.value, &other.value),
            nested(&self.d1, &other.d1),
            nested(&self.d2, &other.d2),
            nested(&self.d3, &other.d3),
        ]
    }
}

/// Independent variables at `point` seeded to the given order.
pub fn seed(point: &[f64], order: u8) -> Vec<Jet> {
    let n = point.len();
    point.iter().enumerate().map(|(i, x)| Jet::variable(*x, i, n, order)).collect()
}

fn check_point(map: &dyn SmoothMap, point: &[f64]) -> Result<()> {
    if point.len() != map.domain().dim() {
        return Err(Error::Dimension(format!(
            "point has {} coordinates, chart has {}",
            point.len(),
            map.domain().dim()
        )));
    }
    if !map.domain().contains(point) {
        return Err(Error::Domain { point: point.to_vec() });
    }
    Ok(())
}

/// Evaluate `map` to jets of the given order, checking the domain and finiteness.
pub fn evaluate_jets(map: &dyn SmoothMap, point: &[f64], order: u8) -> Result<Vec<Jet>> {
    check_point(map, point)?;
    let out = map.eval(&seed(point, order));
    if out.len() != map.codomain_dim() {
        return Err(Error::Dimension(format!(
            "map returned {} components, declared {}",
            out.len(),
            map.codomain_dim()
        )));
    }
    if !out.iter().all(Jet::is_finite) {
        return Err(Error::Evaluation { point: point.to_vec() });
    }
    Ok(out)
}

/// Value and derivatives up to `order` at `point`.
pub fn evaluate_jet(map: &dyn SmoothMap, point: &[f64], order: u8) -> Result<Jet3> {
    let order = order.min(crate::jet::MAX_ORDER);
    Ok(Jet3::from_jets(&evaluate_jets(map, point, order)?, order))
}

/// Plain function value.
pub fn evaluate(map: &dyn SmoothMap, point: &[f64]) -> Result<Vec<f64>> {
    Ok(evaluate_jets(map, point, 0)?.iter().map(Jet::value).collect())
}

/// Default central-difference step for second-order accurate first and
/// second derivatives: `eps^(1/4)` scaled by the point magnitude.
pub fn default_fd_step(point: &[f64]) -> f64 {
    let scale = point.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    f64::EPSILON.powf(0.25) * scale
}

/// Central finite-difference derivatives, used as an independent check of
/// the jet engine.  All stencil points must lie in the domain.
pub fn finite_difference_jet(map: &dyn SmoothMap, point: &[f64], order: u8, h: f64) -> Result<Jet3> {
    check_point(map, point)?;
    let n = point.len();
    let order = order.min(3);
    let reach = match order {
        0 => 0.0,
        1 | 2 => h,
        _ => 2.0 * h,
    };
    if map.domain().margin(point) < reach {
        return Err(Error::Domain { point: point.to_vec() });
    }
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let v: Vec<f64> = map.eval(&seed(x, 0)).iter().map(Jet::value).collect();
        if v.iter().all(|t| t.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Evaluation { point: x.to_vec() })
        }
    };
    let shifted = |x: &[f64], moves: &[(usize, f64)]| -> Vec<f64> {
        let mut y = x.to_vec();
        for (i, d) in moves {
            y[*i] += d;
        }
        y
    };
    let value = f(point)?;
    let m = value.len();
    let first = |x: &[f64]| -> Result<Vec<Vec<f64>>> {
        let mut d = vec![vec![0.0; n]; m];
        for i in 0..n {
            let p = f(&shifted(x, &[(i, h)]))?;
            let q = f(&shifted(x, &[(i, -h)]))?;
            for c in 0..m {
                d[c][i] = (p[c] - q[c]) / (2.0 * h);
            }
        }
        Ok(d)
    };
    let second = |x: &[f64]| -> Result<Vec<Vec<f64>>> {
        let f0 = f(x)?;
        let mut d = vec![vec![0.0; n * n]; m];
        for i in 0..n {
            let p = f(&shifted(x, &[(i, h)]))?;
            let q = f(&shifted(x, &[(i, -h)]))?;
            for c in 0..m {
                d[c][i * n + i] = (p[c] - 2.0 * f0[c] + q[c]) / (h * h);
            }
            for j in i + 1..n {
                let pp = f(&shifted(x, &[(i, h), (j, h)]))?;
                let pm = f(&shifted(x, &[(i, h), (j, -h)]))?;
                let mp = f(&shifted(x, &[(i, -h), (j, h)]))?;
                let mm = f(&shifted(x, &[(i, -h), (j, -h)]))?;
                for c in 0..m {
                    let v = (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h * h);
                    d[c][i * n + j] = v;
                    d[c][j * n + i] = v;
                }
            }
        }
        Ok(d)
    };
    let mut out = Jet3 { order, value, d1: vec![], d2: vec![], d3: vec![], n };
    if order >= 1 {
        out.d1 = first(point)?;
    }
    if order >= 2 {
        out.d2 = second(point)?;
    }
    if order >= 3 {
        let mut d3 = vec![vec![0.0; n * n * n]; m];
        for k in 0..n {
            let p = second(&shifted(point, &[(k, h)]))?;
            let q = second(&shifted(point, &[(k, -h)]))?;
            for c in 0..m {
                for ij in 0..n * n {
                    d3[c][ij * n + k] = (p[c][ij] - q[c][ij]) / (2.0 * h);
                }
            }
        }
        // symmetrize over all index permutations
        for block in d3.iter_mut() {
            let raw = block.clone();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let g = |a: usize, b: usize, c: usize| raw[(a * n + b) * n + c];
                        block[(i * n + j) * n + k] =
                            (g(i, j, k) + g(i, k, j) + g(j, i, k) + g(j, k, i) + g(k, i, j) + g(k, j, i)) / 6.0;
                    }
                }
            }
        }
        out.d3 = d3;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> FnMap {
        FnMap::new(ChartDomain::around(&[0.0], 1.0), 2, |x| vec![x[0].cos(), x[0].sin()])
    }

    #[test]
    fn linear_map_has_no_curvature() {
        let lin = FnMap::new(ChartDomain::around(&[0.0, 0.0], 2.0), 3, |x| {
            vec![&x[0] * 2.0 + &x[1], &x[1] * -1.0, &x[0] + 0.5]
        });
        let j = evaluate_jet(&lin, &[0.3, -0.4], 3).unwrap();
        assert_eq!(j.d1[0], vec![2.0, 1.0]);
        assert!(j.d2.iter().flatten().all(|v| *v == 0.0));
        assert!(j.d3.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn circle_derivatives_at_origin() {
        let j = evaluate_jet(&circle(), &[0.0], 2).unwrap();
        assert_eq!(j.value, vec![1.0, 0.0]);
        assert_eq!(j.d1, vec![vec![0.0], vec![1.0]]);
        assert_eq!(j.d2, vec![vec![-1.0], vec![0.0]]);
    }

    #[test]
    fn square_second_derivative_by_differences() {
        let sq = FnMap::new(ChartDomain::around(&[1.0], 1.0), 1, |x| vec![x[0].square()]);
        let fd = finite_difference_jet(&sq, &[1.0], 2, 1e-3).unwrap();
        assert!((fd.d2[0][0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn outside_domain_is_rejected() {
        assert!(matches!(evaluate_jet(&circle(), &[2.0], 1), Err(Error::Domain { .. })));
    }

    #[test]
    fn nonfinite_output_is_rejected() {
        let bad = FnMap::new(ChartDomain::around(&[0.0], 1.0), 1, |x| vec![x[0].recip()]);
        assert!(matches!(evaluate_jet(&bad, &[0.0], 1), Err(Error::Evaluation { .. })));
    }

    #[test]
    fn grid_indexing_roundtrip() {
        let d = ChartDomain::around(&[0.0, 0.0, 0.0], 1.0).with_grid(vec![3, 4, 5]);
        for flat in 0..d.grid_len() {
            assert_eq!(d.flat_index(&d.multi_index(flat)), flat);
        }
        assert_eq!(d.multi_index(1), vec![0, 0, 1]);
        assert_eq!(d.grid_point(0), vec![-1.0, -1.0, -1.0]);
    }
}
