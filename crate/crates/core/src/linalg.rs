//! Small dense linear-algebra helpers shared by the geometry kernels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::jet::Jet;

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Columns form a `g`-orthonormal basis: `Tᵀ g T = I`.
pub fn orthonormal_frame(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = g.clone().cholesky().ok_or_else(|| Error::LinearAlgebra("metric is not positive definite".into()))?;
    let l = chol.l();
    let linv = l.try_inverse().ok_or_else(|| Error::LinearAlgebra("singular Cholesky factor".into()))?;
    Ok(linv.transpose())
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let mut s = m.clone().svd(false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

/// A Haar-distributed `n × k` matrix with orthonormal columns.
pub fn random_orthonormal<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..k {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q.columns(0, k).into_owned()
}

/// Inner product with diagonal signature `signs`.
pub fn sdot(signs: &[f64], a: &[f64], b: &[f64]) -> f64 {
    signs.iter().zip(a.iter().zip(b)).map(|(s, (x, y))| s * x * y).sum()
}

/// Jet inner product with diagonal signature `signs`.
pub fn jet_sdot(signs: &[f64], a: &[Jet], b: &[Jet]) -> Jet {
    let mut acc = &(&a[0] * &b[0]) * signs[0];
    for k in 1..a.len() {
        let t = &a[k] * &b[k];
        acc = if signs[k] > 0.0 { acc + t } else { acc - t };
    }
    acc
}

/// Inverse of a square matrix of jets by Gauss–Jordan elimination with
/// partial pivoting on values.
pub fn jet_inverse(m: &[Vec<Jet>]) -> Result<Vec<Vec<Jet>>> {
    let n = m.len();
    let proto = &m[0][0];
    let mut a: Vec<Vec<Jet>> = m.to_vec();
    let mut inv: Vec<Vec<Jet>> =
        (0..n).map(|i| (0..n).map(|j| proto.lift(if i == j { 1.0 } else { 0.0 })).collect()).collect();
    let scale = m.iter().flatten().fold(0.0f64, |s, x| s.max(x.value().abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].value().abs().total_cmp(&a[y][col].value().abs())).unwrap();
        if a[piv][col].value().abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::LinearAlgebra("singular jet matrix".into()));
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let r = a[col][col].recip();
        for j in 0..n {
            a[col][j] = &a[col][j] * &r;
            inv[col][j] = &inv[col][j] * &r;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col].clone();
            for j in 0..n {
                a[row][j] = &a[row][j] - &(&f * &a[col][j]);
                inv[row][j] = &inv[row][j] - &(&f * &inv[col][j]);
            }
        }
    }
    Ok(inv)
}

pub fn values(m: &[Vec<Jet>]) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j].value())
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |s, x| s.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_is_orthonormal() {
        let g = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let t = orthonormal_frame(&g).unwrap();
        let e = t.transpose() * &g * &t - DMatrix::identity(3, 3);
        assert!(max_abs(&e) < 1e-14);
    }

    #[test]
    fn haar_frames_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_orthonormal(5, 4, &mut rng);
        assert!(max_abs(&(q.transpose() * &q - DMatrix::identity(4, 4))) < 1e-14);
    }

    #[test]
    fn jet_inverse_matches_derivative_identity() {
        // d(M^-1) = -M^-1 dM M^-1 for M(x) = [[1+x, x^2], [x, 2]]
        let x = Jet::variable(0.3, 0, 1, 2);
        let m = vec![vec![&x + 1.0, x.square()], vec![x.clone(), x.lift(2.0)]];
        let inv = jet_inverse(&m).unwrap();
        let mv = values(&m);
        let iv = mv.clone().try_inverse().unwrap();
        let dm = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 1.0, 0.0]);
        let d = -&iv * dm * &iv;
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv[i][j].value() - iv[(i, j)]).abs() < 1e-14);
                assert!((inv[i][j].d1(0) - d[(i, j)]).abs() < 1e-14);
            }
        }
    }
}
