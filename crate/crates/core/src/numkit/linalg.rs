use alloc::vec::Vec;

use super::fmath::sqrt;
use super::Matrix;
use crate::{Error, Result};

/// Singular values in descending order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    /// Sorts descending and clamps tiny negatives from rounding to zero.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrum values must be finite"));
        }
        for v in &mut values {
            *v = v.max(0.0);
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn leading(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }

    /// Number of values at or above `tau` times the leading one.
    pub fn effective_rank(&self, tau: f64) -> usize {
        let top = self.leading();
        if top <= 0.0 {
            return 0;
        }
        self.0.iter().filter(|&&v| v >= tau * top).count()
    }

    pub fn truncated(&self, k: usize) -> Spectrum {
        Spectrum(self.0.iter().copied().take(k).collect())
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("symmetric matrix columns", n, a.cols()));
    }
    let mut m = a.clone();
    let frob: f64 = m.as_slice().iter().map(|v| v * v).sum();
    if frob == 0.0 {
        return Ok(alloc::vec![0.0; n]);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum();
        if off <= frob * 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

/// Determinant by LU with partial pivoting.
pub fn determinant(a: &Matrix) -> Result<f64> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("determinant columns", n, a.cols()));
    }
    let mut m = a.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap_or(col);
        let pv = m.get(pivot, col);
        if pv == 0.0 {
            return Ok(0.0);
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m.get(col, k);
                m.set(col, k, m.get(pivot, k));
                m.set(pivot, k, tmp);
            }
            det = -det;
        }
        det *= pv;
        for r in col + 1..n {
            let f = m.get(r, col) / pv;
            for k in col..n {
                m.set(r, k, m.get(r, k) - f * m.get(col, k));
            }
        }
    }
    Ok(det)
}

/// The `k` largest singular values of the column-centered `z`.
///
/// Computed as square roots of the eigenvalues of the `d x d` Gram matrix
/// `Zc^T Zc`, which is cheap when the feature width is small.
pub fn top_singular_values(z: &Matrix, k: usize) -> Result<Spectrum> {
    let limit = z.rows().min(z.cols());
    if k > limit {
        return Err(Error::invalid(alloc::format!(
            "k = {k} exceeds min dimension {limit}"
        )));
    }
    if z.rows() == 0 {
        return Spectrum::new(Vec::new());
    }
    let mean = z.column_means();
    let mut zc = z.clone();
    for i in 0..zc.rows() {
        for (v, m) in zc.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let gram = zc.t_matmul(&zc);
    let eig = sym_eigenvalues(&gram)?;
    Spectrum::new(eig.into_iter().take(k).map(|l| sqrt(l.max(0.0))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn eigenvalues_of_known_matrix() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eigenvalues(&a).unwrap();
        assert!((e[0] - 3.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn determinant_of_known_matrix() {
        let a = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 3.0]]).unwrap();
        assert!((determinant(&a).unwrap() + 6.0).abs() < 1e-14);
        assert_eq!(determinant(&Matrix::zeros(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn rejects_k_beyond_min_dimension() {
        assert!(top_singular_values(&Matrix::zeros(3, 5), 4).is_err());
        assert_eq!(top_singular_values(&Matrix::zeros(3, 5), 3).unwrap().values(), &[0.0; 3]);
    }

    #[test]
    fn effective_rank_counts_relative_threshold() {
        let s = Spectrum::new(vec![0.5, 10.0, 0.1, 0.09]).unwrap();
        assert_eq!(s.values(), &[10.0, 0.5, 0.1, 0.09]);
        assert_eq!(s.effective_rank(0.01), 3);
        assert_eq!(Spectrum::default().effective_rank(0.01), 0);
    }
}
