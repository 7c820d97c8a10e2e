//! Small dense and sparse linear algebra: cosine, symmetric eigensolvers and
//! a truncated eigendecomposition by subspace iteration.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Stream;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let nn = dot(a, a) * dot(b, b);
    if nn == 0.0 {
        return 0.0;
    }
    dot(a, b) / libm::sqrt(nn)
}

/// Eigen-decomposition of a symmetric `n x n` row-major matrix by cyclic
/// Jacobi rotations. Returns `(values, vectors)` where `vectors[i]` is the
/// eigenvector paired with `values[i]`, sorted by descending value.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Singular values of a `rows.len() x cols` matrix, descending.
pub fn singular_values(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.len();
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let g = dot(&rows[i], &rows[j]);
            gram[i * k + j] = g;
            gram[j * k + i] = g;
        }
    }
    let (values, _) = symmetric_eigen(&gram, k);
    values.into_iter().map(|l| libm::sqrt(l.max(0.0))).collect()
}

/// Symmetric sparse matrix in compressed-row form.
#[derive(Clone, Debug, Default)]
pub struct SparseSymmetric {
    pub n: usize,
    pub row_start: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds from per-row `(col, value)` lists; caller guarantees symmetry.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut m = SparseSymmetric { n, row_start: Vec::with_capacity(n + 1), ..Default::default() };
        m.row_start.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                m.col.push(c);
                m.val.push(v);
            }
            m.row_start.push(m.col.len());
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for i in self.row_start[r]..self.row_start[r + 1] {
                acc += self.val[i] * x[self.col[i]];
            }
            out[r] = acc;
        }
    }
}

/// Truncated eigendecomposition of a symmetric sparse matrix: the `dim`
/// eigenpairs of largest magnitude, by seeded subspace iteration followed by
/// Rayleigh-Ritz. Each returned eigenvector has its largest-magnitude entry
/// made positive. Returns `(values, vectors)` sorted by descending |value|.
pub fn truncated_eigen(m: &SparseSymmetric, dim: usize, iterations: usize, rng: &mut Stream) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.n;
    let dim = dim.min(n);
    let p = (dim + 8).min(n);
    let mut basis: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.uniform() - 0.5).collect()).collect();
    orthonormalize(&mut basis);
    let mut tmp = vec![0.0; n];
    for _ in 0..iterations {
        for b in basis.iter_mut() {
            m.mul_vec(b, &mut tmp);
            b.copy_from_slice(&tmp);
        }
        orthonormalize(&mut basis);
    }
    let images: Vec<Vec<f64>> = basis
        .iter()
        .map(|b| {
            let mut out = vec![0.0; n];
            m.mul_vec(b, &mut out);
            out
        })
        .collect();
    let mut small = vec![0.0; p * p];
    for i in 0..p {
        for j in i..p {
            let v = dot(&basis[i], &images[j]);
            small[i * p + j] = v;
            small[j * p + i] = v;
        }
    }
    let (vals, vecs) = symmetric_eigen(&small, p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
    let mut values = Vec::with_capacity(dim);
    let mut vectors = Vec::with_capacity(dim);
    for &i in order.iter().take(dim) {
        let mut u = vec![0.0; n];
        for (coef, b) in vecs[i].iter().zip(&basis) {
            for (x, y) in u.iter_mut().zip(b) {
                *x += coef * y;
            }
        }
        fix_sign(&mut u);
        values.push(vals[i]);
        vectors.push(u);
    }
    (values, vectors)
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Vectors whose
/// residual falls below 1e-10 of their original norm are zeroed.
fn orthonormalize(basis: &mut [Vec<f64>]) {
    for i in 0..basis.len() {
        let original = norm(&basis[i]);
        for _pass in 0..2 {
            for j in 0..i {
                let (head, tail) = basis.split_at_mut(i);
                let proj = dot(&tail[0], &head[j]);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= proj * y;
                }
            }
        }
        let nv = norm(&basis[i]);
        if nv > 1e-10 * original && nv > 1e-300 {
            basis[i].iter_mut().for_each(|x| *x /= nv);
        } else {
            basis[i].iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_nalgebra() {
        let mut rng = Stream::new(11, 0);
        for n in 1..7 {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let x = rng.uniform() - 0.5;
                    m[i * n + j] = x;
                    m[j * n + i] = x;
                }
            }
            let (vals, vecs) = symmetric_eigen(&m, n);
            let na = nalgebra::DMatrix::from_row_slice(n, n, &m);
            let mut expected: Vec<f64> = na.symmetric_eigenvalues().iter().copied().collect();
            expected.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in vals.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10);
            }
            // A v = lambda v
            for (l, v) in vals.iter().zip(&vecs) {
                for i in 0..n {
                    let av: f64 = (0..n).map(|j| m[i * n + j] * v[j]).sum();
                    assert!((av - l * v[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn singular_values_of_orthonormal_rows() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let s = singular_values(&rows);
        assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_eigen_finds_dominant_pairs() {
        // block-diagonal with known spectrum {5, 3, 1, 0.5, ...}
        let diag = [5.0, 3.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01, 0.0, 0.0, 0.0, 0.0];
        let rows = diag.iter().enumerate().map(|(i, &d)| vec![(i, d)]).collect();
        let m = SparseSymmetric::from_rows(rows);
        let mut rng = Stream::new(1, 0);
        let (vals, vecs) = truncated_eigen(&m, 2, 100, &mut rng);
        assert!((vals[0] - 5.0).abs() < 1e-9);
        assert!((vals[1] - 3.0).abs() < 1e-9);
        assert!((vecs[0][0] - 1.0).abs() < 1e-6);
        assert!((vecs[1][1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_edges() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }
}
