//! Small dense/banded linear algebra used by the eigensolvers.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix with diagonal `diag` and off-diagonal `off`
/// (`off[i]` couples rows `i` and `i + 1`).
#[derive(Debug, Clone)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..self.diag.len() {
            let coupling = if i == 0 { 0.0 } else { self.off[i - 1] * self.off[i - 1] };
            d = self.diag[i] - x - if i == 0 { 0.0 } else { coupling / d };
            if d == 0.0 {
                d = -f64::EPSILON * (self.diag[i].abs() + x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// `k`-th smallest eigenvalue (0-based) by bisection on the Sturm count.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        assert!(k < self.len());
        let (mut lo, mut hi) = self.gershgorin();
        while hi - lo > 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Symmetric banded matrix, lower band stored row by row:
/// entry `(i, j)` with `i - bw <= j <= i` lives at `i * (bw + 1) + (i - j)`.
#[derive(Debug, Clone)]
pub struct SymBanded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            y[i] += row[0] * x[i];
            for j in lo..i {
                let a = row[i - j];
                if a != 0.0 {
                    y[i] += a * x[j];
                    y[j] += a * x[i];
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Returns `self - shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            let k = out.idx(i, i);
            out.data[k] -= shift;
        }
        out
    }

    /// Banded Cholesky factorization `A = L Lᵀ`; fails if `A` is not positive definite.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[i * w + (i - j)];
                let kmin = lo.max(j.saturating_sub(bw));
                for k in kmin..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "matrix not positive definite at pivot {i} (value {s:e})"
                        )));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (i - j)] * b[j];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..(i + bw + 1).min(n) {
                s -= self.l[j * w + (j - i)] * b[j];
            }
            b[i] = s / self.l[i * w];
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Modified Gram–Schmidt with one reorthogonalization pass. Columns that
/// collapse numerically are replaced by fresh random directions.
pub fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for i in 0..cols.len() {
        for _attempt in 0..3 {
            for _pass in 0..2 {
                for j in 0..i {
                    let (head, tail) = cols.split_at_mut(i);
                    let c = dot(&tail[0], &head[j]);
                    for (x, q) in tail[0].iter_mut().zip(&head[j]) {
                        *x -= c * q;
                    }
                }
            }
            let nrm = norm(&cols[i]);
            if nrm > 1e-300 && nrm.is_finite() {
                cols[i].iter_mut().for_each(|x| *x /= nrm);
                break;
            }
            cols[i].iter_mut().for_each(|x| *x = rng.random::<f64>() - 0.5);
        }
    }
}

/// Outcome of [`inverse_subspace_iteration`].
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Lowest `k` eigenpairs of a symmetric positive definite banded matrix by
/// shifted inverse subspace iteration with Rayleigh–Ritz extraction.
///
/// The block carries `k + guard` vectors; converged leading Ritz vectors stay
/// orthogonal to the rest through the Gram–Schmidt step, which acts as the
/// deflation. Stops when every requested Ritz value changes by less than
/// `rel_tol` relative (floored at the rounding level of the matrix norm).
pub fn inverse_subspace_iteration(
    a: &SymBanded,
    k: usize,
    shift: f64,
    rel_tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EigenPairs> {
    let n = a.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot extract {k} eigenpairs from dimension {n}")));
    }
    let p = (k + 3).min(n);
    let factor = a.shifted(shift).cholesky()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    orthonormalize(&mut block, &mut rng);

    let norm_est = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(a.bandwidth());
            let hi = (i + a.bandwidth() + 1).min(n);
            (lo..hi).map(|j| a.get(i, j).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max);
    let floor = 64.0 * f64::EPSILON * norm_est;

    let mut previous: Option<Vec<f64>> = None;
    let mut av = vec![0.0; n];
    for iter in 1..=max_iter {
        for col in block.iter_mut() {
            factor.solve_in_place(col);
        }
        orthonormalize(&mut block, &mut rng);

        let aq: Vec<Vec<f64>> = block
            .iter()
            .map(|q| {
                a.matvec(q, &mut av);
                av.clone()
            })
            .collect();
        let h = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&block[i], &aq[j]) + dot(&block[j], &aq[i])));
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let rotated: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; n];
                for (r, q) in block.iter().enumerate() {
                    let s = eig.eigenvectors[(r, c)];
                    if s != 0.0 {
                        v.iter_mut().zip(q).for_each(|(x, qq)| *x += s * qq);
                    }
                }
                v
            })
            .collect();
        block = rotated;

        if let Some(prev) = &previous {
            let done = (0..k).all(|i| (values[i] - prev[i]).abs() <= rel_tol * values[i].abs() + floor);
            if done {
                return Ok(EigenPairs {
                    values: values[..k].to_vec(),
                    vectors: block[..k].to_vec(),
                    iterations: iter,
                });
            }
        }
        previous = Some(values);
    }
    Err(Error::NoConvergence(max_iter))
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SymTridiagonal {
        SymTridiagonal::new(vec![2.0; n], vec![-1.0; n - 1])
    }

    #[test]
    fn sturm_bisection_matches_closed_form() {
        let n = 50;
        let t = laplacian_1d(n);
        for k in [0, 1, 7, 49] {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((t.eigenvalue(k) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn banded_cholesky_solves() {
        let n = 30;
        let bw = 4;
        let mut a = SymBanded::zeros(n, bw);
        for i in 0..n {
            a.set(i, i, 10.0 + i as f64 * 0.1);
            for j in i.saturating_sub(bw)..i {
                a.set(i, j, 1.0 / (1.0 + (i - j) as f64) - 0.3);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x, &mut b);
        a.cholesky().unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
        let dense = a.to_dense();
        assert_eq!(dense, dense.transpose());
    }

    #[test]
    fn subspace_iteration_matches_bisection() {
        let n = 200;
        let t = laplacian_1d(n);
        let mut a = SymBanded::zeros(n, 1);
        for i in 0..n {
            a.set(i, i, t.diag[i] + 0.01 * (i as f64 / n as f64).powi(2));
            if i > 0 {
                a.set(i, i - 1, -1.0);
            }
        }
        let t2 = SymTridiagonal::new((0..n).map(|i| a.get(i, i)).collect(), vec![-1.0; n - 1]);
        let pairs = inverse_subspace_iteration(&a, 4, 0.0, 1e-12, 100_000, 7).unwrap();
        for k in 0..4 {
            let b = t2.eigenvalue(k);
            assert!((pairs.values[k] - b).abs() < 1e-10 * b.max(1e-3), "k={k}");
        }
        for i in 0..4 {
            for j in 0..4 {
                let d = dot(&pairs.vectors[i], &pairs.vectors[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymBanded::zeros(2, 1);
        a.set(0, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(1, 0, 2.0);
        assert!(a.cholesky().is_err());
    }
}
