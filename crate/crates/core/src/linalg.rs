//! Small dense and banded linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric positive definite band matrix in lower-band storage.
///
/// `band[i][k]` holds entry `(i, i - k)` for `k <= bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bandwidth: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        BandedSpd {
            n,
            bandwidth,
            band: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` to entry `(i, j)` and its mirror; requires `|i - j| <= bandwidth`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        assert!(k <= self.bandwidth, "entry ({i},{j}) outside band");
        self.band[r * (self.bandwidth + 1) + k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        if k > self.bandwidth {
            0.0
        } else {
            self.band[r * (self.bandwidth + 1) + k]
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// In-place banded Cholesky `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let w = self.bandwidth + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bandwidth);
            for j in j0..=i {
                let mut s = self.band[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(self.bandwidth));
                for k in k0..j {
                    s -= self.band[i * w + (i - k)] * self.band[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Singular(format!(
                            "banded Cholesky pivot {s:e} at row {i}"
                        )));
                    }
                    self.band[i * w] = s.sqrt();
                } else {
                    self.band[i * w + (i - j)] = s / self.band[j * w];
                }
            }
        }
        Ok(BandedCholesky { factor: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    factor: BandedSpd,
}

impl BandedCholesky {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let f = &self.factor;
        let w = f.bandwidth + 1;
        let n = f.n;
        let mut x = rhs.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(f.bandwidth)..i {
                s -= f.band[i * w + (i - k)] * x[k];
            }
            x[i] = s / f.band[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n.min(i + w) {
                s -= f.band[k * w + (k - i)] * x[k];
            }
            x[i] = s / f.band[i * w];
        }
        x
    }
}

/// Solves a symmetric tridiagonal system by the Thomas algorithm.
///
/// `diag` has length n and `off` length n-1 (both sub- and super-diagonal).
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    assert_eq!(off.len() + 1, n.max(1));
    assert_eq!(rhs.len(), n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::Singular("zero pivot in tridiagonal solve".into()));
    }
    if n > 1 {
        c[0] = off[0] / denom;
    }
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Singular(format!("zero pivot at row {i}")));
        }
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
///
/// Each eigenvector is normalised so that its first entry with magnitude
/// above `1e-12` is positive.
pub fn sorted_eigen(m: &DMatrix<f64>, descending: bool) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        let o = x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal);
        let o = if descending { o.reverse() } else { o };
        o.then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        fix_sign(&mut v);
        vectors.set_column(c, &v);
    }
    (values, vectors)
}

/// Flips `v` so that its first non-negligible component is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let scale = v.amax().max(f64::MIN_POSITIVE);
    if let Some(x) = v.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *x < 0.0 {
            v.neg_mut();
        }
    }
}

/// Applies a scalar function to the spectrum of a symmetric matrix.
pub fn sym_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mapped = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Solves `M x = b` for symmetric positive definite `M`.
///
/// Falls back to a symmetric eigen-solve when Cholesky fails; errors if the
/// matrix is numerically indefinite. `lambda` is carried for diagnostics.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > max * 1e-14) {
        return Err(Error::Factorization {
            lambda,
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    let inv = eig.eigenvalues.map(|x| 1.0 / x);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * (eig.eigenvectors.transpose() * b))
}

pub fn spd_solve_vec(m: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    Ok(spd_solve(m, &bm, lambda)?.column(0).into_owned())
}

/// Spectral condition number of a symmetric matrix; diagnostics only.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Correctly rounded sum (Shewchuk partials with a half-even fix-up), so
/// the result does not depend on summation order. Falls back to plain
/// summation if any term is non-finite.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut special = 0.0;
    for mut x in values {
        if !x.is_finite() {
            special += x;
            continue;
        }
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if special != 0.0 || special.is_nan() {
        return special + partials.iter().sum::<f64>();
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        let y = partials[n - 1];
        n -= 1;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}
