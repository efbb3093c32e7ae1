//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Least-squares fit of `y` on the columns of `design`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub rss: f64,
    pub rank: usize,
}

impl LeastSquares {
    pub fn full_rank(&self) -> bool {
        self.rank == self.coefficients.len()
    }
}

/// Minimum-norm least squares through the SVD, so rank-deficient and
/// under-determined designs still produce a solution.
pub fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> LeastSquares {
    let q = design.ncols();
    if design.nrows() == 0 {
        return LeastSquares {
            coefficients: DVector::zeros(q),
            rss: 0.0,
            rank: 0,
        };
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-10 * (design.nrows().max(q) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let coefficients = svd
        .solve(y, tol)
        .unwrap_or_else(|_| DVector::zeros(q));
    let resid = y - design * &coefficients;
    LeastSquares {
        coefficients,
        rss: resid.norm_squared(),
        rank,
    }
}

/// Design matrix with a leading intercept column.
pub fn design_with_intercept(columns: &[&[f64]], rows: &[usize]) -> DMatrix<f64> {
    let q = columns.len() + 1;
    DMatrix::from_fn(rows.len(), q, |r, c| {
        if c == 0 {
            1.0
        } else {
            columns[c - 1][rows[r]]
        }
    })
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

pub fn log_det_from_cholesky(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Numeric("mean/covariance dimension mismatch".into()));
        }
        symmetrize(&mut cov);
        let chol = cholesky(&cov)
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        let log_det = log_det_from_cholesky(&chol);
        if !log_det.is_finite() {
            return Err(Error::Numeric("covariance is not positive definite".into()));
        }
        Ok(Self {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Mahalanobis form `(x - mean)' cov^-1 (x - mean)`.
    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        let z = self.chol.l_dirty().solve_lower_triangular(&d).expect("triangular solve");
        z.norm_squared()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis(x))
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `mean + L z` for a vector of standard normal draws `z`.
    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        let l = self.chol.l_dirty();
        (0..self.dim())
            .map(|i| self.mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
            .collect()
    }

    /// Marginal over the listed coordinates.
    pub fn marginal(&self, idx: &[usize]) -> Result<Gaussian> {
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.cov[(idx[a], idx[b])]);
        Gaussian::new(mean, cov)
    }
}

/// Lower-triangular factor from packed row-major entries
/// `(0,0), (1,0), (1,1), (2,0), ...`.
pub fn unpack_lower(theta: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    let mut k = 0;
    for i in 0..q {
        for j in 0..=i {
            l[(i, j)] = theta[k];
            k += 1;
        }
    }
    l
}

pub fn packed_len(q: usize) -> usize {
    q * (q + 1) / 2
}

/// Indices of the diagonal entries within the packed layout.
pub fn packed_diagonal(q: usize) -> Vec<usize> {
    (0..q).map(|i| i * (i + 1) / 2 + i).collect()
}
