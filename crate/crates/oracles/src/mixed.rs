//! Linear mixed models evaluated through the full `n x n` marginal
//! covariance, plus the closed-form balanced one-way model.

use nalgebra::{DMatrix, DVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `y = X beta + Z b + e` where each observation's random-effect design row
/// equals its fixed design row and groups are independent.
#[derive(Debug, Clone)]
pub struct DenseLme {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub groups: Vec<usize>,
}

fn log_det_and_inverse(v: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let ch = v.clone().cholesky()?;
    let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some((log_det, ch.inverse()))
}

/// Lower-triangular `q x q` matrix from its packed rows.
pub fn unpack(theta: &[f64], q: usize) -> DMatrix<f64> {
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

fn is_diagonal_slot(k: usize) -> bool {
    let mut i = 0;
    while i * (i + 1) / 2 + i < k {
        i += 1;
    }
    i * (i + 1) / 2 + i == k
}

impl DenseLme {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, groups: Vec<usize>) -> Self {
        assert_eq!(y.len(), x.nrows());
        assert_eq!(y.len(), groups.len());
        Self {
            y: DVector::from_vec(y),
            x,
            groups,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn marginal_cov(&self, re_cov: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |k, l| {
            let shared = if self.groups[k] == self.groups[l] {
                (self.x.row(k) * re_cov * self.x.row(l).transpose())[(0, 0)]
            } else {
                0.0
            };
            shared + if k == l { sigma2 } else { 0.0 }
        })
    }

    /// Exact log-density of the response.
    pub fn loglik(&self, beta: &DVector<f64>, re_cov: &DMatrix<f64>, sigma2: f64) -> f64 {
        let v = self.marginal_cov(re_cov, sigma2);
        let (log_det, inv) = log_det_and_inverse(&v).expect("marginal covariance must be positive definite");
        let r = &self.y - &self.x * beta;
        -0.5 * (self.n() as f64 * LN_2PI + log_det + (r.transpose() * inv * &r)[(0, 0)])
    }

    pub fn gls(&self, v: &DMatrix<f64>) -> DVector<f64> {
        let inv = v.clone().try_inverse().expect("invertible covariance");
        let xtv = self.x.transpose() * inv;
        (&xtv * &self.x).try_inverse().expect("full-rank design") * (xtv * &self.y)
    }

    /// Log-likelihood maximised over `beta` and `sigma2` for the relative
    /// random-effect covariance `L L'` with `L` unpacked from `theta`.
    pub fn profiled(&self, theta: &[f64]) -> f64 {
        let l = unpack(theta, self.q());
        let v0 = self.marginal_cov(&(&l * l.transpose()), 1.0);
        let Some((log_det, inv)) = log_det_and_inverse(&v0) else {
            return f64::NEG_INFINITY;
        };
        let xtv = self.x.transpose() * &inv;
        let Some(m) = (&xtv * &self.x).try_inverse() else {
            return f64::NEG_INFINITY;
        };
        let beta = m * (xtv * &self.y);
        let r = &self.y - &self.x * beta;
        let n = self.n() as f64;
        let sigma2 = (r.transpose() * inv * &r)[(0, 0)] / n;
        -0.5 * n * (LN_2PI + sigma2.ln() + 1.0) - 0.5 * log_det
    }

    /// Maximum of [`Self::profiled`] found by a grid over every packed entry
    /// followed by compass search from the best grid points.
    pub fn brute_force_max(&self) -> (f64, Vec<f64>) {
        let dim = self.q() * (self.q() + 1) / 2;
        let diag_grid = [0.0, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0];
        let off_grid: Vec<f64> = diag_grid
            .iter()
            .rev()
            .map(|v| -v)
            .chain(diag_grid.iter().skip(1).copied())
            .collect();
        let axes: Vec<&[f64]> = (0..dim)
            .map(|k| if is_diagonal_slot(k) { &diag_grid[..] } else { &off_grid[..] })
            .collect();
        let mut points: Vec<(f64, Vec<f64>)> = Vec::new();
        let total: usize = axes.iter().map(|a| a.len()).product();
        for code in 0..total {
            let mut c = code;
            let theta: Vec<f64> = axes
                .iter()
                .map(|a| {
                    let v = a[c % a.len()];
                    c /= a.len();
                    v
                })
                .collect();
            points.push((self.profiled(&theta), theta));
        }
        points.sort_by(|a, b| b.0.total_cmp(&a.0));
        points
            .into_iter()
            .take(5)
            .map(|(_, t)| self.compass(t))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one grid point")
    }

    fn compass(&self, mut theta: Vec<f64>) -> (f64, Vec<f64>) {
        let mut best = self.profiled(&theta);
        let mut step = 0.25;
        while step > 1e-9 {
            let mut improved = false;
            for k in 0..theta.len() {
                for sign in [1.0, -1.0] {
                    let mut t = theta.clone();
                    t[k] += sign * step;
                    if is_diagonal_slot(k) && t[k] < 0.0 {
                        t[k] = 0.0;
                    }
                    let v = self.profiled(&t);
                    if v > best {
                        best = v;
                        theta = t;
                        improved = true;
                    }
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        (best, theta)
    }
}

/// Log-likelihood of the balanced one-way model `y_jk = mu + b_j + e_jk` at
/// the grand mean, from between and within sums of squares.
pub fn one_way_loglik(groups: &[Vec<f64>], between: f64, within: f64) -> f64 {
    let a = groups.len() as f64;
    let m = groups[0].len() as f64;
    assert!(groups.iter().all(|g| g.len() as f64 == m), "balanced groups only");
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / m).collect();
    let grand = means.iter().sum::<f64>() / a;
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, mu)| g.iter().map(|y| (y - mu).powi(2)).sum::<f64>())
        .sum();
    let ssb: f64 = m * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let lam = within + m * between;
    -0.5 * (a * m * LN_2PI + a * (m - 1.0) * within.ln() + a * lam.ln() + ssw / within + ssb / lam)
}

/// Maximum of [`one_way_loglik`] by a 2-D grid and compass refinement.
pub fn one_way_max(groups: &[Vec<f64>]) -> (f64, f64, f64) {
    let f = |b: f64, w: f64| if b < 0.0 || w <= 0.0 { f64::NEG_INFINITY } else { one_way_loglik(groups, b, w) };
    let mut best = (f64::NEG_INFINITY, 0.0, 1.0);
    for i in 0..=200 {
        let b = if i == 0 { 0.0 } else { 1e-3 * 1.06f64.powi(i) };
        for k in 0..=200 {
            let w = 1e-3 * 1.06f64.powi(k);
            let v = f(b, w);
            if v > best.0 {
                best = (v, b, w);
            }
        }
    }
    let (mut v, mut b, mut w) = best;
    let mut step = 0.1 * (b + w);
    while step > 1e-12 {
        let mut improved = false;
        for (db, dw) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let nb = (b + db).max(0.0);
            let c = f(nb, w + dw);
            if c > v {
                (v, b, w) = (c, nb, w + dw);
                improved = true;
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    (v, b, w)
}
