//! Dense multivariate normal computations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct Mvn {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
}

impl Mvn {
    /// Panics unless `cov` is positive definite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let ch = cov.clone().cholesky().expect("covariance must be positive definite");
        let chol = ch.l();
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = ch.inverse();
        Self {
            mean,
            cov,
            chol,
            inv,
            log_det,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mean;
        let m = (d.transpose() * &self.inv * &d)[(0, 0)];
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + m)
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        (&self.mean + &self.chol * z).iter().copied().collect()
    }

    /// Mean and variance of coordinate `target` given `values` at `observed`.
    pub fn condition(&self, observed: &[usize], values: &[f64], target: usize) -> (f64, f64) {
        if observed.is_empty() {
            return (self.mean[target], self.cov[(target, target)]);
        }
        let k = observed.len();
        let s11 = DMatrix::from_fn(k, k, |a, b| self.cov[(observed[a], observed[b])]);
        let s21 = DVector::from_fn(k, |a, _| self.cov[(target, observed[a])]);
        let dx = DVector::from_fn(k, |a, _| values[a] - self.mean[observed[a]]);
        let inv = s11.try_inverse().expect("observed block must be invertible");
        let w = &inv * &s21;
        (self.mean[target] + w.dot(&dx), self.cov[(target, target)] - s21.dot(&w))
    }
}

/// KL divergence between two normals by the textbook closed form.
pub fn kl(p: &Mvn, q: &Mvn) -> f64 {
    let d = &q.mean - &p.mean;
    let tr = (&q.inv * &p.cov).trace();
    0.5 * (tr + (d.transpose() * &q.inv * &d)[(0, 0)] - p.dim() as f64 + q.log_det - p.log_det)
}

/// Monte-Carlo estimate and standard error of `E_p[log p(x, j) - log q(x, j)]`
/// where `p` and `q` are finite mixtures `(weight, component)` over the same
/// component labels and the label `j` is part of the observation.
pub fn labelled_mixture_kl(p: &[(f64, Mvn)], q: &[(f64, Mvn)], samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(p.iter().map(|c| c.0)).expect("weights");
    let terms: Vec<f64> = (0..samples)
        .map(|_| {
            let j = pick.sample(&mut rng);
            let x = p[j].1.sample(&mut rng);
            p[j].0.ln() + p[j].1.log_pdf(&x) - q[j].0.ln() - q[j].1.log_pdf(&x)
        })
        .collect();
    mean_and_se(&terms)
}

/// Monte-Carlo estimate of KL between the label-free mixtures.
pub fn mixture_kl(p: &[(f64, Mvn)], q: &[(f64, Mvn)], samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(p.iter().map(|c| c.0)).expect("weights");
    let log_mix = |m: &[(f64, Mvn)], x: &[f64]| {
        let t: Vec<f64> = m.iter().map(|(w, c)| w.ln() + c.log_pdf(x)).collect();
        let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi + t.iter().map(|v| (v - hi).exp()).sum::<f64>().ln()
    };
    let terms: Vec<f64> = (0..samples)
        .map(|_| {
            let j = pick.sample(&mut rng);
            let x = p[j].1.sample(&mut rng);
            log_mix(p, &x) - log_mix(q, &x)
        })
        .collect();
    mean_and_se(&terms)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
