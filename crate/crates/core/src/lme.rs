//! Linear mixed-effects local distributions fitted by maximum likelihood.
//!
//! Each group `j` follows `y_j = X_j (beta + b_j) + e_j` with
//! `b_j ~ N(0, Sigma)` shared across groups and `e_j ~ N(0, sigma2 I)`; the
//! random-effect design equals the fixed design (random intercept plus one
//! random slope per parent).
//!
//! The covariance is parameterised as `Sigma = sigma2 * L L'` with `L` lower
//! triangular. For a given `L`, `beta` and `sigma2` have closed forms, so the
//! optimiser only searches over the entries of `L` (the profiled deviance).
//! Because random-effect blocks of distinct groups are independent, every
//! quantity reduces to `q x q` per-group sufficient statistics
//! (`X_j'X_j`, `X_j'y_j`, `y_j'y_j`) and the Woodbury identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::optim::{nelder_mead, SimplexOptions};

#[derive(Debug, Clone)]
pub struct LmeProblem {
    response: DVector<f64>,
    design: DMatrix<f64>,
    groups: Vec<usize>,
    n_groups: usize,
}

impl LmeProblem {
    /// `design` must carry the intercept (all ones) as its first column.
    pub fn new(
        response: Vec<f64>,
        design: DMatrix<f64>,
        groups: Vec<usize>,
        n_groups: usize,
    ) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::Data("mixed model needs at least one observation".into()));
        }
        if design.nrows() != n || groups.len() != n {
            return Err(Error::Data(format!(
                "mixed model shape mismatch: {n} responses, {} design rows, {} group labels",
                design.nrows(),
                groups.len()
            )));
        }
        if design.ncols() == 0 || design.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Data("first design column must be the intercept".into()));
        }
        if n_groups == 0 || groups.iter().any(|&g| g >= n_groups) {
            return Err(Error::Data("group label out of range".into()));
        }
        if response.iter().chain(design.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in mixed model".into()));
        }
        Ok(Self {
            response: DVector::from_vec(response),
            design,
            groups,
            n_groups,
        })
    }

    /// Builds the intercept-plus-parents design from raw columns.
    pub fn from_columns(
        response: &[f64],
        parents: &[&[f64]],
        groups: &[usize],
        n_groups: usize,
    ) -> Result<Self> {
        let rows: Vec<usize> = (0..response.len()).collect();
        let design = linalg::design_with_intercept(parents, &rows);
        Self::new(response.to_vec(), design, groups.to_vec(), n_groups)
    }

    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    /// Number of fixed effects (intercept plus parents).
    pub fn n_fixed(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    fn stats(&self) -> Stats {
        let q = self.n_fixed();
        let mut groups = vec![
            GroupStats {
                xtx: DMatrix::zeros(q, q),
                xty: DVector::zeros(q),
                yty: 0.0,
                n: 0,
            };
            self.n_groups
        ];
        for (k, &g) in self.groups.iter().enumerate() {
            let row = self.design.row(k);
            let y = self.response[k];
            let s = &mut groups[g];
            s.n += 1;
            s.yty += y * y;
            for a in 0..q {
                s.xty[a] += row[a] * y;
                for b in 0..=a {
                    s.xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        for s in &mut groups {
            for a in 0..q {
                for b in 0..a {
                    s.xtx[(b, a)] = s.xtx[(a, b)];
                }
            }
        }
        Stats {
            groups,
            n: self.n_obs(),
            q,
        }
    }
}

#[derive(Debug, Clone)]
struct GroupStats {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
}

#[derive(Debug, Clone)]
struct Stats {
    groups: Vec<GroupStats>,
    n: usize,
    q: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmeConfig {
    /// Stop when the deviance spread over the simplex falls below this relative size.
    pub rel_tol: f64,
    /// Evaluation budget; `None` means `200 * q^2`.
    pub max_evals: Option<usize>,
    pub sigma2_floor: f64,
    pub initial_step: f64,
}

impl Default for LmeConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_evals: None,
            sigma2_floor: 1e-12,
            initial_step: 0.5,
        }
    }
}

/// Result of [`profiled_deviance`].
#[derive(Debug, Clone)]
pub struct Profile {
    /// `-2` times the profiled ML log-likelihood; `+inf` if the system is singular.
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub blups: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmeFit {
    pub beta: DVector<f64>,
    pub blups: Vec<DVector<f64>>,
    pub sigma2: f64,
    /// Random-effect covariance (intercept first, then one slope per parent).
    pub re_cov: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub boundary: bool,
    pub evaluations: usize,
}

impl LmeFit {
    pub fn n_fixed(&self) -> usize {
        self.beta.len()
    }

    pub fn n_groups(&self) -> usize {
        self.blups.len()
    }

    /// Group-specific coefficients `beta + b_j` (intercept first).
    pub fn group_coefficients(&self, group: usize) -> DVector<f64> {
        &self.beta + &self.blups[group]
    }

    /// `(mu + b_j0) + x (beta + b_j)` for the given parent values.
    pub fn group_predict(&self, group: usize, parents: &[f64]) -> f64 {
        let c = self.group_coefficients(group);
        c[0] + parents.iter().zip(c.iter().skip(1)).map(|(x, b)| x * b).sum::<f64>()
    }

    /// Variance of the response at parent values `parents` once the random
    /// effects are integrated out: `x' Sigma x + sigma2` with `x = (1, parents)`.
    pub fn marginal_variance(&self, parents: &[f64]) -> f64 {
        let x = DVector::from_iterator(parents.len() + 1, std::iter::once(1.0).chain(parents.iter().copied()));
        (x.transpose() * &self.re_cov * &x)[(0, 0)] + self.sigma2
    }
}

/// Group-specific linear predictor of a fitted mixed model.
pub fn lme_group_predict(fit: &LmeFit, group: usize, parents: &[f64]) -> f64 {
    fit.group_predict(group, parents)
}

/// Profiled ML deviance at the relative covariance factor `theta` (packed
/// lower-triangular rows, diagonal entries non-negative).
pub fn profiled_deviance(problem: &LmeProblem, theta: &[f64]) -> Profile {
    let stats = problem.stats();
    let lambda = linalg::unpack_lower(theta, stats.q);
    match evaluate(&stats, &lambda, LmeConfig::default().sigma2_floor, true) {
        Some(e) => Profile {
            deviance: e.deviance,
            beta: e.beta,
            sigma2: e.sigma2,
            blups: e.blups,
        },
        None => Profile {
            deviance: f64::INFINITY,
            beta: DVector::from_element(stats.q, f64::NAN),
            sigma2: f64::NAN,
            blups: vec![DVector::from_element(stats.q, f64::NAN); stats.groups.len()],
        },
    }
}

struct Evaluation {
    deviance: f64,
    beta: DVector<f64>,
    sigma2: f64,
    blups: Vec<DVector<f64>>,
}

fn evaluate(stats: &Stats, lambda: &DMatrix<f64>, floor: f64, want_blups: bool) -> Option<Evaluation> {
    let q = stats.q;
    let n = stats.n as f64;
    let mut xvx = DMatrix::<f64>::zeros(q, q);
    let mut xvy = DVector::<f64>::zeros(q);
    let mut yvy = 0.0;
    let mut log_det = 0.0;
    let identity = DMatrix::<f64>::identity(q, q);
    let mut factors = Vec::with_capacity(stats.groups.len());

    for g in &stats.groups {
        if g.n == 0 {
            factors.push(None);
            continue;
        }
        let p = lambda.transpose() * &g.xtx; // L' A
        let r = lambda.transpose() * &g.xty; // L' c
        let m = &identity + &p * lambda;
        let chol = linalg::cholesky(&m)?;
        log_det += linalg::log_det_from_cholesky(&chol);
        let w = chol.solve(&p);
        let u = chol.solve(&r);
        xvx += &g.xtx - p.transpose() * &w;
        xvy += &g.xty - p.transpose() * &u;
        yvy += g.yty - r.dot(&u);
        factors.push(Some(chol));
    }

    linalg::symmetrize(&mut xvx);
    let chol_x = linalg::cholesky(&xvx)?;
    let beta = chol_x.solve(&xvy);
    let rss = (yvy - beta.dot(&xvy)).max(0.0);
    let sigma2 = (rss / n).max(floor);
    let deviance = n * (LN_2PI + sigma2.ln()) + log_det + rss / sigma2;
    if !deviance.is_finite() || !beta.iter().all(|b| b.is_finite()) {
        return None;
    }

    let blups = if want_blups {
        stats
            .groups
            .iter()
            .zip(&factors)
            .map(|(g, chol)| match chol {
                None => DVector::zeros(q),
                Some(chol) => {
                    let resid = &g.xty - &g.xtx * &beta;
                    lambda * chol.solve(&(lambda.transpose() * resid))
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Some(Evaluation {
        deviance,
        beta,
        sigma2,
        blups,
    })
}

/// Maximum-likelihood fit of the mixed model.
///
/// Parent columns and the response are centred and scaled internally; the
/// unstructured random-effect covariance makes the model invariant to this
/// reparameterisation, and the estimates are mapped back before returning.
/// Factor diagonal at or below this counts as a boundary fit.
pub const BOUNDARY_TOL: f64 = 1e-6;

pub fn fit_lme(problem: &LmeProblem, config: &LmeConfig) -> Result<LmeFit> {
    let n = problem.n_obs();
    let q = problem.n_fixed();
    if n <= q {
        return Err(Error::TooFewRows { rows: n, params: q });
    }

    // column transform s = x T with T upper triangular
    let mut t = DMatrix::<f64>::identity(q, q);
    for c in 1..q {
        let col = problem.design.column(c);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            return Err(Error::Collinear(format!("design column {c} is constant")));
        }
        t[(0, c)] = -mean / sd;
        t[(c, c)] = 1.0 / sd;
    }
    let y = &problem.response;
    let y_mean = y.mean();
    let y_sd = {
        let s = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    };
    let design = &problem.design * &t;
    {
        let sv = design.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 1e-9 * smax) {
            return Err(Error::Collinear("design columns are linearly dependent".into()));
        }
    }
    let scaled = LmeProblem {
        response: y.map(|v| (v - y_mean) / y_sd),
        design,
        groups: problem.groups.clone(),
        n_groups: problem.n_groups,
    };
    let stats = scaled.stats();
    let floor_scaled = config.sigma2_floor / (y_sd * y_sd);

    // column signs of the factor do not change the covariance
    let dim = linalg::packed_len(q);
    let free = vec![f64::NEG_INFINITY; dim];
    let mut start = vec![0.0; dim];
    for d in linalg::packed_diagonal(q) {
        start[d] = 1.0;
    }
    let opts = SimplexOptions {
        initial_step: config.initial_step,
        rel_tol: config.rel_tol,
        max_evals: config.max_evals.unwrap_or(200 * q * q),
        restarts: 2,
    };
    let objective = |theta: &[f64]| {
        let lambda = linalg::unpack_lower(theta, q);
        evaluate(&stats, &lambda, floor_scaled, false).map_or(f64::INFINITY, |e| e.deviance)
    };
    let mut best = nelder_mead(objective, &start, &free, opts);
    for scale in [0.1, 0.0] {
        let from: Vec<f64> = start.iter().map(|v| v * scale).collect();
        let run = nelder_mead(objective, &from, &free, opts);
        let evaluations = best.evaluations + run.evaluations;
        if run.value < best.value {
            best = run;
        }
        best.evaluations = evaluations;
    }
    let mut lambda = linalg::unpack_lower(&best.x, q);
    for c in 0..q {
        if lambda[(c, c)] < 0.0 {
            lambda.column_mut(c).neg_mut();
        }
    }
    let eval = evaluate(&stats, &lambda, floor_scaled, true)
        .ok_or_else(|| Error::Numeric("mixed model system is singular at the optimum".into()))?;

    let boundary = (0..q).any(|c| lambda[(c, c)] <= BOUNDARY_TOL);
    let mut beta = y_sd * (&t * &eval.beta);
    beta[0] += y_mean;
    let blups: Vec<DVector<f64>> = eval.blups.iter().map(|b| y_sd * (&t * b)).collect();
    let sigma2 = (eval.sigma2 * y_sd * y_sd).max(config.sigma2_floor);
    let rel = &lambda * lambda.transpose();
    let mut re_cov = sigma2 * (&t * rel * t.transpose());
    linalg::symmetrize(&mut re_cov);
    let loglik = -0.5 * eval.deviance - n as f64 * y_sd.ln();

    Ok(LmeFit {
        beta,
        blups,
        sigma2,
        re_cov,
        loglik,
        converged: best.converged,
        boundary,
        evaluations: best.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_way(values: &[&[f64]]) -> LmeProblem {
        let mut y = Vec::new();
        let mut g = Vec::new();
        for (j, vals) in values.iter().enumerate() {
            for &v in vals.iter() {
                y.push(v);
                g.push(j);
            }
        }
        LmeProblem::from_columns(&y, &[], &g, values.len()).unwrap()
    }

    #[test]
    fn noiseless_line_recovered() {
        let mut y = Vec::new();
        let mut x = Vec::new();
        let mut g = Vec::new();
        for j in 0..3 {
            for k in 0..6 {
                let xv = k as f64 - 1.5 + 0.1 * j as f64;
                x.push(xv);
                y.push(2.0 + 3.0 * xv);
                g.push(j);
            }
        }
        let p = LmeProblem::from_columns(&y, &[&x], &g, 3).unwrap();
        let fit = fit_lme(&p, &LmeConfig::default()).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-6, "{:?}", fit.beta);
        assert!((fit.beta[1] - 3.0).abs() < 1e-6);
        assert!(fit.sigma2 < 1e-8, "sigma2 = {}", fit.sigma2);
        for b in &fit.blups {
            assert!(b.norm() < 1e-5, "{b:?}");
        }
    }

    #[test]
    fn zero_theta_is_ols() {
        let y = [1.0, 2.5, 2.0, 4.5, 3.0, 6.0, 5.5];
        let x = [0.0, 1.0, 1.5, 2.0, 3.0, 4.0, 4.5];
        let g = [0, 0, 1, 1, 2, 2, 2];
        let p = LmeProblem::from_columns(&y, &[&x], &g, 3).unwrap();
        let prof = profiled_deviance(&p, &[0.0; 3]);
        let ols = linalg::least_squares(p.design(), p.response());
        let n = y.len() as f64;
        let expected = n * (LN_2PI + (ols.rss / n).ln() + 1.0);
        assert!((prof.deviance - expected).abs() < 1e-10);
        assert!((prof.beta[1] - ols.coefficients[1]).abs() < 1e-10);
        assert!(prof.blups.iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn empty_group_gets_zero_blup() {
        let p = LmeProblem::from_columns(
            &[1.0, 1.5, 3.0, 3.3, 0.2, 0.9],
            &[],
            &[0, 0, 2, 2, 3, 3],
            4,
        )
        .unwrap();
        let fit = fit_lme(&p, &LmeConfig::default()).unwrap();
        assert_eq!(fit.blups[1].norm(), 0.0);
        assert!(fit.blups[0].norm() > 0.0);
    }

    #[test]
    fn too_few_rows_and_collinear() {
        let p = LmeProblem::from_columns(&[1.0, 2.0], &[&[0.0, 1.0]], &[0, 1], 2).unwrap();
        assert!(matches!(fit_lme(&p, &LmeConfig::default()), Err(Error::TooFewRows { .. })));

        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let p = LmeProblem::from_columns(&[1.0, 0.0, 3.0, 2.0, 5.0], &[&x, &x2], &[0, 0, 1, 1, 1], 2).unwrap();
        assert!(matches!(fit_lme(&p, &LmeConfig::default()), Err(Error::Collinear(_))));

        let c = [2.0; 5];
        let p = LmeProblem::from_columns(&[1.0, 0.0, 3.0, 2.0, 5.0], &[&c], &[0, 0, 1, 1, 1], 2).unwrap();
        assert!(matches!(fit_lme(&p, &LmeConfig::default()), Err(Error::Collinear(_))));
    }

    #[test]
    fn predict_examples() {
        let fit = LmeFit {
            beta: DVector::from_vec(vec![1.0, 2.0]),
            blups: vec![DVector::zeros(2), DVector::from_vec(vec![0.5, -1.0])],
            sigma2: 1.0,
            re_cov: DMatrix::identity(2, 2),
            loglik: 0.0,
            converged: true,
            boundary: false,
            evaluations: 0,
        };
        assert_eq!(lme_group_predict(&fit, 0, &[3.0]), 7.0);
        assert_eq!(lme_group_predict(&fit, 1, &[3.0]), 4.5);
        assert_eq!(lme_group_predict(&fit, 1, &[0.0]), 1.5);
        assert_eq!(fit.marginal_variance(&[1.0]), 1.0 + 1.0 + 1.0);
    }

    #[test]
    fn blups_sum_to_zero() {
        let p = one_way(&[&[1.0, 2.0, 1.5], &[4.0, 3.5, 5.0], &[0.0, 0.5, -1.0], &[2.0, 2.2, 2.4]]);
        let fit = fit_lme(&p, &LmeConfig::default()).unwrap();
        let total: f64 = fit.blups.iter().map(|b| b[0]).sum();
        assert!(total.abs() < 1e-9);
        assert!(fit.re_cov[(0, 0)] > 0.0);
        assert!(fit.converged);
    }
}
