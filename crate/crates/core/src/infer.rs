//! Prediction and classification with learned models.
//!
//! The exact engine conditions the compiled per-group Gaussians. Likelihood
//! weighting samples the network forward and weights by the evidence.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rand::distr::weighted::WeightedIndex;

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::linalg::LN_2PI;
use crate::model::{log_sum_exp, BnModel, GroupJoint, LinearGaussian};
use crate::rng::{derive_seed, rng_from_seed};

/// Default particle count for likelihood weighting.
pub const DEFAULT_LW_SAMPLES: usize = 10_000;

/// Observed values (by variable index) and optionally the group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evidence {
    pub values: Vec<Option<f64>>,
    pub group: Option<usize>,
}

impl Evidence {
    pub fn none(n_vars: usize) -> Self {
        Self {
            values: vec![None; n_vars],
            group: None,
        }
    }

    /// Everything in `row` except `target`.
    pub fn leave_one_out(row: &[f64], target: usize, group: Option<usize>) -> Self {
        let values = row
            .iter()
            .enumerate()
            .map(|(i, &v)| (i != target).then_some(v))
            .collect();
        Self { values, group }
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i].is_some()).collect()
    }

    fn check(&self, n_vars: usize, n_groups: usize) -> Result<()> {
        if self.values.len() != n_vars {
            return Err(Error::Data(format!(
                "evidence covers {} variables, model has {n_vars}",
                self.values.len()
            )));
        }
        if let Some(j) = self.group {
            if j >= n_groups {
                return Err(Error::Data(format!("group index {j} out of range")));
            }
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("evidence values must be finite".into()));
        }
        Ok(())
    }
}

fn normalize_log(mut logs: Vec<f64>) -> Vec<f64> {
    let z = log_sum_exp(&logs);
    for l in &mut logs {
        *l = (*l - z).exp();
    }
    logs
}

/// Group posterior given a complete row of variables.
pub fn classify_group(joint: &GroupJoint, x: &[f64]) -> Vec<f64> {
    normalize_log((0..joint.n_groups()).map(|j| joint.log_joint(x, j)).collect())
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = j;
        }
    }
    best
}

/// Posterior mean of `target` by Gaussian conditioning. With an unknown group
/// the per-group answers are mixed by the group posterior of the evidence.
pub fn exact_conditional_mean(joint: &GroupJoint, evidence: &Evidence, target: usize) -> Result<f64> {
    evidence.check(joint.dim(), joint.n_groups())?;
    if target >= joint.dim() || evidence.values[target].is_some() {
        return Err(Error::Data(format!("target {target} must be an unobserved variable")));
    }
    let obs = evidence.observed();
    let x_o: Vec<f64> = obs.iter().map(|&i| evidence.values[i].unwrap()).collect();
    let groups: Vec<usize> = match evidence.group {
        Some(j) => vec![j],
        None => (0..joint.n_groups()).collect(),
    };
    let mut means = Vec::with_capacity(groups.len());
    let mut logs = Vec::with_capacity(groups.len());
    for &j in &groups {
        let g = joint.component(j);
        let mu_t = g.mean()[target];
        if obs.is_empty() {
            means.push(mu_t);
            logs.push(joint.prior()[j].ln());
            continue;
        }
        let marginal = g.marginal(&obs).map_err(|_| {
            Error::Numeric(format!("covariance of the observed variables is singular in group {j}"))
        })?;
        let diff = DVector::from_iterator(obs.len(), obs.iter().zip(&x_o).map(|(&i, v)| v - g.mean()[i]));
        let alpha = marginal.solve(&nalgebra::DMatrix::from_column_slice(obs.len(), 1, diff.as_slice()));
        let cross: f64 = obs
            .iter()
            .enumerate()
            .map(|(a, &i)| g.cov()[(target, i)] * alpha[(a, 0)])
            .sum();
        means.push(mu_t + cross);
        logs.push(joint.prior()[j].ln() + marginal.log_pdf(&x_o));
    }
    let w = normalize_log(logs);
    Ok(w.iter().zip(&means).map(|(w, m)| w * m).sum())
}

/// Per-group quantities for leave-one-node-out prediction from complete rows.
struct Loo {
    means: Vec<Vec<f64>>,
    /// Precision matrices, row-major.
    precisions: Vec<Vec<Vec<f64>>>,
}

impl Loo {
    fn new(joint: &GroupJoint) -> Self {
        let means = joint.components().iter().map(|g| g.mean().iter().copied().collect()).collect();
        let precisions = joint
            .components()
            .iter()
            .map(|g| {
                let k = g.precision();
                (0..k.nrows()).map(|r| k.row(r).iter().copied().collect()).collect()
            })
            .collect();
        Self { means, precisions }
    }

    /// Conditional mean and variance of `i` given the rest of `x` in group `j`.
    fn conditional(&self, x: &[f64], i: usize, j: usize) -> (f64, f64) {
        let mu = &self.means[j];
        let k = &self.precisions[j][i];
        let s: f64 = (0..x.len()).filter(|&c| c != i).map(|c| k[c] * (x[c] - mu[c])).sum();
        (mu[i] - s / k[i], 1.0 / k[i])
    }
}

/// Weighted-particle estimate of posterior means.
#[derive(Debug, Clone, PartialEq)]
pub struct LwEstimate {
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub effective_sample_size: f64,
    pub samples: usize,
    /// Normalised particle weights.
    pub weights: Vec<f64>,
}

fn node_params(model: &BnModel) -> Vec<Vec<LinearGaussian>> {
    (0..model.n_groups())
        .map(|j| model.locals().iter().map(|l| l.distribution.group_params(j)).collect())
        .collect()
}

/// Likelihood weighting: unobserved variables (and an unknown group) are
/// sampled forward, observed ones are clamped and weight the particle by
/// their conditional density.
pub fn likelihood_weighting(
    model: &BnModel,
    evidence: &Evidence,
    targets: &[usize],
    samples: usize,
    seed: u64,
) -> Result<LwEstimate> {
    let params = node_params(model);
    lw_with(model, &params, evidence, targets, samples, seed)
}

fn lw_with(
    model: &BnModel,
    params: &[Vec<LinearGaussian>],
    evidence: &Evidence,
    targets: &[usize],
    samples: usize,
    seed: u64,
) -> Result<LwEstimate> {
    let n = model.n_vars();
    evidence.check(n, model.n_groups())?;
    if samples == 0 {
        return Err(Error::Config(vec!["likelihood weighting needs at least one sample".into()]));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::Data(format!("target {t} out of range")));
    }
    let order = model.variable_order();
    let picker = WeightedIndex::new(model.group_prior()).map_err(|e| Error::Numeric(format!("group prior: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let mut log_w = Vec::with_capacity(samples);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(samples);
    let mut row = vec![0.0; n];
    for _ in 0..samples {
        let j = match evidence.group {
            Some(j) => j,
            None => picker.sample(&mut rng),
        };
        let mut lw = 0.0;
        for &i in &order {
            let lg = &params[j][i];
            let pa: Vec<f64> = model.local(i).parents.iter().map(|&p| row[p]).collect();
            match evidence.values[i] {
                Some(v) => {
                    row[i] = v;
                    lw += lg.log_density(v, &pa);
                }
                None => {
                    let z: f64 = rng.sample(StandardNormal);
                    row[i] = lg.mean(&pa) + lg.variance.sqrt() * z;
                }
            }
        }
        log_w.push(lw);
        draws.push(targets.iter().map(|&t| row[t]).collect());
    }
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Numeric(
            "all likelihood weights vanished; use more samples or the exact engine".into(),
        ));
    }
    let raw: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let mut means = vec![0.0; targets.len()];
    for (w, d) in weights.iter().zip(&draws) {
        for (m, v) in means.iter_mut().zip(d) {
            *m += w * v;
        }
    }
    let standard_errors = (0..targets.len())
        .map(|t| {
            weights
                .iter()
                .zip(&draws)
                .map(|(w, d)| (w * (d[t] - means[t])).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(LwEstimate {
        means,
        standard_errors,
        effective_sample_size: ess,
        samples,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    #[default]
    Exact,
    LikelihoodWeighting {
        samples: usize,
    },
}

/// Group index in `model` of every row of `data`, matched by label.
pub fn align_groups(model: &BnModel, data: &GroupedDataset) -> Result<Vec<usize>> {
    let map = data
        .labels()
        .iter()
        .map(|l| model.group_index(l))
        .collect::<Result<Vec<_>>>()?;
    Ok(data.groups().iter().map(|&g| map[g]).collect())
}

fn check_columns(model: &BnModel, data: &GroupedDataset) -> Result<()> {
    if data.names() != model.variables() {
        return Err(Error::Data("data columns do not match the model variables".into()));
    }
    Ok(())
}

/// Leave-one-node-out predictions, `predictions[i][k]` for variable `i` and
/// row `k`, using every other variable and (if `know_group`) the row's group.
pub fn predict_all(
    model: &BnModel,
    data: &GroupedDataset,
    know_group: bool,
    engine: Engine,
    seed: u64,
    execution: Execution,
) -> Result<Vec<Vec<f64>>> {
    check_columns(model, data)?;
    let groups = align_groups(model, data)?;
    let n = model.n_vars();
    let rows: Vec<Result<Vec<f64>>> = match engine {
        Engine::Exact => {
            let joint = model.compile_joint()?;
            let loo = Loo::new(&joint);
            exec::map_range(data.n_rows(), execution, |k| {
                let x = data.row(k);
                let full: Vec<f64> = (0..joint.n_groups()).map(|j| joint.log_joint(&x, j)).collect();
                Ok((0..n)
                    .map(|i| {
                        if know_group {
                            return loo.conditional(&x, i, groups[k]).0;
                        }
                        let mut logs = Vec::with_capacity(joint.n_groups());
                        let mut means = Vec::with_capacity(joint.n_groups());
                        for j in 0..joint.n_groups() {
                            let (m, v) = loo.conditional(&x, i, j);
                            let r = x[i] - m;
                            let log_cond = -0.5 * (LN_2PI + v.ln() + r * r / v);
                            logs.push(full[j] - log_cond);
                            means.push(m);
                        }
                        normalize_log(logs).iter().zip(&means).map(|(w, m)| w * m).sum()
                    })
                    .collect())
            })
        }
        Engine::LikelihoodWeighting { samples } => {
            let params = node_params(model);
            exec::map_range(data.n_rows(), execution, |k| {
                let x = data.row(k);
                (0..n)
                    .map(|i| {
                        let ev = Evidence::leave_one_out(&x, i, know_group.then_some(groups[k]));
                        let s = derive_seed(seed, &[k as u64, i as u64]);
                        lw_with(model, &params, &ev, &[i], samples, s).map(|e| e.means[0])
                    })
                    .collect()
            })
        }
    };
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::with_capacity(rows.len()); n];
    for r in rows {
        for (c, v) in out.iter_mut().zip(r) {
            c.push(v);
        }
    }
    Ok(out)
}

/// Most probable group of every row, as model group indices.
pub fn classify_all(model: &BnModel, data: &GroupedDataset, execution: Execution) -> Result<Vec<usize>> {
    check_columns(model, data)?;
    let joint = model.compile_joint()?;
    Ok(exec::map_range(data.n_rows(), execution, |k| {
        argmax(&classify_group(&joint, &data.row(k)))
    }))
}
