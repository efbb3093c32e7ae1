//! Structural, distributional, predictive and classification metrics.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{to_cpdag, Dag};
use crate::infer::{align_groups, classify_all, predict_all, Engine};
use crate::linalg::Gaussian;
use crate::model::{BnModel, GroupJoint, GROUP_NODE};
use crate::rng::rng_from_seed;

/// Structural Hamming distance between the CPDAGs of two graphs over the
/// same node names: node pairs whose edge marks differ.
pub fn shd(g1: &Dag, g2: &Dag) -> Result<usize> {
    if g1.len() != g2.len() {
        return Err(Error::Graph(format!("graphs have {} and {} nodes", g1.len(), g2.len())));
    }
    let map = g1
        .names()
        .iter()
        .map(|n| g2.index_of(n))
        .collect::<Result<Vec<_>>>()
        .map_err(|_| Error::Graph("graphs have different node names".into()))?;
    let c1 = to_cpdag(g1);
    let c2 = to_cpdag(g2);
    let mut count = 0;
    for a in 0..g1.len() {
        for b in a + 1..g1.len() {
            let m1 = c1.mark(a, b);
            let m2 = c2.mark(map[a], map[b]);
            if m1 != m2 {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// SHD against a graph carrying the group node; a learned graph without one
/// gets an isolated group node first, so its missing group arcs count.
pub fn shd_with_group(truth: &Dag, learned: &Dag) -> Result<usize> {
    let learned = match learned.group() {
        Some(_) => learned.clone(),
        None => learned.with_isolated_group(truth.group().map(|g| truth.name(g)).unwrap_or(GROUP_NODE))?,
    };
    shd(truth, &learned)
}

/// SHD over the variables alone, with the group node removed from both graphs.
pub fn shd_variables(truth: &Dag, learned: &Dag) -> Result<usize> {
    shd(&truth.without_group(), &learned.without_group())
}

/// `KL(N0 || N1)` in nats.
pub fn gaussian_kl(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Numeric("dimension mismatch in KL".into()));
    }
    let d = p.dim() as f64;
    let trace = q.solve(p.cov()).trace();
    let maha = q.mahalanobis(p.mean().as_slice());
    Ok(0.5 * (trace + maha - d + q.log_det() - p.log_det()))
}

/// KL over (variables, group) between two compiled joints whose groups are
/// already aligned by index.
pub fn joint_kl(truth: &GroupJoint, learned: &GroupJoint) -> Result<f64> {
    if truth.n_groups() != learned.n_groups() || truth.dim() != learned.dim() {
        return Err(Error::Data("joints differ in shape".into()));
    }
    let mut total = 0.0;
    for j in 0..truth.n_groups() {
        let pi = truth.prior()[j];
        if pi == 0.0 {
            continue;
        }
        let pj = learned.prior()[j];
        if pj == 0.0 {
            return Err(Error::Numeric(format!("learned model gives group {j} zero probability")));
        }
        total += pi * ((pi / pj).ln() + gaussian_kl(truth.component(j), learned.component(j))?);
    }
    Ok(total)
}

/// Learned joint reindexed to the truth's group labels.
fn aligned_joints(truth: &BnModel, learned: &BnModel) -> Result<(GroupJoint, GroupJoint)> {
    if truth.variables() != learned.variables() {
        return Err(Error::Data("models have different variables".into()));
    }
    let t = truth.compile_joint()?;
    let l = learned.compile_joint()?;
    let idx = truth
        .group_labels()
        .iter()
        .map(|lab| learned.group_index(lab))
        .collect::<Result<Vec<_>>>()?;
    if idx.len() != learned.n_groups() {
        return Err(Error::Data("models have different group labels".into()));
    }
    let comps = idx.iter().map(|&j| l.component(j).clone()).collect();
    let prior = idx.iter().map(|&j| l.prior()[j]).collect();
    Ok((t, GroupJoint::new(comps, prior)?))
}

/// KL from the true model to a learned one over (variables, group).
pub fn model_kl(truth: &BnModel, learned: &BnModel) -> Result<f64> {
    let (t, l) = aligned_joints(truth, learned)?;
    joint_kl(&t, &l)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub standard_error: f64,
}

fn mc_mean(values: &[f64]) -> McEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    McEstimate {
        value: mean,
        standard_error: (var / n).sqrt(),
    }
}

/// Draws `(x, group)` pairs from a joint.
pub fn sample_joint(joint: &GroupJoint, count: usize, seed: u64) -> Result<Vec<(Vec<f64>, usize)>> {
    let picker = WeightedIndex::new(joint.prior()).map_err(|e| Error::Numeric(format!("group prior: {e}")))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..count)
        .map(|_| {
            let j = picker.sample(&mut rng);
            let z: Vec<f64> = (0..joint.dim()).map(|_| rng.sample(StandardNormal)).collect();
            (joint.component(j).transform(&z), j)
        })
        .collect())
}

/// Monte-Carlo KL between the variable marginals (group summed out).
pub fn mc_kl_variables(truth: &BnModel, learned: &BnModel, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples < 2 {
        return Err(Error::Config(vec!["Monte-Carlo KL needs at least two samples".into()]));
    }
    let (t, l) = aligned_joints(truth, learned)?;
    let diffs: Vec<f64> = sample_joint(&t, samples, seed)?
        .iter()
        .map(|(x, _)| t.log_mixture(x) - l.log_mixture(x))
        .collect();
    Ok(mc_mean(&diffs))
}

/// Monte-Carlo KL over (variables, group).
pub fn mc_kl_joint(truth: &BnModel, learned: &BnModel, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples < 2 {
        return Err(Error::Config(vec!["Monte-Carlo KL needs at least two samples".into()]));
    }
    let (t, l) = aligned_joints(truth, learned)?;
    let diffs: Vec<f64> = sample_joint(&t, samples, seed)?
        .iter()
        .map(|(x, j)| t.log_joint(x, *j) - l.log_joint(x, *j))
        .collect();
    Ok(mc_mean(&diffs))
}

/// Relative mean absolute deviation and the number of terms skipped for a
/// (near) zero observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmad {
    pub value: f64,
    pub skipped: usize,
}

/// Threshold below which an observation cannot serve as a denominator.
pub const RMAD_ZERO: f64 = 1e-12;

/// Mean over variables of the mean over rows of `|x - x_hat| / |x|`;
/// inputs are indexed `[variable][row]`.
pub fn rmad(observed: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<Rmad> {
    if observed.len() != predicted.len() || observed.iter().zip(predicted).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Data("observed and predicted shapes differ".into()));
    }
    let mut skipped = 0;
    let mut per_node = Vec::with_capacity(observed.len());
    for (obs, pred) in observed.iter().zip(predicted) {
        let mut sum = 0.0;
        let mut used = 0usize;
        for (x, xh) in obs.iter().zip(pred) {
            if x.abs() < RMAD_ZERO {
                skipped += 1;
                continue;
            }
            sum += ((x - xh) / x).abs();
            used += 1;
        }
        if used > 0 {
            per_node.push(sum / used as f64);
        }
    }
    if per_node.is_empty() {
        return Err(Error::Data("no usable observations for RMAD".into()));
    }
    Ok(Rmad {
        value: per_node.iter().sum::<f64>() / per_node.len() as f64,
        skipped,
    })
}

fn f1_for(truth: &[usize], predicted: &[usize], class: usize) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t == class, p == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 of class 0 for two classes, otherwise the unweighted mean of the
/// one-vs-rest F1 scores. Labels are class indices.
pub fn macro_f1(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::Data("label vectors differ in length".into()));
    }
    if n_classes == 0 || truth.iter().chain(predicted).any(|&c| c >= n_classes) {
        return Err(Error::Data(format!("labels must lie in 0..{n_classes}")));
    }
    if n_classes == 2 {
        return Ok(f1_for(truth, predicted, 0));
    }
    Ok((0..n_classes).map(|c| f1_for(truth, predicted, c)).sum::<f64>() / n_classes as f64)
}

/// `n / p` for a training sample of `n_rows` rows.
pub fn samples_per_parameter(n_rows: usize, parameter_count: usize) -> f64 {
    n_rows as f64 / parameter_count as f64
}

/// Metrics of one learned model against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub shd: usize,
    pub shd_xonly: usize,
    pub kl_joint: f64,
    pub kl_mc_xonly: f64,
    pub rmad_known_f: f64,
    pub rmad_unknown_f: f64,
    pub rmad_skipped: usize,
    pub f1: f64,
    pub n_over_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub engine: Engine,
    pub mc_samples: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            engine: Engine::Exact,
            mc_samples: 5_000,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// All metrics of `learned` against `truth` (a model whose graph has the
/// group node as parent of every variable). `parameter_count` is the truth's
/// parameter count and `n_train` the training sample size.
pub fn evaluate(
    truth: &BnModel,
    learned: &BnModel,
    eval: &GroupedDataset,
    n_train: usize,
    parameter_count: usize,
    options: &EvalOptions,
) -> Result<MetricRow> {
    let shd = shd_with_group(truth.dag(), learned.dag())?;
    let shd_xonly = shd_variables(truth.dag(), learned.dag())?;
    let kl_joint = model_kl(truth, learned)?;
    let kl_mc_xonly = mc_kl_variables(truth, learned, options.mc_samples, options.seed)?.value;
    let observed = eval.columns().to_vec();
    let known = predict_all(learned, eval, true, options.engine, options.seed, options.execution)?;
    let unknown = predict_all(learned, eval, false, options.engine, options.seed ^ 1, options.execution)?;
    let rk = rmad(&observed, &known)?;
    let ru = rmad(&observed, &unknown)?;
    let truth_groups = align_groups(learned, eval)?;
    let predicted = classify_all(learned, eval, options.execution)?;
    let f1 = macro_f1(&truth_groups, &predicted, learned.n_groups())?;
    Ok(MetricRow {
        shd,
        shd_xonly,
        kl_joint,
        kl_mc_xonly,
        rmad_known_f: rk.value,
        rmad_unknown_f: ru.value,
        rmad_skipped: rk.skipped + ru.skipped,
        f1,
        n_over_p: samples_per_parameter(n_train, parameter_count),
    })
}
