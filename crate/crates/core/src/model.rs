//! The three network classes, parameter learning for a fixed DAG, per-group
//! joint compilation, exact log-density and forward sampling.
//!
//! Graph layout convention: the continuous variables occupy node indices
//! `0..N` in data-column order; for the group-aware strategies the group node
//! is appended as node `N`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::graph::Dag;
use crate::linalg::{self, Gaussian, LN_2PI};
use crate::lme::{fit_lme, LmeConfig, LmeFit, LmeProblem};
use crate::rng::rng_from_seed;

/// Name given to the group node when one is added to a graph.
pub const GROUP_NODE: &str = "F";

/// Relative variance floor for degenerate least-squares fits.
pub const VARIANCE_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Complete pooling: a single Gaussian network over the variables.
    Gbn,
    /// No pooling: per-group regressions with the group node as parent.
    Cgbn,
    /// Partial pooling: mixed-effects regressions with the group node as parent.
    Lme,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Gbn, Strategy::Cgbn, Strategy::Lme];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Gbn => "gbn",
            Strategy::Cgbn => "cgbn",
            Strategy::Lme => "lme",
        }
    }

    /// Whether the group node is a parent of every variable.
    pub fn uses_group(self) -> bool {
        !matches!(self, Strategy::Gbn)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gbn" => Ok(Strategy::Gbn),
            "cgbn" => Ok(Strategy::Cgbn),
            "lme" => Ok(Strategy::Lme),
            other => Err(Error::Config(vec![format!(
                "unknown strategy {other:?} (expected gbn, cgbn or lme)"
            )])),
        }
    }
}

/// Free parameters of one local distribution with `k` continuous parents.
pub fn nparams(strategy: Strategy, k: usize, n_groups: usize) -> usize {
    match strategy {
        Strategy::Gbn => k + 2,
        Strategy::Cgbn => (k + 2) * n_groups,
        // fixed effects k+1, random-effect covariance (k+1)(k+2)/2, residual 1
        Strategy::Lme => (k * k + 5 * k + 6) / 2,
    }
}

/// `X = intercept + coefficients . parents + N(0, variance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub variance: f64,
}

impl LinearGaussian {
    pub fn mean(&self, parents: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(parents)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn log_density(&self, value: f64, parents: &[f64]) -> f64 {
        let r = value - self.mean(parents);
        -0.5 * (LN_2PI + self.variance.ln() + r * r / self.variance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalDistribution {
    Pooled(LinearGaussian),
    /// One regression per group; `degenerate` marks clamped or
    /// pseudo-inverse fits from groups too small for their parent count.
    PerGroup {
        groups: Vec<LinearGaussian>,
        degenerate: bool,
    },
    Mixed(LmeFit),
}

impl LocalDistribution {
    /// Point parameters used for group `j` (the group is ignored when pooled).
    pub fn group_params(&self, j: usize) -> LinearGaussian {
        match self {
            LocalDistribution::Pooled(lg) => lg.clone(),
            LocalDistribution::PerGroup { groups, .. } => groups[j].clone(),
            LocalDistribution::Mixed(fit) => {
                let c = fit.group_coefficients(j);
                LinearGaussian {
                    intercept: c[0],
                    coefficients: c.iter().skip(1).copied().collect(),
                    variance: fit.sigma2,
                }
            }
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            LocalDistribution::Pooled(_) => Strategy::Gbn,
            LocalDistribution::PerGroup { .. } => Strategy::Cgbn,
            LocalDistribution::Mixed(_) => Strategy::Lme,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, LocalDistribution::PerGroup { degenerate: true, .. })
    }

    fn parent_count(&self) -> Option<usize> {
        match self {
            LocalDistribution::Pooled(lg) => Some(lg.coefficients.len()),
            LocalDistribution::PerGroup { groups, .. } => {
                let k = groups.first()?.coefficients.len();
                groups.iter().all(|g| g.coefficients.len() == k).then_some(k)
            }
            LocalDistribution::Mixed(fit) => Some(fit.n_fixed() - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLocal {
    /// Continuous parents (node indices), ascending.
    pub parents: Vec<usize>,
    pub distribution: LocalDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnModel {
    dag: Dag,
    strategy: Strategy,
    group_labels: Vec<String>,
    group_prior: Vec<f64>,
    locals: Vec<NodeLocal>,
}

impl BnModel {
    pub fn new(
        dag: Dag,
        strategy: Strategy,
        group_labels: Vec<String>,
        group_prior: Vec<f64>,
        locals: Vec<NodeLocal>,
    ) -> Result<Self> {
        let n_vars = check_layout(&dag, strategy)?;
        if locals.len() != n_vars {
            return Err(Error::Data(format!("{} locals for {n_vars} variables", locals.len())));
        }
        let n_groups = group_labels.len();
        if n_groups == 0 || group_prior.len() != n_groups {
            return Err(Error::Data("group prior must have one entry per label".into()));
        }
        let total: f64 = group_prior.iter().sum();
        if group_prior.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("group prior must be a distribution (sums to {total})")));
        }
        for (v, local) in locals.iter().enumerate() {
            let name = dag.name(v);
            if local.parents != dag.continuous_parents(v) {
                return Err(Error::Data(format!("local parents of {name} disagree with the graph")));
            }
            if local.distribution.strategy() != strategy {
                return Err(Error::Data(format!("local of {name} is not a {strategy} distribution")));
            }
            if local.distribution.parent_count() != Some(local.parents.len()) {
                return Err(Error::Data(format!("coefficient count of {name} disagrees with its parents")));
            }
            let groups_ok = match &local.distribution {
                LocalDistribution::Pooled(_) => true,
                LocalDistribution::PerGroup { groups, .. } => groups.len() == n_groups,
                LocalDistribution::Mixed(fit) => fit.n_groups() == n_groups,
            };
            if !groups_ok {
                return Err(Error::Data(format!("local of {name} has the wrong number of groups")));
            }
            let positive = (0..n_groups).all(|j| local.distribution.group_params(j).variance > 0.0);
            if !positive {
                return Err(Error::Data(format!("non-positive variance in local of {name}")));
            }
        }
        Ok(Self {
            dag,
            strategy,
            group_labels,
            group_prior,
            locals,
        })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn n_vars(&self) -> usize {
        self.locals.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.dag.names()[..self.n_vars()]
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn group_prior(&self) -> &[f64] {
        &self.group_prior
    }

    pub fn locals(&self) -> &[NodeLocal] {
        &self.locals
    }

    pub fn local(&self, v: usize) -> &NodeLocal {
        &self.locals[v]
    }

    pub fn group_index(&self, label: &str) -> Result<usize> {
        self.group_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Data(format!("unknown group label {label:?}")))
    }

    /// Nodes whose per-group fits were clamped or pseudo-inverted.
    pub fn degenerate_nodes(&self) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&v| self.locals[v].distribution.is_degenerate())
            .collect()
    }

    /// Topological order over the continuous variables only.
    pub fn variable_order(&self) -> Vec<usize> {
        self.dag
            .topological_order()
            .expect("model graphs are acyclic")
            .into_iter()
            .filter(|&v| v < self.n_vars())
            .collect()
    }

    /// Sum of per-node conditional log densities plus the log group prior.
    pub fn log_density(&self, row: &[f64], group: usize) -> Result<f64> {
        if group >= self.n_groups() {
            return Err(Error::Data(format!("group index {group} out of range")));
        }
        if row.len() != self.n_vars() {
            return Err(Error::Data(format!("row has {} values, expected {}", row.len(), self.n_vars())));
        }
        let mut total = self.group_prior[group].ln();
        for (v, local) in self.locals.iter().enumerate() {
            let pa: Vec<f64> = local.parents.iter().map(|&p| row[p]).collect();
            total += local.distribution.group_params(group).log_density(row[v], &pa);
        }
        Ok(total)
    }

    pub fn log_density_label(&self, row: &[f64], label: &str) -> Result<f64> {
        self.log_density(row, self.group_index(label)?)
    }

    /// Exact per-group joint Gaussians of the variables.
    ///
    /// Mixed-effects locals enter through their group-specific point
    /// coefficients `beta + b_j`; random-effect uncertainty is not propagated.
    pub fn compile_joint(&self) -> Result<GroupJoint> {
        let order = self.variable_order();
        let n = self.n_vars();
        let components = (0..self.n_groups())
            .map(|j| {
                let mut mean = DVector::<f64>::zeros(n);
                let mut cov = DMatrix::<f64>::zeros(n, n);
                let mut done: Vec<usize> = Vec::with_capacity(n);
                for &i in &order {
                    let local = &self.locals[i];
                    let lg = local.distribution.group_params(j);
                    mean[i] = lg.mean(&local.parents.iter().map(|&p| mean[p]).collect::<Vec<_>>());
                    for &k in &done {
                        let c: f64 = local
                            .parents
                            .iter()
                            .zip(&lg.coefficients)
                            .map(|(&p, b)| b * cov[(p, k)])
                            .sum();
                        cov[(i, k)] = c;
                        cov[(k, i)] = c;
                    }
                    let var: f64 = local
                        .parents
                        .iter()
                        .zip(&lg.coefficients)
                        .map(|(&p, b)| b * cov[(p, i)])
                        .sum::<f64>()
                        + lg.variance;
                    cov[(i, i)] = var;
                    done.push(i);
                }
                Gaussian::new(mean, cov).map_err(|_| {
                    Error::Numeric(format!("compiled covariance of group {j} is not positive definite"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupJoint {
            components,
            prior: self.group_prior.clone(),
        })
    }

    /// Draws `count` rows: group from the prior, then ancestral sampling.
    pub fn sample(&self, count: usize, seed: u64) -> Result<GroupedDataset> {
        let mut rng = rng_from_seed(seed);
        let picker = WeightedIndex::new(&self.group_prior)
            .map_err(|e| Error::Numeric(format!("group prior: {e}")))?;
        let order = self.variable_order();
        let params: Vec<Vec<LinearGaussian>> = (0..self.n_groups())
            .map(|j| self.locals.iter().map(|l| l.distribution.group_params(j)).collect())
            .collect();
        let n = self.n_vars();
        let mut columns = vec![Vec::with_capacity(count); n];
        let mut groups = Vec::with_capacity(count);
        let mut row = vec![0.0; n];
        for _ in 0..count {
            let j = picker.sample(&mut rng);
            for &i in &order {
                let lg = &params[j][i];
                let pa: Vec<f64> = self.locals[i].parents.iter().map(|&p| row[p]).collect();
                let z: f64 = StandardNormal.sample(&mut rng);
                row[i] = lg.mean(&pa) + lg.variance.sqrt() * z;
            }
            for (c, &v) in columns.iter_mut().zip(&row) {
                c.push(v);
            }
            groups.push(j);
        }
        GroupedDataset::new(self.variables().to_vec(), columns, groups, self.group_labels.clone())
    }
}

/// Validates the node layout for a strategy; returns the variable count.
fn check_layout(dag: &Dag, strategy: Strategy) -> Result<usize> {
    if !dag.is_acyclic() {
        return Err(Error::Graph("model graph has a cycle".into()));
    }
    match (strategy.uses_group(), dag.group()) {
        (false, None) => Ok(dag.len()),
        (false, Some(_)) => Err(Error::Graph("complete pooling graphs carry no group node".into())),
        (true, None) => Err(Error::Graph(format!("{strategy} graphs need a group node"))),
        (true, Some(g)) => {
            let n = dag.len() - 1;
            if g != n {
                return Err(Error::Graph("group node must be the last node".into()));
            }
            if let Some(v) = (0..n).find(|&v| !dag.has_arc(g, v)) {
                return Err(Error::Graph(format!(
                    "group node must be a parent of every variable ({} lacks it)",
                    dag.name(v)
                )));
            }
            Ok(n)
        }
    }
}

/// Per-group joint Gaussians of the variables plus the group prior.
#[derive(Debug, Clone)]
pub struct GroupJoint {
    components: Vec<Gaussian>,
    prior: Vec<f64>,
}

impl GroupJoint {
    pub fn new(components: Vec<Gaussian>, prior: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != prior.len() {
            return Err(Error::Data("one component per group prior entry required".into()));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::Data("components differ in dimension".into()));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Data("group prior must sum to one".into()));
        }
        Ok(Self { components, prior })
    }

    pub fn n_groups(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn component(&self, j: usize) -> &Gaussian {
        &self.components[j]
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// `log pi_j + log N(x; mu_j, Sigma_j)`.
    pub fn log_joint(&self, x: &[f64], j: usize) -> f64 {
        self.prior[j].ln() + self.components[j].log_pdf(x)
    }

    /// Log density of the variables with the group marginalised out.
    pub fn log_mixture(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.n_groups()).map(|j| self.log_joint(x, j)).collect();
        log_sum_exp(&terms)
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

fn variance_floor(column: &[f64]) -> f64 {
    (VARIANCE_CLAMP * sample_variance(column)).max(1e-12)
}

fn ls_fit(data: &GroupedDataset, node: usize, parents: &[usize], rows: &[usize]) -> (LinearGaussian, f64, bool) {
    let cols: Vec<&[f64]> = parents.iter().map(|&p| data.column(p)).collect();
    let design = linalg::design_with_intercept(&cols, rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&k| data.value(k, node)));
    let fit = linalg::least_squares(&design, &y);
    let n = rows.len() as f64;
    let floor = variance_floor(data.column(node));
    let raw = fit.rss / n;
    let degenerate = !fit.full_rank() || rows.len() <= parents.len() + 1 || raw < floor;
    let variance = raw.max(floor);
    let loglik = -0.5 * (n * (LN_2PI + variance.ln()) + fit.rss / variance);
    let lg = LinearGaussian {
        intercept: fit.coefficients[0],
        coefficients: fit.coefficients.iter().skip(1).copied().collect(),
        variance,
    };
    (lg, loglik, degenerate)
}

/// Fits one local distribution and returns it with its maximised log-likelihood.
pub fn fit_local(
    data: &GroupedDataset,
    node: usize,
    parents: &[usize],
    strategy: Strategy,
    lme: &LmeConfig,
) -> Result<(LocalDistribution, f64)> {
    match strategy {
        Strategy::Gbn => {
            let rows: Vec<usize> = (0..data.n_rows()).collect();
            let (lg, ll, _) = ls_fit(data, node, parents, &rows);
            Ok((LocalDistribution::Pooled(lg), ll))
        }
        Strategy::Cgbn => {
            let mut groups = Vec::with_capacity(data.n_groups());
            let mut total = 0.0;
            let mut degenerate = false;
            for rows in data.rows_by_group() {
                if rows.is_empty() {
                    let col = data.column(node);
                    groups.push(LinearGaussian {
                        intercept: col.iter().sum::<f64>() / col.len().max(1) as f64,
                        coefficients: vec![0.0; parents.len()],
                        variance: sample_variance(col).max(1e-12),
                    });
                    degenerate = true;
                    continue;
                }
                let (lg, ll, deg) = ls_fit(data, node, parents, &rows);
                groups.push(lg);
                total += ll;
                degenerate |= deg;
            }
            Ok((LocalDistribution::PerGroup { groups, degenerate }, total))
        }
        Strategy::Lme => {
            let cols: Vec<&[f64]> = parents.iter().map(|&p| data.column(p)).collect();
            let problem = LmeProblem::from_columns(data.column(node), &cols, data.groups(), data.n_groups())?;
            let fit = fit_lme(&problem, lme)?;
            let ll = fit.loglik;
            Ok((LocalDistribution::Mixed(fit), ll))
        }
    }
}

/// Learns the parameters of every local distribution for a fixed graph.
pub fn fit_parameters(
    dag: &Dag,
    data: &GroupedDataset,
    strategy: Strategy,
    lme: &LmeConfig,
    exec: Execution,
) -> Result<BnModel> {
    let n = check_layout(dag, strategy)?;
    if n != data.n_vars() || dag.names()[..n] != *data.names() {
        return Err(Error::Data("graph variables do not match the data columns".into()));
    }
    let fits = exec::map_range(n, exec, |v| {
        let parents = dag.continuous_parents(v);
        fit_local(data, v, &parents, strategy, lme)
            .map(|(distribution, _)| NodeLocal { parents, distribution })
            .map_err(|e| {
                let names: Vec<String> = dag.continuous_parents(v).iter().map(|&p| dag.name(p).to_string()).collect();
                Error::scoring(dag.name(v), &names, e)
            })
    });
    let locals = fits.into_iter().collect::<Result<Vec<_>>>()?;
    BnModel::new(
        dag.clone(),
        strategy,
        data.labels().to_vec(),
        data.group_frequencies(),
        locals,
    )
}

/// Graph over the data's variables in the layout a strategy expects, with
/// the given arcs among variables (indices into the data columns).
pub fn strategy_dag(data: &GroupedDataset, strategy: Strategy, arcs: &[(usize, usize)]) -> Result<Dag> {
    let x = Dag::from_arcs(data.names(), None, arcs)?;
    if strategy.uses_group() {
        x.with_group_parent(GROUP_NODE)
    } else {
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_model() -> BnModel {
        let dag = Dag::from_arcs(&["X1", "X2"], None, &[(0, 1)]).unwrap();
        BnModel::new(
            dag,
            Strategy::Gbn,
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            vec![
                NodeLocal {
                    parents: vec![],
                    distribution: LocalDistribution::Pooled(LinearGaussian {
                        intercept: 0.0,
                        coefficients: vec![],
                        variance: 1.0,
                    }),
                },
                NodeLocal {
                    parents: vec![0],
                    distribution: LocalDistribution::Pooled(LinearGaussian {
                        intercept: 0.0,
                        coefficients: vec![2.0],
                        variance: 1.0,
                    }),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn nparams_examples() {
        assert_eq!(nparams(Strategy::Lme, 2, 7), 10);
        assert_eq!(nparams(Strategy::Lme, 0, 7), 3);
        assert_eq!(nparams(Strategy::Cgbn, 1, 5), 15);
        assert_eq!(nparams(Strategy::Gbn, 1, 5), 3);
    }

    #[test]
    fn compile_chain() {
        let j = chain_model().compile_joint().unwrap();
        let c = j.component(0).cov();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 2.0);
        assert_eq!(c[(1, 1)], 5.0);
        // pooled locals give identical components
        assert_eq!(j.component(1).cov(), c);
    }

    #[test]
    fn single_node_density() {
        let dag = Dag::empty(&["X"], None).unwrap();
        let m = BnModel::new(
            dag,
            Strategy::Gbn,
            vec!["a".into(), "b".into()],
            vec![0.5, 0.5],
            vec![NodeLocal {
                parents: vec![],
                distribution: LocalDistribution::Pooled(LinearGaussian {
                    intercept: 0.0,
                    coefficients: vec![],
                    variance: 1.0,
                }),
            }],
        )
        .unwrap();
        let expected = -0.5 * LN_2PI + 0.5f64.ln();
        assert!((m.log_density(&[0.0], 1).unwrap() - expected).abs() < 1e-15);
        assert!(m.log_density(&[0.0], 2).is_err());
        assert!(m.log_density_label(&[0.0], "zzz").is_err());
    }

    #[test]
    fn layout_is_checked() {
        let x = Dag::from_arcs(&["X1", "X2"], None, &[(0, 1)]).unwrap();
        let with_f = x.with_group_parent(GROUP_NODE).unwrap();
        assert!(check_layout(&with_f, Strategy::Lme).is_ok());
        assert!(check_layout(&with_f, Strategy::Gbn).is_err());
        assert!(check_layout(&x, Strategy::Cgbn).is_err());
        let partial = Dag::from_named_arcs(&["X1", "X2", "F"], Some("F"), &[("F", "X1")]).unwrap();
        assert!(check_layout(&partial, Strategy::Cgbn).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = chain_model();
        assert_eq!(m.sample(50, 3).unwrap(), m.sample(50, 3).unwrap());
        assert_ne!(m.sample(50, 3).unwrap(), m.sample(50, 4).unwrap());
    }
}
