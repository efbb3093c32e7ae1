//! Ground-truth networks and data sets for the simulation study.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::model::{BnModel, LinearGaussian, LocalDistribution, NodeLocal, Strategy, GROUP_NODE};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Share of each non-root node's variance explained by its parents.
pub const EXPLAINED_VARIANCE: f64 = 0.85;
/// Mean of every regression coefficient before group effects.
pub const COEFFICIENT_MEAN: f64 = 2.0;
pub const MAX_DAG_ATTEMPTS: usize = 10_000;
/// Group counts allowed in the unbalanced scenario.
pub const UNBALANCED_GROUPS: [usize; 3] = [5, 10, 20];

/// `X01`, `X02`, ...; zero-padded so names sort in column order.
pub fn node_names(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|i| format!("X{i:0width$}")).collect()
}

/// Group labels `1..=n_groups`.
pub fn group_labels(n_groups: usize) -> Vec<String> {
    (1..=n_groups).map(|j| j.to_string()).collect()
}

/// Probability of each arc slot for a target average parent count.
pub fn arc_probability(n: usize, avg_parents: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Config(vec![format!("N must be at least 2 (got {n})")]));
    }
    let p = avg_parents * 2.0 / n as f64;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(vec![format!(
            "average parents {avg_parents} with N = {n} gives arc probability {p}, outside (0, 1]"
        )]));
    }
    Ok(p)
}

/// One unconstrained draw: a random node order, then each of the
/// `n(n-1)/2` forward slots kept independently with probability `p`.
pub fn raw_dag_draw(n: usize, p: f64, rng: &mut SimRng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut arcs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                arcs.push((order[a], order[b]));
            }
        }
    }
    arcs
}

/// Random DAG over `X01..` whose skeleton is weakly connected.
pub fn random_connected_dag(n: usize, avg_parents: f64, seed: u64) -> Result<Dag> {
    let p = arc_probability(n, avg_parents)?;
    let names = node_names(n);
    let mut rng = rng_from_seed(seed);
    for _ in 0..MAX_DAG_ATTEMPTS {
        let arcs = raw_dag_draw(n, p, &mut rng);
        let dag = Dag::from_arcs(&names, None, &arcs)?;
        if dag.is_weakly_connected_without_group() {
            return Ok(dag);
        }
    }
    Err(Error::Numeric(format!(
        "no connected DAG after {MAX_DAG_ATTEMPTS} attempts (N = {n}, average parents = {avg_parents}, seed = {seed})"
    )))
}

/// Generating network: `F` is a parent of every variable and each group has
/// its own regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueBn {
    dag: Dag,
    labels: Vec<String>,
    /// `params[i][j]`: node `i` in group `j`.
    params: Vec<Vec<LinearGaussian>>,
    /// Coefficient noise variance drawn for each node and group.
    coefficient_variance: Vec<Vec<f64>>,
}

impl TrueBn {
    pub fn new(dag: Dag, labels: Vec<String>, params: Vec<Vec<LinearGaussian>>) -> Result<Self> {
        let n = params.len();
        let coefficient_variance = vec![vec![0.0; labels.len()]; n];
        let bn = Self {
            dag,
            labels,
            params,
            coefficient_variance,
        };
        bn.to_model()?;
        Ok(bn)
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn n_vars(&self) -> usize {
        self.params.len()
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn params(&self, node: usize, group: usize) -> &LinearGaussian {
        &self.params[node][group]
    }

    pub fn coefficient_variance(&self, node: usize, group: usize) -> f64 {
        self.coefficient_variance[node][group]
    }

    pub fn prior(&self) -> Vec<f64> {
        vec![1.0 / self.n_groups() as f64; self.n_groups()]
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.dag, self.n_groups())
    }

    /// The truth as a no-pooling model with a uniform group prior.
    pub fn to_model(&self) -> Result<BnModel> {
        let locals = self
            .params
            .iter()
            .enumerate()
            .map(|(i, groups)| NodeLocal {
                parents: self.dag.continuous_parents(i),
                distribution: LocalDistribution::PerGroup {
                    groups: groups.clone(),
                    degenerate: false,
                },
            })
            .collect();
        BnModel::new(self.dag.clone(), Strategy::Cgbn, self.labels.clone(), self.prior(), locals)
    }

    /// Variance of the parents' linear predictor for node `i` in group `j`.
    pub fn predictor_variance(&self, i: usize, j: usize) -> f64 {
        let cov = group_covariance(&self.dag, &self.params, j);
        predictor_variance(&self.dag.continuous_parents(i), &self.params[i][j].coefficients, &cov)
    }
}

/// Within-group covariance of the variables implied by `params`.
fn group_covariance(dag: &Dag, params: &[Vec<LinearGaussian>], j: usize) -> Vec<Vec<f64>> {
    let n = params.len();
    let mut cov = vec![vec![0.0; n]; n];
    let mut done: Vec<usize> = Vec::with_capacity(n);
    for i in variable_order(dag, n) {
        fill_covariance(dag, &params[i][j], i, &done, &mut cov);
        done.push(i);
    }
    cov
}

fn variable_order(dag: &Dag, n: usize) -> Vec<usize> {
    dag.topological_order()
        .expect("acyclic")
        .into_iter()
        .filter(|&v| v < n)
        .collect()
}

fn fill_covariance(dag: &Dag, lg: &LinearGaussian, i: usize, done: &[usize], cov: &mut [Vec<f64>]) {
    let parents = dag.continuous_parents(i);
    for &k in done {
        let c: f64 = parents.iter().zip(&lg.coefficients).map(|(&p, b)| b * cov[p][k]).sum();
        cov[i][k] = c;
        cov[k][i] = c;
    }
    cov[i][i] = predictor_variance(&parents, &lg.coefficients, cov) + lg.variance;
}

fn predictor_variance(parents: &[usize], slopes: &[f64], cov: &[Vec<f64>]) -> f64 {
    let mut v = 0.0;
    for (a, &pa) in parents.iter().enumerate() {
        for (b, &pb) in parents.iter().enumerate() {
            v += slopes[a] * slopes[b] * cov[pa][pb];
        }
    }
    v
}

/// Parameters of a generating network: `(k + 2)` per variable and group
/// plus the free probabilities of the group marginal.
pub fn parameter_count(dag: &Dag, n_groups: usize) -> usize {
    let x = dag.without_group();
    (0..x.len())
        .map(|i| (x.continuous_parents(i).len() + 2) * n_groups)
        .sum::<usize>()
        + n_groups.saturating_sub(1)
}

/// Residual variance giving parents the target share of explained variance.
pub fn residual_variance(predictor_variance: f64, has_parents: bool) -> f64 {
    if has_parents {
        predictor_variance * (1.0 - EXPLAINED_VARIANCE) / EXPLAINED_VARIANCE
    } else {
        1.0
    }
}

/// Draws per-group parameters for a graph over the variables (an existing
/// group node is kept, otherwise one is added as parent of all variables).
pub fn sample_true_bn(dag: &Dag, n_groups: usize, seed: u64) -> Result<TrueBn> {
    if n_groups == 0 {
        return Err(Error::Config(vec!["|F| must be at least 1".into()]));
    }
    let x = dag.without_group();
    let dag = x.with_group_parent(GROUP_NODE)?;
    let n = x.len();
    let mut rng = rng_from_seed(seed);
    let chi = ChiSquared::new(1.0).expect("valid degrees of freedom");

    // coefficients are drawn in node index order, variances in topological order
    let mut coefficient_variance = vec![vec![0.0; n_groups]; n];
    let mut coefs = vec![vec![Vec::new(); n_groups]; n];
    for i in 0..n {
        let len = x.continuous_parents(i).len() + 1;
        for j in 0..n_groups {
            let s2: f64 = chi.sample(&mut rng);
            let sd = s2.sqrt();
            coefficient_variance[i][j] = s2;
            coefs[i][j] = (0..len)
                .map(|_| {
                    let b: f64 = rng.sample(StandardNormal);
                    let z: f64 = rng.sample(StandardNormal);
                    COEFFICIENT_MEAN + b + sd * z
                })
                .collect::<Vec<f64>>();
        }
    }

    let mut params: Vec<Vec<LinearGaussian>> = coefs
        .iter()
        .map(|groups| {
            groups
                .iter()
                .map(|c| LinearGaussian {
                    intercept: c[0],
                    coefficients: c[1..].to_vec(),
                    variance: 1.0,
                })
                .collect()
        })
        .collect();
    let order = variable_order(&dag, n);
    for j in 0..n_groups {
        let mut cov = vec![vec![0.0; n]; n];
        let mut done = Vec::with_capacity(n);
        for &i in &order {
            let parents = dag.continuous_parents(i);
            let vp = predictor_variance(&parents, &params[i][j].coefficients, &cov);
            params[i][j].variance = residual_variance(vp, !parents.is_empty()).max(1e-12);
            fill_covariance(&dag, &params[i][j], i, &done, &mut cov);
            done.push(i);
        }
    }

    Ok(TrueBn {
        dag,
        labels: group_labels(n_groups),
        params,
        coefficient_variance,
    })
}

/// Copies group 1's parameters to every group.
pub fn make_homogeneous(bn: &TrueBn) -> TrueBn {
    let mut out = bn.clone();
    for (node, cv) in out.params.iter_mut().zip(out.coefficient_variance.iter_mut()) {
        let first = node[0].clone();
        node.iter_mut().for_each(|g| *g = first.clone());
        let v = cv[0];
        cv.iter_mut().for_each(|c| *c = v);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Balanced,
    Unbalanced,
    Homogeneous,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Balanced, Scenario::Unbalanced, Scenario::Homogeneous];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Balanced => "balanced",
            Scenario::Unbalanced => "unbalanced",
            Scenario::Homogeneous => "homogeneous",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(vec![format!("unknown scenario {s:?} (balanced, unbalanced, homogeneous)")]))
    }
}

/// Rows per group for a scenario with `n_groups * n_j` rows in total.
///
/// Unbalanced: two groups get `round(0.3 n)` rows each and the rest is shared
/// by largest remainder, ties going to the lower group index.
pub fn group_sizes(scenario: Scenario, n_groups: usize, n_j: usize) -> Result<Vec<usize>> {
    match scenario {
        Scenario::Balanced | Scenario::Homogeneous => Ok(vec![n_j; n_groups]),
        Scenario::Unbalanced => {
            if !UNBALANCED_GROUPS.contains(&n_groups) {
                return Err(Error::Config(vec![format!(
                    "unbalanced scenario needs |F| in {UNBALANCED_GROUPS:?} (got {n_groups})"
                )]));
            }
            let n = n_groups * n_j;
            let big = (0.3 * n as f64).round() as usize;
            let rest = n - 2 * big;
            let others = n_groups - 2;
            let mut sizes = vec![big, big];
            sizes.extend((0..others).map(|k| rest / others + usize::from(k < rest % others)));
            debug_assert_eq!(sizes.iter().sum::<usize>(), n);
            Ok(sizes)
        }
    }
}

/// Ancestral sample with `sizes[j]` rows from group `j`, rows shuffled.
pub fn generate_dataset(bn: &TrueBn, sizes: &[usize], seed: u64) -> Result<GroupedDataset> {
    if sizes.len() != bn.n_groups() {
        return Err(Error::Data(format!("{} group sizes for {} groups", sizes.len(), bn.n_groups())));
    }
    let n = bn.n_vars();
    let order = variable_order(&bn.dag, n);
    let parents: Vec<Vec<usize>> = (0..n).map(|i| bn.dag.continuous_parents(i)).collect();
    let mut rng = rng_from_seed(seed);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(sizes.iter().sum());
    for (j, &count) in sizes.iter().enumerate() {
        for _ in 0..count {
            let mut row = vec![0.0; n];
            for &i in &order {
                let lg = &bn.params[i][j];
                let pa: Vec<f64> = parents[i].iter().map(|&p| row[p]).collect();
                let z: f64 = rng.sample(StandardNormal);
                row[i] = lg.mean(&pa) + lg.variance.sqrt() * z;
            }
            rows.push((row, j));
        }
    }
    rows.shuffle(&mut rng);
    let mut columns = vec![Vec::with_capacity(rows.len()); n];
    let mut groups = Vec::with_capacity(rows.len());
    for (row, j) in rows {
        for (c, v) in columns.iter_mut().zip(row) {
            c.push(v);
        }
        groups.push(j);
    }
    GroupedDataset::new(bn.dag.without_group().names().to_vec(), columns, groups, bn.labels.clone())
}

/// Study grid; every list is crossed with every other.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_vars: Vec<usize>,
    pub avg_parents: Vec<f64>,
    pub n_groups: Vec<usize>,
    pub n_j: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    pub replicates: usize,
    pub seed: u64,
    /// Rows in each held-out evaluation sample.
    pub eval_rows: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_vars: vec![10],
            avg_parents: vec![1.0],
            n_groups: vec![5],
            n_j: vec![10],
            scenarios: vec![Scenario::Balanced],
            replicates: 1,
            seed: 1,
            eval_rows: 1000,
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub n_vars: usize,
    pub avg_parents: f64,
    pub n_groups: usize,
    pub n_j: usize,
    pub scenario: Scenario,
}

impl Cell {
    pub fn group_sizes(&self) -> Result<Vec<usize>> {
        group_sizes(self.scenario, self.n_groups, self.n_j)
    }

    /// Short directory-friendly name.
    pub fn slug(&self) -> String {
        format!(
            "N{}_avg{}_F{}_nj{}_{}",
            self.n_vars, self.avg_parents, self.n_groups, self.n_j, self.scenario
        )
    }
}

/// Seeds of one replicate of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateSeeds {
    pub dag: u64,
    pub parameters: u64,
    pub data: u64,
    pub eval: u64,
    pub inference: u64,
}

impl ExperimentConfig {
    /// All problems with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, empty) in [
            ("N", self.n_vars.is_empty()),
            ("avg_parents", self.avg_parents.is_empty()),
            ("F", self.n_groups.is_empty()),
            ("n_j", self.n_j.is_empty()),
            ("scenario", self.scenarios.is_empty()),
        ] {
            if empty {
                out.push(format!("{name} must list at least one value"));
            }
        }
        for &n in &self.n_vars {
            for &a in &self.avg_parents {
                if let Err(Error::Config(m)) = arc_probability(n, a) {
                    out.extend(m);
                }
            }
        }
        for &g in &self.n_groups {
            if g < 2 {
                out.push(format!("F must be at least 2 (got {g})"));
            }
            if self.scenarios.contains(&Scenario::Unbalanced) && !UNBALANCED_GROUPS.contains(&g) {
                out.push(format!("unbalanced scenario needs F in {UNBALANCED_GROUPS:?} (got {g})"));
            }
        }
        if let Some(&nj) = self.n_j.iter().find(|&&nj| nj == 0) {
            out.push(format!("n_j must be at least 1 (got {nj})"));
        }
        if self.replicates == 0 {
            out.push("replicates must be at least 1".into());
        }
        if self.eval_rows == 0 {
            out.push("eval_rows must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Grid cells in a fixed order: N, avg_parents, F, n_j, scenario.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n_vars in &self.n_vars {
            for &avg_parents in &self.avg_parents {
                for &n_groups in &self.n_groups {
                    for &n_j in &self.n_j {
                        for &scenario in &self.scenarios {
                            cells.push(Cell {
                                index: cells.len(),
                                n_vars,
                                avg_parents,
                                n_groups,
                                n_j,
                                scenario,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    /// Seeds for a replicate. The generating network depends only on
    /// `(N, avg_parents, F, replicate)`, so it is shared across sample sizes
    /// and scenarios; the data streams are specific to the cell.
    pub fn seeds(&self, cell: &Cell, replicate: usize) -> ReplicateSeeds {
        let bn_path = [
            cell.n_vars as u64,
            cell.avg_parents.to_bits(),
            cell.n_groups as u64,
            replicate as u64,
        ];
        let cell_path = |stream: u64| [stream, cell.index as u64, replicate as u64];
        ReplicateSeeds {
            dag: derive_seed(self.seed, &[&[1u64][..], &bn_path[..]].concat()),
            parameters: derive_seed(self.seed, &[&[2u64][..], &bn_path[..]].concat()),
            data: derive_seed(self.seed, &cell_path(3)),
            eval: derive_seed(self.seed, &cell_path(4)),
            inference: derive_seed(self.seed, &cell_path(5)),
        }
    }
}

/// Everything one replicate of a cell works with.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub truth: TrueBn,
    pub train: GroupedDataset,
    pub eval: GroupedDataset,
    pub seeds: ReplicateSeeds,
}

/// Builds the truth, training data and evaluation data of a replicate.
/// The evaluation sample is balanced across groups, matching the uniform prior.
pub fn build_replicate(config: &ExperimentConfig, cell: &Cell, replicate: usize) -> Result<Replicate> {
    let seeds = config.seeds(cell, replicate);
    let dag = random_connected_dag(cell.n_vars, cell.avg_parents, seeds.dag)?;
    let mut truth = sample_true_bn(&dag, cell.n_groups, seeds.parameters)?;
    if cell.scenario == Scenario::Homogeneous {
        truth = make_homogeneous(&truth);
    }
    let train = generate_dataset(&truth, &cell.group_sizes()?, seeds.data)?;
    let eval_sizes: Vec<usize> = (0..cell.n_groups)
        .map(|j| config.eval_rows / cell.n_groups + usize::from(j < config.eval_rows % cell.n_groups))
        .collect();
    let eval = generate_dataset(&truth, &eval_sizes, seeds.eval)?;
    Ok(Replicate {
        truth,
        train,
        eval,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_probability_examples() {
        assert!((arc_probability(10, 1.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((arc_probability(10, 4.0).unwrap() - 0.8).abs() < 1e-15);
        assert!(arc_probability(4, 4.0).is_err());
        assert!(arc_probability(1, 1.0).is_err());
    }

    #[test]
    fn two_nodes_always_connected() {
        for seed in 0..20 {
            let d = random_connected_dag(2, 1.0, seed).unwrap();
            assert_eq!(d.arc_count(), 1);
        }
    }

    #[test]
    fn residual_rule() {
        assert!((residual_variance(1.7, true) - 0.3).abs() < 1e-12);
        assert_eq!(residual_variance(0.0, false), 1.0);
    }

    #[test]
    fn group_size_examples() {
        assert_eq!(group_sizes(Scenario::Balanced, 4, 10).unwrap(), vec![10; 4]);
        assert_eq!(group_sizes(Scenario::Unbalanced, 5, 20).unwrap(), vec![30, 30, 14, 13, 13]);
        assert_eq!(
            group_sizes(Scenario::Unbalanced, 10, 10).unwrap(),
            vec![30, 30, 5, 5, 5, 5, 5, 5, 5, 5]
        );
        assert!(group_sizes(Scenario::Unbalanced, 2, 10).is_err());
    }

    #[test]
    fn names_are_padded() {
        assert_eq!(node_names(10)[0], "X01");
        assert_eq!(node_names(10)[9], "X10");
        assert_eq!(node_names(3), vec!["X01", "X02", "X03"]);
    }

    #[test]
    fn config_lists_every_problem() {
        let cfg = ExperimentConfig {
            n_groups: vec![2],
            scenarios: vec![Scenario::Unbalanced],
            replicates: 0,
            n_j: vec![],
            ..Default::default()
        };
        let p = cfg.problems();
        assert_eq!(p.len(), 3, "{p:?}");
    }

    #[test]
    fn homogeneous_single_group_unchanged() {
        let dag = random_connected_dag(4, 1.0, 3).unwrap();
        let bn = sample_true_bn(&dag, 1, 5).unwrap();
        assert_eq!(make_homogeneous(&bn), bn);
    }

    #[test]
    fn all_rows_in_last_group() {
        let dag = random_connected_dag(3, 1.0, 3).unwrap();
        let bn = sample_true_bn(&dag, 3, 5).unwrap();
        let d = generate_dataset(&bn, &[0, 0, 7], 1).unwrap();
        assert_eq!(d.n_rows(), 7);
        assert!(d.groups().iter().all(|&g| g == 2));
        assert_eq!(d, generate_dataset(&bn, &[0, 0, 7], 1).unwrap());
    }
}
