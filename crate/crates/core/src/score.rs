//! Decomposable BIC scores with a per-node cache.
//!
//! For the group-aware strategies the group node is an implicit parent of
//! every variable. Its own multinomial term is constant for a fixed set of
//! group arcs and is left out of the search objective.

use std::collections::HashMap;

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::lme::LmeConfig;
use crate::model::{fit_local, nparams, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeScore {
    pub node: usize,
    pub parents: Vec<usize>,
    pub loglik: f64,
    pub penalty: f64,
    pub total: f64,
}

/// BIC of one local distribution; `parents` are continuous parents.
pub fn bic_node(
    data: &GroupedDataset,
    node: usize,
    parents: &[usize],
    strategy: Strategy,
    lme: &LmeConfig,
) -> Result<NodeScore> {
    let mut parents = parents.to_vec();
    parents.sort_unstable();
    parents.dedup();
    if parents.contains(&node) || parents.iter().any(|&p| p >= data.n_vars()) {
        return Err(Error::Graph(format!("invalid parent set for {}", data.names()[node])));
    }
    let (_, loglik) = fit_local(data, node, &parents, strategy, lme).map_err(|e| {
        let names: Vec<String> = parents.iter().map(|&p| data.names()[p].clone()).collect();
        Error::scoring(&data.names()[node], &names, e)
    })?;
    let n = data.n_rows() as f64;
    let penalty = 0.5 * n.ln() * nparams(strategy, parents.len(), data.n_groups()) as f64;
    Ok(NodeScore {
        node,
        parents,
        loglik,
        penalty,
        total: loglik - penalty,
    })
}

type CacheKey = (usize, Vec<usize>, Strategy);

/// Node scores keyed by `(node, sorted parents, strategy)`.
///
/// Reads take `&self`, so a filled cache can be shared between threads.
#[derive(Debug, Default, Clone)]
pub struct ScoreCache {
    map: HashMap<CacheKey, NodeScore>,
    hits: usize,
    misses: usize,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, node: usize, parents: &[usize], strategy: Strategy) -> Option<&NodeScore> {
        let mut key = parents.to_vec();
        key.sort_unstable();
        self.map.get(&(node, key, strategy))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    /// Cached score, computing and storing it on a miss.
    pub fn score(
        &mut self,
        data: &GroupedDataset,
        node: usize,
        parents: &[usize],
        strategy: Strategy,
        lme: &LmeConfig,
    ) -> Result<NodeScore> {
        let mut key = parents.to_vec();
        key.sort_unstable();
        let key = (node, key, strategy);
        if let Some(s) = self.map.get(&key) {
            self.hits += 1;
            return Ok(s.clone());
        }
        self.misses += 1;
        let s = bic_node(data, node, &key.1, strategy, lme)?;
        self.map.insert(key, s.clone());
        Ok(s)
    }
}

/// Sum of node scores over the continuous variables of `dag`.
///
/// `dag` uses the model layout: variables first, group node (if any) last.
pub fn bic_total(
    data: &GroupedDataset,
    dag: &Dag,
    strategy: Strategy,
    lme: &LmeConfig,
    cache: Option<&mut ScoreCache>,
) -> Result<f64> {
    let n = data.n_vars();
    if dag.len() < n || dag.names()[..n] != *data.names() {
        return Err(Error::Data("graph variables do not match the data columns".into()));
    }
    let mut total = 0.0;
    match cache {
        Some(cache) => {
            for v in 0..n {
                total += cache.score(data, v, &dag.continuous_parents(v), strategy, lme)?.total;
            }
        }
        None => {
            for v in 0..n {
                total += bic_node(data, v, &dag.continuous_parents(v), strategy, lme)?.total;
            }
        }
    }
    Ok(total)
}
