//! JSON form of learned and generating models.

use std::collections::BTreeMap;
use std::path::Path;

use lmebn::model::{LinearGaussian, NodeLocal, GROUP_NODE};
use lmebn::nalgebra::{DMatrix, DVector};
use lmebn::{BnModel, Dag, LmeFit, LocalDistribution, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub strategy: String,
    /// Continuous variables in column order.
    pub nodes: Vec<String>,
    /// `[parent, child]` pairs, group arcs included.
    pub arcs: Vec<(String, String)>,
    pub group_labels: Vec<String>,
    pub group_prior: Vec<f64>,
    pub locals: BTreeMap<String, LocalFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionFile {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalFile {
    Pooled {
        parents: Vec<String>,
        intercept: f64,
        coefficients: Vec<f64>,
        variance: f64,
    },
    PerGroup {
        parents: Vec<String>,
        groups: Vec<RegressionFile>,
        degenerate: bool,
    },
    Mixed {
        parents: Vec<String>,
        beta: Vec<f64>,
        blups: Vec<Vec<f64>>,
        sigma2: f64,
        /// Lower-triangular rows of the random-effect covariance.
        re_cov: Vec<Vec<f64>>,
        loglik: f64,
        converged: bool,
        boundary: bool,
        evaluations: usize,
    },
}

impl From<&LinearGaussian> for RegressionFile {
    fn from(lg: &LinearGaussian) -> Self {
        Self {
            intercept: lg.intercept,
            coefficients: lg.coefficients.clone(),
            variance: lg.variance,
        }
    }
}

impl From<&RegressionFile> for LinearGaussian {
    fn from(r: &RegressionFile) -> Self {
        Self {
            intercept: r.intercept,
            coefficients: r.coefficients.clone(),
            variance: r.variance,
        }
    }
}

fn local_file(model: &BnModel, local: &NodeLocal) -> LocalFile {
    let parents = local.parents.iter().map(|&p| model.dag().name(p).to_string()).collect();
    match &local.distribution {
        LocalDistribution::Pooled(lg) => LocalFile::Pooled {
            parents,
            intercept: lg.intercept,
            coefficients: lg.coefficients.clone(),
            variance: lg.variance,
        },
        LocalDistribution::PerGroup { groups, degenerate } => LocalFile::PerGroup {
            parents,
            groups: groups.iter().map(RegressionFile::from).collect(),
            degenerate: *degenerate,
        },
        LocalDistribution::Mixed(fit) => LocalFile::Mixed {
            parents,
            beta: fit.beta.iter().copied().collect(),
            blups: fit.blups.iter().map(|b| b.iter().copied().collect()).collect(),
            sigma2: fit.sigma2,
            re_cov: (0..fit.re_cov.nrows())
                .map(|i| (0..=i).map(|j| fit.re_cov[(i, j)]).collect())
                .collect(),
            loglik: fit.loglik,
            converged: fit.converged,
            boundary: fit.boundary,
            evaluations: fit.evaluations,
        },
    }
}

pub fn to_file(model: &BnModel, score: Option<f64>, training_rows: Option<usize>) -> ModelFile {
    let locals = model
        .locals()
        .iter()
        .enumerate()
        .map(|(v, l)| (model.dag().name(v).to_string(), local_file(model, l)))
        .collect();
    ModelFile {
        version: MODEL_VERSION,
        strategy: model.strategy().to_string(),
        nodes: model.variables().to_vec(),
        arcs: model
            .dag()
            .arcs()
            .into_iter()
            .map(|(u, v)| (model.dag().name(u).to_string(), model.dag().name(v).to_string()))
            .collect(),
        group_labels: model.group_labels().to_vec(),
        group_prior: model.group_prior().to_vec(),
        locals,
        score,
        training_rows,
    }
}

fn data_err(msg: String) -> CliError {
    CliError::Data(format!("model file: {msg}"))
}

/// Reorders coefficients so they follow the parents' node order.
fn align(dag: &Dag, node: &str, parents: &[String], coefs: &[f64]) -> CliResult<(Vec<usize>, Vec<usize>)> {
    if parents.len() != coefs.len() {
        return Err(data_err(format!("{node}: {} parents but {} coefficients", parents.len(), coefs.len())));
    }
    let idx = parents
        .iter()
        .map(|p| dag.index_of(p).map_err(|_| data_err(format!("{node}: unknown parent {p:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    let mut perm: Vec<usize> = (0..idx.len()).collect();
    perm.sort_by_key(|&k| idx[k]);
    let sorted = perm.iter().map(|&k| idx[k]).collect();
    Ok((sorted, perm))
}

fn permute(v: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&k| v[k]).collect()
}

pub fn from_file(file: &ModelFile) -> CliResult<BnModel> {
    if file.version != MODEL_VERSION {
        return Err(data_err(format!("unsupported version {}", file.version)));
    }
    let strategy: Strategy = file.strategy.parse().map_err(|_| data_err(format!("unknown strategy {:?}", file.strategy)))?;
    let mut names = file.nodes.clone();
    let group = strategy.uses_group().then_some(GROUP_NODE);
    if let Some(g) = group {
        names.push(g.to_string());
    }
    let arcs: Vec<(&str, &str)> = file.arcs.iter().map(|(u, v)| (u.as_str(), v.as_str())).collect();
    let dag = Dag::from_named_arcs(&names, group, &arcs)?;
    let mut locals = Vec::with_capacity(file.nodes.len());
    for node in &file.nodes {
        let local = file
            .locals
            .get(node)
            .ok_or_else(|| data_err(format!("no local distribution for {node}")))?;
        let nl = match local {
            LocalFile::Pooled {
                parents,
                intercept,
                coefficients,
                variance,
            } => {
                let (parents, perm) = align(&dag, node, parents, coefficients)?;
                NodeLocal {
                    parents,
                    distribution: LocalDistribution::Pooled(LinearGaussian {
                        intercept: *intercept,
                        coefficients: permute(coefficients, &perm),
                        variance: *variance,
                    }),
                }
            }
            LocalFile::PerGroup {
                parents,
                groups,
                degenerate,
            } => {
                let first = groups.first().map(|g| g.coefficients.as_slice()).unwrap_or(&[]);
                let (sorted, perm) = align(&dag, node, parents, first)?;
                let groups = groups
                    .iter()
                    .map(|g| {
                        if g.coefficients.len() != perm.len() {
                            return Err(data_err(format!("{node}: group coefficient counts differ")));
                        }
                        Ok(LinearGaussian {
                            intercept: g.intercept,
                            coefficients: permute(&g.coefficients, &perm),
                            variance: g.variance,
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                NodeLocal {
                    parents: sorted,
                    distribution: LocalDistribution::PerGroup {
                        groups,
                        degenerate: *degenerate,
                    },
                }
            }
            LocalFile::Mixed {
                parents,
                beta,
                blups,
                sigma2,
                re_cov,
                loglik,
                converged,
                boundary,
                evaluations,
            } => {
                let q = parents.len() + 1;
                if beta.len() != q || blups.iter().any(|b| b.len() != q) || re_cov.len() != q {
                    return Err(data_err(format!("{node}: mixed-model dimensions disagree with parents")));
                }
                let (sorted, perm) = align(&dag, node, parents, &beta[1..])?;
                // intercept stays first
                let full: Vec<usize> = std::iter::once(0).chain(perm.iter().map(|k| k + 1)).collect();
                let mut cov = DMatrix::zeros(q, q);
                for (i, row) in re_cov.iter().enumerate() {
                    if row.len() != i + 1 {
                        return Err(data_err(format!("{node}: re_cov row {i} must have {} entries", i + 1)));
                    }
                    for (j, &v) in row.iter().enumerate() {
                        cov[(i, j)] = v;
                        cov[(j, i)] = v;
                    }
                }
                let cov = DMatrix::from_fn(q, q, |a, b| cov[(full[a], full[b])]);
                let fit = LmeFit {
                    beta: DVector::from_vec(permute(beta, &full)),
                    blups: blups.iter().map(|b| DVector::from_vec(permute(b, &full))).collect(),
                    sigma2: *sigma2,
                    re_cov: cov,
                    loglik: *loglik,
                    converged: *converged,
                    boundary: *boundary,
                    evaluations: *evaluations,
                };
                NodeLocal {
                    parents: sorted,
                    distribution: LocalDistribution::Mixed(fit),
                }
            }
        };
        locals.push(nl);
    }
    if let Some(extra) = file.locals.keys().find(|k| !file.nodes.contains(k)) {
        return Err(data_err(format!("local distribution for unknown node {extra:?}")));
    }
    Ok(BnModel::new(
        dag,
        strategy,
        file.group_labels.clone(),
        file.group_prior.clone(),
        locals,
    )?)
}

pub fn read_model(path: &Path) -> CliResult<(BnModel, ModelFile)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let model = from_file(&file).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((model, file))
}

pub fn write_model(path: &Path, file: &ModelFile) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(file).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
