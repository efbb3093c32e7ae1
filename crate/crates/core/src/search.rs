//! Greedy hill climbing over DAGs with the BIC score.

use rand::seq::IndexedRandom;

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::graph::{apply_move, check_move, ArcConstraints, Dag, Move};
use crate::lme::LmeConfig;
use crate::model::{strategy_dag, Strategy};
use crate::rng::rng_from_seed;
use crate::score::{bic_total, ScoreCache};

/// Smallest score gain accepted as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-8;

/// How equal-delta moves are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// add < delete < reverse, then lexicographic arc.
    #[default]
    MoveTypeThenArc,
    /// Lexicographic arc, then add < delete < reverse.
    ArcThenMoveType,
}

impl TieBreak {
    fn key(self, mv: Move) -> (u8, (usize, usize), u8) {
        match self {
            TieBreak::MoveTypeThenArc => (mv.kind_rank(), mv.arc(), 0),
            TieBreak::ArcThenMoveType => (0, mv.arc(), mv.kind_rank()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub max_iterations: usize,
    pub tie_break: TieBreak,
    pub restarts: usize,
    /// Random moves applied before each restart.
    pub perturbation: usize,
    pub seed: u64,
    pub max_parents: Option<usize>,
    pub lme: LmeConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tie_break: TieBreak::default(),
            restarts: 0,
            perturbation: 5,
            seed: 0,
            max_parents: None,
            lme: LmeConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config(vec!["max_iterations must be at least 1".into()]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub dag: Dag,
    pub score: f64,
    /// Score after each accepted move of the climb that produced `dag`,
    /// starting with the initial graph.
    pub trace: Vec<f64>,
    pub moves: Vec<Move>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

/// Constraints a strategy imposes on graphs in model layout.
pub fn strategy_constraints(dag: &Dag) -> ArcConstraints {
    ArcConstraints::group_parent_of_all(dag)
}

/// Every legal single-arc move among the continuous variables.
pub fn legal_moves(dag: &Dag, constraints: &ArcConstraints, n_vars: usize, max_parents: Option<usize>) -> Vec<Move> {
    let cap = max_parents.unwrap_or(usize::MAX);
    let mut moves = Vec::new();
    for u in 0..n_vars {
        for v in 0..n_vars {
            if u == v {
                continue;
            }
            let candidates = if dag.has_arc(u, v) {
                vec![Move::Delete(u, v), Move::Reverse(u, v)]
            } else {
                vec![Move::Add(u, v)]
            };
            for mv in candidates {
                let grows = match mv {
                    Move::Add(_, v) => Some(v),
                    Move::Reverse(u, _) => Some(u),
                    Move::Delete(..) => None,
                };
                if let Some(child) = grows {
                    if dag.continuous_parents(child).len() >= cap {
                        continue;
                    }
                }
                if check_move(dag, mv, constraints).is_ok() {
                    moves.push(mv);
                }
            }
        }
    }
    moves
}

fn with(parents: &[usize], extra: usize) -> Vec<usize> {
    let mut p = parents.to_vec();
    p.push(extra);
    p.sort_unstable();
    p
}

fn without(parents: &[usize], gone: usize) -> Vec<usize> {
    parents.iter().copied().filter(|&p| p != gone).collect()
}

/// Score change of a move, rescoring only the affected nodes.
pub fn move_delta(
    data: &GroupedDataset,
    dag: &Dag,
    mv: Move,
    strategy: Strategy,
    lme: &LmeConfig,
    cache: &mut ScoreCache,
) -> Result<f64> {
    let mut node = |v: usize, parents: &[usize]| cache.score(data, v, parents, strategy, lme).map(|s| s.total);
    Ok(match mv {
        Move::Add(u, v) => {
            let pa = dag.continuous_parents(v);
            node(v, &with(&pa, u))? - node(v, &pa)?
        }
        Move::Delete(u, v) => {
            let pa = dag.continuous_parents(v);
            node(v, &without(&pa, u))? - node(v, &pa)?
        }
        Move::Reverse(u, v) => {
            let pv = dag.continuous_parents(v);
            let pu = dag.continuous_parents(u);
            node(v, &without(&pv, u))? - node(v, &pv)? + node(u, &with(&pu, v))? - node(u, &pu)?
        }
    })
}

/// Score change of a move by rescoring both whole graphs without a cache.
pub fn move_delta_full(
    data: &GroupedDataset,
    dag: &Dag,
    mv: Move,
    strategy: Strategy,
    lme: &LmeConfig,
) -> Result<f64> {
    let constraints = strategy_constraints(dag);
    let after = apply_move(dag, mv, &constraints).map_err(|e| Error::Graph(e.to_string()))?;
    Ok(bic_total(data, &after, strategy, lme, None)? - bic_total(data, dag, strategy, lme, None)?)
}

struct Climb {
    dag: Dag,
    score: f64,
    trace: Vec<f64>,
    moves: Vec<Move>,
}

fn climb(
    data: &GroupedDataset,
    strategy: Strategy,
    start: Dag,
    config: &SearchConfig,
    cache: &mut ScoreCache,
) -> Result<Climb> {
    let constraints = strategy_constraints(&start);
    let n = data.n_vars();
    let mut dag = start;
    let mut score = bic_total(data, &dag, strategy, &config.lme, Some(cache))?;
    let mut trace = vec![score];
    let mut moves = Vec::new();
    for _ in 0..config.max_iterations {
        let mut best: Option<(f64, Move)> = None;
        for mv in legal_moves(&dag, &constraints, n, config.max_parents) {
            let delta = move_delta(data, &dag, mv, strategy, &config.lme, cache)?;
            let better = match best {
                None => true,
                Some((bd, bm)) => {
                    delta > bd || (delta == bd && config.tie_break.key(mv) < config.tie_break.key(bm))
                }
            };
            if better {
                best = Some((delta, mv));
            }
        }
        match best {
            Some((delta, mv)) if delta > MIN_IMPROVEMENT => {
                dag = apply_move(&dag, mv, &constraints).expect("legal move");
                score = bic_total(data, &dag, strategy, &config.lme, Some(cache))?;
                trace.push(score);
                moves.push(mv);
            }
            _ => break,
        }
    }
    Ok(Climb { dag, score, trace, moves })
}

/// Hill climbing from the constrained empty graph: no arcs among variables,
/// plus the fixed group arcs for the group-aware strategies.
pub fn hill_climb(data: &GroupedDataset, strategy: Strategy, config: &SearchConfig) -> Result<SearchResult> {
    config.validate()?;
    if strategy.uses_group() && data.n_groups() < 2 {
        return Err(Error::Data(format!("{strategy} needs at least two groups")));
    }
    let start = strategy_dag(data, strategy, &[])?;
    hill_climb_from(data, strategy, start, config)
}

pub fn hill_climb_from(
    data: &GroupedDataset,
    strategy: Strategy,
    start: Dag,
    config: &SearchConfig,
) -> Result<SearchResult> {
    config.validate()?;
    let mut cache = ScoreCache::new();
    let mut best = climb(data, strategy, start, config, &mut cache)?;

    if config.restarts > 0 {
        let mut rng = rng_from_seed(config.seed);
        let constraints = strategy_constraints(&best.dag);
        for _ in 0..config.restarts {
            let mut dag = best.dag.clone();
            for _ in 0..config.perturbation {
                let moves = legal_moves(&dag, &constraints, data.n_vars(), config.max_parents);
                if let Some(&mv) = moves.choose(&mut rng) {
                    dag = apply_move(&dag, mv, &constraints).expect("legal move");
                }
            }
            let run = climb(data, strategy, dag, config, &mut cache)?;
            if run.score > best.score + MIN_IMPROVEMENT {
                best = run;
            }
        }
    }

    Ok(SearchResult {
        dag: best.dag,
        score: best.score,
        trace: best.trace,
        moves: best.moves,
        cache_hits: cache.hits(),
        cache_misses: cache.misses(),
    })
}
