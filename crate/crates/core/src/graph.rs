//! Directed acyclic graphs over named nodes, CPDAGs, and the arc-constraint
//! machinery used by structure search.
//!
//! Nodes are addressed by index; names are stable string ids and every
//! ordering tie is broken by name.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

pub type Arc = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
    parents: Vec<BTreeSet<usize>>,
    group: Option<usize>,
}

impl Dag {
    /// An arc-free graph. `group` names the discrete group node, if any.
    pub fn empty<S: AsRef<str>>(names: &[S], group: Option<&str>) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let mut lookup = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if lookup.insert(name.clone(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node id {name:?}")));
            }
        }
        let group = match group {
            Some(g) => Some(
                *lookup
                    .get(g)
                    .ok_or_else(|| Error::Graph(format!("group node {g:?} is not a node")))?,
            ),
            None => None,
        };
        Ok(Self {
            parents: vec![BTreeSet::new(); names.len()],
            names,
            lookup,
            group,
        })
    }

    /// Builds a graph and checks every invariant, acyclicity included.
    pub fn from_arcs<S: AsRef<str>>(names: &[S], group: Option<&str>, arcs: &[Arc]) -> Result<Self> {
        let dag = Self::from_arcs_unchecked(names, group, arcs)?;
        if let Some(cycle_node) = dag.find_cycle_node() {
            return Err(Error::Cycle(dag.names[cycle_node].clone()));
        }
        Ok(dag)
    }

    /// Like [`Dag::from_arcs`] but skips the cycle check.
    pub fn from_arcs_unchecked<S: AsRef<str>>(
        names: &[S],
        group: Option<&str>,
        arcs: &[Arc],
    ) -> Result<Self> {
        let mut dag = Self::empty(names, group)?;
        for &(u, v) in arcs {
            if u >= dag.len() || v >= dag.len() {
                return Err(Error::Graph(format!("arc ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop on {}", dag.names[u])));
            }
            if Some(v) == dag.group {
                return Err(Error::Graph(format!(
                    "group node {} cannot have parents",
                    dag.names[v]
                )));
            }
            if !dag.parents[v].insert(u) {
                return Err(Error::Graph(format!(
                    "duplicate arc {} -> {}",
                    dag.names[u], dag.names[v]
                )));
            }
        }
        Ok(dag)
    }

    /// Builds from `(parent, child)` name pairs.
    pub fn from_named_arcs<S: AsRef<str>>(
        names: &[S],
        group: Option<&str>,
        arcs: &[(&str, &str)],
    ) -> Result<Self> {
        let probe = Self::empty(names, group)?;
        let idx = arcs
            .iter()
            .map(|(u, v)| Ok((probe.index_of(u)?, probe.index_of(v)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_arcs(names, group, &idx)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::Graph(format!("unknown node {name:?}")))
    }

    pub fn group(&self) -> Option<usize> {
        self.group
    }

    pub fn parents(&self, v: usize) -> &BTreeSet<usize> {
        &self.parents[v]
    }

    pub fn children(&self, u: usize) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.parents[v].contains(&u)).collect()
    }

    pub fn has_arc(&self, u: usize, v: usize) -> bool {
        self.parents[v].contains(&u)
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.has_arc(u, v) || self.has_arc(v, u)
    }

    /// All arcs as `(parent, child)`, sorted.
    pub fn arcs(&self) -> Vec<Arc> {
        let mut arcs: Vec<Arc> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(v, ps)| ps.iter().map(move |&u| (u, v)))
            .collect();
        arcs.sort_unstable();
        arcs
    }

    pub fn arc_count(&self) -> usize {
        self.parents.iter().map(BTreeSet::len).sum()
    }

    /// Whether a directed path `from ~> to` exists (a node reaches itself).
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        // walk backwards from `to` through parents
        let mut seen = vec![false; self.len()];
        let mut stack = vec![to];
        seen[to] = true;
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if p == from {
                    return true;
                }
                if !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
        false
    }

    fn find_cycle_node(&self) -> Option<usize> {
        match self.kahn() {
            Ok(_) => None,
            Err(rest) => rest.first().copied(),
        }
    }

    /// Kahn's algorithm with a name-ordered ready set. On a cycle, returns the
    /// nodes that could not be ordered.
    fn kahn(&self) -> std::result::Result<Vec<usize>, Vec<usize>> {
        let n = self.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(BTreeSet::len).collect();
        let mut children = vec![Vec::new(); n];
        for (v, ps) in self.parents.iter().enumerate() {
            for &u in ps {
                children[u].push(v);
            }
        }
        let mut ready: BTreeSet<(&str, usize)> = (0..n)
            .filter(|&v| indegree[v] == 0)
            .map(|v| (self.names[v].as_str(), v))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&first) = ready.iter().next() {
            ready.remove(&first);
            let u = first.1;
            order.push(u);
            for &v in &children[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.insert((self.names[v].as_str(), v));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            let mut rest: Vec<usize> = (0..n).filter(|&v| indegree[v] > 0).collect();
            rest.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
            Err(rest)
        }
    }

    pub fn is_acyclic(&self) -> bool {
        self.kahn().is_ok()
    }

    /// Parents before children; among ready nodes the smallest name goes first.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        self.kahn()
            .map_err(|rest| Error::Cycle(self.names[rest[0]].clone()))
    }

    /// The same graph with the group node removed (arcs touching it dropped).
    pub fn without_group(&self) -> Dag {
        let Some(g) = self.group else {
            return self.clone();
        };
        let keep: Vec<usize> = (0..self.len()).filter(|&v| v != g).collect();
        let remap = |v: usize| keep.iter().position(|&k| k == v);
        let names: Vec<&str> = keep.iter().map(|&v| self.names[v].as_str()).collect();
        let arcs: Vec<Arc> = self
            .arcs()
            .into_iter()
            .filter_map(|(u, v)| Some((remap(u)?, remap(v)?)))
            .collect();
        Dag::from_arcs_unchecked(&names, None, &arcs).expect("subgraph of a valid graph")
    }

    /// Appends an isolated group node (no-op when one exists).
    pub fn with_isolated_group(&self, group: &str) -> Result<Dag> {
        if self.group.is_some() {
            return Ok(self.clone());
        }
        let mut names = self.names.clone();
        names.push(group.to_string());
        Dag::from_arcs_unchecked(&names, Some(group), &self.arcs())
    }

    /// Appends a group node that is a parent of every other node.
    pub fn with_group_parent(&self, group: &str) -> Result<Dag> {
        if self.group.is_some() {
            return Err(Error::Graph("graph already has a group node".into()));
        }
        let g = self.len();
        let mut names = self.names.clone();
        names.push(group.to_string());
        let mut arcs = self.arcs();
        arcs.extend((0..g).map(|v| (g, v)));
        Dag::from_arcs_unchecked(&names, Some(group), &arcs)
    }

    /// Continuous (non-group) parents of `v`, in index order.
    pub fn continuous_parents(&self, v: usize) -> Vec<usize> {
        self.parents[v]
            .iter()
            .copied()
            .filter(|&p| Some(p) != self.group)
            .collect()
    }

    /// Undirected adjacency ignoring the group node: is the rest weakly connected?
    pub fn is_weakly_connected_without_group(&self) -> bool {
        let nodes: Vec<usize> = (0..self.len()).filter(|&v| Some(v) != self.group).collect();
        if nodes.len() <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.len()];
        for (u, v) in self.arcs() {
            if Some(u) == self.group || Some(v) == self.group {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![nodes[0]];
        seen[nodes[0]] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == nodes.len()
    }

    fn insert_arc(&mut self, u: usize, v: usize) {
        self.parents[v].insert(u);
    }

    fn remove_arc(&mut self, u: usize, v: usize) {
        self.parents[v].remove(&u);
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arcs: Vec<String> = self
            .arcs()
            .into_iter()
            .map(|(u, v)| format!("{}->{}", self.names[u], self.names[v]))
            .collect();
        write!(f, "[{}]", arcs.join(", "))
    }
}

/// Required and forbidden arcs for structure search.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArcConstraints {
    required: BTreeSet<Arc>,
    forbidden: BTreeSet<Arc>,
}

impl ArcConstraints {
    pub fn new(required: BTreeSet<Arc>, forbidden: BTreeSet<Arc>) -> Result<Self> {
        if let Some(a) = required.intersection(&forbidden).next() {
            return Err(Error::Graph(format!("arc {a:?} both required and forbidden")));
        }
        let n = required
            .iter()
            .map(|&(u, v)| u.max(v) + 1)
            .max()
            .unwrap_or(0);
        let names: Vec<String> = (0..n).map(|i| format!("{i:08}")).collect();
        let arcs: Vec<Arc> = required.iter().copied().collect();
        if !Dag::from_arcs_unchecked(&names, None, &arcs)?.is_acyclic() {
            return Err(Error::Graph("required arcs contain a cycle".into()));
        }
        Ok(Self { required, forbidden })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// The group node is a fixed parent of every other node and has no parents.
    pub fn group_parent_of_all(dag: &Dag) -> Self {
        let Some(g) = dag.group() else {
            return Self::none();
        };
        let others = (0..dag.len()).filter(|&v| v != g);
        Self {
            required: others.clone().map(|v| (g, v)).collect(),
            forbidden: others.map(|v| (v, g)).collect(),
        }
    }

    pub fn is_required(&self, arc: Arc) -> bool {
        self.required.contains(&arc)
    }

    pub fn is_forbidden(&self, arc: Arc) -> bool {
        self.forbidden.contains(&arc)
    }

    pub fn required(&self) -> &BTreeSet<Arc> {
        &self.required
    }

    pub fn forbidden(&self) -> &BTreeSet<Arc> {
        &self.forbidden
    }

    /// Whether `dag` contains every required arc and no forbidden one.
    pub fn satisfied_by(&self, dag: &Dag) -> bool {
        self.required.iter().all(|&(u, v)| dag.has_arc(u, v))
            && self.forbidden.iter().all(|&(u, v)| !dag.has_arc(u, v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

impl Move {
    pub fn arc(self) -> Arc {
        match self {
            Move::Add(u, v) | Move::Delete(u, v) | Move::Reverse(u, v) => (u, v),
        }
    }

    /// Rank used for tie-breaking: add < delete < reverse.
    pub fn kind_rank(self) -> u8 {
        match self {
            Move::Add(..) => 0,
            Move::Delete(..) => 1,
            Move::Reverse(..) => 2,
        }
    }

    pub fn inverse(self) -> Move {
        match self {
            Move::Add(u, v) => Move::Delete(u, v),
            Move::Delete(u, v) => Move::Add(u, v),
            Move::Reverse(u, v) => Move::Reverse(v, u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MoveRejection {
    #[error("move would create a directed cycle")]
    Cycle,
    #[error("move violates an arc constraint")]
    Constraint,
    #[error("arc already present")]
    DuplicateArc,
    #[error("arc not present")]
    MissingArc,
}

/// Checks a move without building the new graph.
pub fn check_move(dag: &Dag, mv: Move, constraints: &ArcConstraints) -> Result<(), MoveRejection> {
    let (u, v) = mv.arc();
    let n = dag.len();
    if u >= n || v >= n {
        return Err(MoveRejection::MissingArc);
    }
    match mv {
        Move::Add(u, v) => {
            if dag.has_arc(u, v) || dag.has_arc(v, u) {
                return Err(MoveRejection::DuplicateArc);
            }
            if constraints.is_forbidden((u, v)) || Some(v) == dag.group() {
                return Err(MoveRejection::Constraint);
            }
            if dag.reaches(v, u) {
                return Err(MoveRejection::Cycle);
            }
        }
        Move::Delete(u, v) => {
            if !dag.has_arc(u, v) {
                return Err(MoveRejection::MissingArc);
            }
            if constraints.is_required((u, v)) {
                return Err(MoveRejection::Constraint);
            }
        }
        Move::Reverse(u, v) => {
            if !dag.has_arc(u, v) {
                return Err(MoveRejection::MissingArc);
            }
            if constraints.is_required((u, v))
                || constraints.is_forbidden((v, u))
                || Some(u) == dag.group()
            {
                return Err(MoveRejection::Constraint);
            }
            // after dropping u->v, any other path u ~> v closes a cycle with v->u
            let mut probe = dag.clone();
            probe.remove_arc(u, v);
            if probe.reaches(u, v) {
                return Err(MoveRejection::Cycle);
            }
        }
    }
    Ok(())
}

pub fn apply_move(dag: &Dag, mv: Move, constraints: &ArcConstraints) -> Result<Dag, MoveRejection> {
    check_move(dag, mv, constraints)?;
    let mut out = dag.clone();
    match mv {
        Move::Add(u, v) => out.insert_arc(u, v),
        Move::Delete(u, v) => out.remove_arc(u, v),
        Move::Reverse(u, v) => {
            out.remove_arc(u, v);
            out.insert_arc(v, u);
        }
    }
    Ok(out)
}

/// Completed partially directed graph: compelled arcs plus reversible edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpdag {
    names: Vec<String>,
    directed: BTreeSet<Arc>,
    undirected: BTreeSet<Arc>,
}

/// Status of an unordered node pair in a CPDAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMark {
    None,
    Forward,
    Backward,
    Undirected,
}

impl Cpdag {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn directed(&self) -> &BTreeSet<Arc> {
        &self.directed
    }

    /// Undirected edges stored as `(min, max)`.
    pub fn undirected(&self) -> &BTreeSet<Arc> {
        &self.undirected
    }

    /// Mark of the pair `(a, b)` read from `a`'s side.
    pub fn mark(&self, a: usize, b: usize) -> EdgeMark {
        if self.directed.contains(&(a, b)) {
            EdgeMark::Forward
        } else if self.directed.contains(&(b, a)) {
            EdgeMark::Backward
        } else if self.undirected.contains(&(a.min(b), a.max(b))) {
            EdgeMark::Undirected
        } else {
            EdgeMark::None
        }
    }
}

/// Compelled-arc labelling: v-structures and group arcs are oriented, then
/// Meek's four orientation rules are applied to closure.
pub fn to_cpdag(dag: &Dag) -> Cpdag {
    let n = dag.len();
    let mut adj = vec![vec![false; n]; n];
    for (u, v) in dag.arcs() {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    // oriented[u][v]: u -> v fixed; undirected edges have neither direction set
    let mut oriented = vec![vec![false; n]; n];
    for v in 0..n {
        let ps: Vec<usize> = dag.parents(v).iter().copied().collect();
        for (i, &a) in ps.iter().enumerate() {
            for &b in &ps[i + 1..] {
                if !adj[a][b] {
                    oriented[a][v] = true;
                    oriented[b][v] = true;
                }
            }
        }
    }
    if let Some(g) = dag.group() {
        for v in dag.children(g) {
            oriented[g][v] = true;
        }
    }
    let undirected = |o: &Vec<Vec<bool>>, a: usize, b: usize| adj[a][b] && !o[a][b] && !o[b][a];

    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if a == b || !undirected(&oriented, a, b) {
                    continue;
                }
                let orient = meek_r1(&oriented, &adj, a, b)
                    || meek_r2(&oriented, a, b, n)
                    || meek_r3(&oriented, &adj, a, b, n)
                    || meek_r4(&oriented, &adj, a, b, n);
                if orient {
                    oriented[a][b] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut directed = BTreeSet::new();
    let mut und = BTreeSet::new();
    for (u, v) in dag.arcs() {
        if oriented[u][v] {
            directed.insert((u, v));
        } else {
            und.insert((u.min(v), u.max(v)));
        }
    }
    Cpdag {
        names: dag.names().to_vec(),
        directed,
        undirected: und,
    }
}

// c -> a - b, c and b nonadjacent  =>  a -> b
fn meek_r1(o: &[Vec<bool>], adj: &[Vec<bool>], a: usize, b: usize) -> bool {
    (0..o.len()).any(|c| c != b && o[c][a] && !adj[c][b])
}

// a -> c -> b, a - b  =>  a -> b
fn meek_r2(o: &[Vec<bool>], a: usize, b: usize, n: usize) -> bool {
    (0..n).any(|c| o[a][c] && o[c][b])
}

// a - c -> b, a - d -> b, c and d nonadjacent  =>  a -> b
fn meek_r3(o: &[Vec<bool>], adj: &[Vec<bool>], a: usize, b: usize, n: usize) -> bool {
    let und = |x: usize, y: usize| adj[x][y] && !o[x][y] && !o[y][x];
    let mids: Vec<usize> = (0..n)
        .filter(|&c| c != a && c != b && und(a, c) && o[c][b])
        .collect();
    mids.iter()
        .enumerate()
        .any(|(i, &c)| mids[i + 1..].iter().any(|&d| !adj[c][d]))
}

// a - c -> d -> b, a adjacent d, c and b nonadjacent  =>  a -> b
fn meek_r4(o: &[Vec<bool>], adj: &[Vec<bool>], a: usize, b: usize, n: usize) -> bool {
    let und = |x: usize, y: usize| adj[x][y] && !o[x][y] && !o[y][x];
    (0..n).any(|c| {
        c != b
            && und(a, c)
            && !adj[c][b]
            && (0..n).any(|d| d != a && o[c][d] && o[d][b] && adj[a][d])
    })
}
