//! Exhaustive enumeration of small DAGs and Markov equivalence by the
//! skeleton-plus-v-structures characterisation.

use std::collections::BTreeSet;

pub type Arcs = Vec<(usize, usize)>;

pub fn is_acyclic(n: usize, arcs: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0usize; n];
    for &(_, v) in arcs {
        indeg[v] += 1;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(u) = stack.pop() {
        seen += 1;
        for &(a, b) in arcs {
            if a == u {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    stack.push(b);
                }
            }
        }
    }
    seen == n
}

/// Every DAG on `n` labelled nodes (25 for n = 3, 543 for n = 4).
pub fn all_dags(n: usize) -> Vec<Arcs> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut arcs = Vec::new();
        for &(a, b) in &pairs {
            match c % 3 {
                1 => arcs.push((a, b)),
                2 => arcs.push((b, a)),
                _ => {}
            }
            c /= 3;
        }
        if is_acyclic(n, &arcs) {
            out.push(arcs);
        }
    }
    out
}

pub fn skeleton(arcs: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    arcs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
}

/// Unshielded colliders `a -> c <- b` as `(min(a, b), max(a, b), c)`.
pub fn v_structures(arcs: &[(usize, usize)]) -> BTreeSet<(usize, usize, usize)> {
    let skel = skeleton(arcs);
    let mut out = BTreeSet::new();
    for &(a, c) in arcs {
        for &(b, c2) in arcs {
            if c == c2 && a < b && !skel.contains(&(a, b)) {
                out.insert((a, b, c));
            }
        }
    }
    out
}

pub fn markov_equivalent(a: &[(usize, usize)], b: &[(usize, usize)]) -> bool {
    skeleton(a) == skeleton(b) && v_structures(a) == v_structures(b)
}

/// Arcs oriented the same way in every member of the equivalence class of
/// `arcs`, found by brute force over `all` (the DAGs on the same nodes).
pub fn compelled(arcs: &[(usize, usize)], all: &[Arcs]) -> BTreeSet<(usize, usize)> {
    let class: Vec<&Arcs> = all.iter().filter(|d| markov_equivalent(arcs, d)).collect();
    arcs.iter()
        .copied()
        .filter(|arc| class.iter().all(|d| d.contains(arc)))
        .collect()
}

/// Edge mark of the pair `{a, b}` in a pattern: 0 none, 1 undirected,
/// 2 `a -> b`, 3 `b -> a`.
fn mark(skel: &BTreeSet<(usize, usize)>, directed: &BTreeSet<(usize, usize)>, a: usize, b: usize) -> u8 {
    if directed.contains(&(a, b)) {
        2
    } else if directed.contains(&(b, a)) {
        3
    } else if skel.contains(&(a.min(b), a.max(b))) {
        1
    } else {
        0
    }
}

/// Structural Hamming distance between the equivalence classes of two DAGs,
/// with classes obtained by enumeration.
pub fn class_shd(n: usize, g1: &[(usize, usize)], g2: &[(usize, usize)], all: &[Arcs]) -> usize {
    let (s1, s2) = (skeleton(g1), skeleton(g2));
    let (d1, d2) = (compelled(g1, all), compelled(g2, all));
    let mut count = 0;
    for a in 0..n {
        for b in a + 1..n {
            if mark(&s1, &d1, a, b) != mark(&s2, &d2, a, b) {
                count += 1;
            }
        }
    }
    count
}
