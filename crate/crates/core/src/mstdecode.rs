//! Maximum spanning tree decoding over token score matrices.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matrixprep::TokenMatrix;

/// An undirected tree over token positions `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedTree {
    pub n: usize,
    /// Unordered pairs stored as `(lo, hi)`, `lo < hi`.
    pub edges: BTreeSet<(usize, usize)>,
    pub total_score: f64,
}

impl DecodedTree {
    /// The chain linking each pair of adjacent positions.
    pub fn chain(n: usize) -> Self {
        DecodedTree {
            n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
            total_score: 0.0,
        }
    }

    /// Build from undirected pairs, normalizing their order.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        DecodedTree {
            n,
            edges: pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect(),
            total_score: 0.0,
        }
    }

    /// `n - 1` edges, no self-loops, connected.
    pub fn is_tree(&self) -> bool {
        if self.n == 0 || self.edges.len() != self.n - 1 {
            return false;
        }
        let mut sets = DisjointSet::new(self.n);
        self.edges
            .iter()
            .all(|&(a, b)| a != b && b < self.n && sets.union(a, b))
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when both elements were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn check_matrix(m: &TokenMatrix) -> Result<()> {
    if m.n() == 0 {
        return Err(Error::EmptyMatrix);
    }
    for ((i, j), &v) in m.scores.indexed_iter() {
        if i != j && !v.is_finite() {
            return Err(Error::NonFinite(i, j));
        }
    }
    Ok(())
}

/// Maximum-weight undirected spanning tree (Kruskal).
///
/// The weight of `{i, j}` is read from the upper triangle, `m[min][max]`.
/// Ties go to the shorter edge `hi - lo`, then to the smaller `lo`, so a
/// matrix of equal weights decodes to the chain.
pub fn undirected_mst(m: &TokenMatrix) -> Result<DecodedTree> {
    check_matrix(m)?;
    let n = m.n();

    let mut candidates: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (n - 1) / 2);
    for lo in 0..n {
        for hi in lo + 1..n {
            candidates.push((lo, hi, m.scores[[lo, hi]]));
        }
    }
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then((a.1 - a.0).cmp(&(b.1 - b.0)))
            .then(a.0.cmp(&b.0))
    });

    let mut sets = DisjointSet::new(n);
    let mut tree = DecodedTree {
        n,
        edges: BTreeSet::new(),
        total_score: 0.0,
    };
    for (lo, hi, w) in candidates {
        if sets.union(lo, hi) {
            tree.edges.insert((lo, hi));
            tree.total_score += w;
            if tree.edges.len() == n - 1 {
                break;
            }
        }
    }

    debug_assert!(tree.is_tree());
    Ok(tree)
}

/// Maximum spanning arborescence rooted at `root`, as a parent array.
///
/// `m[i][j]` is the weight of the arc from head `i` to dependent `j`.
/// `parents[root]` is `None`.
pub fn cle_parents(m: &TokenMatrix, root: usize) -> Result<Vec<Option<usize>>> {
    check_matrix(m)?;
    let n = m.n();
    if root >= n {
        return Err(Error::IndexOutOfRange { index: root, len: n });
    }

    let weights: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j || j == root {
                        f64::NEG_INFINITY
                    } else {
                        m.scores[[i, j]]
                    }
                })
                .collect()
        })
        .collect();

    let parents = arborescence(&weights, root);
    Ok(parents
        .into_iter()
        .enumerate()
        .map(|(v, p)| if v == root { None } else { Some(p) })
        .collect())
}

/// Recursive Chu-Liu-Edmonds on a dense weight matrix. Absent arcs are
/// negative infinity. Returns a parent for every vertex, `root` maps to
/// itself.
fn arborescence(w: &[Vec<f64>], root: usize) -> Vec<usize> {
    let n = w.len();

    // Best incoming arc per vertex, lowest head on ties.
    let mut best_in = vec![root; n];
    for v in (0..n).filter(|&v| v != root) {
        let mut best = 0;
        let mut best_w = f64::NEG_INFINITY;
        for (u, row) in w.iter().enumerate() {
            if u != v && row[v] > best_w {
                best = u;
                best_w = row[v];
            }
        }
        best_in[v] = best;
    }

    let cycle = match find_cycle(&best_in, root) {
        Some(cycle) => cycle,
        None => return best_in,
    };

    let mut in_cycle = vec![false; n];
    for &v in &cycle {
        in_cycle[v] = true;
    }

    // Contract the cycle into a single vertex `c`, placed last.
    let outside: Vec<usize> = (0..n).filter(|&v| !in_cycle[v]).collect();
    let c = outside.len();
    let mut to_contracted = vec![c; n];
    for (new, &old) in outside.iter().enumerate() {
        to_contracted[old] = new;
    }

    let mut contracted = vec![vec![f64::NEG_INFINITY; c + 1]; c + 1];
    // Which cycle vertex an arc into `c` enters, and which cycle vertex an
    // arc out of `c` leaves from.
    let mut enters = vec![usize::MAX; c + 1];
    let mut leaves = vec![usize::MAX; c + 1];

    for (nu, &u) in outside.iter().enumerate() {
        for (nv, &v) in outside.iter().enumerate() {
            contracted[nu][nv] = w[u][v];
        }
        for &v in &cycle {
            let score = w[u][v] - w[best_in[v]][v];
            if score > contracted[nu][c] {
                contracted[nu][c] = score;
                enters[nu] = v;
            }
        }
    }
    for (nv, &v) in outside.iter().enumerate() {
        for &u in &cycle {
            if w[u][v] > contracted[c][nv] {
                contracted[c][nv] = w[u][v];
                leaves[nv] = u;
            }
        }
    }

    let sub = arborescence(&contracted, to_contracted[root]);

    let mut parents = best_in;
    for (nv, &v) in outside.iter().enumerate() {
        if v == root {
            continue;
        }
        parents[v] = if sub[nv] == c {
            leaves[nv]
        } else {
            outside[sub[nv]]
        };
    }
    let entering_head = sub[c];
    parents[enters[entering_head]] = outside[entering_head];
    parents
}

/// A cycle in the parent graph, if any, as a list of vertices.
fn find_cycle(parents: &[usize], root: usize) -> Option<Vec<usize>> {
    let n = parents.len();
    // 0 = unvisited, otherwise 1 + the walk start that reached it.
    let mut mark = vec![0usize; n];
    for start in 0..n {
        let mut v = start;
        while v != root && mark[v] == 0 {
            mark[v] = start + 1;
            v = parents[v];
        }
        if v != root && mark[v] == start + 1 {
            let mut cycle = vec![v];
            let mut u = parents[v];
            while u != v {
                cycle.push(u);
                u = parents[u];
            }
            return Some(cycle);
        }
    }
    None
}

fn arborescence_score(m: &TokenMatrix, parents: &[Option<usize>]) -> f64 {
    parents
        .iter()
        .enumerate()
        .filter_map(|(v, p)| p.map(|p| m.scores[[p, v]]))
        .sum()
}

/// Chu-Liu-Edmonds decoding with the arc directions erased.
pub fn cle_decode(m: &TokenMatrix, root: usize) -> Result<DecodedTree> {
    let parents = cle_parents(m, root)?;
    let tree = DecodedTree {
        n: m.n(),
        total_score: arborescence_score(m, &parents),
        edges: parents
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| (p.min(v), p.max(v))))
            .collect(),
    };
    debug_assert!(tree.is_tree());
    Ok(tree)
}

/// Root whose maximum arborescence scores highest; lowest index on ties.
///
/// Scores within a relative `1e-9` count as tied, so float summation order
/// does not pick between roots of a symmetric matrix.
pub fn best_root(m: &TokenMatrix) -> Result<usize> {
    check_matrix(m)?;
    let mut best = 0;
    let mut best_score = arborescence_score(m, &cle_parents(m, 0)?);
    for root in 1..m.n() {
        let score = arborescence_score(m, &cle_parents(m, root)?);
        if score > best_score + 1e-9 * best_score.abs().max(1.0) {
            best = root;
            best_score = score;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RootStrategy {
    #[default]
    Best,
    Fixed(usize),
}

impl std::str::FromStr for RootStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "best" {
            return Ok(RootStrategy::Best);
        }
        s.strip_prefix("fixed:")
            .and_then(|k| k.parse().ok())
            .map(RootStrategy::Fixed)
            .ok_or_else(|| {
                Error::Config(format!("invalid root strategy {:?} (expected best or fixed:K)", s))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecoderKind {
    /// Undirected maximum spanning tree.
    #[default]
    Mst,
    /// Chu-Liu-Edmonds arborescence with the given root choice.
    Cle(RootStrategy),
}

/// Decode with the configured algorithm.
pub fn decode(m: &TokenMatrix, decoder: DecoderKind) -> Result<DecodedTree> {
    match decoder {
        DecoderKind::Mst => undirected_mst(m),
        DecoderKind::Cle(RootStrategy::Fixed(root)) => cle_decode(m, root),
        DecoderKind::Cle(RootStrategy::Best) => cle_decode(m, best_root(m)?),
    }
}
