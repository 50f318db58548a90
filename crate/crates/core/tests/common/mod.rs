//! Independent oracles and generators shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use attn_tree::matrixprep::TokenMatrix;
use attn_tree::treebank::{Sentence, Token, Treebank};
use ndarray::Array2;
use rand::Rng;

pub fn random_symmetric<R: Rng>(n: usize, rng: &mut R) -> TokenMatrix {
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.random_range(0.0..1.0);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    TokenMatrix::new(m).unwrap()
}

pub fn random_matrix<R: Rng>(n: usize, rng: &mut R) -> TokenMatrix {
    let v: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
    TokenMatrix::new(Array2::from_shape_vec((n, n), v).unwrap()).unwrap()
}

/// Decode a Prüfer sequence into the edges of a labeled tree.
fn prufer_tree(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
        edges.push((leaf.min(s), leaf.max(s)));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Every labeled spanning tree of K_n (n^(n-2) of them) with its weight.
pub fn all_spanning_trees(m: &TokenMatrix) -> Vec<(BTreeSet<(usize, usize)>, f64)> {
    let n = m.n();
    match n {
        0 => return vec![],
        1 => return vec![(BTreeSet::new(), 0.0)],
        2 => return vec![([(0, 1)].into(), m.scores[[0, 1]])],
        _ => {}
    }
    let mut out = Vec::new();
    let mut seq = vec![0usize; n - 2];
    loop {
        let edges = prufer_tree(&seq, n);
        let score = edges.iter().map(|&(a, b)| m.scores[[a, b]]).sum();
        out.push((edges.into_iter().collect(), score));

        // Next sequence in base-n counting order.
        let mut i = 0;
        loop {
            if i == seq.len() {
                return out;
            }
            seq[i] += 1;
            if seq[i] < n {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}

/// Best spanning tree by enumeration, plus the gap to the runner-up.
pub fn brute_force_mst(m: &TokenMatrix) -> (BTreeSet<(usize, usize)>, f64, f64) {
    let mut trees = all_spanning_trees(m);
    trees.sort_by(|a, b| b.1.total_cmp(&a.1));
    let gap = if trees.len() > 1 {
        trees[0].1 - trees[1].1
    } else {
        f64::INFINITY
    };
    let (edges, score) = trees.swap_remove(0);
    (edges, score, gap)
}

/// Best arborescence rooted at `root` by enumerating every parent array.
pub fn brute_force_arborescence(m: &TokenMatrix, root: usize) -> f64 {
    let n = m.n();
    let others: Vec<usize> = (0..n).filter(|&v| v != root).collect();
    let mut parents = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;

    fn reaches_root(parents: &[usize], root: usize, v: usize) -> bool {
        let mut cur = v;
        for _ in 0..parents.len() {
            if cur == root {
                return true;
            }
            cur = parents[cur];
        }
        cur == root
    }

    let total = n.pow(others.len() as u32);
    for code in 0..total {
        let mut c = code;
        let mut valid = true;
        for &v in &others {
            parents[v] = c % n;
            c /= n;
            if parents[v] == v {
                valid = false;
            }
        }
        if !valid || !others.iter().all(|&v| reaches_root(&parents, root, v)) {
            continue;
        }
        let score: f64 = others.iter().map(|&v| m.scores[[parents[v], v]]).sum();
        best = best.max(score);
    }
    best
}

const LABELS: [&str; 8] = ["det", "nsubj", "obj", "amod", "advmod", "case", "punct", "obl:tmod"];

/// A random valid sentence of `n` tokens.
pub fn random_sentence<R: Rng>(sent_id: &str, n: usize, rng: &mut R) -> Sentence {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![0usize; n];
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        heads[order[k]] = parent + 1;
    }
    Sentence {
        sent_id: sent_id.to_owned(),
        text: String::new(),
        tokens: (0..n)
            .map(|i| Token {
                index: i + 1,
                form: format!("w{}", i + 1),
                upos: "X".into(),
                head: heads[i],
                deprel: if heads[i] == 0 {
                    "root".into()
                } else {
                    LABELS[rng.random_range(0..LABELS.len())].into()
                },
            })
            .collect(),
    }
}

pub fn random_treebank<R: Rng>(language: &str, sentences: usize, max_len: usize, rng: &mut R) -> Treebank {
    let sentences = (0..sentences)
        .map(|i| {
            let n = rng.random_range(1..=max_len);
            random_sentence(&format!("{}-{}", language, i + 1), n, rng)
        })
        .collect();
    Treebank::new(language, sentences).unwrap()
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}
