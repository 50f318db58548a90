//! Undirected attachment scores and the linear-order baselines.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mstdecode::DecodedTree;
use crate::treebank::{GoldEdge, Sentence, Treebank};

/// Which gold edges count towards scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score edges whose dependent carries the `punct` relation.
    pub include_punct: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            include_punct: true,
        }
    }
}

impl EvalOptions {
    pub fn counts(&self, edge: &GoldEdge) -> bool {
        self.include_punct || edge.deprel != "punct"
    }

    pub fn scored_edges(&self, sentence: &Sentence) -> Vec<GoldEdge> {
        sentence
            .gold_edges()
            .into_iter()
            .filter(|e| self.counts(e))
            .collect()
    }
}

/// Recovered and total gold edges, overall and per relation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub correct_edges: usize,
    pub total_edges: usize,
    /// Relation label → (correct, total).
    pub per_relation: BTreeMap<String, (usize, usize)>,
}

impl ScoreReport {
    /// Fraction of gold edges recovered; zero when there are none.
    pub fn uuas(&self) -> f64 {
        if self.total_edges == 0 {
            0.0
        } else {
            self.correct_edges as f64 / self.total_edges as f64
        }
    }

    pub fn relation_uuas(&self, label: &str) -> Option<f64> {
        self.per_relation
            .get(label)
            .filter(|(_, total)| *total > 0)
            .map(|&(c, t)| c as f64 / t as f64)
    }

    /// Add another report's counts into this one.
    pub fn merge(&mut self, other: &ScoreReport) {
        self.correct_edges += other.correct_edges;
        self.total_edges += other.total_edges;
        for (label, &(c, t)) in &other.per_relation {
            let entry = self.per_relation.entry(label.clone()).or_default();
            entry.0 += c;
            entry.1 += t;
        }
    }

    fn record(&mut self, label: &str, correct: bool) {
        let entry = self.per_relation.entry(label.to_owned()).or_default();
        entry.1 += 1;
        self.total_edges += 1;
        if correct {
            entry.0 += 1;
            self.correct_edges += 1;
        }
    }
}

/// Score a decoded tree (0-based positions) against a gold sentence.
pub fn uuas(pred: &DecodedTree, gold: &Sentence, opts: EvalOptions) -> Result<ScoreReport> {
    if pred.n != gold.len() {
        return Err(Error::LengthMismatch {
            sent_id: gold.sent_id.clone(),
            pred: pred.n,
            gold: gold.len(),
        });
    }

    let mut report = ScoreReport::default();
    for edge in opts.scored_edges(gold) {
        let recovered = pred.edges.contains(&(edge.lo - 1, edge.hi - 1));
        report.record(&edge.deprel, recovered);
    }
    Ok(report)
}

/// Micro-average: counts are summed, UUAS is recomputed from the sums.
pub fn aggregate(reports: &[ScoreReport]) -> Result<ScoreReport> {
    if reports.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let mut total = ScoreReport::default();
    for r in reports {
        total.merge(r);
    }
    Ok(total)
}

/// Corpus score of the chain tree over every sentence.
pub fn adjacent_baseline_report(treebank: &Treebank, opts: EvalOptions) -> Result<ScoreReport> {
    if treebank.is_empty() {
        return Err(Error::EmptyTreebank);
    }
    let reports = treebank
        .sentences
        .iter()
        .map(|s| uuas(&DecodedTree::chain(s.len()), s, opts))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&reports)
}

/// UUAS of linking every pair of adjacent words.
pub fn adjacent_baseline(treebank: &Treebank, opts: EvalOptions) -> Result<f64> {
    adjacent_baseline_report(treebank, opts).map(|r| r.uuas())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationOffset {
    /// Most frequent `dependent - head` offset.
    pub modal_offset: i64,
    /// Share of the relation's edges at the modal offset.
    pub accuracy: f64,
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionalBaseline {
    pub per_relation: BTreeMap<String, RelationOffset>,
}

impl PositionalBaseline {
    pub fn get(&self, label: &str) -> Option<&RelationOffset> {
        self.per_relation.get(label)
    }
}

/// Per relation, the accuracy of always predicting its most frequent offset.
///
/// Ties between offsets go to the smaller magnitude, then to the negative
/// (leftward) one.
pub fn positional_baseline(treebank: &Treebank, opts: EvalOptions) -> Result<PositionalBaseline> {
    if treebank.is_empty() {
        return Err(Error::EmptyTreebank);
    }

    let mut offsets: BTreeMap<String, BTreeMap<i64, usize>> = BTreeMap::new();
    for sentence in &treebank.sentences {
        for token in sentence.tokens.iter().filter(|t| !t.is_root()) {
            if !opts.include_punct && token.relation() == "punct" {
                continue;
            }
            let offset = token.index as i64 - token.head as i64;
            *offsets
                .entry(token.relation().to_owned())
                .or_default()
                .entry(offset)
                .or_default() += 1;
        }
    }

    let per_relation = offsets
        .into_iter()
        .map(|(label, counts)| {
            let support: usize = counts.values().sum();
            let (&modal_offset, &count) = counts
                .iter()
                .max_by(|(oa, ca), (ob, cb)| {
                    ca.cmp(cb)
                        .then(ob.abs().cmp(&oa.abs()))
                        .then(ob.cmp(oa))
                })
                .expect("relation has at least one edge");
            (
                label,
                RelationOffset {
                    modal_offset,
                    accuracy: count as f64 / support as f64,
                    support,
                },
            )
        })
        .collect();

    Ok(PositionalBaseline { per_relation })
}

/// Round a fraction to an integer percentage, half up.
pub fn percent(fraction: f64) -> i64 {
    (fraction * 100.0 + 0.5).floor() as i64
}

/// Tab-separated per-relation table for one report.
pub fn score_report_tsv(report: &ScoreReport) -> String {
    let mut out = String::from("relation\tcorrect\ttotal\tuuas\n");
    let _ = writeln!(
        out,
        "ALL\t{}\t{}\t{}",
        report.correct_edges,
        report.total_edges,
        report.uuas()
    );
    for (label, &(c, t)) in &report.per_relation {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", label, c, t, c as f64 / t as f64);
    }
    out
}

/// Tab-separated positional baseline table.
pub fn positional_tsv(baseline: &PositionalBaseline) -> String {
    let mut out = String::from("relation\tsupport\tmodal_offset\taccuracy\tpercent\n");
    for (label, r) in &baseline.per_relation {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            label,
            r.support,
            r.modal_offset,
            r.accuracy,
            percent(r.accuracy)
        );
    }
    out
}

/// Gold edge pairs of a sentence as 0-based `(lo, hi)`.
pub fn gold_pairs(sentence: &Sentence) -> HashSet<(usize, usize)> {
    sentence
        .gold_edges()
        .iter()
        .map(|e| (e.lo - 1, e.hi - 1))
        .collect()
}
