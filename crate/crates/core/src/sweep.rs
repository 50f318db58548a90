//! Layer/head sweeps, best-head selection and model-variant comparison.
//!
//! Layers and heads are 0-based internally and 1-based in every report
//! (`10-8` is layer 10, head 8).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attnstore::{AttentionRecord, RecordSource};
use crate::error::{Error, Result};
use crate::matrixprep::{prepare, MergeMode};
use crate::metrics::{percent, uuas, EvalOptions, ScoreReport};
use crate::mstdecode::{decode, DecoderKind};
use crate::treebank::{Sentence, Treebank};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepOptions {
    pub merge: MergeMode,
    pub decoder: DecoderKind,
    pub eval: EvalOptions,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    /// Minimum number of gold edges for a relation to get a best head.
    pub min_support: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            merge: MergeMode::SumMean,
            decoder: DecoderKind::Mst,
            eval: EvalOptions::default(),
            workers: 0,
            min_support: 5,
        }
    }
}

/// Corpus-level score report for every (layer, head).
#[derive(Clone, Debug, PartialEq)]
pub struct CellScores {
    pub language: String,
    pub model_tag: String,
    pub n_layers: usize,
    pub n_heads: usize,
    /// `n_layers * n_heads` reports, layer-major.
    pub cells: Vec<ScoreReport>,
}

impl CellScores {
    pub fn get(&self, layer: usize, head: usize) -> &ScoreReport {
        &self.cells[layer * self.n_heads + head]
    }
}

/// A 1-based layer/head cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub layer: usize,
    pub head: usize,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.layer, self.head)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub language: String,
    pub model_tag: String,
    /// `grid[layer][head]`, corpus UUAS.
    pub grid: Vec<Vec<f64>>,
    pub best_cell: Cell,
    pub best_uuas: f64,
    pub mean_by_layer: Vec<f64>,
    pub max_by_layer: Vec<f64>,
}

impl SweepReport {
    /// Derive best cell and per-layer summaries from a grid.
    pub fn from_grid(language: &str, model_tag: &str, grid: Vec<Vec<f64>>) -> Result<Self> {
        let n_heads = grid.first().map(Vec::len).unwrap_or(0);
        if grid.is_empty() || n_heads == 0 || grid.iter().any(|row| row.len() != n_heads) {
            return Err(Error::Shape("sweep grid must be a non-empty rectangle".into()));
        }

        let mut best_cell = Cell { layer: 1, head: 1 };
        let mut best_uuas = f64::NEG_INFINITY;
        for (l, row) in grid.iter().enumerate() {
            for (h, &v) in row.iter().enumerate() {
                if v > best_uuas {
                    best_uuas = v;
                    best_cell = Cell {
                        layer: l + 1,
                        head: h + 1,
                    };
                }
            }
        }

        let mean_by_layer = grid
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect();
        let max_by_layer = grid
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();

        Ok(SweepReport {
            language: language.to_owned(),
            model_tag: model_tag.to_owned(),
            grid,
            best_cell,
            best_uuas,
            mean_by_layer,
            max_by_layer,
        })
    }

    pub fn from_cells(cells: &CellScores) -> Result<Self> {
        let grid = (0..cells.n_layers)
            .map(|l| (0..cells.n_heads).map(|h| cells.get(l, h).uuas()).collect())
            .collect();
        SweepReport::from_grid(&cells.language, &cells.model_tag, grid)
    }

    pub fn n_layers(&self) -> usize {
        self.grid.len()
    }

    pub fn n_heads(&self) -> usize {
        self.grid.first().map(Vec::len).unwrap_or(0)
    }

    /// Grid as TSV, one row per cell, with the head's accuracy rank within
    /// its layer (1 = best) as a sort key.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# language\t{}", self.language);
        let _ = writeln!(out, "# model_tag\t{}", self.model_tag);
        let _ = writeln!(out, "# best_cell\t{}", self.best_cell);
        let _ = writeln!(out, "# best_uuas\t{}", self.best_uuas);
        out.push_str("layer\thead\tuuas\trank_in_layer\n");
        for (l, row) in self.grid.iter().enumerate() {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut rank = vec![0; row.len()];
            for (r, &h) in order.iter().enumerate() {
                rank[h] = r + 1;
            }
            for (h, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", l + 1, h + 1, v, rank[h]);
            }
        }
        out
    }

    /// Parse the output of [`SweepReport::to_tsv`].
    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Report {
            path: path.to_owned(),
            msg,
        };

        let mut meta = HashMap::new();
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix("# ") {
                if let Some((k, v)) = comment.split_once('\t') {
                    meta.insert(k.to_owned(), v.to_owned());
                }
                continue;
            }
            if !saw_header {
                if !line.starts_with("layer\thead\tuuas") {
                    return Err(bad(format!("line {}: missing column header", lineno + 1)));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(bad(format!("line {}: expected at least 3 columns", lineno + 1)));
            }
            let parse_idx = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| bad(format!("line {}: invalid index {:?}", lineno + 1, s)))
            };
            let layer = parse_idx(fields[0])?;
            let head = parse_idx(fields[1])?;
            let value: f64 = fields[2]
                .parse()
                .map_err(|_| bad(format!("line {}: invalid uuas {:?}", lineno + 1, fields[2])))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(bad(format!("line {}: uuas {} outside [0, 1]", lineno + 1, value)));
            }
            if cells.insert((layer, head), value).is_some() {
                return Err(bad(format!("line {}: duplicate cell {}-{}", lineno + 1, layer, head)));
            }
        }

        let n_layers = cells.keys().map(|k| k.0).max().unwrap_or(0);
        let n_heads = cells.keys().map(|k| k.1).max().unwrap_or(0);
        if n_layers == 0 || cells.len() != n_layers * n_heads {
            return Err(bad("grid is empty or incomplete".into()));
        }
        let grid = (1..=n_layers)
            .map(|l| (1..=n_heads).map(|h| cells[&(l, h)]).collect())
            .collect();

        let language = meta.remove("language").ok_or_else(|| bad("missing language".into()))?;
        let model_tag = meta.remove("model_tag").ok_or_else(|| bad("missing model_tag".into()))?;
        SweepReport::from_grid(&language, &model_tag, grid)
    }

    /// One summary line: language, tag, best UUAS in percent, best cell.
    pub fn summary_tsv(&self) -> String {
        format!(
            "language\tmodel_tag\tbest_uuas\tbest_percent\tbest_cell\n{}\t{}\t{}\t{}\t{}\n",
            self.language,
            self.model_tag,
            self.best_uuas,
            percent(self.best_uuas),
            self.best_cell
        )
    }
}

/// Pair every treebank sentence with its archive record position.
fn align(source: &dyn RecordSource, treebank: &Treebank) -> Result<Vec<usize>> {
    let ids = source.sent_ids();
    let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let missing: Vec<String> = treebank
        .sentences
        .iter()
        .filter(|s| !position.contains_key(s.sent_id.as_str()))
        .map(|s| s.sent_id.clone())
        .collect();
    let extra: Vec<String> = ids
        .iter()
        .filter(|id| treebank.get(id).is_none())
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Misaligned { missing, extra });
    }

    Ok(treebank
        .sentences
        .iter()
        .map(|s| position[s.sent_id.as_str()])
        .collect())
}

/// Score every (layer, head) of one sentence.
fn score_sentence(
    record: &AttentionRecord,
    sentence: &Sentence,
    opts: &SweepOptions,
) -> Result<Vec<ScoreReport>> {
    if record.n_tokens() != sentence.len() {
        return Err(Error::Shape(format!(
            "record {} has {} token spans, sentence has {} tokens",
            record.sent_id,
            record.n_tokens(),
            sentence.len()
        )));
    }
    let mut out = Vec::with_capacity(record.n_layers * record.n_heads);
    for layer in 0..record.n_layers {
        for head in 0..record.n_heads {
            out.push(score_cell(record, sentence, layer, head, opts)?);
        }
    }
    Ok(out)
}

/// Prepare, decode and score a single cell of a single sentence.
pub fn score_cell(
    record: &AttentionRecord,
    sentence: &Sentence,
    layer: usize,
    head: usize,
    opts: &SweepOptions,
) -> Result<ScoreReport> {
    let matrix = prepare(record, layer, head, opts.merge)?;
    let tree = decode(&matrix, opts.decoder)?;
    uuas(&tree, sentence, opts.eval)
}

fn add_cells(mut acc: Vec<ScoreReport>, other: Vec<ScoreReport>) -> Vec<ScoreReport> {
    if acc.is_empty() {
        return other;
    }
    for (a, b) in acc.iter_mut().zip(&other) {
        a.merge(b);
    }
    acc
}

/// Score every cell over the whole treebank.
///
/// Sentences are scored in parallel; per-cell counts are integers, so the
/// reduction is exact and independent of worker scheduling.
pub fn evaluate_cells(
    source: &dyn RecordSource,
    treebank: &Treebank,
    opts: &SweepOptions,
) -> Result<CellScores> {
    if treebank.is_empty() {
        return Err(Error::EmptyTreebank);
    }
    let positions = align(source, treebank)?;

    let first = source.fetch(positions[0])?;
    let (n_layers, n_heads) = (first.n_layers, first.n_heads);
    drop(first);
    if n_layers == 0 || n_heads == 0 {
        return Err(Error::Shape("archive has no layers or heads".into()));
    }

    let work = || {
        treebank
            .sentences
            .par_iter()
            .zip(positions.par_iter())
            .map(|(sentence, &pos)| {
                let record = source.fetch(pos)?;
                if (record.n_layers, record.n_heads) != (n_layers, n_heads) {
                    return Err(Error::Shape(format!(
                        "record {} has {}×{} heads, expected {}×{}",
                        record.sent_id, record.n_layers, record.n_heads, n_layers, n_heads
                    )));
                }
                score_sentence(&record, sentence, opts)
            })
            .try_reduce(Vec::new, |a, b| Ok(add_cells(a, b)))
    };

    let cells = if opts.workers == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?
    };

    Ok(CellScores {
        language: treebank.language.clone(),
        model_tag: source.model_tag().to_owned(),
        n_layers,
        n_heads,
        cells,
    })
}

/// Corpus UUAS for every layer/head combination.
pub fn run_sweep(
    source: &dyn RecordSource,
    treebank: &Treebank,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    SweepReport::from_cells(&evaluate_cells(source, treebank, opts)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationBest {
    pub cell: Cell,
    pub uuas: f64,
    pub support: usize,
}

/// Best cell per relation from precomputed cell scores.
///
/// Relations with fewer than `min_support` gold edges are skipped. Ties go
/// to the lower layer, then the lower head.
pub fn relation_heads_from_cells(cells: &CellScores, min_support: usize) -> BTreeMap<String, RelationBest> {
    let mut best: BTreeMap<String, RelationBest> = BTreeMap::new();
    for layer in 0..cells.n_layers {
        for head in 0..cells.n_heads {
            for (label, &(correct, total)) in &cells.get(layer, head).per_relation {
                if total == 0 || total < min_support {
                    continue;
                }
                let score = correct as f64 / total as f64;
                let better = best.get(label).map_or(true, |b| score > b.uuas);
                if better {
                    best.insert(
                        label.clone(),
                        RelationBest {
                            cell: Cell {
                                layer: layer + 1,
                                head: head + 1,
                            },
                            uuas: score,
                            support: total,
                        },
                    );
                }
            }
        }
    }
    best
}

/// The cell that best recovers each relation.
pub fn best_relation_heads(
    source: &dyn RecordSource,
    treebank: &Treebank,
    opts: &SweepOptions,
) -> Result<BTreeMap<String, RelationBest>> {
    let cells = evaluate_cells(source, treebank, opts)?;
    Ok(relation_heads_from_cells(&cells, opts.min_support))
}

pub fn relations_tsv(relations: &BTreeMap<String, RelationBest>) -> String {
    let mut out = String::from("relation\tsupport\tlayer\thead\tuuas\tpercent\n");
    for (label, r) in relations {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            label,
            r.support,
            r.cell.layer,
            r.cell.head,
            r.uuas,
            percent(r.uuas)
        );
    }
    out
}

/// Per-layer change from one model variant to another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantDelta {
    pub language: String,
    pub base_tag: String,
    pub other_tag: String,
    pub delta_max_by_layer: Vec<f64>,
    pub delta_mean_by_layer: Vec<f64>,
}

impl VariantDelta {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# language\t{}", self.language);
        let _ = writeln!(out, "# base_tag\t{}", self.base_tag);
        let _ = writeln!(out, "# other_tag\t{}", self.other_tag);
        out.push_str("layer\tdelta_max\tdelta_mean\n");
        for (l, (dmax, dmean)) in self
            .delta_max_by_layer
            .iter()
            .zip(&self.delta_mean_by_layer)
            .enumerate()
        {
            let _ = writeln!(out, "{}\t{}\t{}", l + 1, dmax, dmean);
        }
        out
    }
}

/// `b − a` for the per-layer best and mean UUAS.
pub fn compare_variants(a: &SweepReport, b: &SweepReport) -> Result<VariantDelta> {
    if a.language != b.language {
        return Err(Error::Shape(format!(
            "cannot compare languages {} and {}",
            a.language, b.language
        )));
    }
    if (a.n_layers(), a.n_heads()) != (b.n_layers(), b.n_heads()) {
        return Err(Error::Shape(format!(
            "grid {}×{} vs {}×{}",
            a.n_layers(),
            a.n_heads(),
            b.n_layers(),
            b.n_heads()
        )));
    }
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(x, y)| y - x).collect();
    Ok(VariantDelta {
        language: a.language.clone(),
        base_tag: a.model_tag.clone(),
        other_tag: b.model_tag.clone(),
        delta_max_by_layer: diff(&a.max_by_layer, &b.max_by_layer),
        delta_mean_by_layer: diff(&a.mean_by_layer, &b.mean_by_layer),
    })
}
