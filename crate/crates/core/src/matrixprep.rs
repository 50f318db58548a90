//! From a raw subword attention slice to a symmetric token score matrix.
//!
//! The pipeline drops delimiter rows/columns, merges the subwords of each
//! gold token (columns summed, rows averaged) and finally multiplies the
//! matrix elementwise with its transpose.

use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};

use crate::attnstore::AttentionRecord;
use crate::error::{Error, Result};

/// How subword rows and columns are collapsed into a token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MergeMode {
    /// Columns summed, rows averaged.
    #[default]
    SumMean,
    /// Columns and rows both averaged.
    MeanMean,
}

impl std::str::FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-mean" => Ok(MergeMode::SumMean),
            "mean-mean" => Ok(MergeMode::MeanMean),
            _ => Err(Error::Config(format!(
                "unknown merge mode {:?} (expected sum-mean or mean-mean)",
                s
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub layer: usize,
    pub head: usize,
    pub sent_id: String,
}

/// Symmetric, non-negative score matrix over gold tokens.
///
/// The diagonal is kept but never selected by the decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    pub scores: Array2<f64>,
    pub provenance: Option<Provenance>,
}

impl TokenMatrix {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() != scores.ncols() {
            return Err(Error::Shape(format!(
                "score matrix must be square, got {}×{}",
                scores.nrows(),
                scores.ncols()
            )));
        }
        Ok(TokenMatrix {
            scores,
            provenance: None,
        })
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }
}

impl From<Vec<Vec<f64>>> for TokenMatrix {
    /// Panics when the rows are ragged or the matrix is not square.
    fn from(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let scores = Array2::from_shape_vec((n, n), flat).expect("square matrix");
        TokenMatrix {
            scores,
            provenance: None,
        }
    }
}

/// Remove the rows and columns of delimiter positions. No renormalization.
pub fn strip_delimiters(slice: ArrayView2<f64>, delimiters: &[usize]) -> Result<Array2<f64>> {
    let n = slice.nrows();
    if slice.ncols() != n {
        return Err(Error::Shape(format!(
            "attention slice must be square, got {}×{}",
            n,
            slice.ncols()
        )));
    }

    let mut drop = vec![false; n];
    for &d in delimiters {
        if d >= n {
            return Err(Error::IndexOutOfRange { index: d, len: n });
        }
        if drop[d] {
            return Err(Error::Config(format!("delimiter index {} listed twice", d)));
        }
        drop[d] = true;
    }

    let keep: Vec<usize> = (0..n).filter(|&i| !drop[i]).collect();
    Ok(slice.select(Axis(0), &keep).select(Axis(1), &keep))
}

fn check_spans(spans: &[Range<usize>], len: usize) -> Result<()> {
    let mut expected_start = 0;
    for span in spans {
        if span.start != expected_start {
            return Err(Error::InvalidSpans(format!(
                "span {:?} does not start at {}",
                span, expected_start
            )));
        }
        if span.end <= span.start {
            return Err(Error::InvalidSpans(format!("empty span {:?}", span)));
        }
        expected_start = span.end;
    }
    if expected_start != len {
        return Err(Error::InvalidSpans(format!(
            "spans cover [0, {}) but the matrix has {} positions",
            expected_start, len
        )));
    }
    Ok(())
}

/// Collapse the columns of each span, summing (or averaging) them.
pub fn merge_columns(m: ArrayView2<f64>, spans: &[Range<usize>], mode: MergeMode) -> Result<Array2<f64>> {
    check_spans(spans, m.ncols())?;
    let mut out = Array2::zeros((m.nrows(), spans.len()));
    for (j, span) in spans.iter().enumerate() {
        let mut col = out.column_mut(j);
        for c in span.clone() {
            col += &m.column(c);
        }
        if mode == MergeMode::MeanMean {
            col /= span.len() as f64;
        }
    }
    Ok(out)
}

/// Collapse the rows of each span by averaging.
pub fn merge_rows(m: ArrayView2<f64>, spans: &[Range<usize>]) -> Result<Array2<f64>> {
    check_spans(spans, m.nrows())?;
    let mut out = Array2::zeros((spans.len(), m.ncols()));
    for (i, span) in spans.iter().enumerate() {
        let mut row = out.row_mut(i);
        for r in span.clone() {
            row += &m.row(r);
        }
        row /= span.len() as f64;
    }
    Ok(out)
}

/// Merge subword pieces into tokens. Spans index the delimiter-free matrix
/// and must tile it in order.
pub fn merge_subwords(m: ArrayView2<f64>, spans: &[Range<usize>], mode: MergeMode) -> Result<Array2<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "matrix must be square, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let cols = merge_columns(m, spans, mode)?;
    merge_rows(cols.view(), spans)
}

/// Elementwise product of a matrix with its transpose.
pub fn symmetrize(m: ArrayView2<f64>) -> Result<TokenMatrix> {
    TokenMatrix::new(&m * &m.t())
}

/// Map spans over the full subword sequence onto the delimiter-free one.
fn reduce_spans(
    spans: &[Range<usize>],
    delimiters: &[usize],
    seq_len: usize,
) -> Result<Vec<Range<usize>>> {
    let mut reduced_index = vec![None; seq_len];
    let mut next = 0;
    for (i, slot) in reduced_index.iter_mut().enumerate() {
        if !delimiters.contains(&i) {
            *slot = Some(next);
            next += 1;
        }
    }

    spans
        .iter()
        .map(|span| {
            let start = reduced_index.get(span.start).copied().flatten();
            let last = span
                .end
                .checked_sub(1)
                .and_then(|e| reduced_index.get(e).copied().flatten());
            match (start, last) {
                (Some(s), Some(l)) if l + 1 - s == span.len() => Ok(s..l + 1),
                _ => Err(Error::InvalidSpans(format!(
                    "span {:?} overlaps a delimiter or the sequence end",
                    span
                ))),
            }
        })
        .collect()
}

/// Full preparation of one head's attention over one sentence.
pub fn prepare(
    record: &AttentionRecord,
    layer: usize,
    head: usize,
    mode: MergeMode,
) -> Result<TokenMatrix> {
    let slice = record.slice(layer, head)?.mapv(f64::from);
    let stripped = strip_delimiters(slice.view(), &record.delimiter_indices)?;
    let spans = reduce_spans(&record.token_spans, &record.delimiter_indices, record.seq_len)?;
    let merged = merge_subwords(stripped.view(), &spans, mode)?;
    let mut matrix = symmetrize(merged.view())?;
    matrix.provenance = Some(Provenance {
        layer,
        head,
        sent_id: record.sent_id.clone(),
    });
    Ok(matrix)
}
