//! The ATNA attention archive.
//!
//! One archive holds the attention tensors of one model variant over one
//! treebank. Layout, all integers little-endian:
//!
//! ```text
//! "ATNA"            4 bytes magic
//! version           u32 = 1
//! header length     u64
//! header            UTF-8 JSON, `header length` bytes
//! payload           concatenated f32 tensors, one per record
//! ```
//!
//! The header holds `model_tag`, `language` and a `records` directory. Each
//! directory entry gives the record's `sent_id`, `shape`
//! (`[layers, heads, seq_len, seq_len]`), `token_spans` (`[start, end)` pairs
//! over subword positions, one per gold token), `delimiter_indices` and
//! `offset`, the byte offset of its tensor from the start of the payload.
//! Tensors are stored layer-major, then head, row (attending position),
//! column (attended position).

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::ArrayView2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::treebank::{Sentence, Treebank};

pub const MAGIC: &[u8; 4] = b"ATNA";
pub const VERSION: u32 = 1;
const PREFIX_LEN: u64 = 4 + 4 + 8;

/// Allowed deviation of a stored attention row from summing to one.
pub const ROW_SUM_TOLERANCE: f32 = 1e-3;

/// Attention of every layer and head over one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub sent_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Number of subword positions, delimiters included.
    pub seq_len: usize,
    /// `[n_layers][n_heads][seq_len][seq_len]`, row-major.
    pub tensor: Vec<f32>,
    pub delimiter_indices: Vec<usize>,
    /// Subword range of each gold token.
    pub token_spans: Vec<Range<usize>>,
}

impl AttentionRecord {
    pub fn n_tokens(&self) -> usize {
        self.token_spans.len()
    }

    fn slice_len(&self) -> usize {
        self.seq_len * self.seq_len
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.n_layers * self.n_heads * self.slice_len() * 4) as u64
    }

    /// The `seq_len × seq_len` attention matrix of one head.
    pub fn slice(&self, layer: usize, head: usize) -> Result<ArrayView2<'_, f32>> {
        if layer >= self.n_layers {
            return Err(Error::IndexOutOfRange {
                index: layer,
                len: self.n_layers,
            });
        }
        if head >= self.n_heads {
            return Err(Error::IndexOutOfRange {
                index: head,
                len: self.n_heads,
            });
        }
        let start = (layer * self.n_heads + head) * self.slice_len();
        let data = &self.tensor[start..start + self.slice_len()];
        Ok(ArrayView2::from_shape((self.seq_len, self.seq_len), data)
            .expect("slice length matches shape"))
    }

    /// Check that spans and delimiters tile `[0, seq_len)` exactly.
    pub fn validate_layout(&self) -> Result<()> {
        check_layout(
            &self.sent_id,
            self.seq_len,
            &self.delimiter_indices,
            &self.token_spans,
        )
    }

    /// Full validation: shape, layout and row-stochasticity.
    pub fn validate(&self) -> Result<()> {
        let expected = self.n_layers * self.n_heads * self.slice_len();
        if self.tensor.len() != expected {
            return Err(Error::InvalidRecord {
                sent_id: self.sent_id.clone(),
                msg: format!(
                    "tensor has {} values, shape requires {}",
                    self.tensor.len(),
                    expected
                ),
            });
        }
        self.validate_layout()?;
        self.validate_rows()
    }

    fn validate_rows(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Ok(());
        }
        for (row_idx, row) in self.tensor.chunks_exact(self.seq_len).enumerate() {
            let mut sum = 0f32;
            for &v in row {
                if !v.is_finite() || v < 0.0 {
                    return Err(self.row_error(row_idx, format!("invalid weight {}", v)));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(self.row_error(row_idx, format!("row sums to {}", sum)));
            }
        }
        Ok(())
    }

    fn row_error(&self, flat_row: usize, msg: String) -> Error {
        let row = flat_row % self.seq_len;
        let slice = flat_row / self.seq_len;
        Error::InvalidRecord {
            sent_id: self.sent_id.clone(),
            msg: format!(
                "layer {} head {} row {}: {}",
                slice / self.n_heads,
                slice % self.n_heads,
                row,
                msg
            ),
        }
    }
}

fn check_layout(
    sent_id: &str,
    seq_len: usize,
    delimiters: &[usize],
    spans: &[Range<usize>],
) -> Result<()> {
    let coverage = |index: usize, msg: &str| Error::Coverage {
        sent_id: sent_id.to_owned(),
        index,
        msg: msg.to_owned(),
    };

    let mut covered = vec![false; seq_len];
    for &d in delimiters {
        if d >= seq_len {
            return Err(coverage(d, "delimiter index beyond sequence length"));
        }
        if covered[d] {
            return Err(coverage(d, "delimiter listed twice"));
        }
        covered[d] = true;
    }

    let mut prev_end = 0;
    for span in spans {
        if span.start >= span.end {
            return Err(coverage(span.start, "empty token span"));
        }
        if span.start < prev_end {
            return Err(coverage(span.start, "token spans overlap or are unsorted"));
        }
        if span.end > seq_len {
            return Err(coverage(span.end - 1, "token span beyond sequence length"));
        }
        for i in span.clone() {
            if covered[i] {
                return Err(coverage(i, "subword in both a token span and the delimiters"));
            }
            covered[i] = true;
        }
        prev_end = span.end;
    }

    if let Some(i) = covered.iter().position(|&c| !c) {
        return Err(coverage(i, "subword not covered by any token span or delimiter"));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionArchive {
    pub model_tag: String,
    pub language: String,
    pub records: Vec<AttentionRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    model_tag: String,
    language: String,
    records: Vec<RecordEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RecordEntry {
    sent_id: String,
    shape: [usize; 4],
    token_spans: Vec<[usize; 2]>,
    delimiter_indices: Vec<usize>,
    offset: u64,
}

impl RecordEntry {
    fn payload_bytes(&self) -> Option<u64> {
        let [l, h, r, c] = self.shape;
        l.checked_mul(h)?
            .checked_mul(r)?
            .checked_mul(c)?
            .checked_mul(4)
            .map(|b| b as u64)
    }

    fn spans(&self) -> Vec<Range<usize>> {
        self.token_spans.iter().map(|&[s, e]| s..e).collect()
    }
}

/// Write an archive, validating every record first.
pub fn write_archive(archive: &AttentionArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();

    let mut entries = Vec::with_capacity(archive.records.len());
    let mut offset = 0u64;
    for record in &archive.records {
        record.validate()?;
        entries.push(RecordEntry {
            sent_id: record.sent_id.clone(),
            shape: [
                record.n_layers,
                record.n_heads,
                record.seq_len,
                record.seq_len,
            ],
            token_spans: record.token_spans.iter().map(|r| [r.start, r.end]).collect(),
            delimiter_indices: record.delimiter_indices.clone(),
            offset,
        });
        offset += record.payload_bytes();
    }

    let header = serde_json::to_vec(&Header {
        model_tag: archive.model_tag.clone(),
        language: archive.language.clone(),
        records: entries,
    })
    .map_err(|e| Error::Format(e.to_string()))?;

    let io_err = |e| Error::io(path, e);
    let mut writer = BufWriter::new(File::create(path).map_err(io_err)?);
    writer.write_all(MAGIC).map_err(io_err)?;
    writer.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    writer
        .write_all(&(header.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    writer.write_all(&header).map_err(io_err)?;

    let mut buf = Vec::new();
    for record in &archive.records {
        buf.clear();
        buf.reserve(record.tensor.len() * 4);
        for v in &record.tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&buf).map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

/// Read and validate a whole archive into memory.
pub fn read_archive(path: impl AsRef<Path>) -> Result<AttentionArchive> {
    ArchiveReader::open(path)?.load_all()
}

/// Lazily loads records from an archive by their payload offset.
///
/// Record fetches may run concurrently; they serialize on the file handle.
pub struct ArchiveReader {
    path: PathBuf,
    header: Header,
    payload_start: u64,
    file: Mutex<File>,
}

impl ArchiveReader {
    /// Open an archive, checking magic, version, header and payload size.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_owned();
        let io_err = |e| Error::io(&path, e);
        let mut file = File::open(&path).map_err(io_err)?;
        let file_len = file.metadata().map_err(io_err)?.len();

        if file_len < PREFIX_LEN {
            if file_len < 4 {
                return Err(Error::Format("file too short for magic".into()));
            }
            let mut magic = [0u8; 4];
            file.read_exact(&mut magic).map_err(io_err)?;
            if &magic != MAGIC {
                return Err(Error::Format(format!("bad magic {:?}", magic)));
            }
            return Err(Error::Truncated {
                expected: PREFIX_LEN,
                actual: file_len,
            });
        }

        let mut prefix = [0u8; PREFIX_LEN as usize];
        file.read_exact(&mut prefix).map_err(io_err)?;
        if &prefix[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &prefix[0..4])));
        }
        let version = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(prefix[8..16].try_into().unwrap());
        let payload_start = PREFIX_LEN.saturating_add(header_len);
        if payload_start > file_len {
            return Err(Error::Truncated {
                expected: payload_start,
                actual: file_len,
            });
        }

        let mut header_bytes = vec![0u8; header_len as usize];
        file.read_exact(&mut header_bytes).map_err(io_err)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Format(format!("invalid header: {}", e)))?;

        let mut expected_offset = 0u64;
        for entry in &header.records {
            if entry.shape[2] != entry.shape[3] {
                return Err(Error::InvalidRecord {
                    sent_id: entry.sent_id.clone(),
                    msg: format!("non-square attention shape {:?}", entry.shape),
                });
            }
            if entry.offset != expected_offset {
                return Err(Error::Format(format!(
                    "record {} at offset {}, expected {}",
                    entry.sent_id, entry.offset, expected_offset
                )));
            }
            check_layout(
                &entry.sent_id,
                entry.shape[2],
                &entry.delimiter_indices,
                &entry.spans(),
            )?;
            let bytes = entry
                .payload_bytes()
                .ok_or_else(|| Error::Format(format!("shape overflow in {}", entry.sent_id)))?;
            expected_offset = expected_offset
                .checked_add(bytes)
                .ok_or_else(|| Error::Format("payload size overflow".into()))?;
        }

        let expected = payload_start.saturating_add(expected_offset);
        if expected > file_len {
            return Err(Error::Truncated {
                expected,
                actual: file_len,
            });
        }
        if expected < file_len {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                file_len - expected
            )));
        }

        Ok(ArchiveReader {
            path,
            header,
            payload_start,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn model_tag(&self) -> &str {
        &self.header.model_tag
    }

    pub fn language(&self) -> &str {
        &self.header.language
    }

    pub fn len(&self) -> usize {
        self.header.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.header.records.is_empty()
    }

    pub fn sent_ids(&self) -> impl Iterator<Item = &str> {
        self.header.records.iter().map(|e| e.sent_id.as_str())
    }

    /// Load and validate the record at `index`.
    pub fn record(&self, index: usize) -> Result<AttentionRecord> {
        let entry = self.header.records.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.len(),
        })?;
        let n_bytes = entry.payload_bytes().expect("checked on open") as usize;
        let mut bytes = vec![0u8; n_bytes];
        {
            let mut file = self.file.lock().expect("archive file lock poisoned");
            file.seek(SeekFrom::Start(self.payload_start + entry.offset))
                .map_err(|e| Error::io(&self.path, e))?;
            file.read_exact(&mut bytes)
                .map_err(|e| Error::io(&self.path, e))?;
        }

        let tensor = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let [n_layers, n_heads, seq_len, _] = entry.shape;
        let record = AttentionRecord {
            sent_id: entry.sent_id.clone(),
            n_layers,
            n_heads,
            seq_len,
            tensor,
            delimiter_indices: entry.delimiter_indices.clone(),
            token_spans: entry.spans(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn load_all(&self) -> Result<AttentionArchive> {
        let records = (0..self.len())
            .map(|i| self.record(i))
            .collect::<Result<_>>()?;
        Ok(AttentionArchive {
            model_tag: self.header.model_tag.clone(),
            language: self.header.language.clone(),
            records,
        })
    }

    /// Human-readable dump of the header.
    pub fn describe(&self) -> String {
        let mut out = format!(
            "format\tATNA v{}\nmodel_tag\t{}\nlanguage\t{}\nrecords\t{}\nheader_bytes\t{}\n",
            VERSION,
            self.header.model_tag,
            self.header.language,
            self.len(),
            self.payload_start - PREFIX_LEN
        );
        out.push_str("sent_id\tlayers\theads\tseq_len\ttokens\tdelimiters\toffset\n");
        for e in &self.header.records {
            let delims = e
                .delimiter_indices
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.sent_id,
                e.shape[0],
                e.shape[1],
                e.shape[2],
                e.token_spans.len(),
                delims,
                e.offset
            ));
        }
        out
    }
}

/// Anything that yields attention records by position.
pub trait RecordSource: Sync {
    fn model_tag(&self) -> &str;
    fn language(&self) -> &str;
    fn sent_ids(&self) -> Vec<&str>;
    fn fetch(&self, index: usize) -> Result<Cow<'_, AttentionRecord>>;
}

impl RecordSource for AttentionArchive {
    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn language(&self) -> &str {
        &self.language
    }

    fn sent_ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.sent_id.as_str()).collect()
    }

    fn fetch(&self, index: usize) -> Result<Cow<'_, AttentionRecord>> {
        self.records
            .get(index)
            .map(Cow::Borrowed)
            .ok_or(Error::IndexOutOfRange {
                index,
                len: self.records.len(),
            })
    }
}

impl RecordSource for ArchiveReader {
    fn model_tag(&self) -> &str {
        ArchiveReader::model_tag(self)
    }

    fn language(&self) -> &str {
        ArchiveReader::language(self)
    }

    fn sent_ids(&self) -> Vec<&str> {
        ArchiveReader::sent_ids(self).collect()
    }

    fn fetch(&self, index: usize) -> Result<Cow<'_, AttentionRecord>> {
        self.record(index).map(Cow::Owned)
    }
}

/// Attention pattern produced by the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthMode {
    /// Every cell is `1 / seq_len`.
    Uniform,
    /// Mass concentrated on the subwords of each token's gold neighbours.
    GoldOracle,
    /// Mass concentrated on the tokens at offsets ±1.
    Adjacent,
}

impl std::str::FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SynthMode::Uniform),
            "gold-oracle" | "gold" => Ok(SynthMode::GoldOracle),
            "adjacent" => Ok(SynthMode::Adjacent),
            _ => Err(Error::Config(format!(
                "unknown synth mode {:?} (expected uniform, gold-oracle or adjacent)",
                s
            ))),
        }
    }
}

/// How many subword pieces each gold token is split into.
///
/// The synthetic layout puts one delimiter before and one after the
/// sentence, like `[CLS] ... [SEP]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordLayout {
    pieces: Vec<usize>,
}

impl SubwordLayout {
    pub fn singletons(n_tokens: usize) -> Self {
        SubwordLayout {
            pieces: vec![1; n_tokens],
        }
    }

    pub fn from_pieces(pieces: Vec<usize>) -> Result<Self> {
        if pieces.contains(&0) {
            return Err(Error::InvalidSpans("a token needs at least one piece".into()));
        }
        Ok(SubwordLayout { pieces })
    }

    pub fn random<R: Rng>(n_tokens: usize, max_pieces: usize, rng: &mut R) -> Self {
        let max_pieces = max_pieces.max(1);
        SubwordLayout {
            pieces: (0..n_tokens)
                .map(|_| rng.random_range(1..=max_pieces))
                .collect(),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.pieces.iter().sum::<usize>() + 2
    }

    pub fn delimiter_indices(&self) -> Vec<usize> {
        vec![0, self.seq_len() - 1]
    }

    pub fn token_spans(&self) -> Vec<Range<usize>> {
        let mut start = 1;
        self.pieces
            .iter()
            .map(|&p| {
                let span = start..start + p;
                start += p;
                span
            })
            .collect()
    }
}

/// Synthesize a record with one subword per token.
pub fn synth_attention(
    sentence: &Sentence,
    mode: SynthMode,
    n_layers: usize,
    n_heads: usize,
) -> AttentionRecord {
    synth_attention_with_layout(
        sentence,
        mode,
        n_layers,
        n_heads,
        &SubwordLayout::singletons(sentence.len()),
    )
}

/// Synthesize a record over an explicit subword layout.
///
/// In the gold-oracle and adjacent modes every subword row carries a base
/// weight of one on each position plus a boost of `100 · seq_len` spread over
/// the subwords of each target token, then is normalized. After merging and
/// symmetrization every target pair outweighs every other pair, so the
/// maximum spanning tree is exactly the target tree.
pub fn synth_attention_with_layout(
    sentence: &Sentence,
    mode: SynthMode,
    n_layers: usize,
    n_heads: usize,
    layout: &SubwordLayout,
) -> AttentionRecord {
    assert_eq!(
        layout.pieces.len(),
        sentence.len(),
        "layout must have one entry per token"
    );
    let seq_len = layout.seq_len();
    let spans = layout.token_spans();
    let n = sentence.len();

    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
    match mode {
        SynthMode::Uniform => {}
        SynthMode::GoldOracle => {
            for t in &sentence.tokens {
                if t.head != 0 {
                    neighbours[t.index - 1].push(t.head - 1);
                    neighbours[t.head - 1].push(t.index - 1);
                }
            }
        }
        SynthMode::Adjacent => {
            for i in 0..n.saturating_sub(1) {
                neighbours[i].push(i + 1);
                neighbours[i + 1].push(i);
            }
        }
    }

    let boost = 100.0 * seq_len as f64;
    let mut slice = vec![0f32; seq_len * seq_len];
    let uniform = 1.0 / seq_len as f64;
    slice.iter_mut().for_each(|v| *v = uniform as f32);

    if mode != SynthMode::Uniform {
        let mut row = vec![0f64; seq_len];
        for (token, span) in spans.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 1.0);
            for &target in &neighbours[token] {
                let target_span = &spans[target];
                let share = boost / target_span.len() as f64;
                for col in target_span.clone() {
                    row[col] += share;
                }
            }
            let total: f64 = row.iter().sum();
            for r in span.clone() {
                for (c, &w) in row.iter().enumerate() {
                    slice[r * seq_len + c] = (w / total) as f32;
                }
            }
        }
    }

    let mut tensor = Vec::with_capacity(n_layers * n_heads * slice.len());
    for _ in 0..n_layers * n_heads {
        tensor.extend_from_slice(&slice);
    }

    AttentionRecord {
        sent_id: sentence.sent_id.clone(),
        n_layers,
        n_heads,
        seq_len,
        tensor,
        delimiter_indices: layout.delimiter_indices(),
        token_spans: spans,
    }
}

/// Synthesize an archive for a whole treebank.
///
/// With `max_pieces > 1`, tokens are split into a seeded random number of
/// subword pieces.
pub fn synth_archive(
    treebank: &Treebank,
    mode: SynthMode,
    n_layers: usize,
    n_heads: usize,
    model_tag: &str,
    max_pieces: usize,
    seed: u64,
) -> AttentionArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = treebank
        .sentences
        .iter()
        .map(|s| {
            let layout = SubwordLayout::random(s.len(), max_pieces, &mut rng);
            synth_attention_with_layout(s, mode, n_layers, n_heads, &layout)
        })
        .collect();
    AttentionArchive {
        model_tag: model_tag.to_owned(),
        language: treebank.language.clone(),
        records,
    }
}
