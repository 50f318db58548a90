//! CoNLL-U treebanks and their gold dependency edges.
//!
//! Only syntactic words are kept: multiword-token ranges (`3-4`) and empty
//! nodes (`5.1`) are skipped. The enhanced `DEPS` column is ignored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A syntactic word of a sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// Head position, 0 for the root attachment.
    pub head: usize,
    /// Full relation label, including any subtype (`nsubj:pass`).
    pub deprel: String,
}

impl Token {
    /// The universal relation, i.e. the label with its subtype stripped.
    pub fn relation(&self) -> &str {
        universal_relation(&self.deprel)
    }

    pub fn is_root(&self) -> bool {
        self.head == 0
    }
}

/// Strip a language-specific subtype from a relation label.
pub fn universal_relation(deprel: &str) -> &str {
    deprel.split(':').next().unwrap_or(deprel)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub sent_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

/// An undirected gold edge over 1-based token positions, `lo < hi`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoldEdge {
    pub lo: usize,
    pub hi: usize,
    /// Universal relation of the dependent.
    pub deprel: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Head array indexed by token position - 1.
    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// One undirected edge per non-root token, sorted by `(lo, hi)`.
    pub fn gold_edges(&self) -> Vec<GoldEdge> {
        let mut edges: Vec<GoldEdge> = self
            .tokens
            .iter()
            .filter(|t| !t.is_root())
            .map(|t| GoldEdge {
                lo: t.index.min(t.head),
                hi: t.index.max(t.head),
                deprel: t.relation().to_owned(),
            })
            .collect();
        edges.sort();
        edges
    }

    /// Check token numbering, head ranges, the single root and acyclicity.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Error::InvalidTree {
            sent_id: self.sent_id.clone(),
            msg,
        };

        if self.tokens.is_empty() {
            return Err(invalid("sentence has no tokens".into()));
        }

        let n = self.tokens.len();
        for (pos, token) in self.tokens.iter().enumerate() {
            if token.index != pos + 1 {
                return Err(invalid(format!(
                    "token {} found at position {}, expected {}",
                    token.index,
                    pos + 1,
                    pos + 1
                )));
            }
            if token.head > n {
                return Err(invalid(format!(
                    "token {} has head {} beyond sentence length {}",
                    token.index, token.head, n
                )));
            }
            if token.head == token.index {
                return Err(invalid(format!("token {} is its own head", token.index)));
            }
            if !token.is_root() && (token.deprel.is_empty() || token.deprel == "_") {
                return Err(invalid(format!("token {} has no relation", token.index)));
            }
        }

        let roots = self.tokens.iter().filter(|t| t.is_root()).count();
        if roots != 1 {
            return Err(invalid(format!("expected a single root, found {}", roots)));
        }

        // Every token must reach the root within n steps.
        for token in &self.tokens {
            let mut cur = token.index;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(invalid(format!("cycle through token {}", token.index)));
                }
            }
        }

        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Treebank {
    pub language: String,
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn new(language: impl Into<String>, sentences: Vec<Sentence>) -> Result<Self> {
        let mut seen = HashSet::new();
        for sentence in &sentences {
            if !seen.insert(sentence.sent_id.as_str()) {
                return Err(Error::DuplicateSentId(sentence.sent_id.clone()));
            }
        }
        Ok(Treebank {
            language: language.into(),
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.sentences.iter().map(|s| s.len() - 1).sum()
    }

    pub fn get(&self, sent_id: &str) -> Option<&Sentence> {
        self.sentences.iter().find(|s| s.sent_id == sent_id)
    }
}

/// Guess the language code from a UD file name such as `en_pud-ud-test.conllu`.
pub fn language_from_path(path: &Path) -> String {
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let stem = stem.strip_suffix(".conllu").unwrap_or(stem);
    stem.split(['_', '-', '.'])
        .next()
        .filter(|s| !s.is_empty())
        .unwrap_or(stem)
        .to_owned()
}

/// Load a CoNLL-U file. The language is taken from the file name.
pub fn load_conllu(path: impl AsRef<Path>) -> Result<Treebank> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_conllu(BufReader::new(file), language_from_path(path)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}

/// Parse CoNLL-U from a reader. LF and CRLF line endings are accepted.
pub fn read_conllu<R: BufRead>(reader: R, language: impl Into<String>) -> Result<Treebank> {
    let mut sentences = Vec::new();
    let mut current = SentenceBuilder::default();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io("<conllu>", e))?;
        let line = line.trim_end_matches('\r');

        if line.trim().is_empty() {
            if let Some(sentence) = current.finish(sentences.len() + 1)? {
                sentences.push(sentence);
            }
            continue;
        }

        if let Some(comment) = line.strip_prefix('#') {
            current.comment(comment.trim());
            continue;
        }

        current.token_line(line, lineno)?;
    }

    if let Some(sentence) = current.finish(sentences.len() + 1)? {
        sentences.push(sentence);
    }

    Treebank::new(language, sentences)
}

#[derive(Default)]
struct SentenceBuilder {
    sent_id: Option<String>,
    text: Option<String>,
    tokens: Vec<Token>,
    first_line: usize,
}

impl SentenceBuilder {
    fn comment(&mut self, comment: &str) {
        if let Some((key, value)) = comment.split_once('=') {
            match key.trim() {
                "sent_id" => self.sent_id = Some(value.trim().to_owned()),
                "text" => self.text = Some(value.trim().to_owned()),
                _ => {}
            }
        }
    }

    fn token_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 10 {
            return Err(parse_err(format!(
                "expected 10 tab-separated columns, found {}",
                fields.len()
            )));
        }

        let id = fields[0];
        if id.contains('-') || id.contains('.') {
            // Multiword-token range or empty node.
            return Ok(());
        }

        let index: usize = id
            .parse()
            .map_err(|_| parse_err(format!("invalid token id {:?}", id)))?;
        if index == 0 {
            return Err(parse_err("token id must be at least 1".into()));
        }
        let head: usize = fields[6]
            .parse()
            .map_err(|_| parse_err(format!("invalid head {:?}", fields[6])))?;

        if self.tokens.is_empty() {
            self.first_line = lineno;
        }
        self.tokens.push(Token {
            index,
            form: fields[1].to_owned(),
            upos: fields[3].to_owned(),
            head,
            deprel: fields[7].to_owned(),
        });
        Ok(())
    }

    fn finish(&mut self, ordinal: usize) -> Result<Option<Sentence>> {
        let builder = std::mem::take(self);
        if builder.tokens.is_empty() {
            return Ok(None);
        }
        let text = builder.text.unwrap_or_else(|| {
            builder
                .tokens
                .iter()
                .map(|t| t.form.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        });
        let sentence = Sentence {
            sent_id: builder.sent_id.unwrap_or_else(|| ordinal.to_string()),
            text,
            tokens: builder.tokens,
        };
        sentence.validate()?;
        Ok(Some(sentence))
    }
}

/// Write a treebank back out as CoNLL-U with the columns this crate reads.
pub fn write_conllu<W: Write>(treebank: &Treebank, mut writer: W) -> io::Result<()> {
    for sentence in &treebank.sentences {
        writeln!(writer, "# sent_id = {}", sentence.sent_id)?;
        writeln!(writer, "# text = {}", sentence.text)?;
        for t in &sentence.tokens {
            writeln!(
                writer,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                t.index,
                t.form,
                if t.upos.is_empty() { "_" } else { &t.upos },
                t.head,
                t.deprel
            )?;
        }
        writeln!(writer)?;
    }
    Ok(())
}
