//! CoNLL column files, preprocessing, vocabularies and length-bucketed
//! mini-batches.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::char_cnn::CharVocab;
use crate::error::{Error, Result};
use crate::features::{digit_normalize, Embeddings, WordVocab};
use crate::nn::RngState;
use crate::tagging::{extract_spans, spans_to_tags, Dialect, EntitySpan, Tagset};

/// One sentence of a column file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    /// Last column, when the corpus is labeled.
    pub tags: Option<Vec<String>>,
    /// All columns as read (or rebuilt by preprocessing), used for output.
    pub columns: Vec<Vec<String>>,
    /// 1-based source line of each token; 0 for synthesized rows.
    pub lines: Vec<usize>,
}

impl Sentence {
    /// Builds a sentence from tokens and optional tags.
    pub fn new<S: AsRef<str>>(tokens: &[S], tags: Option<&[S]>) -> Self {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let tags: Option<Vec<String>> = tags.map(|ts| ts.iter().map(|t| t.as_ref().to_string()).collect());
        let columns = tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                let mut row = vec![tok.clone()];
                if let Some(ts) = &tags {
                    row.push(ts[i].clone());
                }
                row
            })
            .collect();
        Sentence {
            lines: vec![0; tokens.len()],
            tokens,
            tags,
            columns,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold spans under `dialect`; tag errors carry the source line.
    pub fn spans(&self, dialect: Dialect, source: &str) -> Result<Vec<EntitySpan>> {
        let Some(tags) = &self.tags else {
            return Err(Error::Config(format!("{source}: corpus is unlabeled")));
        };
        extract_spans(tags, dialect).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: self.lines.get(e.index).copied().unwrap_or(0),
            message: e.message,
        })
    }
}

/// A parsed column file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    /// Sentence indices at which a `-DOCSTART-` boundary was seen.
    pub doc_starts: Vec<usize>,
    pub source: String,
    pub dialect: Dialect,
    pub labeled: bool,
}

impl Corpus {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Gold spans of every sentence.
    pub fn gold_spans(&self) -> Result<Vec<Vec<EntitySpan>>> {
        self.sentences
            .iter()
            .map(|s| s.spans(self.dialect, &self.source))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    pub labeled: bool,
    pub dialect: Dialect,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            labeled: true,
            dialect: Dialect::Auto,
        }
    }
}

pub fn read_conll(path: &Path, opts: ReadOptions) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_conll(BufReader::new(file), &path.display().to_string(), opts)
}

/// Parses whitespace-separated columns; blank lines end sentences.
pub fn parse_conll(reader: impl BufRead, source: &str, opts: ReadOptions) -> Result<Corpus> {
    let mut corpus = Corpus {
        source: source.to_string(),
        dialect: opts.dialect,
        labeled: opts.labeled,
        ..Default::default()
    };
    let mut current = Sentence::new::<&str>(&[], None);
    let mut width = 0;
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let finish = |s: &mut Sentence, corpus: &mut Corpus| -> Result<()> {
        if s.is_empty() {
            return Ok(());
        }
        let mut done = std::mem::replace(s, Sentence::new::<&str>(&[], None));
        if opts.labeled {
            done.tags = Some(done.columns.iter().map(|r| r.last().unwrap().clone()).collect());
            done.spans(opts.dialect, source)?;
        }
        corpus.sentences.push(done);
        Ok(())
    };

    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let cols: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if cols.is_empty() {
            finish(&mut current, &mut corpus)?;
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            finish(&mut current, &mut corpus)?;
            corpus.doc_starts.push(corpus.sentences.len());
            continue;
        }
        if current.is_empty() {
            width = cols.len();
            if opts.labeled && width < 2 {
                return Err(err(lineno, "labeled corpus needs a tag column".into()));
            }
        } else if cols.len() != width {
            return Err(err(
                lineno,
                format!(
                    "expected {width} columns as on the sentence's first line, found {}",
                    cols.len()
                ),
            ));
        }
        current.tokens.push(cols[0].clone());
        current.columns.push(cols);
        current.lines.push(lineno);
    }
    finish(&mut current, &mut corpus)?;
    Ok(corpus)
}

fn write_rows(out: &mut impl Write, corpus: &Corpus, extra: Option<&[Vec<String>]>) -> std::io::Result<()> {
    let mut docs = corpus.doc_starts.iter().peekable();
    for (i, s) in corpus.sentences.iter().enumerate() {
        while docs.peek() == Some(&&i) {
            writeln!(out, "-DOCSTART- -X- -X- O")?;
            writeln!(out)?;
            docs.next();
        }
        for (t, row) in s.columns.iter().enumerate() {
            out.write_all(row.join(" ").as_bytes())?;
            if let Some(extra) = extra {
                write!(out, " {}", extra[i][t])?;
            }
            writeln!(out)?;
        }
        writeln!(out)?;
    }
    for _ in docs {
        writeln!(out, "-DOCSTART- -X- -X- O")?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_conll(out: &mut impl Write, corpus: &Corpus) -> std::io::Result<()> {
    write_rows(out, corpus, None)
}

/// Writes the input columns with one appended predicted-tag column.
pub fn write_predictions(out: &mut impl Write, corpus: &Corpus, predicted: &[Vec<String>]) -> std::io::Result<()> {
    write_rows(out, corpus, Some(predicted))
}

/// Splits a token into maximal digit and non-digit runs.
pub fn split_digits(token: &str) -> Vec<String> {
    let mut pieces: Vec<String> = Vec::new();
    let mut prev_digit = None;
    for c in token.chars() {
        let d = c.is_ascii_digit();
        if prev_digit == Some(d) {
            pieces.last_mut().unwrap().push(c);
        } else {
            pieces.push(c.to_string());
        }
        prev_digit = Some(d);
    }
    pieces
}

/// Splits every token at digit boundaries without normalizing. Split
/// pieces stay inside the entity their token belonged to and the tag
/// column is rewritten as BIOES.
pub fn split_sentence(sentence: &Sentence, dialect: Dialect, source: &str) -> Result<Sentence> {
    let mut tokens = Vec::new();
    let mut lines = Vec::new();
    let mut first_piece = Vec::with_capacity(sentence.len());
    let mut last_piece = Vec::with_capacity(sentence.len());
    for (i, tok) in sentence.tokens.iter().enumerate() {
        first_piece.push(tokens.len());
        for piece in split_digits(tok) {
            tokens.push(piece);
            lines.push(sentence.lines.get(i).copied().unwrap_or(0));
        }
        last_piece.push(tokens.len() - 1);
    }
    let tags = match &sentence.tags {
        Some(_) => {
            let spans: Vec<EntitySpan> = sentence
                .spans(dialect, source)?
                .into_iter()
                .map(|s| EntitySpan::new(first_piece[s.start], last_piece[s.end], &s.category))
                .collect();
            let tags = spans_to_tags(&spans, tokens.len())?;
            Some(tags.iter().map(ToString::to_string).collect::<Vec<_>>())
        }
        None => None,
    };
    let columns = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut row = vec![t.clone()];
            if let Some(tags) = &tags {
                row.push(tags[i].clone());
            }
            row
        })
        .collect();
    Ok(Sentence {
        tokens,
        tags,
        columns,
        lines,
    })
}

/// Optional digit splitting followed by digit normalization.
pub fn preprocess_tokens(sentence: &Sentence, digit_split: bool, dialect: Dialect, source: &str) -> Result<Sentence> {
    let mut out = if digit_split {
        split_sentence(sentence, dialect, source)?
    } else {
        sentence.clone()
    };
    for t in &mut out.tokens {
        *t = digit_normalize(t);
    }
    Ok(out)
}

/// Applies [`split_sentence`] to a whole corpus, whose tags become BIOES.
///
/// Tokens keep their digits: the word lookup normalizes them, while the
/// character features and the capitalization class see the surface form.
pub fn split_corpus(corpus: &Corpus) -> Result<Corpus> {
    let sentences = corpus
        .sentences
        .iter()
        .map(|s| split_sentence(s, corpus.dialect, &corpus.source))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        sentences,
        dialect: Dialect::Bioes,
        ..corpus.clone()
    })
}

/// Sentences of one shared length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub sentence_ids: Vec<usize>,
    pub length: usize,
}

/// Groups sentence ids by exact length, chunks each group into batches of
/// at most `batch_size`, and shuffles both the group members and the
/// batch order.
pub fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut RngState) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("mini-batch size must be at least 1".into()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (id, &len) in lengths.iter().enumerate() {
        groups.entry(len).or_default().push(id);
    }
    let mut batches = Vec::new();
    for (length, mut ids) in groups {
        rng.shuffle(&mut ids);
        for chunk in ids.chunks(batch_size) {
            batches.push(Batch {
                sentence_ids: chunk.to_vec(),
                length,
            });
        }
    }
    rng.shuffle(&mut batches);
    Ok(batches)
}

/// Vocabularies derived from a training corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabs {
    pub words: WordVocab,
    pub chars: CharVocab,
    pub tagset: Tagset,
}

/// Word vocabulary = pretrained words followed by training words; chars
/// come from the surface forms; tags are the BIOES expansion of the
/// categories seen in the gold spans.
pub fn build_vocabs(corpus: &Corpus, pretrained: Option<&Embeddings>) -> Result<Vocabs> {
    if corpus.sentences.is_empty() {
        return Err(Error::Config(format!("{}: training corpus is empty", corpus.source)));
    }
    let mut words = WordVocab::new(pretrained.map(|e| e.words.as_slice()).unwrap_or(&[]));
    let mut chars = BTreeSet::new();
    let mut categories = BTreeSet::new();
    for s in &corpus.sentences {
        for t in &s.tokens {
            words.insert(t);
            chars.extend(t.chars());
        }
        for span in s.spans(corpus.dialect, &corpus.source)? {
            categories.insert(span.category);
        }
    }
    Ok(Vocabs {
        words,
        chars: CharVocab::new(chars),
        tagset: Tagset::new(categories),
    })
}
