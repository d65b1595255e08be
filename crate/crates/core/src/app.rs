//! File-level tagging, scoring and lexicon annotation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{read_conll, split_corpus, write_predictions, Corpus, ReadOptions};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::load_embeddings;
use crate::lexicon::{match_sentence, Encoding, Mark, MatchMode};
use crate::model::Model;
use crate::tagging::{evaluate_f1, Dialect, EvalReport};
use crate::train::{load_checkpoint, LexiconSpec, RunConfig, FINAL_DIR};

#[derive(Debug, Clone, Default)]
pub struct TagOptions {
    pub constrained: bool,
    /// Replacement paths for the checkpoint's lexicons, by name.
    pub lexicons: Vec<(String, PathBuf)>,
    /// Only checked for consistency with the checkpoint.
    pub embeddings: Option<PathBuf>,
    pub exec: Execution,
}

/// Accepts a checkpoint directory or a training output directory (whose
/// final checkpoint is used).
pub fn resolve_checkpoint(dir: &Path) -> PathBuf {
    if !dir.join("model.json").exists() && dir.join(FINAL_DIR).join("model.json").exists() {
        dir.join(FINAL_DIR)
    } else {
        dir.to_path_buf()
    }
}

/// Loads a checkpoint and the lexicons it was trained with.
pub fn load_tagger(model_dir: &Path, opts: &TagOptions) -> Result<(Model, RunConfig)> {
    let (mut model, config) = load_checkpoint(&resolve_checkpoint(model_dir))?;
    let mut overrides: BTreeMap<&str, &PathBuf> = opts.lexicons.iter().map(|(n, p)| (n.as_str(), p)).collect();
    let mut lexicons = Vec::new();
    for spec in &config.lexicons {
        let spec = match overrides.remove(spec.name.as_str()) {
            Some(path) => LexiconSpec {
                path: path.clone(),
                ..spec.clone()
            },
            None => spec.clone(),
        };
        lexicons.push(spec.load()?);
    }
    if let Some(name) = overrides.keys().next() {
        return Err(Error::Config(format!("model has no lexicon feature named `{name}`")));
    }
    model.attach_lexicons(lexicons)?;
    if let Some(path) = &opts.embeddings {
        let emb = load_embeddings(path)?;
        if emb.dim != model.config.word_dim {
            return Err(Error::Config(format!(
                "{} has {}-dimensional vectors, the model uses {}",
                path.display(),
                emb.dim,
                model.config.word_dim
            )));
        }
    }
    Ok((model, config))
}

/// Tags a column file and writes it back with a predicted-tag column.
pub fn tag_file(model_dir: &Path, input: &Path, out: &mut impl Write, opts: &TagOptions) -> Result<()> {
    let (model, config) = load_tagger(model_dir, opts)?;
    let corpus = read_conll(
        input,
        ReadOptions {
            labeled: false,
            dialect: Dialect::Auto,
        },
    )?;
    tag_corpus(&model, &config, &corpus, out, opts.constrained, opts.exec)
}

pub fn tag_corpus(
    model: &Model,
    config: &RunConfig,
    corpus: &Corpus,
    out: &mut impl Write,
    constrained: bool,
    exec: Execution,
) -> Result<()> {
    let corpus = if config.digit_split {
        split_corpus(corpus)?
    } else {
        corpus.clone()
    };
    let tokens: Vec<&[String]> = corpus.sentences.iter().map(|s| s.tokens.as_slice()).collect();
    let ids = model.tag_sentences(&tokens, constrained, exec)?;
    let names: Vec<Vec<String>> = ids
        .iter()
        .map(|t| t.iter().map(|&id| model.tagset.name(id)).collect())
        .collect();
    write_predictions(out, &corpus, &names).map_err(|e| Error::io(&corpus.source, e))
}

/// Scores the last column of `predicted` against the last column of
/// `gold`. Predictions are read as BIOES (invalid runs are repaired).
pub fn evaluate_files(gold: &Path, predicted: &Path, gold_dialect: Dialect) -> Result<EvalReport> {
    let gold = read_conll(
        gold,
        ReadOptions {
            labeled: true,
            dialect: gold_dialect,
        },
    )?;
    let pred = read_conll(
        predicted,
        ReadOptions {
            labeled: true,
            dialect: Dialect::Bioes,
        },
    )?;
    evaluate_corpora(&gold, &pred)
}

pub fn evaluate_corpora(gold: &Corpus, pred: &Corpus) -> Result<EvalReport> {
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.tokens != p.tokens {
            let line = |c: &Corpus, s: &crate::data::Sentence| {
                format!("{}:{}", c.source, s.lines.first().copied().unwrap_or(0))
            };
            return Err(Error::Alignment(format!(
                "sentence {} differs: {} has {} tokens, {} has {}",
                i + 1,
                line(gold, g),
                g.len(),
                line(pred, p),
                p.len()
            )));
        }
    }
    if gold.sentences.len() != pred.sentences.len() {
        return Err(Error::Alignment(format!(
            "sentence {} differs: {} has {} sentences, {} has {}",
            gold.sentences.len().min(pred.sentences.len()) + 1,
            gold.source,
            gold.sentences.len(),
            pred.source,
            pred.sentences.len()
        )));
    }
    let mut report = evaluate_f1(&gold.gold_spans()?, &pred.gold_spans()?)?;
    report.tokens = Some(gold.num_tokens());
    Ok(report)
}

/// Appends one column per lexicon category with its match marks
/// (`B I E S O`, or `Y`/`N` for the yes/no encoding).
pub fn lexmatch_corpus(
    lexicons: &[LexiconSpec],
    corpus: &Corpus,
    mode: MatchMode,
    encoding: Encoding,
    out: &mut impl Write,
) -> Result<()> {
    let loaded = lexicons.iter().map(LexiconSpec::load).collect::<Result<Vec<_>>>()?;
    let columns: Vec<Vec<String>> = corpus
        .sentences
        .iter()
        .map(|s| {
            let mut cols = vec![String::new(); s.len()];
            for lex in &loaded {
                let marks = match_sentence(lex, &s.tokens, mode);
                for row in &marks.marks {
                    for (t, m) in row.iter().enumerate() {
                        let text = match encoding {
                            Encoding::Bioes => m.to_string(),
                            Encoding::Yn if *m == Mark::O => "N".into(),
                            Encoding::Yn => "Y".into(),
                        };
                        if !cols[t].is_empty() {
                            cols[t].push(' ');
                        }
                        cols[t].push_str(&text);
                    }
                }
            }
            cols
        })
        .collect();
    write_predictions(out, corpus, &columns).map_err(|e| Error::io(&corpus.source, e))
}

pub fn lexmatch_file(
    lexicons: &[LexiconSpec],
    input: &Path,
    mode: MatchMode,
    encoding: Encoding,
    out: &mut impl Write,
) -> Result<()> {
    let corpus = read_conll(
        input,
        ReadOptions {
            labeled: false,
            dialect: Dialect::Auto,
        },
    )?;
    lexmatch_corpus(lexicons, &corpus, mode, encoding, out)
}
