//! Word-level inputs: vocabulary lookup keys, capitalization classes,
//! pretrained embedding files and per-token vector assembly.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNKNOWN_WORD: usize = 0;

/// Replaces every maximal run of ASCII digits with a single `0`.
pub fn digit_normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_digits = false;
    for c in s.chars() {
        if c.is_ascii_digit() {
            if !in_digits {
                out.push('0');
            }
            in_digits = true;
        } else {
            out.push(c);
            in_digits = false;
        }
    }
    out
}

/// Lookup key of a surface token: digit-normalized, then lower-cased.
pub fn lookup_key(token: &str) -> String {
    digit_normalize(token).to_lowercase()
}

/// Normalized word form to id; id 0 is reserved for unknown words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordVocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordVocab {
    /// Keys are normalized with [`lookup_key`]; the first occurrence wins.
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = WordVocab::from(Vec::new());
        for w in words {
            vocab.insert(w.as_ref());
        }
        vocab
    }

    /// Inserts the normalized form of `word` and returns its id.
    pub fn insert(&mut self, word: &str) -> usize {
        let key = lookup_key(word);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.words.len() + 1;
        self.index.insert(key.clone(), id);
        self.words.push(key);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl From<Vec<String>> for WordVocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        WordVocab { words, index }
    }
}

impl From<WordVocab> for Vec<String> {
    fn from(v: WordVocab) -> Self {
        v.words
    }
}

/// Id of `lowercase(digit_normalize(token))`, or [`UNKNOWN_WORD`].
pub fn word_id(token: &str, vocab: &WordVocab) -> usize {
    vocab.get(&lookup_key(token)).unwrap_or(UNKNOWN_WORD)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapsClass {
    AllCaps = 0,
    UpperInitial = 1,
    Lowercase = 2,
    MixedCaps = 3,
    NoInfo = 4,
}

pub const CAPS_CLASSES: usize = 5;

/// Capitalization class of the raw surface form.
pub fn caps_feature(token: &str) -> CapsClass {
    let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        return CapsClass::NoInfo;
    }
    if letters.iter().all(|c| c.is_uppercase()) {
        return CapsClass::AllCaps;
    }
    if letters.iter().all(|c| c.is_lowercase()) {
        return CapsClass::Lowercase;
    }
    let mut chars = token.chars();
    let first = chars.next().unwrap();
    if first.is_uppercase() && chars.filter(|c| c.is_alphabetic()).all(|c| c.is_lowercase()) {
        return CapsClass::UpperInitial;
    }
    CapsClass::MixedCaps
}

pub fn caps_one_hot(class: CapsClass) -> [f64; CAPS_CLASSES] {
    let mut v = [0.0; CAPS_CLASSES];
    v[class as usize] = 1.0;
    v
}

/// Concatenates `[word_emb | caps | char_cnn | lexicon blocks...]`,
/// skipping disabled parts.
pub fn assemble_word_vector(
    word_emb: &[f64],
    caps: Option<CapsClass>,
    char_cnn: Option<&[f64]>,
    lexicon: &[Vec<f64>],
) -> Vec<f64> {
    let mut v = word_emb.to_vec();
    if let Some(c) = caps {
        v.extend_from_slice(&caps_one_hot(c));
    }
    if let Some(cnn) = char_cnn {
        v.extend_from_slice(cnn);
    }
    for block in lexicon {
        v.extend_from_slice(block);
    }
    v
}

/// Pretrained word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub words: Vec<String>,
    pub dim: usize,
    /// `words.len() × dim`, row-major.
    pub vectors: Vec<f64>,
}

impl Embeddings {
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Reads `token v1 ... vD` lines; an optional `V D` header line is skipped.
pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line,
        message,
    };
    let mut emb = Embeddings {
        words: Vec::new(),
        dim: 0,
        vectors: Vec::new(),
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("bad float `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(parse_err(lineno, "token without vector".into()));
        }
        if emb.dim == 0 {
            emb.dim = values.len();
        } else if values.len() != emb.dim {
            return Err(parse_err(
                lineno,
                format!("expected {} values, found {}", emb.dim, values.len()),
            ));
        }
        emb.words.push(fields[0].to_string());
        emb.vectors.extend(values);
    }
    Ok(emb)
}
