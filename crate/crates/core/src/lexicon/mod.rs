//! Category lexicons (gazetteers) and n-gram matching against them.
//!
//! Three matching modes are supported:
//!
//! * `partial`: an n-gram matches when it equals an entry, or is a prefix
//!   or suffix of an entry covering at least half of it (`2n >= len`).
//!   Partial matches shorter than two tokens are dropped except for person
//!   categories. Overlaps inside a category are resolved greedily by
//!   exact-before-partial, then longer, then earlier.
//! * `exact`: whole-entry matches only, longer then earlier.
//! * `collobert`: any prefix of an entry (of any length, whole entries
//!   included) matches, with no distinction between exact and partial.
//!
//! Accepted matches are written as `B`/`I`/`E`/`S` marks: the first token
//! gets `B` only when the match starts an entry and the last token gets `E`
//! only when it ends one.

mod matcher;
mod normalize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matcher::{encode_lexicon_features, match_sentence, Candidate, Mark, MatchMarks};
pub use normalize::{normalize_entry, ptb_tokenize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Partial,
    Collobert,
}

impl std::str::FromStr for MatchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "partial" => Ok(MatchMode::Partial),
            "collobert" => Ok(MatchMode::Collobert),
            other => Err(format!(
                "unknown match mode `{other}` (expected exact, partial or collobert)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Bioes,
    Yn,
}

impl Encoding {
    /// Feature width per category.
    pub fn width(self) -> usize {
        match self {
            Encoding::Bioes => 5,
            Encoding::Yn => 1,
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bioes" => Ok(Encoding::Bioes),
            "yn" => Ok(Encoding::Yn),
            other => Err(format!("unknown encoding `{other}` (expected bioes or yn)")),
        }
    }
}

/// How one n-gram relates to the entries of a category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct NgramHits {
    pub exact: bool,
    /// Shortest entry having this n-gram as a proper prefix.
    pub min_prefix_of: Option<usize>,
    /// Shortest entry having this n-gram as a proper suffix.
    pub min_suffix_of: Option<usize>,
}

/// Entries of one category plus the n-gram index.
#[derive(Debug, Clone, Default)]
pub struct CategoryLexicon {
    name: String,
    entries: BTreeSet<Vec<String>>,
    max_len: usize,
    short_partials: bool,
    index: HashMap<Vec<String>, NgramHits>,
}

impl CategoryLexicon {
    pub fn new(name: &str) -> Self {
        CategoryLexicon {
            name: name.to_string(),
            short_partials: is_person_category(name),
            ..Default::default()
        }
    }

    /// Adds a normalized entry. Returns false for duplicates and empty entries.
    pub fn insert(&mut self, tokens: Vec<String>) -> bool {
        if tokens.is_empty() || self.entries.contains(&tokens) {
            return false;
        }
        let len = tokens.len();
        self.max_len = self.max_len.max(len);
        self.index.entry(tokens.clone()).or_default().exact = true;
        for n in 1..len {
            let prefix = self.index.entry(tokens[..n].to_vec()).or_default();
            prefix.min_prefix_of = Some(prefix.min_prefix_of.map_or(len, |m| m.min(len)));
            let suffix = self.index.entry(tokens[len - n..].to_vec()).or_default();
            suffix.min_suffix_of = Some(suffix.min_suffix_of.map_or(len, |m| m.min(len)));
        }
        self.entries.insert(tokens);
        true
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> impl Iterator<Item = &Vec<String>> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest entry, in tokens.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Whether single-token partial matches are kept.
    pub fn allows_short_partials(&self) -> bool {
        self.short_partials
    }

    pub fn set_allows_short_partials(&mut self, allow: bool) {
        self.short_partials = allow;
    }

    pub(crate) fn hits(&self, ngram: &[String]) -> Option<&NgramHits> {
        self.index.get(ngram)
    }
}

/// Person categories keep single-token partial matches.
pub fn is_person_category(name: &str) -> bool {
    matches!(name.to_ascii_uppercase().as_str(), "PER" | "PERS" | "PERSON")
}

/// Per-category lexicons in a fixed (sorted) category order.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    categories: Vec<CategoryLexicon>,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(categories: impl IntoIterator<Item = S>) -> Self {
        let names: BTreeSet<String> = categories.into_iter().map(|s| s.as_ref().to_string()).collect();
        Lexicon {
            categories: names.iter().map(|n| CategoryLexicon::new(n)).collect(),
        }
    }

    pub fn categories(&self) -> &[CategoryLexicon] {
        &self.categories
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn category_mut(&mut self, name: &str) -> Option<&mut CategoryLexicon> {
        self.categories.iter_mut().find(|c| c.name == name)
    }

    /// Normalizes `raw` and adds it; returns false when skipped or duplicate.
    pub fn add_raw(&mut self, category: &str, raw: &str) -> Result<bool> {
        let cat = self
            .category_mut(category)
            .ok_or_else(|| Error::Config(format!("unknown lexicon category `{category}`")))?;
        Ok(cat.insert(normalize_entry(raw)))
    }

    pub fn total_entries(&self) -> usize {
        self.categories.iter().map(CategoryLexicon::len).sum()
    }
}

/// Maps category labels found in lexicon files to canonical names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    labels: BTreeMap<String, String>,
}

impl CategoryMap {
    /// Labels are matched case-insensitively.
    pub fn new<A: AsRef<str>, B: AsRef<str>>(pairs: impl IntoIterator<Item = (A, B)>) -> Self {
        CategoryMap {
            labels: pairs
                .into_iter()
                .map(|(a, b)| (a.as_ref().to_ascii_uppercase(), b.as_ref().to_string()))
                .collect(),
        }
    }

    /// Each listed name maps to itself.
    pub fn identity<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            names
                .into_iter()
                .map(|n| (n.as_ref().to_string(), n.as_ref().to_string())),
        )
    }

    /// The four CoNLL-2003 categories with their usual spellings.
    pub fn conll() -> Self {
        Self::new([
            ("LOC", "LOC"),
            ("LOCATION", "LOC"),
            ("MISC", "MISC"),
            ("MISCELLANEOUS", "MISC"),
            ("ORG", "ORG"),
            ("ORGANIZATION", "ORG"),
            ("ORGANISATION", "ORG"),
            ("PER", "PER"),
            ("PERS", "PER"),
            ("PERSON", "PER"),
        ])
    }

    pub fn resolve(&self, label: &str) -> Option<&str> {
        self.labels.get(&label.to_ascii_uppercase()).map(String::as_str)
    }

    pub fn canonical(&self) -> BTreeSet<String> {
        self.labels.values().cloned().collect()
    }
}

impl Default for CategoryMap {
    fn default() -> Self {
        Self::conll()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub stored: usize,
    pub duplicates: usize,
    pub skipped_empty: usize,
}

/// Reads `CATEGORY<TAB>entry` lines.
pub fn load_lexicon(path: &Path, category_map: &CategoryMap) -> Result<(Lexicon, LoadStats)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_lexicon(BufReader::new(file), &path.display().to_string(), category_map)
}

pub fn read_lexicon(reader: impl BufRead, source: &str, category_map: &CategoryMap) -> Result<(Lexicon, LoadStats)> {
    let mut lex = Lexicon::new(category_map.canonical());
    let mut stats = LoadStats::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            message,
        };
        let (label, raw) = line
            .split_once('\t')
            .ok_or_else(|| err(format!("expected CATEGORY<TAB>entry, got `{line}`")))?;
        let cat = category_map
            .resolve(label.trim())
            .ok_or_else(|| err(format!("unknown category `{}` in line `{line}`", label.trim())))?
            .to_string();
        let tokens = normalize_entry(raw);
        if tokens.is_empty() {
            stats.skipped_empty += 1;
            continue;
        }
        if lex.category_mut(&cat).expect("canonical category").insert(tokens) {
            stats.stored += 1;
        } else {
            stats.duplicates += 1;
        }
    }
    if stats.skipped_empty > 0 {
        log::warn!(
            "{source}: skipped {} entries that normalized to nothing",
            stats.skipped_empty
        );
    }
    Ok((lex, stats))
}
