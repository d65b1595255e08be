//! BIOES tag handling, scheme conversion, span extraction and span-level
//! precision/recall/F1.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One parsed tag string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SchemeTag {
    O,
    B(String),
    I(String),
    E(String),
    S(String),
}

impl SchemeTag {
    pub fn parse(s: &str) -> Result<SchemeTag, String> {
        if s == "O" {
            return Ok(SchemeTag::O);
        }
        let (prefix, cat) = s
            .split_once('-')
            .ok_or_else(|| format!("malformed tag `{s}`: expected PREFIX-CATEGORY or O"))?;
        if cat.is_empty() {
            return Err(format!("malformed tag `{s}`: empty category"));
        }
        let cat = cat.to_string();
        match prefix {
            "B" => Ok(SchemeTag::B(cat)),
            "I" => Ok(SchemeTag::I(cat)),
            "E" => Ok(SchemeTag::E(cat)),
            "S" => Ok(SchemeTag::S(cat)),
            _ => Err(format!("malformed tag `{s}`: unknown prefix `{prefix}`")),
        }
    }

    pub fn category(&self) -> Option<&str> {
        match self {
            SchemeTag::O => None,
            SchemeTag::B(c) | SchemeTag::I(c) | SchemeTag::E(c) | SchemeTag::S(c) => Some(c),
        }
    }
}

impl fmt::Display for SchemeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeTag::O => f.write_str("O"),
            SchemeTag::B(c) => write!(f, "B-{c}"),
            SchemeTag::I(c) => write!(f, "I-{c}"),
            SchemeTag::E(c) => write!(f, "E-{c}"),
            SchemeTag::S(c) => write!(f, "S-{c}"),
        }
    }
}

/// Whether `next` may follow `prev` (`None` = sentence start) in BIOES.
pub fn follows(prev: Option<&SchemeTag>, next: &SchemeTag) -> bool {
    use SchemeTag::*;
    match (prev, next) {
        (None | Some(O | E(_) | S(_)), O | B(_) | S(_)) => true,
        (None | Some(O | E(_) | S(_)), I(_) | E(_)) => false,
        (Some(B(p) | I(p)), I(n) | E(n)) => p == n,
        (Some(B(_) | I(_)), O | B(_) | S(_)) => false,
    }
}

/// Whether `tag` may end a sentence.
pub fn can_end(tag: &SchemeTag) -> bool {
    matches!(tag, SchemeTag::O | SchemeTag::E(_) | SchemeTag::S(_))
}

/// Structural BIOES validity of a whole sequence.
pub fn is_valid_bioes(tags: &[SchemeTag]) -> bool {
    let mut prev = None;
    for t in tags {
        if !follows(prev, t) {
            return false;
        }
        prev = Some(t);
    }
    prev.is_none_or(can_end)
}

/// Entity span over inclusive token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub category: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, category: &str) -> Self {
        EntitySpan {
            start,
            end,
            category: category.to_string(),
        }
    }
}

/// The BIOES expansion of a set of entity categories.
///
/// Id 0 is `O`; category `c` (in sorted order) owns ids `1 + 4c ..= 4 + 4c`
/// for `B, I, E, S`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tagset {
    categories: Vec<String>,
}

impl Tagset {
    pub fn new<S: AsRef<str>>(categories: impl IntoIterator<Item = S>) -> Self {
        let mut categories: Vec<String> = categories.into_iter().map(|c| c.as_ref().to_string()).collect();
        categories.sort();
        categories.dedup();
        Tagset { categories }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        4 * self.categories.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tag(&self, id: usize) -> SchemeTag {
        if id == 0 {
            return SchemeTag::O;
        }
        let cat = self.categories[(id - 1) / 4].clone();
        match (id - 1) % 4 {
            0 => SchemeTag::B(cat),
            1 => SchemeTag::I(cat),
            2 => SchemeTag::E(cat),
            _ => SchemeTag::S(cat),
        }
    }

    pub fn id(&self, tag: &SchemeTag) -> Option<usize> {
        let (offset, cat) = match tag {
            SchemeTag::O => return Some(0),
            SchemeTag::B(c) => (0, c),
            SchemeTag::I(c) => (1, c),
            SchemeTag::E(c) => (2, c),
            SchemeTag::S(c) => (3, c),
        };
        let c = self.categories.binary_search(cat).ok()?;
        Some(1 + 4 * c + offset)
    }

    pub fn name(&self, id: usize) -> String {
        self.tag(id).to_string()
    }

    pub fn tags(&self, ids: &[usize]) -> Vec<SchemeTag> {
        ids.iter().map(|&i| self.tag(i)).collect()
    }

    /// `allowed[prev][next]` for BIOES structure, `prev` in `0..K`.
    pub fn transition_allowed(&self) -> Vec<Vec<bool>> {
        let k = self.len();
        (0..k)
            .map(|p| {
                let pt = self.tag(p);
                (0..k).map(|n| follows(Some(&pt), &self.tag(n))).collect()
            })
            .collect()
    }
}

/// Encodes non-overlapping spans as BIOES tag ids.
pub fn spans_to_bioes(spans: &[EntitySpan], len: usize, tagset: &Tagset) -> Result<Vec<usize>> {
    let tags = spans_to_tags(spans, len)?;
    tags.iter()
        .map(|t| {
            tagset
                .id(t)
                .ok_or_else(|| Error::Config(format!("tag `{t}` not in tagset")))
        })
        .collect()
}

/// Encodes non-overlapping spans as BIOES tags.
pub fn spans_to_tags(spans: &[EntitySpan], len: usize) -> Result<Vec<SchemeTag>> {
    let mut tags = vec![SchemeTag::O; len];
    let mut covered = vec![false; len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::Validation(format!(
                "span {}..={} outside sentence of length {len}",
                s.start, s.end
            )));
        }
        if covered[s.start..=s.end].iter().any(|&c| c) {
            return Err(Error::Validation(format!(
                "span {}..={} {} overlaps another span",
                s.start, s.end, s.category
            )));
        }
        covered[s.start..=s.end].iter_mut().for_each(|c| *c = true);
        let c = &s.category;
        if s.start == s.end {
            tags[s.start] = SchemeTag::S(c.clone());
        } else {
            tags[s.start] = SchemeTag::B(c.clone());
            for t in &mut tags[s.start + 1..s.end] {
                *t = SchemeTag::I(c.clone());
            }
            tags[s.end] = SchemeTag::E(c.clone());
        }
    }
    Ok(tags)
}

/// Decodes BIOES tag ids into spans, repairing invalid sequences.
pub fn bioes_to_spans(tags: &[usize], tagset: &Tagset) -> Vec<EntitySpan> {
    tags_to_spans(&tagset.tags(tags))
}

/// Total BIOES decoder.
///
/// Scans left to right. `I`/`E` without an open entity of the same category
/// opens one. An open entity is closed at the previous token when an `O`,
/// `B`, `S`, a tag of another category, or the sentence end is reached.
pub fn tags_to_spans(tags: &[SchemeTag]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (t, tag) in tags.iter().enumerate() {
        let continues = match (open, tag) {
            (Some((_, c)), SchemeTag::I(n) | SchemeTag::E(n)) => c == n,
            _ => false,
        };
        if !continues {
            if let Some((start, c)) = open.take() {
                spans.push(EntitySpan::new(start, t - 1, c));
            }
        }
        match tag {
            SchemeTag::O => {}
            SchemeTag::S(c) => spans.push(EntitySpan::new(t, t, c)),
            SchemeTag::B(c) | SchemeTag::I(c) => {
                if !continues {
                    open = Some((t, c));
                }
            }
            SchemeTag::E(c) => {
                let start = if continues { open.take().unwrap().0 } else { t };
                spans.push(EntitySpan::new(start, t, c));
            }
        }
    }
    if let Some((start, c)) = open {
        spans.push(EntitySpan::new(start, tags.len() - 1, c));
    }
    spans
}

/// Input tag scheme of a column file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// IOB1 when only `B`/`I`/`O` appear, BIOES when any `E`/`S` does.
    #[default]
    Auto,
    Iob1,
    Bio2,
    Bioes,
}

impl std::str::FromStr for Dialect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Dialect::Auto),
            "iob1" | "iob" => Ok(Dialect::Iob1),
            "bio2" | "iob2" | "bio" => Ok(Dialect::Bio2),
            "bioes" | "iobes" => Ok(Dialect::Bioes),
            other => Err(format!("unknown tag dialect `{other}`")),
        }
    }
}

/// A tag-string problem at a token index within a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagError {
    pub index: usize,
    pub message: String,
}

/// Parses tag strings and extracts spans under the given dialect.
pub fn extract_spans<S: AsRef<str>>(tags: &[S], dialect: Dialect) -> Result<Vec<EntitySpan>, TagError> {
    let parsed = tags
        .iter()
        .enumerate()
        .map(|(i, s)| SchemeTag::parse(s.as_ref()).map_err(|message| TagError { index: i, message }))
        .collect::<Result<Vec<_>, _>>()?;
    let dialect = match dialect {
        Dialect::Auto if parsed.iter().any(|t| matches!(t, SchemeTag::E(_) | SchemeTag::S(_))) => Dialect::Bioes,
        Dialect::Auto => Dialect::Iob1,
        d => d,
    };
    if dialect == Dialect::Bioes {
        return Ok(tags_to_spans(&parsed));
    }
    if let Some(i) = parsed
        .iter()
        .position(|t| matches!(t, SchemeTag::E(_) | SchemeTag::S(_)))
    {
        return Err(TagError {
            index: i,
            message: format!("tag `{}` is not valid in IOB input", tags[i].as_ref()),
        });
    }
    Ok(iob_spans(&parsed))
}

/// IOB1 and BIO2 share one reading: `B-X` always starts an entity, `I-X`
/// continues an open `X` entity and otherwise starts one.
fn iob_spans(tags: &[SchemeTag]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (t, tag) in tags.iter().enumerate() {
        let continues = matches!((open, tag), (Some((_, c)), SchemeTag::I(n)) if c == n);
        if continues {
            continue;
        }
        if let Some((start, c)) = open.take() {
            spans.push(EntitySpan::new(start, t - 1, c));
        }
        if let SchemeTag::B(c) | SchemeTag::I(c) = tag {
            open = Some((t, c));
        }
    }
    if let Some((start, c)) = open {
        spans.push(EntitySpan::new(start, tags.len() - 1, c));
    }
    spans
}

/// Rewrites an IOB1 / BIO2 (or already BIOES) tag column as BIOES.
pub fn convert_iob1_to_bioes<S: AsRef<str>>(tags: &[S], dialect: Dialect) -> Result<Vec<String>, TagError> {
    let spans = extract_spans(tags, dialect)?;
    let out = spans_to_tags(&spans, tags.len()).expect("extracted spans never overlap");
    Ok(out.iter().map(ToString::to_string).collect())
}

/// Span counts for one category or the whole corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        percent(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        percent(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Span-exact precision/recall/F1, per category and micro-averaged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Counts,
    pub categories: BTreeMap<String, Counts>,
    pub tokens: Option<usize>,
}

impl EvalReport {
    /// Overall F1 rounded to two decimals, the precision every report prints.
    pub fn f1_2dp(&self) -> f64 {
        (self.overall.f1() * 100.0).round() / 100.0
    }

    /// Text table in the layout of the standard CoNLL evaluation script,
    /// followed by a `key=value` block.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let o = &self.overall;
        if let Some(tokens) = self.tokens {
            let _ = write!(s, "processed {tokens} tokens with ");
        } else {
            s.push_str("processed ");
        }
        let _ = writeln!(
            s,
            "{} phrases; found: {} phrases; correct: {}.",
            o.gold, o.predicted, o.correct
        );
        let _ = writeln!(
            s,
            "{:>17}: precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}",
            "overall",
            o.precision(),
            o.recall(),
            o.f1()
        );
        for (cat, c) in &self.categories {
            let _ = writeln!(
                s,
                "{:>17}: precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}  {}",
                cat,
                c.precision(),
                c.recall(),
                c.f1(),
                c.predicted
            );
        }
        s.push('\n');
        let _ = writeln!(s, "overall_p={:.2}", o.precision());
        let _ = writeln!(s, "overall_r={:.2}", o.recall());
        let _ = writeln!(s, "overall_f1={:.2}", o.f1());
        for (cat, c) in &self.categories {
            let _ = writeln!(
                s,
                "category={cat} p={:.2} r={:.2} f1={:.2} gold={} predicted={} correct={}",
                c.precision(),
                c.recall(),
                c.f1(),
                c.gold,
                c.predicted,
                c.correct
            );
        }
        s
    }

    /// Reads `overall_f1` back out of [`EvalReport::render`] output.
    pub fn parse_overall_f1(text: &str) -> Option<f64> {
        text.lines()
            .find_map(|l| l.strip_prefix("overall_f1="))
            .and_then(|v| v.trim().parse().ok())
    }
}

/// Scores predicted spans against gold spans, sentence by sentence.
pub fn evaluate_f1(gold: &[Vec<EntitySpan>], predicted: &[Vec<EntitySpan>]) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences vs {} predicted sentences",
            gold.len(),
            predicted.len()
        )));
    }
    let mut report = EvalReport::default();
    for (g, p) in gold.iter().zip(predicted) {
        let mut pending: HashMap<&EntitySpan, usize> = HashMap::new();
        for s in g {
            *pending.entry(s).or_default() += 1;
            report.categories.entry(s.category.clone()).or_default().gold += 1;
        }
        for s in p {
            let c = report.categories.entry(s.category.clone()).or_default();
            c.predicted += 1;
            if let Some(n) = pending.get_mut(s).filter(|n| **n > 0) {
                *n -= 1;
                c.correct += 1;
            }
        }
    }
    for c in report.categories.values() {
        report.overall.gold += c.gold;
        report.overall.predicted += c.predicted;
        report.overall.correct += c.correct;
    }
    Ok(report)
}
