use std::fmt;

use super::{CategoryLexicon, Encoding, Lexicon, MatchMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mark {
    B,
    I,
    O,
    E,
    S,
}

impl Mark {
    /// Position in the `B, I, O, E, S` one-hot layout.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mark::B => "B",
            Mark::I => "I",
            Mark::O => "O",
            Mark::E => "E",
            Mark::S => "S",
        };
        f.write_str(s)
    }
}

/// A matched n-gram before overlap resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub start: usize,
    pub len: usize,
    pub exact: bool,
    /// The match begins an entry (gets `B`/`S` on its first token).
    pub begins: bool,
    /// The match ends an entry (gets `E`/`S` on its last token).
    pub ends: bool,
}

impl Candidate {
    pub fn overlaps(&self, other: &Candidate) -> bool {
        self.start < other.start + other.len && other.start < self.start + self.len
    }

    fn write_marks(&self, row: &mut [Mark]) {
        let last = self.start + self.len - 1;
        for (t, m) in row.iter_mut().enumerate().take(last + 1).skip(self.start) {
            let b = t == self.start && self.begins;
            let e = t == last && self.ends;
            *m = match (b, e) {
                (true, true) => Mark::S,
                (true, false) => Mark::B,
                (false, true) => Mark::E,
                (false, false) => Mark::I,
            };
        }
    }
}

/// Per-category marks for one sentence, `marks[category][token]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchMarks {
    pub categories: Vec<String>,
    pub marks: Vec<Vec<Mark>>,
}

impl MatchMarks {
    pub fn row(&self, category: &str) -> Option<&[Mark]> {
        let i = self.categories.iter().position(|c| c == category)?;
        Some(&self.marks[i])
    }
}

fn candidates(cat: &CategoryLexicon, tokens: &[String], mode: MatchMode) -> Vec<Candidate> {
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        let longest = cat.max_len().min(tokens.len() - start);
        for n in 1..=longest {
            let Some(hits) = cat.hits(&tokens[start..start + n]) else {
                continue;
            };
            let cand = |exact, begins, ends| Candidate {
                start,
                len: n,
                exact,
                begins,
                ends,
            };
            match mode {
                MatchMode::Exact => {
                    if hits.exact {
                        out.push(cand(true, true, true));
                    }
                }
                MatchMode::Partial => {
                    if hits.exact {
                        out.push(cand(true, true, true));
                        continue;
                    }
                    let prefix = hits.min_prefix_of.is_some_and(|l| 2 * n >= l);
                    let suffix = hits.min_suffix_of.is_some_and(|l| 2 * n >= l);
                    if (prefix || suffix) && (n >= 2 || cat.allows_short_partials()) {
                        out.push(cand(false, prefix, suffix));
                    }
                }
                MatchMode::Collobert => {
                    if hits.exact {
                        out.push(cand(false, true, true));
                    } else if hits.min_prefix_of.is_some() {
                        out.push(cand(false, true, false));
                    }
                }
            }
        }
    }
    out
}

/// Greedy selection: exact before partial, then longer, then earlier.
pub(crate) fn resolve_overlaps(mut cands: Vec<Candidate>) -> Vec<Candidate> {
    cands.sort_by_key(|c| (!c.exact, std::cmp::Reverse(c.len), c.start));
    let mut accepted: Vec<Candidate> = Vec::new();
    for c in cands {
        if accepted.iter().all(|a| !a.overlaps(&c)) {
            accepted.push(c);
        }
    }
    accepted
}

/// Matches every n-gram of `tokens` against every category.
pub fn match_sentence(lex: &Lexicon, tokens: &[String], mode: MatchMode) -> MatchMarks {
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut marks = Vec::with_capacity(lex.categories().len());
    for cat in lex.categories() {
        let mut row = vec![Mark::O; tokens.len()];
        for c in resolve_overlaps(candidates(cat, &lowered, mode)) {
            c.write_marks(&mut row);
        }
        marks.push(row);
    }
    MatchMarks {
        categories: lex.category_names(),
        marks,
    }
}

/// Per-token feature vectors: all categories concatenated, each as a
/// `B, I, O, E, S` one-hot or a single yes/no value.
pub fn encode_lexicon_features(marks: &MatchMarks, encoding: Encoding) -> Vec<Vec<f64>> {
    let len = marks.marks.first().map_or(0, Vec::len);
    let width = encoding.width();
    (0..len)
        .map(|t| {
            let mut v = vec![0.0; width * marks.marks.len()];
            for (c, row) in marks.marks.iter().enumerate() {
                match encoding {
                    Encoding::Bioes => v[c * width + row[t].index()] = 1.0,
                    Encoding::Yn => v[c] = if row[t] == Mark::O { 0.0 } else { 1.0 },
                }
            }
            v
        })
        .collect()
}
