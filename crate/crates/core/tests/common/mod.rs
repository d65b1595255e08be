//! Reference implementations and fixtures shared by the integration tests.
//! Everything here is written independently of the library code it checks.
#![allow(dead_code)]

use nertag::data::{Corpus, Sentence};
use nertag::exec::Execution;
use nertag::lexicon::{Lexicon, Mark, MatchMode};
use nertag::model::{CharCnnConfig, FeaturizedSentence, Model, ModelConfig};
use nertag::nn::{Mode, RngState, Tensor};
use nertag::tagging::{Dialect, EntitySpan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// Linear-chain scoring by enumeration

pub fn oracle_score(f: &Tensor, a: &Tensor, tags: &[usize]) -> f64 {
    let mut s = a.data()[tags[0]] + f.row(0)[tags[0]];
    for t in 1..tags.len() {
        s += a.row(tags[t - 1] + 1)[tags[t]] + f.row(t)[tags[t]];
    }
    s
}

/// Every sequence of length `t` over `k` tags, in lexicographic order.
pub fn all_sequences(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..k).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

pub struct Enumeration {
    pub log_z: f64,
    pub best: f64,
    pub scores: Vec<(Vec<usize>, f64)>,
}

pub fn enumerate(f: &Tensor, a: &Tensor) -> Enumeration {
    let scores: Vec<(Vec<usize>, f64)> = all_sequences(f.rows(), f.row_len())
        .into_iter()
        .map(|s| {
            let v = oracle_score(f, a, &s);
            (s, v)
        })
        .collect();
    let best = scores.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let log_z = best + scores.iter().map(|(_, v)| (v - best).exp()).sum::<f64>().ln();
    Enumeration { log_z, best, scores }
}

// ---------------------------------------------------------------------------
// Lexicon matching by brute force

/// `entries[c]` holds the token lists of category `c`, already lowercase.
pub fn oracle_marks(
    entries: &[Vec<Vec<String>>],
    short_partials: &[bool],
    tokens: &[String],
    mode: MatchMode,
) -> Vec<Vec<Mark>> {
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let n_tok = lowered.len();
    let mut rows = Vec::new();
    for (c, cat) in entries.iter().enumerate() {
        // (start, len, exact, begins, ends)
        let mut cands: Vec<(usize, usize, bool, bool, bool)> = Vec::new();
        for start in 0..n_tok {
            for len in 1..=n_tok - start {
                let gram = &lowered[start..start + len];
                let exact = cat.iter().any(|e| e.as_slice() == gram);
                let prefix_of: Vec<usize> = cat
                    .iter()
                    .filter(|e| e.len() > len && &e[..len] == gram)
                    .map(Vec::len)
                    .collect();
                let suffix_of: Vec<usize> = cat
                    .iter()
                    .filter(|e| e.len() > len && &e[e.len() - len..] == gram)
                    .map(Vec::len)
                    .collect();
                match mode {
                    MatchMode::Exact => {
                        if exact {
                            cands.push((start, len, true, true, true));
                        }
                    }
                    MatchMode::Partial => {
                        if exact {
                            cands.push((start, len, true, true, true));
                        } else {
                            let half = |l: &usize| len * 2 >= *l;
                            let p = prefix_of.iter().any(half);
                            let s = suffix_of.iter().any(half);
                            if (p || s) && (len >= 2 || short_partials[c]) {
                                cands.push((start, len, false, p, s));
                            }
                        }
                    }
                    MatchMode::Collobert => {
                        if exact {
                            cands.push((start, len, false, true, true));
                        } else if !prefix_of.is_empty() {
                            cands.push((start, len, false, true, false));
                        }
                    }
                }
            }
        }
        // Repeatedly take the best remaining candidate that fits.
        let better = |x: &(usize, usize, bool, bool, bool), y: &(usize, usize, bool, bool, bool)| {
            (x.2 && !y.2) || (x.2 == y.2 && (x.1 > y.1 || (x.1 == y.1 && x.0 < y.0)))
        };
        let mut row = vec![Mark::O; n_tok];
        let mut taken = vec![false; n_tok];
        loop {
            let mut best: Option<(usize, usize, bool, bool, bool)> = None;
            for cand in &cands {
                if taken[cand.0..cand.0 + cand.1].iter().any(|&b| b) {
                    continue;
                }
                if best.is_none_or(|b| better(cand, &b)) {
                    best = Some(*cand);
                }
            }
            let Some((start, len, _, begins, ends)) = best else {
                break;
            };
            for t in start..start + len {
                taken[t] = true;
                let first = t == start && begins;
                let last = t == start + len - 1 && ends;
                row[t] = match (first, last) {
                    (true, true) => Mark::S,
                    (true, false) => Mark::B,
                    (false, true) => Mark::E,
                    (false, false) => Mark::I,
                };
            }
        }
        rows.push(row);
    }
    rows
}

pub const LEX_WORDS: [&str; 6] = ["ab", "cd", "ef", "gh", "ij", "kl"];

/// Random lexicon over a small vocabulary, so that partial matches are
/// common. Categories are `LOC` and `PER` (the latter allows one-token
/// partial matches).
pub fn random_lexicon(r: &mut ChaCha8Rng) -> (Lexicon, Vec<Vec<Vec<String>>>, Vec<bool>) {
    let cats = ["LOC", "PER"];
    let mut lex = Lexicon::new(cats);
    let mut entries = vec![Vec::new(), Vec::new()];
    let n_entries = r.random_range(0..=20);
    for _ in 0..n_entries {
        let c = r.random_range(0..2);
        let len = r.random_range(1..=4);
        let words: Vec<String> = (0..len)
            .map(|_| LEX_WORDS[r.random_range(0..LEX_WORDS.len())].to_string())
            .collect();
        lex.add_raw(cats[c], &words.join(" ")).unwrap();
        if !entries[c].contains(&words) {
            entries[c].push(words);
        }
    }
    (lex, entries, vec![false, true])
}

pub fn random_tokens(r: &mut ChaCha8Rng) -> Vec<String> {
    let len = r.random_range(1..=8);
    (0..len)
        .map(|_| {
            let w = LEX_WORDS[r.random_range(0..LEX_WORDS.len())];
            if r.random_bool(0.2) {
                w.to_uppercase()
            } else {
                w.to_string()
            }
        })
        .collect()
}

pub fn marks_row(row: &[Mark]) -> String {
    row.iter()
        .map(|m| if *m == Mark::O { "-".to_string() } else { m.to_string() })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A sentence with marks in every category, and a lexicon that produces
/// them.
pub fn example_sentence() -> (Vec<String>, Lexicon) {
    let tokens: Vec<String> = "Hayao Tada , commander of the Japanese North China Area Army"
        .split(' ')
        .map(String::from)
        .collect();
    let mut lex = Lexicon::new(["LOC", "MISC", "ORG", "PER"]);
    for (cat, entry) in [
        ("LOC", "The Japanese Alps"),
        ("LOC", "China"),
        ("MISC", "Commander"),
        ("MISC", "The Japanese Language"),
        ("MISC", "Of Mice and Men"),
        ("MISC", "North"),
        ("MISC", "China"),
        ("MISC", "Area"),
        ("MISC", "Army"),
        ("ORG", "North China Area Army"),
        ("ORG", "The Japanese Red Army"),
        ("PER", "Hayao Tada"),
        ("PER", "China"),
    ] {
        lex.add_raw(cat, entry).unwrap();
    }
    (tokens, lex)
}

// ---------------------------------------------------------------------------
// Tag schemes

/// Repair decoding written directly from its rule: scan left to right, an
/// I/E without a compatible open entity opens one, and an open entity is
/// closed at the previous token by O, B, S, another category, or the end.
pub fn repair_oracle(tags: &[String]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (t, tag) in tags.iter().enumerate() {
        let (prefix, cat) = match tag.split_once('-') {
            Some((p, c)) => (p, c.to_string()),
            None => ("O", String::new()),
        };
        let same_open = open.as_ref().is_some_and(|(_, c)| *c == cat);
        let close = |open: &mut Option<(usize, String)>, out: &mut Vec<(usize, usize, String)>| {
            if let Some((s, c)) = open.take() {
                out.push((s, t - 1, c));
            }
        };
        match prefix {
            "O" => close(&mut open, &mut out),
            "B" => {
                close(&mut open, &mut out);
                open = Some((t, cat));
            }
            "I" => {
                if !same_open {
                    close(&mut open, &mut out);
                    open = Some((t, cat));
                }
            }
            "E" => {
                if same_open {
                    let (s, c) = open.take().unwrap();
                    out.push((s, t, c));
                } else {
                    close(&mut open, &mut out);
                    out.push((t, t, cat));
                }
            }
            "S" => {
                close(&mut open, &mut out);
                out.push((t, t, cat));
            }
            other => panic!("unexpected prefix {other}"),
        }
    }
    if let Some((s, c)) = open {
        out.push((s, tags.len() - 1, c));
    }
    out
}

/// Chunk boundaries as the standard CoNLL evaluation script detects them
/// for IOB input.
pub fn conlleval_chunks(tags: &[String]) -> Vec<(usize, usize, String)> {
    let split = |t: &str| -> (String, String) {
        match t.split_once('-') {
            Some((p, c)) => (p.to_string(), c.to_string()),
            None => ("O".into(), String::new()),
        }
    };
    let end_of_chunk = |pt: &str, t: &str, pty: &str, ty: &str| {
        (pt == "B" && (t == "B" || t == "O")) || (pt == "I" && (t == "B" || t == "O")) || (pt != "O" && pty != ty)
    };
    let start_of_chunk =
        |pt: &str, t: &str, pty: &str, ty: &str| (t == "B") || (pt == "O" && t == "I") || (t != "O" && pty != ty);
    let mut out = Vec::new();
    let (mut pt, mut pty) = ("O".to_string(), String::new());
    let mut start = 0;
    for (i, tag) in tags.iter().enumerate() {
        let (t, ty) = split(tag);
        if end_of_chunk(&pt, &t, &pty, &ty) {
            out.push((start, i - 1, pty.clone()));
        }
        if start_of_chunk(&pt, &t, &pty, &ty) {
            start = i;
        }
        pt = t;
        pty = ty;
    }
    if pt != "O" {
        out.push((start, tags.len() - 1, pty));
    }
    out
}

pub fn span_triples(spans: &[EntitySpan]) -> Vec<(usize, usize, String)> {
    spans.iter().map(|s| (s.start, s.end, s.category.clone())).collect()
}

// ---------------------------------------------------------------------------
// Synthetic corpora

const FILLERS: [&str; 12] = [
    "the",
    "report",
    "said",
    "visited",
    "met",
    "with",
    "from",
    "and",
    "today",
    "yesterday",
    "officials",
    "later",
];

/// Sentences built from filler words and entities with a fixed lexical
/// shape: `locN` is a location, `perN` (optionally followed by `perM`) a
/// person and `orgN corp` an organization. `in` often precedes locations
/// and `mr` persons. Entity numbers are drawn from `1..=max_id`.
pub fn synthetic_sentences(n: usize, seed: u64, max_id: usize) -> Vec<(Vec<String>, Vec<EntitySpan>)> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = r.random_range(3..=9);
        let mut tokens: Vec<String> = Vec::new();
        let mut spans = Vec::new();
        while tokens.len() < target {
            if r.random_bool(0.35) {
                let id = r.random_range(1..=max_id);
                match r.random_range(0..3) {
                    0 => {
                        if r.random_bool(0.5) {
                            tokens.push("in".into());
                        }
                        spans.push(EntitySpan::new(tokens.len(), tokens.len(), "LOC"));
                        tokens.push(format!("loc{id}"));
                    }
                    1 => {
                        if r.random_bool(0.5) {
                            tokens.push("mr".into());
                        }
                        let start = tokens.len();
                        tokens.push(format!("per{id}"));
                        if r.random_bool(0.4) {
                            tokens.push(format!("per{}", r.random_range(1..=max_id)));
                        }
                        spans.push(EntitySpan::new(start, tokens.len() - 1, "PER"));
                    }
                    _ => {
                        let start = tokens.len();
                        tokens.push(format!("org{id}"));
                        tokens.push("corp".into());
                        spans.push(EntitySpan::new(start, start + 1, "ORG"));
                    }
                }
            }
            tokens.push(FILLERS[r.random_range(0..FILLERS.len())].to_string());
        }
        out.push((tokens, spans));
    }
    out
}

/// Writes spans as a tag column in the given scheme.
pub fn encode_tags(spans: &[EntitySpan], len: usize, dialect: Dialect) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    let mut prev_end: Option<(usize, &str)> = None;
    for s in spans {
        for t in s.start..=s.end {
            let prefix = match dialect {
                Dialect::Bioes => {
                    if s.start == s.end {
                        "S"
                    } else if t == s.start {
                        "B"
                    } else if t == s.end {
                        "E"
                    } else {
                        "I"
                    }
                }
                Dialect::Bio2 => {
                    if t == s.start {
                        "B"
                    } else {
                        "I"
                    }
                }
                Dialect::Iob1 | Dialect::Auto => {
                    let touches = prev_end.is_some_and(|(e, c)| e + 1 == s.start && c == s.category);
                    if t == s.start && touches {
                        "B"
                    } else {
                        "I"
                    }
                }
            };
            tags[t] = format!("{prefix}-{}", s.category);
        }
        prev_end = Some((s.end, &s.category));
    }
    tags
}

pub fn to_corpus(sentences: &[(Vec<String>, Vec<EntitySpan>)], dialect: Dialect, source: &str) -> Corpus {
    Corpus {
        sentences: sentences
            .iter()
            .map(|(toks, spans)| {
                let tags = encode_tags(spans, toks.len(), dialect);
                Sentence::new(toks, Some(&tags))
            })
            .collect(),
        doc_starts: vec![0],
        source: source.to_string(),
        dialect,
        labeled: true,
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        caps: true,
        char_cnn: Some(CharCnnConfig {
            char_dim: 4,
            width: 3,
            filters: 3,
            use_char_type: true,
        }),
        lexicons: Vec::new(),
        lstm_size: 5,
        lstm_layers: 1,
        dropout: 0.0,
    }
}

pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub entries: usize,
}

/// Compares the analytic gradient of the mean batch loss with central
/// differences for every scalar parameter. Dropout masks are held fixed by
/// reseeding the generator for every evaluation.
pub fn gradient_check(model: &mut Model, batch: &[&FeaturizedSentence], mode: Mode, seed: u64, h: f64) -> GradCheck {
    let loss = |m: &mut Model| {
        let l = m
            .batch_loss(batch, mode, &mut RngState::new(seed), Execution::Sequential)
            .unwrap();
        m.params.zero_grads();
        l
    };
    model.params.zero_grads();
    model
        .batch_loss(batch, mode, &mut RngState::new(seed), Execution::Sequential)
        .unwrap();
    let analytic: Vec<(String, Vec<f64>)> = model
        .params
        .iter()
        .map(|(n, p)| (n.to_string(), p.grad.data().to_vec()))
        .collect();
    model.params.zero_grads();

    let mut out = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        entries: 0,
    };
    for (name, grad) in analytic {
        let id = model.params.require(&name).unwrap();
        for (k, &a) in grad.iter().enumerate() {
            let orig = model.params.value(id).data()[k];
            model.params.value_mut(id).data_mut()[k] = orig + h;
            let up = loss(model);
            model.params.value_mut(id).data_mut()[k] = orig - h;
            let down = loss(model);
            model.params.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            out.entries += 1;
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{name}[{k}]: analytic {a:.3e}, numeric {numeric:.3e}");
            }
        }
    }
    out
}

/// Single-token entities only: `locN` is always LOC, `perN` PER and
/// `orgN` ORG, surrounded by filler words.
pub fn single_token_sentences(n: usize, seed: u64, max_id: usize) -> Vec<(Vec<String>, Vec<EntitySpan>)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let len = r.random_range(3..=9);
            let mut tokens = Vec::with_capacity(len);
            let mut spans = Vec::new();
            for t in 0..len {
                if r.random_bool(0.3) {
                    let (prefix, cat) = [("loc", "LOC"), ("per", "PER"), ("org", "ORG")][r.random_range(0..3)];
                    tokens.push(format!("{prefix}{}", r.random_range(1..=max_id)));
                    spans.push(EntitySpan::new(t, t, cat));
                } else {
                    tokens.push(FILLERS[r.random_range(0..FILLERS.len())].to_string());
                }
            }
            (tokens, spans)
        })
        .collect()
}

/// Entity names are random capitalized pseudo-words with no category
/// marker; only context words (`in` before locations, `mr` before persons,
/// `corp` after organizations, each present 70% of the time) and the
/// name itself identify the category. Names are drawn from the first
/// `pool` names of each category, so a larger pool yields unseen names.
pub fn cue_sentences(n: usize, seed: u64, pool: usize) -> Vec<(Vec<String>, Vec<EntitySpan>)> {
    let mut names = rng(1000);
    let mut make_pool = || -> Vec<String> {
        (0..pool.max(1))
            .map(|_| {
                let len = names.random_range(4..=7);
                let mut w: String = (0..len).map(|_| names.random_range(b'a'..=b'z') as char).collect();
                w[..1].make_ascii_uppercase();
                w
            })
            .collect()
    };
    let pools = [make_pool(), make_pool(), make_pool()];
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let target = r.random_range(4..=10);
            let mut tokens: Vec<String> = Vec::new();
            let mut spans = Vec::new();
            while tokens.len() < target {
                if r.random_bool(0.3) {
                    let c = r.random_range(0..3);
                    let name = pools[c][r.random_range(0..pool.max(1))].clone();
                    let cue = r.random_bool(0.7);
                    match c {
                        0 if cue => tokens.push("in".into()),
                        1 if cue => tokens.push("mr".into()),
                        _ => {}
                    }
                    spans.push(EntitySpan::new(tokens.len(), tokens.len(), ["LOC", "PER", "ORG"][c]));
                    tokens.push(name);
                    if c == 2 && cue {
                        tokens.push("corp".into());
                    }
                }
                tokens.push(FILLERS[r.random_range(0..FILLERS.len())].to_string());
            }
            (tokens, spans)
        })
        .collect()
}
