//! Character-level convolution with max-over-time pooling.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::{dot, Tensor};

pub const PADDING: usize = 0;
pub const UNKNOWN: usize = 1;
/// Width of the character-type one-hot space.
pub const CHAR_TYPES: usize = 4;

/// Character to id map with reserved `PADDING` and `UNKNOWN` ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<char>", into = "Vec<char>")]
pub struct CharVocab {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Builds a vocabulary from the given characters (deduplicated, sorted).
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = chars.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from(chars)
    }

    /// Number of ids including the two reserved ones.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNKNOWN)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

impl From<Vec<char>> for CharVocab {
    fn from(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        CharVocab { chars, index }
    }
}

impl From<CharVocab> for Vec<char> {
    fn from(v: CharVocab) -> Self {
        v.chars
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharType {
    Upper = 0,
    Lower = 1,
    Punctuation = 2,
    Other = 3,
}

/// Upper- and lowercase letters by Unicode case, ASCII punctuation, and
/// everything else (digits, whitespace, other scripts) as `Other`.
pub fn char_type_of(ch: char) -> CharType {
    if ch.is_uppercase() {
        CharType::Upper
    } else if ch.is_lowercase() {
        CharType::Lower
    } else if ch.is_ascii_punctuation() {
        CharType::Punctuation
    } else {
        CharType::Other
    }
}

/// Per-character ids of one padded word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharMatrix {
    pub chars: Vec<usize>,
    pub types: Option<Vec<usize>>,
}

impl CharMatrix {
    pub fn rows(&self) -> usize {
        self.chars.len()
    }
}

/// Pads `word` with `width / 2` PADDING characters on each side.
pub fn encode_characters(word: &str, vocab: &CharVocab, width: usize, use_char_type: bool) -> CharMatrix {
    let pad = width / 2;
    let mut chars = vec![PADDING; pad];
    let mut types = vec![CharType::Other as usize; pad];
    for c in word.chars() {
        chars.push(vocab.id(c));
        types.push(char_type_of(c) as usize);
    }
    chars.extend(std::iter::repeat_n(PADDING, pad));
    types.extend(std::iter::repeat_n(CharType::Other as usize, pad));
    CharMatrix {
        chars,
        types: use_char_type.then_some(types),
    }
}

/// Borrowed CNN parameters.
#[derive(Debug, Clone, Copy)]
pub struct CharCnnView<'a> {
    /// `|V_char| × d_char`
    pub char_emb: &'a Tensor,
    /// `4 × d_type`, present when character types are enabled.
    pub type_emb: Option<&'a Tensor>,
    /// `h × (width · (d_char + d_type))`
    pub filters: &'a Tensor,
    /// `h`
    pub bias: &'a Tensor,
    pub width: usize,
}

impl CharCnnView<'_> {
    pub fn row_dim(&self) -> usize {
        self.char_emb.row_len() + self.type_emb.map_or(0, Tensor::row_len)
    }

    pub fn filters(&self) -> usize {
        self.bias.len()
    }

    fn validate(&self, m: &CharMatrix) -> Result<()> {
        if self.width == 0 || self.width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "convolution width must be odd, got {}",
                self.width
            )));
        }
        let fan = self.width * self.row_dim();
        if self.filters.shape() != [self.filters(), fan] {
            return Err(Error::shape(
                "cnn filters",
                &[self.filters(), fan],
                self.filters.shape(),
            ));
        }
        if m.rows() < self.width {
            return Err(Error::shape("char matrix", &[self.width], &[m.rows()]));
        }
        if m.types.is_some() != self.type_emb.is_some() {
            return Err(Error::Config("character-type setting disagrees with parameters".into()));
        }
        if let Some(&bad) = m.chars.iter().find(|&&c| c >= self.char_emb.rows()) {
            return Err(Error::Index {
                table: "char_emb".into(),
                index: bad,
                len: self.char_emb.rows(),
            });
        }
        Ok(())
    }

    /// Concatenated per-character vectors for the window starting at `p`.
    fn window(&self, m: &CharMatrix, p: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.width * self.row_dim());
        for r in p..p + self.width {
            x.extend_from_slice(self.char_emb.row(m.chars[r]));
            if let (Some(types), Some(te)) = (&m.types, self.type_emb) {
                x.extend_from_slice(te.row(types[r]));
            }
        }
        x
    }
}

/// Pooled output plus the winning window per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CharCnnOutput {
    pub values: Vec<f64>,
    pub argmax: Vec<usize>,
}

pub fn char_cnn_forward(m: &CharMatrix, p: CharCnnView<'_>) -> Result<CharCnnOutput> {
    p.validate(m)?;
    let h = p.filters();
    let fan = p.filters.row_len();
    let positions = m.rows() - p.width + 1;
    let mut values = vec![f64::NEG_INFINITY; h];
    let mut argmax = vec![0; h];
    for pos in 0..positions {
        let x = p.window(m, pos);
        for f in 0..h {
            let z = dot(&p.filters.data()[f * fan..(f + 1) * fan], &x) + p.bias.data()[f];
            // Strict comparison keeps the earliest window on ties.
            if z > values[f] {
                values[f] = z;
                argmax[f] = pos;
            }
        }
    }
    Ok(CharCnnOutput { values, argmax })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CharCnnGrads {
    pub filters: Vec<f64>,
    pub bias: Vec<f64>,
    pub char_emb: BTreeMap<usize, Vec<f64>>,
    pub type_emb: BTreeMap<usize, Vec<f64>>,
}

impl CharCnnGrads {
    pub fn zeros(p: &CharCnnView<'_>) -> Self {
        CharCnnGrads {
            filters: vec![0.0; p.filters.len()],
            bias: vec![0.0; p.bias.len()],
            ..Default::default()
        }
    }
}

/// Routes each filter's upstream gradient to its argmax window only.
pub fn char_cnn_backward(
    m: &CharMatrix,
    p: CharCnnView<'_>,
    out: &CharCnnOutput,
    upstream: &[f64],
    grads: &mut CharCnnGrads,
) {
    let fan = p.filters.row_len();
    let dc = p.char_emb.row_len();
    let dt = p.type_emb.map_or(0, Tensor::row_len);
    let row_dim = dc + dt;
    for (f, &g) in upstream.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let pos = out.argmax[f];
        let x = p.window(m, pos);
        let w = &p.filters.data()[f * fan..(f + 1) * fan];
        for (gw, xi) in grads.filters[f * fan..(f + 1) * fan].iter_mut().zip(&x) {
            *gw += g * xi;
        }
        grads.bias[f] += g;
        for r in 0..p.width {
            let seg = &w[r * row_dim..(r + 1) * row_dim];
            let cid = m.chars[pos + r];
            let row = grads.char_emb.entry(cid).or_insert_with(|| vec![0.0; dc]);
            for (a, b) in row.iter_mut().zip(&seg[..dc]) {
                *a += g * b;
            }
            if let Some(types) = &m.types {
                let row = grads.type_emb.entry(types[pos + r]).or_insert_with(|| vec![0.0; dt]);
                for (a, b) in row.iter_mut().zip(&seg[dc..]) {
                    *a += g * b;
                }
            }
        }
    }
}
