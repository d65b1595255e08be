//! Sentence-level structured scoring over tag sequences.
//!
//! Emission scores `f` are a `T × K` tensor; the transition tensor `A` is
//! `(K + 1) × K` with row 0 holding start scores and row `i + 1` holding
//! scores for moving from tag `i`.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::tagging::{can_end, follows, Tagset};

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check(f: &Tensor, a: &Tensor) -> Result<(usize, usize)> {
    let (t, k) = (f.rows(), f.row_len());
    if f.shape().len() != 2 {
        return Err(Error::shape("tag scores", &[t, k], f.shape()));
    }
    if a.shape() != [k + 1, k] {
        return Err(Error::shape("transition matrix", &[k + 1, k], a.shape()));
    }
    Ok((t, k))
}

#[inline]
fn trans(a: &Tensor, prev: Option<usize>, next: usize) -> f64 {
    a.row(prev.map_or(0, |p| p + 1))[next]
}

/// Emission plus transition score of one tag sequence.
pub fn sequence_score(f: &Tensor, a: &Tensor, tags: &[usize]) -> Result<f64> {
    let (t, _) = check(f, a)?;
    if tags.len() != t {
        return Err(Error::shape("tag sequence", &[t], &[tags.len()]));
    }
    let mut prev = None;
    let mut s = 0.0;
    for (pos, &tag) in tags.iter().enumerate() {
        s += trans(a, prev, tag) + f.row(pos)[tag];
        prev = Some(tag);
    }
    Ok(s)
}

fn forward_table(f: &Tensor, a: &Tensor, t: usize, k: usize) -> Vec<Vec<f64>> {
    let mut alpha = vec![vec![0.0; k]; t];
    for j in 0..k {
        alpha[0][j] = trans(a, None, j) + f.row(0)[j];
    }
    for pos in 1..t {
        for j in 0..k {
            let lse = log_sum_exp((0..k).map(|i| alpha[pos - 1][i] + trans(a, Some(i), j)));
            alpha[pos][j] = lse + f.row(pos)[j];
        }
    }
    alpha
}

/// `log Σ exp S` over all `K^T` tag sequences, by the forward recursion.
pub fn log_partition(f: &Tensor, a: &Tensor) -> Result<f64> {
    let (t, k) = check(f, a)?;
    if t == 0 {
        return Ok(0.0);
    }
    let alpha = forward_table(f, a, t, k);
    Ok(log_sum_exp(alpha[t - 1].iter().copied()))
}

/// Log-likelihood of a gold sequence and the gradient of its negation.
#[derive(Debug, Clone)]
pub struct LogLikelihood {
    pub log_p: f64,
    pub log_z: f64,
    /// `∂(−log P)/∂f`, `T × K`.
    pub d_scores: Tensor,
    /// `∂(−log P)/∂A`, `(K + 1) × K`.
    pub d_transitions: Tensor,
}

pub fn log_likelihood(f: &Tensor, a: &Tensor, gold: &[usize]) -> Result<LogLikelihood> {
    let (t, k) = check(f, a)?;
    if gold.len() != t || t == 0 {
        return Err(Error::shape("gold sequence", &[t], &[gold.len()]));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g >= k) {
        return Err(Error::Index {
            table: "tagset".into(),
            index: bad,
            len: k,
        });
    }
    let alpha = forward_table(f, a, t, k);
    let log_z = log_sum_exp(alpha[t - 1].iter().copied());

    let mut beta = vec![vec![0.0; k]; t];
    for pos in (0..t - 1).rev() {
        for i in 0..k {
            beta[pos][i] = log_sum_exp((0..k).map(|j| trans(a, Some(i), j) + f.row(pos + 1)[j] + beta[pos + 1][j]));
        }
    }

    let mut d_scores = Tensor::zeros(&[t, k]);
    let mut d_trans = Tensor::zeros(&[k + 1, k]);
    for pos in 0..t {
        for j in 0..k {
            d_scores.row_mut(pos)[j] = (alpha[pos][j] + beta[pos][j] - log_z).exp();
        }
    }
    d_trans.row_mut(0).copy_from_slice(d_scores.row(0));
    for pos in 1..t {
        for i in 0..k {
            let base = alpha[pos - 1][i];
            let row = d_trans.row_mut(i + 1);
            for j in 0..k {
                row[j] += (base + trans(a, Some(i), j) + f.row(pos)[j] + beta[pos][j] - log_z).exp();
            }
        }
    }
    let mut prev = None;
    for (pos, &g) in gold.iter().enumerate() {
        d_scores.row_mut(pos)[g] -= 1.0;
        d_trans.row_mut(prev.map_or(0, |p: usize| p + 1))[g] -= 1.0;
        prev = Some(g);
    }

    let gold_score = sequence_score(f, a, gold)?;
    Ok(LogLikelihood {
        log_p: gold_score - log_z,
        log_z,
        d_scores,
        d_transitions: d_trans,
    })
}

/// Structural restrictions applied during constrained decoding.
#[derive(Debug, Clone)]
pub struct Constraints {
    start: Vec<bool>,
    allowed: Vec<Vec<bool>>,
    end: Vec<bool>,
}

impl Constraints {
    /// BIOES structure: no `I`/`E` at the start or after `O`/`E`/`S`, no
    /// category change inside an entity, no `B`/`I` at the end.
    pub fn bioes(tagset: &Tagset) -> Self {
        let k = tagset.len();
        Constraints {
            start: (0..k).map(|j| follows(None, &tagset.tag(j))).collect(),
            allowed: tagset.transition_allowed(),
            end: (0..k).map(|j| can_end(&tagset.tag(j))).collect(),
        }
    }
}

/// Highest-scoring tag sequence. Ties go to the lowest tag id.
pub fn viterbi(f: &Tensor, a: &Tensor, constraints: Option<&Constraints>) -> Result<Vec<usize>> {
    let (t, k) = check(f, a)?;
    if t == 0 {
        return Ok(Vec::new());
    }
    if let Some(c) = constraints {
        if c.start.len() != k {
            return Err(Error::shape("constraints", &[k], &[c.start.len()]));
        }
    }
    let neg = f64::NEG_INFINITY;
    let start_ok = |j: usize| constraints.is_none_or(|c| c.start[j]);
    let step_ok = |i: usize, j: usize| constraints.is_none_or(|c| c.allowed[i][j]);
    let end_ok = |j: usize| constraints.is_none_or(|c| c.end[j]);

    let mut delta = vec![vec![neg; k]; t];
    let mut back = vec![vec![0usize; k]; t];
    for j in 0..k {
        if start_ok(j) {
            delta[0][j] = trans(a, None, j) + f.row(0)[j];
        }
    }
    for pos in 1..t {
        for j in 0..k {
            let mut best = neg;
            let mut arg = 0;
            for i in 0..k {
                if !step_ok(i, j) || delta[pos - 1][i] == neg {
                    continue;
                }
                let s = delta[pos - 1][i] + trans(a, Some(i), j);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            if best > neg {
                delta[pos][j] = best + f.row(pos)[j];
                back[pos][j] = arg;
            }
        }
    }
    let mut best = neg;
    let mut last = None;
    for j in 0..k {
        if end_ok(j) && delta[t - 1][j] > best {
            best = delta[t - 1][j];
            last = Some(j);
        }
    }
    // Under BIOES constraints the all-O path always survives.
    let mut cur = last.expect("no admissible tag sequence");
    let mut path = vec![0; t];
    for pos in (0..t).rev() {
        path[pos] = cur;
        cur = back[pos][cur];
    }
    Ok(path)
}
