//! The tagger network: per-token feature vectors, a stacked bidirectional
//! LSTM, one linear + log-softmax head per direction, and a transition
//! matrix scored jointly with the emissions.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::char_cnn::{
    char_cnn_backward, char_cnn_forward, encode_characters, CharCnnGrads, CharCnnOutput, CharCnnView, CharMatrix,
    CharVocab, CHAR_TYPES,
};
use crate::crf::{log_likelihood, viterbi, Constraints};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{
    caps_feature, caps_one_hot, lookup_key, word_id, CapsClass, Embeddings, WordVocab, CAPS_CLASSES,
};
use crate::lexicon::{encode_lexicon_features, match_sentence, Encoding, Lexicon, MatchMode};
use crate::nn::{
    dropout_in_place, init, load_parameters, lstm_step, lstm_step_backward, save_parameters, GradBuffer, LstmGrads,
    LstmStep, LstmView, Mode, ParamId, ParameterSet, RngState, Tensor,
};
use crate::tagging::{spans_to_bioes, EntitySpan, Tagset};

/// Width of a character-type vector.
pub const CHAR_TYPE_DIM: usize = 4;

const PARAMS_FILE: &str = "params.nstp";
const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharCnnConfig {
    pub char_dim: usize,
    pub width: usize,
    pub filters: usize,
    pub use_char_type: bool,
}

impl Default for CharCnnConfig {
    fn default() -> Self {
        CharCnnConfig {
            char_dim: 25,
            width: 3,
            filters: 53,
            use_char_type: false,
        }
    }
}

impl CharCnnConfig {
    fn row_dim(&self) -> usize {
        self.char_dim + if self.use_char_type { CHAR_TYPE_DIM } else { 0 }
    }
}

/// One lexicon feature block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFeature {
    pub name: String,
    pub mode: MatchMode,
    pub encoding: Encoding,
    /// Sorted category names; one block of `encoding.width()` per category.
    pub categories: Vec<String>,
}

impl LexiconFeature {
    pub fn width(&self) -> usize {
        self.encoding.width() * self.categories.len()
    }
}

/// Shape of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub caps: bool,
    pub char_cnn: Option<CharCnnConfig>,
    pub lexicons: Vec<LexiconFeature>,
    pub lstm_size: usize,
    pub lstm_layers: usize,
    /// Probability of discarding an LSTM output during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 50,
            caps: false,
            char_cnn: Some(CharCnnConfig::default()),
            lexicons: Vec::new(),
            lstm_size: 275,
            lstm_layers: 1,
            dropout: 0.68,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.word_dim == 0 {
            return bad("word embedding width must be at least 1".into());
        }
        if self.lstm_size == 0 || self.lstm_layers == 0 {
            return bad(format!(
                "LSTM needs at least one layer and one unit (got {} layers of {})",
                self.lstm_layers, self.lstm_size
            ));
        }
        crate::nn::check_probability(self.dropout)?;
        if let Some(c) = &self.char_cnn {
            if c.width % 2 == 0 || c.width == 0 {
                return bad(format!("convolution width must be odd, got {}", c.width));
            }
            if c.filters == 0 || c.char_dim == 0 {
                return bad("character CNN needs at least one filter and a non-empty embedding".into());
            }
        }
        let mut names = HashSet::new();
        for lex in &self.lexicons {
            if !names.insert(&lex.name) {
                return bad(format!("lexicon `{}` configured twice", lex.name));
            }
        }
        Ok(())
    }

    /// Width of the per-token vector fed to the first LSTM layer.
    pub fn input_dim(&self) -> usize {
        self.word_dim
            + if self.caps { CAPS_CLASSES } else { 0 }
            + self.char_cnn.as_ref().map_or(0, |c| c.filters)
            + self.lexicons.iter().map(LexiconFeature::width).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct ParamIds {
    word_emb: ParamId,
    char_emb: Option<ParamId>,
    char_type_emb: Option<ParamId>,
    cnn_filters: Option<ParamId>,
    cnn_bias: Option<ParamId>,
    /// `[direction][layer]`, forward first.
    lstm: [Vec<LayerIds>; 2],
    out_w: [ParamId; 2],
    out_b: [ParamId; 2],
    transitions: ParamId,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

/// Expected name and shape of every parameter, in creation order.
fn parameter_layout(config: &ModelConfig, words: usize, chars: usize, tags: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![("word_emb".to_string(), vec![words, config.word_dim])];
    if let Some(c) = &config.char_cnn {
        out.push(("char_emb".into(), vec![chars, c.char_dim]));
        if c.use_char_type {
            out.push(("char_type_emb".into(), vec![CHAR_TYPES, CHAR_TYPE_DIM]));
        }
        out.push(("cnn.filters".into(), vec![c.filters, c.width * c.row_dim()]));
        out.push(("cnn.bias".into(), vec![c.filters]));
    }
    let h = config.lstm_size;
    for dir in DIRECTIONS {
        for l in 0..config.lstm_layers {
            let d = if l == 0 { config.input_dim() } else { h };
            out.push((format!("lstm.{dir}.{l}.w_ih"), vec![4 * h, d]));
            out.push((format!("lstm.{dir}.{l}.w_hh"), vec![4 * h, h]));
            out.push((format!("lstm.{dir}.{l}.bias"), vec![4 * h]));
        }
    }
    for dir in DIRECTIONS {
        out.push((format!("out.{dir}.w"), vec![tags, h]));
        out.push((format!("out.{dir}.b"), vec![tags]));
    }
    out.push(("transitions".into(), vec![tags + 1, tags]));
    out
}

/// Fresh parameters: word and type tables `N(0, 1)`, character table
/// `U[-0.5, 0.5]`, weights `U(±1/sqrt(fan_in))`, transitions zero.
/// Pretrained vectors overwrite the rows of their (normalized) words.
pub fn init_parameters(
    config: &ModelConfig,
    words: &WordVocab,
    chars: &CharVocab,
    tagset: &Tagset,
    pretrained: Option<&Embeddings>,
    rng: &mut RngState,
) -> Result<ParameterSet> {
    config.validate()?;
    let mut params = ParameterSet::new();
    let h = config.lstm_size;
    for (name, shape) in parameter_layout(config, words.len(), chars.len(), tagset.len()) {
        let value = match name.as_str() {
            "word_emb" | "char_type_emb" => init::standard_normal(&shape, rng),
            "char_emb" => init::uniform(&shape, -0.5, 0.5, rng),
            "transitions" => Tensor::zeros(&shape),
            n if n.ends_with(".bias") && n.starts_with("lstm.") => {
                let d = params.value(params.require(&n.replace(".bias", ".w_ih"))?).shape()[1];
                init::fan_in_uniform(&shape, d + h, rng)
            }
            n if n.starts_with("cnn.") || n.starts_with("out.") => {
                let fan_in = match n {
                    "cnn.bias" => params.value(params.require("cnn.filters")?).shape()[1],
                    _ if n.starts_with("out.") => h,
                    _ => shape[1],
                };
                init::fan_in_uniform(&shape, fan_in, rng)
            }
            _ => init::fan_in_uniform(&shape, shape[1], rng),
        };
        params.insert(&name, value)?;
    }
    if let Some(emb) = pretrained {
        if emb.dim != config.word_dim {
            return Err(Error::Config(format!(
                "pretrained embeddings are {}-dimensional but the model expects {}",
                emb.dim, config.word_dim
            )));
        }
        let table = params.value_mut(params.require("word_emb")?);
        let mut seen = HashSet::new();
        for (i, w) in emb.words.iter().enumerate() {
            let key = lookup_key(w);
            if let Some(id) = words.get(&key) {
                if seen.insert(id) {
                    table.row_mut(id).copy_from_slice(emb.vector(i));
                }
            }
        }
    }
    Ok(params)
}

/// Everything the network consumes for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedSentence {
    pub word_ids: Vec<usize>,
    pub caps: Vec<CapsClass>,
    pub chars: Vec<CharMatrix>,
    /// Concatenated lexicon blocks per token (empty without lexicons).
    pub lexical: Vec<Vec<f64>>,
    pub gold: Option<Vec<usize>>,
}

impl FeaturizedSentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

/// Forward activations kept for the backward pass.
struct LayerCache {
    /// In processing order (reversed positions for the backward direction).
    steps: Vec<LstmStep>,
    masks: Vec<Option<Vec<f64>>>,
}

struct ForwardCache {
    cnn: Vec<Option<CharCnnOutput>>,
    layers: [Vec<LayerCache>; 2],
    /// Top-layer outputs after dropout, by position.
    top: [Vec<Vec<f64>>; 2],
    /// Head softmax probabilities, by position.
    probs: [Vec<Vec<f64>>; 2],
}

/// A trained or freshly initialized tagger.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub words: WordVocab,
    pub chars: CharVocab,
    pub tagset: Tagset,
    pub params: ParameterSet,
    ids: ParamIds,
    lexicons: Vec<Lexicon>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: ModelConfig,
    categories: Vec<String>,
    chars: CharVocab,
    words: WordVocab,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        words: WordVocab,
        chars: CharVocab,
        tagset: Tagset,
        pretrained: Option<&Embeddings>,
        rng: &mut RngState,
    ) -> Result<Self> {
        let params = init_parameters(&config, &words, &chars, &tagset, pretrained, rng)?;
        Self::from_parts(config, words, chars, tagset, params)
    }

    /// Checks every parameter against the configured layout.
    pub fn from_parts(
        config: ModelConfig,
        words: WordVocab,
        chars: CharVocab,
        tagset: Tagset,
        params: ParameterSet,
    ) -> Result<Self> {
        config.validate()?;
        if tagset.categories().is_empty() {
            return Err(Error::Config("tagset has no entity categories".into()));
        }
        let layout = parameter_layout(&config, words.len(), chars.len(), tagset.len());
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "parameter file has {} tensors, configuration implies {}",
                params.len(),
                layout.len()
            )));
        }
        for (name, shape) in &layout {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` missing")))?;
            if params.value(id).shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, configuration implies {shape:?}",
                    params.value(id).shape()
                )));
            }
        }
        let get = |n: &str| params.require(n);
        let opt = |n: &str| params.id(n);
        let lstm = |dir: &str| -> Result<Vec<LayerIds>> {
            (0..config.lstm_layers)
                .map(|l| {
                    Ok(LayerIds {
                        w_ih: get(&format!("lstm.{dir}.{l}.w_ih"))?,
                        w_hh: get(&format!("lstm.{dir}.{l}.w_hh"))?,
                        bias: get(&format!("lstm.{dir}.{l}.bias"))?,
                    })
                })
                .collect()
        };
        let ids = ParamIds {
            word_emb: get("word_emb")?,
            char_emb: opt("char_emb"),
            char_type_emb: opt("char_type_emb"),
            cnn_filters: opt("cnn.filters"),
            cnn_bias: opt("cnn.bias"),
            lstm: [lstm("fwd")?, lstm("bwd")?],
            out_w: [get("out.fwd.w")?, get("out.bwd.w")?],
            out_b: [get("out.fwd.b")?, get("out.bwd.b")?],
            transitions: get("transitions")?,
        };
        let lexicons = config.lexicons.iter().map(|l| Lexicon::new(&l.categories)).collect();
        Ok(Model {
            config,
            words,
            chars,
            tagset,
            params,
            ids,
            lexicons,
        })
    }

    /// Installs the lexicons backing the configured lexicon features, in
    /// configuration order. Their categories must match the configuration.
    pub fn attach_lexicons(&mut self, lexicons: Vec<Lexicon>) -> Result<()> {
        if lexicons.len() != self.config.lexicons.len() {
            return Err(Error::Config(format!(
                "model expects {} lexicon(s), {} supplied",
                self.config.lexicons.len(),
                lexicons.len()
            )));
        }
        for (spec, lex) in self.config.lexicons.iter().zip(&lexicons) {
            if lex.category_names() != spec.categories {
                return Err(Error::Config(format!(
                    "lexicon `{}` has categories {:?}, model was trained with {:?}",
                    spec.name,
                    lex.category_names(),
                    spec.categories
                )));
            }
        }
        self.lexicons = lexicons;
        Ok(())
    }

    pub fn lexicons(&self) -> &[Lexicon] {
        &self.lexicons
    }

    pub fn transitions(&self) -> &Tensor {
        self.params.value(self.ids.transitions)
    }

    pub fn num_tags(&self) -> usize {
        self.tagset.len()
    }

    /// Computes word ids, capitalization classes, character matrices and
    /// lexicon features from surface tokens. Gold spans become tag ids.
    pub fn featurize(&self, tokens: &[String], gold: Option<&[EntitySpan]>) -> Result<FeaturizedSentence> {
        let word_ids = tokens.iter().map(|t| word_id(t, &self.words)).collect();
        let caps = tokens.iter().map(|t| caps_feature(t)).collect();
        let chars = match &self.config.char_cnn {
            Some(c) => tokens
                .iter()
                .map(|t| encode_characters(t, &self.chars, c.width, c.use_char_type))
                .collect(),
            None => Vec::new(),
        };
        let mut lexical = vec![Vec::new(); tokens.len()];
        for (spec, lex) in self.config.lexicons.iter().zip(&self.lexicons) {
            let marks = match_sentence(lex, tokens, spec.mode);
            for (acc, v) in lexical.iter_mut().zip(encode_lexicon_features(&marks, spec.encoding)) {
                acc.extend(v);
            }
        }
        let gold = match gold {
            Some(spans) => Some(spans_to_bioes(spans, tokens.len(), &self.tagset)?),
            None => None,
        };
        Ok(FeaturizedSentence {
            word_ids,
            caps,
            chars,
            lexical,
            gold,
        })
    }

    fn cnn_view(&self) -> Option<CharCnnView<'_>> {
        let c = self.config.char_cnn.as_ref()?;
        Some(CharCnnView {
            char_emb: self.params.value(self.ids.char_emb?),
            type_emb: self.ids.char_type_emb.map(|id| self.params.value(id)),
            filters: self.params.value(self.ids.cnn_filters?),
            bias: self.params.value(self.ids.cnn_bias?),
            width: c.width,
        })
    }

    /// Per-token input vectors `[word | caps | char CNN | lexicons]`.
    fn embed(&self, s: &FeaturizedSentence) -> Result<(Vec<Vec<f64>>, Vec<Option<CharCnnOutput>>)> {
        let table = self.params.value(self.ids.word_emb);
        let view = self.cnn_view();
        let mut inputs = Vec::with_capacity(s.len());
        let mut cnn = Vec::with_capacity(s.len());
        for t in 0..s.len() {
            crate::nn::check_index(table, "word_emb", s.word_ids[t])?;
            let mut v = table.row(s.word_ids[t]).to_vec();
            if self.config.caps {
                v.extend_from_slice(&caps_one_hot(s.caps[t]));
            }
            match view {
                Some(view) => {
                    let m = s
                        .chars
                        .get(t)
                        .ok_or_else(|| Error::Validation("sentence was featurized without characters".into()))?;
                    let out = char_cnn_forward(m, view)?;
                    v.extend_from_slice(&out.values);
                    cnn.push(Some(out));
                }
                None => cnn.push(None),
            }
            if let Some(lex) = s.lexical.get(t) {
                v.extend_from_slice(lex);
            }
            inputs.push(v);
        }
        Ok((inputs, cnn))
    }

    fn lstm_view(&self, layer: &LayerIds) -> Result<LstmView<'_>> {
        LstmView::new(
            self.params.value(layer.w_ih).data(),
            self.params.value(layer.w_hh).data(),
            self.params.value(layer.bias).data(),
            self.config.lstm_size,
        )
    }

    fn forward_cached(&self, inputs: &[Vec<f64>], mode: Mode, rng: &mut RngState) -> Result<(Tensor, ForwardCache)> {
        let t_len = inputs.len();
        if t_len == 0 {
            return Err(Error::Validation("cannot score an empty sentence".into()));
        }
        let d_in = self.config.input_dim();
        if let Some(x) = inputs.iter().find(|x| x.len() != d_in) {
            return Err(Error::shape("token feature vector", &[d_in], &[x.len()]));
        }
        let h = self.config.lstm_size;
        let k = self.num_tags();
        let mut layers: [Vec<LayerCache>; 2] = [Vec::new(), Vec::new()];
        let mut top: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for dir in 0..2 {
            let mut seq: Vec<Vec<f64>> = if dir == 0 {
                inputs.to_vec()
            } else {
                inputs.iter().rev().cloned().collect()
            };
            for layer in &self.ids.lstm[dir] {
                let view = self.lstm_view(layer)?;
                let mut h_prev = vec![0.0; h];
                let mut c_prev = vec![0.0; h];
                let mut steps = Vec::with_capacity(t_len);
                let mut masks = Vec::with_capacity(t_len);
                let mut outputs = Vec::with_capacity(t_len);
                for x in &seq {
                    let step = lstm_step(view, x, &h_prev, &c_prev)?;
                    let mut out = step.h.clone();
                    masks.push(dropout_in_place(&mut out, self.config.dropout, mode, rng)?);
                    h_prev = step.h.clone();
                    c_prev = step.c.clone();
                    steps.push(step);
                    outputs.push(out);
                }
                layers[dir].push(LayerCache { steps, masks });
                seq = outputs;
            }
            if dir == 1 {
                seq.reverse();
            }
            top[dir] = seq;
        }

        let mut scores = Tensor::zeros(&[t_len, k]);
        let mut probs: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
        for dir in 0..2 {
            let w = self.params.value(self.ids.out_w[dir]).data();
            let b = self.params.value(self.ids.out_b[dir]).data();
            for t in 0..t_len {
                let mut z = b.to_vec();
                crate::nn::gemv_acc(w, k, h, &top[dir][t], &mut z);
                let lse = crate::crf::log_sum_exp(z.iter().copied());
                let row = scores.row_mut(t);
                let mut p = Vec::with_capacity(k);
                for (j, zj) in z.iter().enumerate() {
                    let ls = zj - lse;
                    row[j] += ls;
                    p.push(ls.exp());
                }
                probs[dir].push(p);
            }
        }
        Ok((
            scores,
            ForwardCache {
                cnn: Vec::new(),
                layers,
                top,
                probs,
            },
        ))
    }

    /// Emission scores `T × K` for per-token input vectors.
    pub fn network_forward(&self, inputs: &[Vec<f64>], mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        Ok(self.forward_cached(inputs, mode, rng)?.0)
    }

    /// Emission scores for a featurized sentence.
    pub fn scores(&self, s: &FeaturizedSentence, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let (inputs, _) = self.embed(s)?;
        self.network_forward(&inputs, mode, rng)
    }

    /// Gradient of the emission scores back to the token inputs; parameter
    /// gradients go to `buf`.
    fn network_backward(&self, cache: &ForwardCache, d_scores: &Tensor, buf: &mut GradBuffer) -> Result<Vec<Vec<f64>>> {
        let t_len = d_scores.rows();
        let h = self.config.lstm_size;
        let k = self.num_tags();
        let d_in = self.config.input_dim();
        let mut d_inputs = vec![vec![0.0; d_in]; t_len];
        for dir in 0..2 {
            let w = self.params.value(self.ids.out_w[dir]).data();
            let mut d_top = vec![vec![0.0; h]; t_len];
            {
                let mut dw = vec![0.0; k * h];
                let mut db = vec![0.0; k];
                for t in 0..t_len {
                    let dy = d_scores.row(t);
                    let total: f64 = dy.iter().sum();
                    let dz: Vec<f64> = dy
                        .iter()
                        .zip(&cache.probs[dir][t])
                        .map(|(g, p)| g - p * total)
                        .collect();
                    crate::nn::outer_acc(&mut dw, &dz, &cache.top[dir][t]);
                    crate::nn::axpy(1.0, &dz, &mut db);
                    crate::nn::gemv_t_acc(w, k, h, &dz, &mut d_top[t]);
                }
                crate::nn::axpy(1.0, &dw, buf.dense_mut(self.ids.out_w[dir]));
                crate::nn::axpy(1.0, &db, buf.dense_mut(self.ids.out_b[dir]));
            }
            // Switch to processing order.
            let mut upstream = d_top;
            if dir == 1 {
                upstream.reverse();
            }
            for (l, layer) in self.ids.lstm[dir].iter().enumerate().rev() {
                let view = self.lstm_view(layer)?;
                let lc = &cache.layers[dir][l];
                let mut grads = LstmGrads::zeros(view.input, h);
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                let mut below = vec![Vec::new(); t_len];
                for s in (0..t_len).rev() {
                    let mut dh = upstream[s].clone();
                    crate::nn::dropout_backward(&mut dh, lc.masks[s].as_deref());
                    crate::nn::axpy(1.0, &dh_next, &mut dh);
                    let (dx, dhp, dcp) = lstm_step_backward(view, &lc.steps[s], &dh, &dc_next, &mut grads);
                    below[s] = dx;
                    dh_next = dhp;
                    dc_next = dcp;
                }
                crate::nn::axpy(1.0, &grads.w_ih, buf.dense_mut(layer.w_ih));
                crate::nn::axpy(1.0, &grads.w_hh, buf.dense_mut(layer.w_hh));
                crate::nn::axpy(1.0, &grads.bias, buf.dense_mut(layer.bias));
                upstream = below;
            }
            for (s, g) in upstream.iter().enumerate() {
                let t = if dir == 0 { s } else { t_len - 1 - s };
                crate::nn::axpy(1.0, g, &mut d_inputs[t]);
            }
        }
        Ok(d_inputs)
    }

    fn embed_backward(
        &self,
        s: &FeaturizedSentence,
        cnn: &[Option<CharCnnOutput>],
        d_inputs: &[Vec<f64>],
        buf: &mut GradBuffer,
    ) {
        let wd = self.config.word_dim;
        let cnn_offset = wd + if self.config.caps { CAPS_CLASSES } else { 0 };
        let view = self.cnn_view();
        let mut cnn_grads = view.as_ref().map(CharCnnGrads::zeros);
        for (t, d) in d_inputs.iter().enumerate() {
            crate::nn::axpy(1.0, &d[..wd], buf.row_mut(self.ids.word_emb, s.word_ids[t]));
            if let (Some(view), Some(grads), Some(out)) = (view, cnn_grads.as_mut(), &cnn[t]) {
                let h = view.filters();
                char_cnn_backward(&s.chars[t], view, out, &d[cnn_offset..cnn_offset + h], grads);
            }
        }
        if let Some(g) = cnn_grads {
            let ids = &self.ids;
            crate::nn::axpy(1.0, &g.filters, buf.dense_mut(ids.cnn_filters.unwrap()));
            crate::nn::axpy(1.0, &g.bias, buf.dense_mut(ids.cnn_bias.unwrap()));
            for (row, v) in &g.char_emb {
                crate::nn::axpy(1.0, v, buf.row_mut(ids.char_emb.unwrap(), *row));
            }
            if let Some(type_id) = ids.char_type_emb {
                for (row, v) in &g.type_emb {
                    crate::nn::axpy(1.0, v, buf.row_mut(type_id, *row));
                }
            }
        }
    }

    /// `-log P(gold)` of one sentence and its full gradient.
    pub fn sentence_loss(&self, s: &FeaturizedSentence, mode: Mode, rng: &mut RngState) -> Result<(f64, GradBuffer)> {
        let gold = s
            .gold
            .as_ref()
            .ok_or_else(|| Error::Validation("training sentence has no gold tags".into()))?;
        let (inputs, cnn) = self.embed(s)?;
        let (scores, mut cache) = self.forward_cached(&inputs, mode, rng)?;
        cache.cnn = cnn;
        let ll = log_likelihood(&scores, self.transitions(), gold)?;
        let mut buf = GradBuffer::for_params(&self.params);
        crate::nn::axpy(1.0, ll.d_transitions.data(), buf.dense_mut(self.ids.transitions));
        let d_inputs = self.network_backward(&cache, &ll.d_scores, &mut buf)?;
        self.embed_backward(s, &cache.cnn, &d_inputs, &mut buf);
        Ok((-ll.log_p, buf))
    }

    /// Mean `-log P` over a batch of equal-length sentences; the mean's
    /// gradient is added to the parameter gradients. Each sentence draws
    /// its dropout masks from its own generator split off `rng` in batch
    /// order, so results do not depend on `exec`.
    pub fn loss_and_gradients(
        &mut self,
        batch: &[&FeaturizedSentence],
        rng: &mut RngState,
        exec: Execution,
    ) -> Result<f64> {
        self.batch_loss(batch, Mode::Train, rng, exec)
    }

    /// [`Model::loss_and_gradients`] with an explicit mode; eval mode gives
    /// the deterministic objective used by gradient checks.
    pub fn batch_loss(
        &mut self,
        batch: &[&FeaturizedSentence],
        mode: Mode,
        rng: &mut RngState,
        exec: Execution,
    ) -> Result<f64> {
        let Some(first) = batch.first() else {
            return Ok(0.0);
        };
        if batch.iter().any(|s| s.len() != first.len()) {
            return Err(Error::Validation("mini-batch sentences differ in length".into()));
        }
        let jobs: Vec<(&FeaturizedSentence, RngState)> = batch.iter().map(|s| (*s, rng.split())).collect();
        let this = &*self;
        let results = exec.map(jobs, |(s, mut r)| this.sentence_loss(s, mode, &mut r));
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut buffers = Vec::with_capacity(results.len());
        for r in results {
            let (loss, buf) = r?;
            total += loss;
            buffers.push(buf);
        }
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss {mean}")));
        }
        for buf in &buffers {
            self.params.accumulate(buf, scale);
        }
        Ok(mean)
    }

    /// Best tag sequence under the model, optionally restricted to valid
    /// BIOES sequences.
    pub fn decode(&self, s: &FeaturizedSentence, constrained: bool) -> Result<Vec<usize>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        let scores = self.scores(s, Mode::Eval, &mut RngState::new(0))?;
        let constraints = constrained.then(|| Constraints::bioes(&self.tagset));
        viterbi(&scores, self.transitions(), constraints.as_ref())
    }

    /// Featurizes and decodes many sentences.
    pub fn tag_sentences<S: AsRef<[String]> + Sync>(
        &self,
        sentences: &[S],
        constrained: bool,
        exec: Execution,
    ) -> Result<Vec<Vec<usize>>> {
        let constraints = constrained.then(|| Constraints::bioes(&self.tagset));
        let jobs: Vec<&S> = sentences.iter().collect();
        exec.map(jobs, |tokens| {
            let tokens = tokens.as_ref();
            if tokens.is_empty() {
                return Ok(Vec::new());
            }
            let s = self.featurize(tokens, None)?;
            let scores = self.scores(&s, Mode::Eval, &mut RngState::new(0))?;
            viterbi(&scores, self.transitions(), constraints.as_ref())
        })
        .into_iter()
        .collect()
    }

    /// Writes `params.nstp` and `model.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_parameters(&self.params, &dir.join(PARAMS_FILE))?;
        let file = ModelFile {
            config: self.config.clone(),
            categories: self.tagset.categories().to_vec(),
            chars: self.chars.clone(),
            words: self.words.clone(),
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join(MODEL_FILE);
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a model written by [`Model::save`]. Lexicons must be attached
    /// separately.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        let params = load_parameters(&dir.join(PARAMS_FILE))?;
        Self::from_parts(
            file.config,
            file.words,
            file.chars,
            Tagset::new(file.categories),
            params,
        )
    }
}
