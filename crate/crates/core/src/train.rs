//! Run configuration, the mini-batch SGD loop, checkpoints and the
//! failed-trial rule.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    build_vocabs, make_batches, read_conll, split_corpus, write_conll, write_predictions, Corpus, ReadOptions,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{load_embeddings, Embeddings};
use crate::lexicon::{load_lexicon, CategoryMap, Encoding, Lexicon, MatchMode};
use crate::model::{CharCnnConfig, FeaturizedSentence, LexiconFeature, Model, ModelConfig};
use crate::nn::{sgd_update, RngState};
use crate::tagging::{bioes_to_spans, evaluate_f1, Dialect, EvalReport};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.json";
pub const BEST_FILE: &str = "best";
pub const LOCK_FILE: &str = "train.lock";
pub const FINAL_DIR: &str = "final";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const PREDICTION_DIR: &str = "predictions";
pub const DEV_GOLD_FILE: &str = "dev.gold.conll";

/// A lexicon file used as one feature block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconSpec {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: MatchMode,
    #[serde(default = "default_encoding")]
    pub encoding: Encoding,
    /// File label → category. Defaults to the CoNLL-2003 categories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<BTreeMap<String, String>>,
}

fn default_mode() -> MatchMode {
    MatchMode::Partial
}

fn default_encoding() -> Encoding {
    Encoding::Bioes
}

impl LexiconSpec {
    /// The explicit mapping if one is configured. Otherwise the CoNLL-2003
    /// aliases when they cover every label in the file, else each label as
    /// its own category.
    pub fn category_map(&self) -> Result<CategoryMap> {
        if let Some(m) = &self.categories {
            return Ok(CategoryMap::new(m.iter()));
        }
        let text = fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let labels: std::collections::BTreeSet<String> = text
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .map(|(label, _)| label.trim().to_ascii_uppercase())
            .collect();
        let conll = CategoryMap::conll();
        if labels.iter().all(|l| conll.resolve(l).is_some()) {
            Ok(conll)
        } else {
            Ok(CategoryMap::identity(labels))
        }
    }

    pub fn load(&self) -> Result<Lexicon> {
        let (lex, stats) = load_lexicon(&self.path, &self.category_map()?)?;
        log::info!(
            "lexicon {}: {} entries ({} duplicates, {} empty)",
            self.name,
            stats.stored,
            stats.duplicates,
            stats.skipped_empty
        );
        Ok(lex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMetric {
    DevF1,
    TrainTailF1,
}

impl std::str::FromStr for FailureMetric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dev_f1" => Ok(FailureMetric::DevF1),
            "train_tail_f1" => Ok(FailureMetric::TrainTailF1),
            other => Err(format!(
                "unknown failure metric `{other}` (expected dev_f1 or train_tail_f1)"
            )),
        }
    }
}

/// A trial fails when its final metric is below `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRule {
    pub metric: FailureMetric,
    pub threshold: f64,
}

/// Every setting of a training run. Serialized as one flat JSON object;
/// missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub lexicons: Vec<LexiconSpec>,
    pub dialect: Dialect,
    pub digit_split: bool,
    pub word_dim: usize,
    pub caps: bool,
    pub char_cnn: bool,
    pub char_dim: usize,
    pub char_type: bool,
    pub conv_width: usize,
    pub cnn_output: usize,
    pub lstm_size: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Decode with BIOES structure enforced when scoring.
    pub constrained: bool,
    /// Write `checkpoints/epoch-NNNN` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Number of trailing training sentences scored each epoch; 0 disables.
    pub train_tail: usize,
    pub failure_metric: Option<FailureMetric>,
    pub failure_threshold: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            dev: None,
            model_dir: None,
            embeddings: None,
            lexicons: Vec::new(),
            dialect: Dialect::Auto,
            digit_split: false,
            word_dim: 50,
            caps: false,
            char_cnn: true,
            char_dim: 25,
            char_type: false,
            conv_width: 3,
            cnn_output: 53,
            lstm_size: 275,
            lstm_layers: 1,
            dropout: 0.68,
            learning_rate: 0.0105,
            epochs: 80,
            batch_size: 9,
            seed: 1,
            constrained: true,
            checkpoint_every: 1,
            train_tail: 5000,
            failure_metric: None,
            failure_threshold: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes") + "\n"
    }

    /// Network shape, given the loaded lexicons in spec order.
    pub fn model_config(&self, lexicons: &[Lexicon]) -> ModelConfig {
        ModelConfig {
            word_dim: self.word_dim,
            caps: self.caps,
            char_cnn: self.char_cnn.then(|| CharCnnConfig {
                char_dim: self.char_dim,
                width: self.conv_width,
                filters: self.cnn_output,
                use_char_type: self.char_type,
            }),
            lexicons: self
                .lexicons
                .iter()
                .zip(lexicons)
                .map(|(spec, lex)| LexiconFeature {
                    name: spec.name.clone(),
                    mode: spec.mode,
                    encoding: spec.encoding,
                    categories: lex.category_names(),
                })
                .collect(),
            lstm_size: self.lstm_size,
            lstm_layers: self.lstm_layers,
            dropout: self.dropout,
        }
    }

    pub fn failure_rule(&self) -> Option<FailureRule> {
        let metric = self.failure_metric?;
        let threshold = self.failure_threshold.unwrap_or(match metric {
            FailureMetric::DevF1 => 95.0,
            FailureMetric::TrainTailF1 => 80.0,
        });
        Some(FailureRule { metric, threshold })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("mini-batch size must be at least 1");
        }
        if let Some(t) = self.failure_threshold {
            if !(0.0..=100.0).contains(&t) {
                return bad("failure threshold must be within [0, 100]");
            }
        }
        if self.failure_metric == Some(FailureMetric::DevF1) && self.dev.is_none() && self.train.is_some() {
            return bad("the dev_f1 failure rule needs a dev set");
        }
        let mut names: Vec<&str> = self.lexicons.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("lexicon names must be unique");
        }
        self.model_config(&[]).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_f1: Option<f64>,
    pub dev_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TrainStatus {
    Completed,
    Diverged { epoch: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub status: TrainStatus,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialOutcome {
    Pass,
    Fail,
}

/// Compares the final value of the rule's metric with its threshold.
pub fn detect_failed_trial(log: &TrainLog, rule: &FailureRule) -> Result<TrialOutcome> {
    if !(0.0..=100.0).contains(&rule.threshold) {
        return Err(Error::Config(format!(
            "failure threshold {} outside [0, 100]",
            rule.threshold
        )));
    }
    let value = log.last().and_then(|r| match rule.metric {
        FailureMetric::DevF1 => r.dev_f1,
        FailureMetric::TrainTailF1 => r.train_f1,
    });
    let Some(value) = value else {
        return Err(Error::Config(format!(
            "training log has no final {:?} value",
            rule.metric
        )));
    };
    Ok(if value < rule.threshold {
        TrialOutcome::Fail
    } else {
        TrialOutcome::Pass
    })
}

/// Decodes `corpus` and scores it against its gold tags. Returns the
/// report and the predicted tag strings.
pub fn evaluate_model(
    model: &Model,
    corpus: &Corpus,
    constrained: bool,
    exec: Execution,
) -> Result<(EvalReport, Vec<Vec<String>>)> {
    let tokens: Vec<&[String]> = corpus.sentences.iter().map(|s| s.tokens.as_slice()).collect();
    let ids = model.tag_sentences(&tokens, constrained, exec)?;
    let predicted_spans: Vec<_> = ids.iter().map(|t| bioes_to_spans(t, &model.tagset)).collect();
    let mut report = evaluate_f1(&corpus.gold_spans()?, &predicted_spans)?;
    report.tokens = Some(corpus.num_tokens());
    let names = ids
        .iter()
        .map(|t| t.iter().map(|&id| model.tagset.name(id)).collect())
        .collect();
    Ok((report, names))
}

/// Removes the lock file when training ends, however it ends.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Config(format!(
                    "{} exists: another training run is using this model directory",
                    path.display()
                )),
                _ => Error::io(&path, e),
            })?;
        Ok(DirLock(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
}

/// Everything a run needs, already in memory.
pub struct TrainInputs {
    pub train: Corpus,
    pub dev: Option<Corpus>,
    pub embeddings: Option<Embeddings>,
    pub lexicons: Vec<Lexicon>,
}

impl TrainInputs {
    /// Reads the files named by `config`.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let opts = ReadOptions {
            labeled: true,
            dialect: config.dialect,
        };
        let train_path = config
            .train
            .as_ref()
            .ok_or_else(|| Error::Config("no training file given".into()))?;
        let train = read_conll(train_path, opts)?;
        let dev = config.dev.as_ref().map(|p| read_conll(p, opts)).transpose()?;
        let embeddings = config.embeddings.as_ref().map(|p| load_embeddings(p)).transpose()?;
        let lexicons = config.lexicons.iter().map(LexiconSpec::load).collect::<Result<_>>()?;
        Ok(TrainInputs {
            train,
            dev,
            embeddings,
            lexicons,
        })
    }
}

/// Loads the configured files and trains.
pub fn train(config: &RunConfig, exec: Execution) -> Result<TrainOutcome> {
    config.validate()?;
    let inputs = TrainInputs::load(config)?;
    train_with(config, inputs, exec)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(model: &Model, config: &RunConfig, dir: &Path) -> Result<()> {
    model.save(dir)?;
    write_file(&dir.join(CONFIG_FILE), config.to_json().as_bytes())
}

/// Trains on in-memory inputs. Writes checkpoints, dev predictions and the
/// log under `config.model_dir` when it is set.
///
/// A non-finite loss stops training; the returned log then carries a
/// `Diverged` status and the model holds the last finite parameters.
pub fn train_with(config: &RunConfig, inputs: TrainInputs, exec: Execution) -> Result<TrainOutcome> {
    config.validate()?;
    let out_dir = config.model_dir.as_deref();
    let _lock = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(DirLock::acquire(dir)?)
        }
        None => None,
    };

    let (train, dev) = if config.digit_split {
        (
            split_corpus(&inputs.train)?,
            inputs.dev.as_ref().map(split_corpus).transpose()?,
        )
    } else {
        (inputs.train, inputs.dev)
    };
    let vocabs = build_vocabs(&train, inputs.embeddings.as_ref())?;
    let mut rng = RngState::new(config.seed);
    let mut model = Model::new(
        config.model_config(&inputs.lexicons),
        vocabs.words,
        vocabs.chars,
        vocabs.tagset,
        inputs.embeddings.as_ref(),
        &mut rng.split(),
    )?;
    model.attach_lexicons(inputs.lexicons)?;
    log::info!(
        "{} training sentences, {} tags, {} parameters",
        train.sentences.len(),
        model.num_tags(),
        model.params.num_scalars()
    );

    let gold = train.gold_spans()?;
    let jobs: Vec<usize> = (0..train.sentences.len()).collect();
    let featurized: Vec<FeaturizedSentence> = exec
        .map(jobs, |i| model.featurize(&train.sentences[i].tokens, Some(&gold[i])))
        .into_iter()
        .collect::<Result<_>>()?;
    let lengths: Vec<usize> = featurized.iter().map(FeaturizedSentence::len).collect();
    let tail = Corpus {
        sentences: train.sentences[train.sentences.len().saturating_sub(config.train_tail)..].to_vec(),
        doc_starts: Vec::new(),
        ..train.clone()
    };

    if let (Some(dir), Some(dev)) = (out_dir, &dev) {
        let pred_dir = dir.join(PREDICTION_DIR);
        fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
        let mut buf = Vec::new();
        write_conll(&mut buf, dev).map_err(|e| Error::io(&pred_dir, e))?;
        write_file(&pred_dir.join(DEV_GOLD_FILE), &buf)?;
    }

    let mut log = TrainLog {
        records: Vec::new(),
        status: TrainStatus::Completed,
    };
    let mut best: Option<f64> = None;
    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = make_batches(&lengths, config.batch_size, &mut rng)?;
        let mut loss_sum = 0.0;
        for batch in &batches {
            let members: Vec<&FeaturizedSentence> = batch.sentence_ids.iter().map(|&i| &featurized[i]).collect();
            let step = model
                .loss_and_gradients(&members, &mut rng, exec)
                .and_then(|loss| sgd_update(&mut model.params, config.learning_rate).map(|_| loss));
            match step {
                Ok(loss) => loss_sum += loss * members.len() as f64,
                Err(Error::Diverged(message)) => {
                    log::error!("epoch {epoch}: {message}");
                    model.params.zero_grads();
                    log.status = TrainStatus::Diverged { epoch, message };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / featurized.len() as f64;

        let train_f1 = if config.train_tail > 0 {
            Some(evaluate_model(&model, &tail, config.constrained, exec)?.0.overall.f1())
        } else {
            None
        };
        let dev_f1 = match &dev {
            Some(dev) => {
                let (report, predicted) = evaluate_model(&model, dev, config.constrained, exec)?;
                if let Some(dir) = out_dir {
                    let mut buf = Vec::new();
                    write_predictions(&mut buf, dev, &predicted).map_err(|e| Error::io(dir, e))?;
                    write_file(
                        &dir.join(PREDICTION_DIR).join(format!("dev-epoch-{epoch:04}.conll")),
                        &buf,
                    )?;
                }
                Some(report.overall.f1())
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_f1,
            dev_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.4}{}{}",
            train_f1.map_or(String::new(), |f| format!(", train F1 {f:.2}")),
            dev_f1.map_or(String::new(), |f| format!(", dev F1 {f:.2}"))
        );
        log.records.push(record);

        if let Some(dir) = out_dir {
            let due = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
            let improved = dev_f1.is_some_and(|f| best.is_none_or(|b| f > b));
            if due || improved {
                let name = format!("epoch-{epoch:04}");
                save_checkpoint(&model, config, &dir.join(CHECKPOINT_DIR).join(&name))?;
                if improved {
                    best = dev_f1;
                    write_file(&dir.join(BEST_FILE), format!("{CHECKPOINT_DIR}/{name}\n").as_bytes())?;
                }
            }
            write_log(dir, &log)?;
        }
    }

    if let Some(dir) = out_dir {
        save_checkpoint(&model, config, &dir.join(FINAL_DIR))?;
        write_log(dir, &log)?;
    }
    Ok(TrainOutcome { model, log })
}

fn write_log(dir: &Path, log: &TrainLog) -> Result<()> {
    let json = serde_json::to_string_pretty(log).expect("log serializes") + "\n";
    write_file(&dir.join(LOG_FILE), json.as_bytes())
}

/// Loads a checkpoint directory together with its run configuration.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, RunConfig)> {
    let config = RunConfig::from_json_file(&dir.join(CONFIG_FILE))?;
    Ok((Model::load(dir)?, config))
}
