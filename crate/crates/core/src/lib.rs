//! Neural named entity recognition: a bidirectional LSTM over word,
//! capitalization, character-CNN and lexicon features, trained with a
//! sentence-level log-likelihood over BIOES tag sequences and decoded with
//! Viterbi.

pub mod app;
pub mod char_cnn;
pub mod crf;
pub mod data;
pub mod error;
pub mod exec;
pub mod features;
pub mod lexicon;
pub mod model;
pub mod nn;
pub mod tagging;
pub mod train;

pub use error::{Error, Result};
