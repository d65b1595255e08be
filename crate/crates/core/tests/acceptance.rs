//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use nertag::app::evaluate_files;
use nertag::crf::{log_partition, viterbi};
use nertag::data::{write_conll, Corpus};
use nertag::exec::Execution;
use nertag::lexicon::{match_sentence, MatchMode};
use nertag::model::Model;
use nertag::nn::{Mode, RngState};
use nertag::tagging::{
    bioes_to_spans, extract_spans, is_valid_bioes, spans_to_bioes, spans_to_tags, tags_to_spans, Dialect, EntitySpan,
    SchemeTag, Tagset,
};
use nertag::train::{load_checkpoint, train, train_with, RunConfig, TrainInputs, FINAL_DIR, LOG_FILE};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: nertag::Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------

fn crf_against_enumeration() -> Outcome {
    let started = Instant::now();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    let cases = 600;
    for case in 0..cases {
        let t = r.random_range(1..=6);
        let k = r.random_range(1..=5);
        let f = random_tensor(&mut r, &[t, k], 3.0);
        let a = random_tensor(&mut r, &[k + 1, k], 3.0);
        let oracle = enumerate(&f, &a);
        let log_z = log_partition(&f, &a).map_err(e2s)?;
        let err = (log_z - oracle.log_z).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || {
            format!("case {case}: log Z {log_z} vs enumeration {}", oracle.log_z)
        })?;
        let path = viterbi(&f, &a, None).map_err(e2s)?;
        let score = oracle_score(&f, &a, &path);
        ensure(score == oracle.best, || {
            format!("case {case}: Viterbi path scores {score}, best is {}", oracle.best)
        })?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{cases} instances, max |dlogZ| {worst:.1e}, {secs:.2}s"))
}

fn end_to_end_gradient_check() -> Outcome {
    let mut config = tiny_model_config();
    config.dropout = 0.5;
    let words = nertag::features::WordVocab::new(["paris", "visited", "mr", "x"]);
    let chars = nertag::char_cnn::CharVocab::new("ParisvtedMrX0".chars());
    let tagset = Tagset::new(["LOC"]);
    let mut model = Model::new(config, words, chars, tagset, None, &mut RngState::new(5)).map_err(e2s)?;
    // Non-zero transitions so their gradient is exercised away from zero.
    let mut r = rng(6);
    let id = model.params.require("transitions").map_err(e2s)?;
    *model.params.value_mut(id) = random_tensor(&mut r, &[6, 5], 0.5);

    let sent = |toks: &[&str], spans: &[EntitySpan]| {
        let toks: Vec<String> = toks.iter().map(|s| s.to_string()).collect();
        model.featurize(&toks, Some(spans))
    };
    let a = sent(&["Mr", "visited", "Paris"], &[EntitySpan::new(2, 2, "LOC")]).map_err(e2s)?;
    let b = sent(&["PARIS", "x0", "Lyon"], &[EntitySpan::new(0, 1, "LOC")]).map_err(e2s)?;
    let check = gradient_check(&mut model, &[&a, &b], Mode::Train, 17, 1e-6);
    ensure(check.max_rel <= 1e-4, || {
        format!("max relative error {:.2e} at {}", check.max_rel, check.worst)
    })?;
    Ok(format!(
        "{} scalars, max relative error {:.2e}",
        check.entries, check.max_rel
    ))
}

fn lexicon_against_brute_force() -> Outcome {
    let mut r = rng(21);
    let cases = 1200;
    let mut nonempty = 0usize;
    for case in 0..cases {
        let (lex, entries, short) = random_lexicon(&mut r);
        let tokens = random_tokens(&mut r);
        for mode in [MatchMode::Exact, MatchMode::Partial, MatchMode::Collobert] {
            let got = match_sentence(&lex, &tokens, mode).marks;
            let want = oracle_marks(&entries, &short, &tokens, mode);
            ensure(got == want, || {
                format!("case {case} {mode:?} on {tokens:?}: got {got:?}, oracle {want:?}")
            })?;
            nonempty += got.iter().flatten().filter(|m| **m != nertag::lexicon::Mark::O).count();
        }
    }
    let (tokens, lex) = example_sentence();
    let got = match_sentence(&lex, &tokens, MatchMode::Partial);
    for (cat, want) in [
        ("LOC", "- - - - - B I - S - -"),
        ("MISC", "- - - S - B I S S S S"),
        ("ORG", "- - - - - B I B I I E"),
        ("PER", "B E - - - - - - S - -"),
    ] {
        let row = marks_row(got.row(cat).ok_or("missing category")?);
        ensure(row == want, || {
            format!("example sentence {cat}: got `{row}`, expected `{want}`")
        })?;
    }
    Ok(format!(
        "{cases} cases x 3 modes ({nonempty} non-O marks) and the example sentence"
    ))
}

fn bioes_codec() -> Outcome {
    let mut r = rng(31);
    let cats = ["LOC", "PER", "ORG"];
    let tagset = Tagset::new(cats);
    for case in 0..10_000 {
        let len = r.random_range(0..=12);
        let mut spans = Vec::new();
        let mut t = 0;
        while t < len {
            if r.random_bool(0.4) {
                let end = (t + r.random_range(0..3)).min(len - 1);
                spans.push(EntitySpan::new(t, end, cats[r.random_range(0..3)]));
                t = end + 1;
            } else {
                t += 1;
            }
        }
        let tags = spans_to_tags(&spans, len).map_err(e2s)?;
        ensure(is_valid_bioes(&tags) && tags_to_spans(&tags) == spans, || {
            format!("round trip {case}: {spans:?}")
        })?;
        let ids = spans_to_bioes(&spans, len, &tagset).map_err(e2s)?;
        ensure(bioes_to_spans(&ids, &tagset) == spans, || {
            format!("id round trip {case}: {spans:?}")
        })?;
    }

    let alphabet: Vec<String> = ["O", "B-X", "I-X", "E-X", "S-X", "B-Y", "I-Y", "E-Y", "S-Y"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut exhaustive = 0;
    for len in 0..=4 {
        for seq in all_sequences(len, alphabet.len()) {
            let tags: Vec<String> = seq.iter().map(|&i| alphabet[i].clone()).collect();
            let parsed: Vec<SchemeTag> = tags.iter().map(|t| SchemeTag::parse(t).unwrap()).collect();
            let got = span_triples(&tags_to_spans(&parsed));
            ensure(got == repair_oracle(&tags), || {
                format!("repair of {tags:?}: got {got:?}")
            })?;
            exhaustive += 1;
        }
    }

    let iob = ["O", "B-X", "I-X", "B-Y", "I-Y"];
    for case in 0..10_000 {
        let len = r.random_range(0..=10);
        let tags: Vec<String> = (0..len)
            .map(|_| iob[r.random_range(0..iob.len())].to_string())
            .collect();
        let got = span_triples(&extract_spans(&tags, Dialect::Iob1).map_err(|e| e.message)?);
        let want = conlleval_chunks(&tags);
        ensure(got == want, || {
            format!("IOB case {case} {tags:?}: got {got:?}, reference {want:?}")
        })?;
    }
    Ok(format!(
        "10000 round trips, {exhaustive} exhaustive repairs, 10000 IOB sequences"
    ))
}

fn small_run(dropout: f64, seed: u64, epochs: usize) -> RunConfig {
    RunConfig {
        word_dim: 25,
        caps: true,
        char_dim: 10,
        cnn_output: 20,
        lstm_size: 50,
        dropout,
        learning_rate: 0.01,
        epochs,
        batch_size: 9,
        seed,
        checkpoint_every: 0,
        ..RunConfig::default()
    }
}

fn overfit() -> Outcome {
    let sentences = single_token_sentences(50, 41, 9);
    let mut finals = Vec::new();
    for seed in [3, 4, 5] {
        let inputs = TrainInputs {
            train: to_corpus(&sentences, Dialect::Bio2, "overfit"),
            dev: None,
            embeddings: None,
            lexicons: Vec::new(),
        };
        let config = RunConfig {
            caps: true,
            lstm_size: 50,
            dropout: 0.5,
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 9,
            seed,
            checkpoint_every: 0,
            ..RunConfig::default()
        };
        let out = train_with(&config, inputs, Execution::default()).map_err(e2s)?;
        let f1 = out.log.last().and_then(|r| r.train_f1).ok_or("no train F1 logged")?;
        ensure(f1 >= 99.0, || {
            format!("seed {seed}: final train F1 {f1:.2} after 30 epochs")
        })?;
        finals.push(format!("{f1:.2}"));
    }
    Ok(format!(
        "final train F1 after 30 epochs, seeds 3/4/5: {}",
        finals.join(", ")
    ))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn dropout_helps_or_ties() -> Outcome {
    let train_set = to_corpus(&cue_sentences(200, 51, 30), Dialect::Bio2, "train");
    // Half of the held-out names never occur in training.
    let held_out = to_corpus(&cue_sentences(50, 52, 60), Dialect::Bio2, "held-out");
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in 1..=5 {
        for (p, sink) in [(0.5, &mut with), (0.0, &mut without)] {
            let inputs = TrainInputs {
                train: train_set.clone(),
                dev: Some(held_out.clone()),
                embeddings: None,
                lexicons: Vec::new(),
            };
            let mut config = small_run(p, seed, 80);
            config.train_tail = 0;
            let out = train_with(&config, inputs, Execution::default()).map_err(e2s)?;
            sink.push(out.log.last().and_then(|r| r.dev_f1).ok_or("no held-out score")?);
        }
    }
    let (m_with, m_without) = (median(with.clone()), median(without.clone()));
    ensure(m_with >= m_without - 1.0, || {
        format!("median held-out F1 {m_with:.2} with dropout vs {m_without:.2} without ({with:?} / {without:?})")
    })?;
    Ok(format!(
        "median held-out F1 {m_with:.2} with dropout 0.5, {m_without:.2} without"
    ))
}

fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), String> {
    let mut buf = Vec::new();
    write_conll(&mut buf, corpus).map_err(|e| e.to_string())?;
    fs::write(path, buf).map_err(|e| e.to_string())
}

fn files_in(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = entry.path();
        if p.is_dir() {
            out.extend(files_in(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train_path = tmp.path().join("train.conll");
    let dev_path = tmp.path().join("dev.conll");
    write_corpus(
        &train_path,
        &to_corpus(&synthetic_sentences(60, 61, 9), Dialect::Iob1, "train"),
    )?;
    write_corpus(
        &dev_path,
        &to_corpus(&synthetic_sentences(20, 62, 12), Dialect::Iob1, "dev"),
    )?;

    // Both runs use the same model directory, since the saved run
    // configuration records it; each result is moved aside afterwards.
    let work = tmp.path().join("run");
    let run = |name: &str, exec: Execution| -> Result<std::path::PathBuf, String> {
        let config = RunConfig {
            train: Some(train_path.clone()),
            dev: Some(dev_path.clone()),
            model_dir: Some(work.clone()),
            checkpoint_every: 1,
            ..small_run(0.5, 9, 3)
        };
        train(&config, exec).map_err(e2s)?;
        let dir = tmp.path().join(name);
        fs::rename(&work, &dir).map_err(|e| e.to_string())?;
        Ok(dir)
    };
    let a = run("a", Execution::default())?;
    let b = run("b", Execution::Sequential)?;
    let (fa, fb) = (files_in(&a), files_in(&b));
    let mut compared = 0;
    for (pa, pb) in fa.iter().zip(&fb) {
        ensure(pa.strip_prefix(&a).ok() == pb.strip_prefix(&b).ok(), || {
            format!("runs wrote different files: {} vs {}", pa.display(), pb.display())
        })?;
        if pa.ends_with(LOG_FILE) {
            continue;
        }
        let same = fs::read(pa).map_err(|e| e.to_string())? == fs::read(pb).map_err(|e| e.to_string())?;
        ensure(same, || {
            format!("{} differs between runs", pa.strip_prefix(&a).unwrap().display())
        })?;
        compared += 1;
    }
    ensure(fa.len() == fb.len(), || "runs wrote different numbers of files".into())?;

    let (loaded, _) = load_checkpoint(&a.join(FINAL_DIR)).map_err(e2s)?;
    let resaved = tmp.path().join("resaved");
    loaded.save(&resaved).map_err(e2s)?;
    for f in ["params.nstp", "model.json"] {
        let same = fs::read(a.join(FINAL_DIR).join(f)).ok() == fs::read(resaved.join(f)).ok();
        ensure(same, || format!("{f} changed after load and save"))?;
    }
    let (reloaded, _) = load_checkpoint(&a.join(FINAL_DIR)).map_err(e2s)?;
    let sentences: Vec<Vec<String>> = synthetic_sentences(40, 63, 14).into_iter().map(|(t, _)| t).collect();
    let x = loaded
        .tag_sentences(&sentences, true, Execution::default())
        .map_err(e2s)?;
    let y = reloaded
        .tag_sentences(&sentences, true, Execution::Sequential)
        .map_err(e2s)?;
    ensure(x == y, || "tagging differs between loads".into())?;
    Ok(format!(
        "{compared} files byte-identical across parallel and sequential runs; reload stable"
    ))
}

fn decoding_validity() -> Outcome {
    let mut r = rng(71);
    let mut invalid_unconstrained = 0;
    let cases = 1000;
    let mut model: Option<Model> = None;
    for case in 0..cases {
        if case % 50 == 0 {
            let corpus = to_corpus(&synthetic_sentences(10, case as u64, 9), Dialect::Bio2, "v");
            let vocabs = nertag::data::build_vocabs(&corpus, None).map_err(e2s)?;
            let mut m = Model::new(
                tiny_model_config(),
                vocabs.words,
                vocabs.chars,
                vocabs.tagset,
                None,
                &mut RngState::new(case as u64),
            )
            .map_err(e2s)?;
            let id = m.params.require("transitions").map_err(e2s)?;
            let shape = m.params.value(id).shape().to_vec();
            *m.params.value_mut(id) = random_tensor(&mut r, &shape, 3.0);
            model = Some(m);
        }
        let m = model.as_ref().unwrap();
        let len = r.random_range(1..=12);
        let toks: Vec<String> = (0..len).map(|_| format!("w{}", r.random_range(0..30))).collect();
        let c = m
            .tag_sentences(&[toks.clone()], true, Execution::Sequential)
            .map_err(e2s)?
            .remove(0);
        let ctags = m.tagset.tags(&c);
        ensure(is_valid_bioes(&ctags), || {
            format!("case {case}: constrained output {ctags:?} is invalid")
        })?;
        let u = m
            .tag_sentences(&[toks], false, Execution::Sequential)
            .map_err(e2s)?
            .remove(0);
        let utags = m.tagset.tags(&u);
        if !is_valid_bioes(&utags) {
            invalid_unconstrained += 1;
        }
        let strings: Vec<String> = utags.iter().map(ToString::to_string).collect();
        let spans = span_triples(&tags_to_spans(&utags));
        ensure(spans == repair_oracle(&strings), || {
            format!("case {case}: repair of {strings:?}")
        })?;
    }
    Ok(format!(
        "{cases} sentences; constrained always valid, {invalid_unconstrained} invalid unconstrained outputs repaired"
    ))
}

fn round2(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

fn scorer_agreement() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (name, dialect, digit_split) in [
        ("iob1", Dialect::Iob1, false),
        ("bio2", Dialect::Bio2, true),
        ("bioes", Dialect::Bioes, false),
    ] {
        let train_path = tmp.path().join(format!("{name}.train"));
        let dev_path = tmp.path().join(format!("{name}.dev"));
        let mut dev_sents = synthetic_sentences(30, 82, 20);
        // Glue a year onto some tokens so digit splitting changes tokenization.
        for (toks, _) in dev_sents.iter_mut().step_by(3) {
            toks[0] = format!("{}1999", toks[0]);
        }
        write_corpus(
            &train_path,
            &to_corpus(&synthetic_sentences(40, 81, 9), dialect, "train"),
        )?;
        write_corpus(&dev_path, &to_corpus(&dev_sents, dialect, "dev"))?;
        let dir = tmp.path().join(name);
        let config = RunConfig {
            train: Some(train_path),
            dev: Some(dev_path),
            model_dir: Some(dir.clone()),
            dialect,
            digit_split,
            ..small_run(0.5, 4, 4)
        };
        let out = train(&config, Execution::default()).map_err(e2s)?;
        let pred_dir = dir.join("predictions");
        let gold = pred_dir.join("dev.gold.conll");
        for rec in &out.log.records {
            let logged = rec.dev_f1.ok_or("missing dev F1")?;
            let pred = pred_dir.join(format!("dev-epoch-{:04}.conll", rec.epoch));
            let report = evaluate_files(&gold, &pred, Dialect::Auto).map_err(e2s)?;
            let scored = report.overall.f1();
            ensure(round2(logged) == round2(scored), || {
                format!("{name} epoch {}: logged {logged:.2}, scorer {scored:.2}", rec.epoch)
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} epochs across IOB1, BIO2 (digit split) and BIOES corpora agree"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        (
            "linear-chain log partition and Viterbi match enumeration",
            crf_against_enumeration,
        ),
        ("end-to-end gradient check", end_to_end_gradient_check),
        ("lexicon matching matches brute force", lexicon_against_brute_force),
        ("BIOES encoding, repair and IOB reading", bioes_codec),
        ("small corpus is memorized", overfit),
        ("dropout does not hurt held-out F1", dropout_helps_or_ties),
        ("deterministic training and checkpoints", determinism),
        ("decoded tag sequences are valid or repaired", decoding_validity),
        ("logged dev F1 matches the scorer", scorer_agreement),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = run();
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
