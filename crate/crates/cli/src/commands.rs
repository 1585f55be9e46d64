use std::path::{Path, PathBuf};

use anyhow::Context;
use cedst::corpus::{generate_synthetic, load_babi_task5, load_woz, mask_unknown_values, BabiFiles, Corpus, Split, SynthConfig};
use cedst::evaluation::evaluate_model;
use cedst::training::{build_model, train_model, Checkpoint, TrainConfig};
use serde_json::json;

use crate::args::{parse_name, resolve_seed, Command, EvalArgs, InspectArgs, MaskArgs, SynthArgs, TrainArgs};
use crate::output::{output_dir, write_atomic};
use crate::Invalid;

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => train(a.resolve()?),
        Command::Eval(a) => eval(a.resolve()?),
        Command::Mask(a) => mask(a.resolve()?),
        Command::Synth(a) => synth(a.resolve()?),
        Command::Inspect(a) => inspect(a.resolve()?),
    }
}

fn existing(path: &Path, what: &str) -> anyhow::Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Invalid(format!("{what} {} does not exist", path.display())).into())
    }
}

fn required<T: Clone>(value: &Option<T>, key: &str) -> anyhow::Result<T> {
    value.clone().ok_or_else(|| Invalid(format!("--{} is required", key.replace('_', "-"))).into())
}

/// Either `--corpus` or `--babi-train` + `--babi-test` (and optional dev).
fn load_corpus(corpus: &Option<PathBuf>, train: &Option<PathBuf>, dev: &Option<PathBuf>, test: &Option<PathBuf>) -> anyhow::Result<Corpus> {
    match (corpus, train, test) {
        (Some(path), None, None) if dev.is_none() => Ok(load_woz(existing(path, "corpus")?)?),
        (None, Some(train), Some(test)) => {
            let files = BabiFiles {
                train: existing(train, "bAbI train file")?,
                dev: dev.as_ref().map(|d| existing(d, "bAbI dev file")).transpose()?,
                test: existing(test, "bAbI test file")?,
            };
            Ok(load_babi_task5(&files)?)
        }
        _ => Err(Invalid("give either --corpus or --babi-train and --babi-test".into()).into()),
    }
}

fn train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut c = TrainConfig::default();
    macro_rules! take {
        ($($f:ident),*) => {
            $(
                if let Some(v) = a.$f.clone() {
                    c.$f = v;
                }
            )*
        };
    }
    take!(d_rnn, d_emb, ngram_dim, learning_rate, dropout_keep, epochs, batch_size, tie_encoders, max_copy_len);
    if let Some(p) = &a.embeddings {
        c.embeddings = Some(existing(p, "embeddings file")?);
    }
    if let Some(v) = &a.decoder_init {
        c.decoder_init = parse_name("decoder_init", v)?;
    }
    if let Some(v) = &a.target_policy {
        c.target_policy = parse_name("target_policy", v)?;
    }
    let ab = &mut c.ablations;
    for (flag, slot) in [
        (a.multi_encoder, &mut ab.multi_encoder),
        (a.multi_decoder, &mut ab.multi_decoder),
        (a.copy, &mut ab.copy),
        (a.self_attention, &mut ab.self_attention),
        (a.shared_lstm, &mut ab.shared_lstm),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    c.seed = a.seed.expect("seed resolved before");
    c.validate()?;
    Ok(c)
}

fn train(mut a: TrainArgs) -> anyhow::Result<()> {
    a.seed = Some(resolve_seed(a.seed, TrainConfig::default().seed)?);
    let out = output_dir(&required(&a.out, "out")?)?;
    let config = train_config(&a)?;
    let corpus = load_corpus(&a.corpus, &a.babi_train, &a.babi_dev, &a.babi_test)?;
    write_atomic(&out.join("run_config.toml"), &toml::to_string(&a)?)?;

    let model = build_model(&corpus, &config)?;
    log::info!(
        "training on {} train dialogues, {} parameters, vocabulary {}",
        corpus.train.len(),
        model.params.scalar_count(),
        model.embeddings.vocab.len()
    );
    let outcome = train_model(model, &corpus, &config, |_| {})?;
    let checkpoint = Checkpoint::from_outcome(&outcome, &config);
    write_atomic(&out.join("checkpoint.json"), &checkpoint.to_json())?;
    write_atomic(&out.join("history.json"), &(serde_json::to_string_pretty(&outcome.history)? + "\n"))?;

    let mut metrics = serde_json::Map::new();
    metrics.insert("best_epoch".into(), json!(outcome.best_epoch));
    for split in Split::ALL {
        if !corpus.split(split).is_empty() {
            let m = evaluate_model(&outcome.model, &corpus, split)?;
            log::info!("{split}: joint goal {:.4}, turn request {:.4}", m.joint_goal, m.turn_request);
            metrics.insert(split.name().into(), serde_json::to_value(&m)?);
        }
    }
    write_atomic(&out.join("metrics.json"), &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let path = existing(&required(&a.checkpoint, "checkpoint")?, "checkpoint")?;
    let split: Split = parse_name("split", a.split.as_deref().unwrap_or("test"))?;
    let checkpoint = Checkpoint::load(&path)?;
    let corpus = load_corpus(&a.corpus, &a.babi_train, &a.babi_dev, &a.babi_test)?;
    let model = checkpoint.model_for(&corpus)?;
    let metrics = evaluate_model(&model, &corpus, split)?;
    match &a.out {
        Some(p) => write_atomic(p, &metrics.to_json())?,
        None => print!("{}", metrics.to_json()),
    }
    Ok(())
}

fn mask(mut a: MaskArgs) -> anyhow::Result<()> {
    a.seed = Some(resolve_seed(a.seed, 0)?);
    let ratio = required(&a.ratio, "ratio")?;
    let out = output_dir(&required(&a.out, "out")?)?;
    let corpus = load_corpus(&a.corpus, &a.babi_train, &a.babi_dev, &a.babi_test)?;
    let (masked, report) = mask_unknown_values(&corpus, ratio, a.seed.unwrap_or_default())?;
    write_atomic(&out.join("corpus.json"), &cedst::corpus::corpus_to_json(&masked))?;
    write_atomic(&out.join("mask_report.json"), &report.to_json())?;
    log::info!("masked {:.3} of slot values", report.achieved_ratio);
    Ok(())
}

fn synth(mut a: SynthArgs) -> anyhow::Result<()> {
    let mut c = SynthConfig::default();
    a.seed = Some(resolve_seed(a.seed, c.seed)?);
    macro_rules! take {
        ($($f:ident),*) => {
            $(
                if let Some(v) = a.$f.clone() {
                    c.$f = v;
                }
            )*
        };
    }
    take!(n_train, n_dev, n_test, vocab_size, values_per_slot, oov_test_fraction, oov_slots, paraphrase_noise, seed, max_turns);
    let out = output_dir(&required(&a.out, "out")?)?;
    let (corpus, manifest) = generate_synthetic(&c)?;
    write_atomic(&out.join("corpus.json"), &cedst::corpus::corpus_to_json(&corpus))?;
    write_atomic(&out.join("manifest.json"), &manifest.to_json())?;
    Ok(())
}

fn inspect(a: InspectArgs) -> anyhow::Result<()> {
    let path = existing(&required(&a.checkpoint, "checkpoint")?, "checkpoint")?;
    let checkpoint = Checkpoint::load(&path)?;
    let model = checkpoint.to_model().context("rebuilding model")?;
    println!("config:\n{}", toml::to_string(&checkpoint.config)?);
    println!("vocabulary: {} tokens, hash {}", checkpoint.vocab.len(), checkpoint.vocab_hash);
    println!("best epoch: {}", checkpoint.best_epoch);
    println!("parameters ({} scalars):", model.params.scalar_count());
    for id in model.params.ids() {
        let (r, c) = model.params.get(id).shape();
        println!("  {:<40} {r}x{c}", model.params.name(id));
    }
    println!("gates (beta utterance / action / value, gamma):");
    for g in model.gates() {
        println!(
            "  {:<16} {:.4} {:.4} {:.4} {:.4}",
            g.slot, g.beta_utterance, g.beta_action, g.beta_value, g.gamma
        );
    }
    Ok(())
}
