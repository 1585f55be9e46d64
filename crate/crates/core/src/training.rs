//! Targets, loss, the optimization loop, and checkpoints.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::data_model::{canonicalize, find_subsequences, tokenize, SlotKind, SlotSpec, Turn, DONTCARE, NONE};
use crate::embeddings::{build_vocab, EmbeddingSource, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, ModelPredictor};
use crate::graph::{ParamGrads, Var};
use crate::model::{Ablations, DecoderInit, Model, ModelConfig, Session, TurnEncoding};
use crate::params::{Adam, NamedTensor};
use crate::state_space::MemoryLayout;
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Sum the generate path and every copy path before the log.
    #[default]
    Marginalize,
    PreferGenerate,
    PreferCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d_rnn: usize,
    /// Width of seeded-random embeddings; ignored with a word-vector file.
    pub d_emb: usize,
    pub embeddings: Option<PathBuf>,
    pub ngram_dim: usize,
    pub learning_rate: f64,
    pub dropout_keep: f64,
    pub epochs: usize,
    /// Turns per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub tie_encoders: bool,
    pub decoder_init: DecoderInit,
    pub max_copy_len: usize,
    pub target_policy: TargetPolicy,
    #[serde(flatten)]
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_rnn: 200,
            d_emb: 100,
            embeddings: None,
            ngram_dim: 100,
            learning_rate: 0.001,
            dropout_keep: 0.8,
            epochs: 50,
            batch_size: 1,
            seed: 0,
            tie_encoders: false,
            decoder_init: DecoderInit::ActionContext,
            max_copy_len: 5,
            target_policy: TargetPolicy::Marginalize,
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Config(format!("dropout_keep must lie in (0, 1], got {}", self.dropout_keep)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.d_emb == 0 && self.embeddings.is_none() {
            return Err(Error::Config("d_emb must be positive".into()));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_rnn: self.d_rnn,
            tie_encoders: self.tie_encoders,
            decoder_init: self.decoder_init,
            max_copy_len: self.max_copy_len,
            ablations: self.ablations,
        }
    }
}

/// Supervision for one (turn, slot).
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSet {
    Single {
        /// Generate or special row.
        generate: Option<usize>,
        /// Utterance positions of each verbatim occurrence; stop follows.
        copies: Vec<Vec<usize>>,
        /// Gold value unreachable; fell back to `none`.
        fallback: bool,
    },
    Multi {
        targets: Vec<f64>,
    },
}

/// Builds the valid targets of `spec` for `turn` over a memory with `layout`.
pub fn build_targets(turn: &Turn, spec: &SlotSpec, layout: &MemoryLayout, policy: TargetPolicy, max_copy_len: usize) -> TargetSet {
    let utt = &turn.user_utterance;
    let occurrences = |value: &str| -> Vec<Vec<usize>> {
        let needle = tokenize(value);
        if layout.n_copy == 0 || needle.is_empty() || needle.len() > max_copy_len {
            return Vec::new();
        }
        find_subsequences(utt, &needle)
            .into_iter()
            .map(|p| (p..p + needle.len()).collect())
            .collect()
    };
    let special = |name: &str| spec.special_index(name).map(|i| layout.special_row(i));
    match spec.kind {
        SlotKind::Single => {
            let gold = turn.gold.turn_goal.get(&spec.name).map(|v| canonicalize(v)).unwrap_or_else(|| NONE.to_owned());
            if gold == NONE || gold == DONTCARE {
                return TargetSet::Single {
                    generate: special(&gold),
                    copies: Vec::new(),
                    fallback: false,
                };
            }
            let mut generate = spec.value_index(&gold).map(|v| layout.generate_row(v));
            let mut copies = occurrences(&gold);
            match policy {
                TargetPolicy::Marginalize => {}
                TargetPolicy::PreferGenerate if generate.is_some() => copies.clear(),
                TargetPolicy::PreferCopy if !copies.is_empty() => generate = None,
                _ => {}
            }
            if generate.is_none() && copies.is_empty() {
                log::debug!("slot {}: value '{gold}' is neither known nor in the utterance; training on none", spec.name);
                return TargetSet::Single {
                    generate: special(NONE),
                    copies,
                    fallback: true,
                };
            }
            TargetSet::Single {
                generate,
                copies,
                fallback: false,
            }
        }
        SlotKind::Multi => {
            let mut targets = vec![0.0; layout.rows()];
            for r in &turn.gold.requests {
                if let Some(v) = spec.value_index(r) {
                    targets[layout.generate_row(v)] = 1.0;
                }
                for occ in occurrences(r) {
                    for p in occ {
                        if let Some(row) = layout.copy_row(p) {
                            targets[row] = 1.0;
                        }
                    }
                }
            }
            if turn.gold.requests.is_empty() {
                if let Some(row) = special(NONE) {
                    targets[row] = 1.0;
                }
            }
            TargetSet::Multi { targets }
        }
    }
}

/// Teacher-forced loss of one slot. Single slots: `−log Σ P(target)`, where a
/// copy path's probability is the product of its step probabilities (steps
/// after the first are normalized over copy rows and stop). Multi slots: mean
/// binary cross-entropy over memory rows.
pub fn slot_loss(session: &mut Session, enc: &TurnEncoding, slot: usize, targets: &TargetSet) -> Var {
    let ctx = &enc.slots[slot];
    let layout = ctx.memory.layout;
    let (state, scores) = session.first_step(ctx);
    match targets {
        TargetSet::Multi { targets } => session.g.bce_with_logits(scores, Tensor::column(targets.clone())),
        TargetSet::Single { generate, copies, .. } => {
            let p1 = session.g.softmax(scores);
            let mut terms = Vec::new();
            if let Some(r) = *generate {
                terms.push(session.g.pick(p1, r));
            }
            if let Some(first) = copies.first() {
                // every occurrence copies the same tokens, so the decoder
                // states along the path are shared
                let allowed = layout.continuation_rows();
                let stop_idx = allowed.len() - 1;
                let mut steps = Vec::with_capacity(first.len());
                let mut st = state;
                for &pos in first {
                    let (next, sc) = session.next_step(ctx, st, &enc.utterance[pos]);
                    st = next;
                    let restricted = session.g.rows(sc, &allowed);
                    steps.push(session.g.softmax(restricted));
                }
                for positions in copies {
                    let mut prob = session.g.pick(p1, positions[0]);
                    for (k, &pos) in positions.iter().enumerate().skip(1) {
                        let p = session.g.pick(steps[k - 1], pos);
                        prob = session.g.mul(prob, p);
                    }
                    let stop = session.g.pick(steps[positions.len() - 1], stop_idx);
                    prob = session.g.mul(prob, stop);
                    terms.push(prob);
                }
            }
            if terms.is_empty() {
                terms.push(session.g.constant(Tensor::scalar(0.0)));
            }
            let total = session.g.add_n(&terms);
            let log = session.g.log(total, PROB_FLOOR);
            session.g.scale(log, -1.0)
        }
    }
}

/// Mean slot loss over `turns` in one graph, with gradients.
pub fn batch_loss(model: &Model, turns: &[&Turn], policy: TargetPolicy, dropout: Option<(f64, ChaCha8Rng)>) -> std::result::Result<(f64, ParamGrads), (usize, f64)> {
    let mut session = Session::new(model, dropout);
    let mut losses = Vec::new();
    for turn in turns {
        let enc = session.encode_turn(turn);
        for (s, spec) in model.ontology.slots.iter().enumerate() {
            let t = build_targets(turn, spec, &enc.slots[s].memory.layout, policy, model.config.max_copy_len);
            let l = slot_loss(&mut session, &enc, s, &t);
            let v = session.g.value(l).item();
            if !v.is_finite() {
                return Err((s, v));
            }
            losses.push(l);
        }
    }
    let sum = session.g.add_n(&losses);
    let mean = session.g.scale(sum, 1.0 / losses.len() as f64);
    let value = session.g.value(mean).item();
    Ok((value, session.g.backward(mean)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Joint-goal accuracy on the selection split.
    pub joint_goal: f64,
    pub selection_split: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch on the selection split.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn build_embeddings(corpus: &Corpus, config: &TrainConfig) -> Result<EmbeddingTable> {
    let vocab = build_vocab(corpus);
    match &config.embeddings {
        Some(path) => EmbeddingTable::load_pretrained(path, vocab, config.ngram_dim, config.seed),
        None => Ok(EmbeddingTable::seeded_random(vocab, config.d_emb, config.seed)),
    }
}

/// Freshly initialized model for `corpus`.
pub fn build_model(corpus: &Corpus, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    let table = build_embeddings(corpus, config)?;
    Model::new(config.model_config(), corpus.ontology.clone(), table, config.seed)
}

pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    let model = build_model(corpus, config)?;
    train_model(model, corpus, config, |_| {})
}

/// Adam over shuffled train turns; after every epoch the joint goal on dev
/// (train when dev is empty) decides which parameters are kept.
pub fn train_model(mut model: Model, corpus: &Corpus, config: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    config.validate()?;
    corpus.validate()?;
    let turns: Vec<&Turn> = corpus.train.iter().flat_map(|d| d.turns.iter()).collect();
    let (selection, selection_split) = if corpus.dev.is_empty() {
        (&corpus.train, "train")
    } else {
        (&corpus.dev, "dev")
    };
    warn_unreachable(&model, &turns, config.target_policy);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..turns.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::params::ParamStore)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Turn> = chunk.iter().map(|&i| turns[i]).collect();
            let dropout = Some((config.dropout_keep, ChaCha8Rng::from_rng(&mut rng)));
            let (loss, grads) = batch_loss(&model, &batch, config.target_policy, dropout).map_err(|(s, _)| Error::NonFiniteLoss {
                epoch,
                batch: b,
                slot: model.ontology.slots[s].name.clone(),
            })?;
            if !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    slot: "(gradient)".into(),
                });
            }
            adam.step(&mut model.params, &grads);
            total += loss;
            batches += 1;
        }
        let metrics = evaluate(&mut ModelPredictor::new(&model), &model.ontology, selection)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / batches.max(1) as f64,
            joint_goal: metrics.joint_goal,
            selection_split: selection_split.to_owned(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, {selection_split} joint goal {:.4}",
            record.train_loss,
            record.joint_goal
        );
        on_epoch(&record);
        if best.as_ref().is_none_or(|(acc, _, _)| record.joint_goal > *acc) {
            best = Some((record.joint_goal, epoch, model.params.clone()));
        }
        history.push(record);
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Reports once how many train labels can be neither generated nor copied.
fn warn_unreachable(model: &Model, turns: &[&Turn], policy: TargetPolicy) {
    let mut count = 0usize;
    for turn in turns {
        for spec in model.ontology.single_slots() {
            let n_copy = if model.config.ablations.copy { turn.user_utterance.len() } else { 0 };
            let layout = MemoryLayout::new(n_copy, spec.values.len(), spec.specials.len());
            if let TargetSet::Single { fallback: true, .. } = build_targets(turn, spec, &layout, policy, model.config.max_copy_len) {
                count += 1;
            }
        }
    }
    if count > 0 {
        log::warn!("{count} train labels are neither ontology values nor utterance spans; they are trained as none");
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: config echo, vocabulary and its hash, the frozen
/// embedding matrix, the model-visible ontology and every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub embedding_source: EmbeddingSource,
    pub embeddings: Tensor,
    pub ontology: crate::data_model::Ontology,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
    #[serde(default)]
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn new(model: &Model, config: &TrainConfig, history: &[EpochRecord], best_epoch: usize) -> Self {
        let mut config = config.clone();
        config.ablations = model.config.ablations;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            vocab_hash: model.embeddings.vocab.hash(),
            vocab: model.embeddings.vocab.tokens().to_vec(),
            embedding_source: model.embeddings.source,
            embeddings: model.embeddings.matrix.clone(),
            ontology: model.ontology.clone(),
            params: model.params.to_named(),
            history: history.to_vec(),
            best_epoch,
        }
    }

    pub fn from_outcome(outcome: &TrainOutcome, config: &TrainConfig) -> Self {
        Self::new(&outcome.model, config, &outcome.history, outcome.best_epoch)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!("checkpoint version {} is not supported", c.version)));
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Refuses corpora whose vocabulary differs from the one trained on.
    pub fn ensure_vocab(&self, corpus: &Corpus) -> Result<()> {
        let found = build_vocab(corpus).hash();
        if found != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn to_model(&self) -> Result<Model> {
        let vocab = Vocabulary::from_tokens(self.vocab.iter().cloned());
        if vocab.tokens() != self.vocab.as_slice() || vocab.hash() != self.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found: vocab.hash(),
            });
        }
        if self.embeddings.shape().0 != vocab.len() {
            return Err(Error::Contract("embedding rows do not match the vocabulary".into()));
        }
        let table = EmbeddingTable {
            vocab,
            matrix: self.embeddings.clone(),
            source: self.embedding_source,
        };
        let mut model = Model::new(self.config.model_config(), self.ontology.clone(), table, 0)?;
        model.params.load_named(&self.params)?;
        Ok(model)
    }

    /// Loads a model for `corpus`, refusing a vocabulary mismatch.
    pub fn model_for(&self, corpus: &Corpus) -> Result<Model> {
        self.ensure_vocab(corpus)?;
        self.to_model()
    }
}
