//! The full tracker: parameters for the three multi-encoders, the
//! multi-decoder and per-slot stop rows, plus the per-turn forward pass.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{tokenize, Ontology, SlotKind, Turn, NONE};
use crate::decoder::{self, decode_multi, decode_single, DecoderIds, DecoderPaths, DecoderState, Outcome, SlotPrediction};
use crate::embeddings::EmbeddingTable;
use crate::encoder::{encode_sequence, interact_actions, shared_states, EncoderIds, EncoderPaths};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::state_space::{build_memory, SlotMemory};
use crate::tensor::Tensor;

/// Component switches; `true` keeps the component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub multi_encoder: bool,
    pub multi_decoder: bool,
    pub copy: bool,
    pub self_attention: bool,
    pub shared_lstm: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            multi_encoder: true,
            multi_decoder: true,
            copy: true,
            self_attention: true,
            shared_lstm: true,
        }
    }
}

impl Ablations {
    pub const NAMES: [&'static str; 5] = ["multi_encoder", "multi_decoder", "copy", "self_attention", "shared_lstm"];

    pub fn validate(&self) -> Result<()> {
        if !self.multi_encoder && !self.shared_lstm {
            return Err(Error::Config(
                "multi_encoder=off and shared_lstm=off together leave no encoder".into(),
            ));
        }
        if !self.multi_decoder && !self.shared_lstm {
            return Err(Error::Config(
                "multi_decoder=off and shared_lstm=off together leave no decoder".into(),
            ));
        }
        Ok(())
    }

    /// Turns one named component off.
    pub fn without(mut self, name: &str) -> Result<Self> {
        match name {
            "multi_encoder" => self.multi_encoder = false,
            "multi_decoder" => self.multi_decoder = false,
            "copy" => self.copy = false,
            "self_attention" => self.self_attention = false,
            "shared_lstm" => self.shared_lstm = false,
            other => return Err(Error::Config(format!("unknown ablation '{other}'"))),
        }
        Ok(self)
    }

    pub fn encoder_paths(&self) -> EncoderPaths {
        EncoderPaths {
            private: self.multi_encoder,
            shared: self.shared_lstm,
            self_attention: self.self_attention,
        }
    }

    pub fn decoder_paths(&self) -> DecoderPaths {
        DecoderPaths {
            private: self.multi_decoder,
            shared: self.shared_lstm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderInit {
    Zeros,
    ActionContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_rnn: usize,
    /// One encoder parameter set for utterances, actions and values.
    pub tie_encoders: bool,
    pub decoder_init: DecoderInit,
    pub max_copy_len: usize,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_rnn: 200,
            tie_encoders: false,
            decoder_init: DecoderInit::ActionContext,
            max_copy_len: 5,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_rnn < 2 || !self.d_rnn.is_multiple_of(2) {
            return Err(Error::Config(format!("d_rnn must be even and at least 2, got {}", self.d_rnn)));
        }
        if self.max_copy_len == 0 {
            return Err(Error::Config("max_copy_len must be positive".into()));
        }
        self.ablations.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ModelIds {
    pub utterance: EncoderIds,
    pub action: EncoderIds,
    pub value: EncoderIds,
    pub decoder: DecoderIds,
    pub stop: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    /// The ontology the model can see; masked values are absent.
    pub ontology: Ontology,
    pub embeddings: EmbeddingTable,
    pub params: ParamStore,
    pub ids: ModelIds,
}

/// Per-slot gate values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotGates {
    pub slot: String,
    pub beta_utterance: f64,
    pub beta_action: f64,
    pub beta_value: f64,
    pub gamma: f64,
}

impl Model {
    /// Xavier-initialized parameters drawn from `seed`.
    pub fn new(config: ModelConfig, ontology: Ontology, embeddings: EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let ids = Self::register(&config, &ontology, embeddings.dim(), &mut params, &mut rng);
        Ok(Model {
            config,
            ontology,
            embeddings,
            params,
            ids,
        })
    }

    fn register(config: &ModelConfig, ontology: &Ontology, d_emb: usize, store: &mut ParamStore, rng: &mut impl Rng) -> ModelIds {
        let names: Vec<String> = ontology.slots.iter().map(|s| s.name.clone()).collect();
        let d = config.d_rnn;
        let utterance = EncoderIds::register(store, "enc.utt", &names, d_emb, d, rng);
        let (action, value) = if config.tie_encoders {
            (utterance.clone(), utterance.clone())
        } else {
            (
                EncoderIds::register(store, "enc.act", &names, d_emb, d, rng),
                EncoderIds::register(store, "enc.val", &names, d_emb, d, rng),
            )
        };
        let decoder = DecoderIds::register(store, &names, d_emb, d, rng);
        let stop = names.iter().map(|n| store.add_xavier(format!("stop.{n}"), 1, d, rng)).collect();
        ModelIds {
            utterance,
            action,
            value,
            decoder,
            stop,
        }
    }

    /// Applies ablation switches to an existing model.
    pub fn apply_ablation(mut self, flags: Ablations) -> Result<Self> {
        flags.validate()?;
        self.config.ablations = flags;
        Ok(self)
    }

    pub fn gates(&self) -> Vec<SlotGates> {
        let v = |id: ParamId| crate::tensor::sigmoid(self.params.get(id).item());
        self.ontology
            .slots
            .iter()
            .enumerate()
            .map(|(s, spec)| SlotGates {
                slot: spec.name.clone(),
                beta_utterance: v(self.ids.utterance.gate[s]),
                beta_action: v(self.ids.action.gate[s]),
                beta_value: v(self.ids.value.gate[s]),
                gamma: v(self.ids.decoder.gate[s]),
            })
            .collect()
    }

    /// Encoded values and specials per slot, without dropout.
    pub fn value_tables(&self) -> Vec<Tensor> {
        let mut session = Session::new(self, None);
        (0..self.ontology.slots.len())
            .map(|s| {
                let v = session.value_rows(s);
                session.g.value(v).clone()
            })
            .collect()
    }

    /// Decodes every slot of one turn.
    pub fn predict(&self, turn: &Turn, value_tables: Option<&[Tensor]>) -> Vec<SlotPrediction> {
        let mut session = Session::new(self, None);
        if let Some(tables) = value_tables {
            session.preset_values(tables);
        }
        let enc = session.encode_turn(turn);
        (0..self.ontology.slots.len()).map(|s| session.decode_slot(&enc, s)).collect()
    }

    /// Turn goal (single slots, `none` omitted) and request set of a turn.
    pub fn predict_labels(&self, turn: &Turn, value_tables: Option<&[Tensor]>) -> (BTreeMap<String, String>, BTreeSet<String>) {
        let preds = self.predict(turn, value_tables);
        let mut goal = BTreeMap::new();
        let mut requests = BTreeSet::new();
        for p in preds {
            let spec = &self.ontology.slots[p.slot];
            for o in &p.outcomes {
                let surface = o.surface(spec, &turn.user_utterance);
                if surface == NONE {
                    continue;
                }
                match spec.kind {
                    SlotKind::Single => {
                        goal.insert(spec.name.clone(), surface);
                    }
                    SlotKind::Multi => {
                        requests.insert(surface);
                    }
                }
            }
        }
        (goal, requests)
    }
}

/// Everything the decoder needs for one slot of one turn.
#[derive(Debug, Clone)]
pub struct SlotContext {
    pub memory: SlotMemory,
    /// `[H_u; c_a]`
    pub keys: Var,
    pub h0: Var,
}

#[derive(Debug, Clone)]
pub struct TurnEncoding {
    pub utterance: Vec<String>,
    pub slots: Vec<SlotContext>,
}

/// One forward graph over one or more turns. Encoded value rows are computed
/// once per session and shared by its turns.
pub struct Session<'m> {
    pub model: &'m Model,
    pub g: Graph,
    value_rows: Vec<Option<Var>>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'m> Session<'m> {
    /// `dropout = Some((keep, rng))` enables training-mode dropout.
    pub fn new(model: &'m Model, dropout: Option<(f64, ChaCha8Rng)>) -> Self {
        Session {
            model,
            g: Graph::new(),
            value_rows: vec![None; model.ontology.slots.len()],
            dropout: dropout.filter(|(keep, _)| *keep < 1.0),
        }
    }

    fn preset_values(&mut self, tables: &[Tensor]) {
        for (s, t) in tables.iter().enumerate() {
            self.value_rows[s] = Some(self.g.constant(t.clone()));
        }
    }

    /// Inverted dropout in training mode, identity otherwise.
    fn drop(&mut self, v: Var) -> Var {
        let Some((keep, rng)) = self.dropout.as_mut() else { return v };
        let keep = *keep;
        let (r, c) = self.g.shape(v);
        let mask: Vec<f64> = (0..r * c).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = self.g.constant(Tensor::from_vec(r, c, mask));
        self.g.mul(v, m)
    }

    fn embed(&mut self, tokens: &[String]) -> Var {
        let x = self.g.constant(self.model.embeddings.embed(tokens));
        self.drop(x)
    }

    /// Encoded values followed by specials for `slot`.
    pub fn value_rows(&mut self, slot: usize) -> Var {
        if let Some(v) = self.value_rows[slot] {
            return v;
        }
        let model = self.model;
        let spec = &model.ontology.slots[slot];
        let paths = model.config.ablations.encoder_paths();
        let mut rows = Vec::with_capacity(spec.values.len() + spec.specials.len());
        for v in spec.values.iter().chain(&spec.specials) {
            let x = self.embed(&tokenize(v));
            let out = encode_sequence(&mut self.g, &model.params, &model.ids.value, paths, slot, x, None);
            rows.push(self.drop(out.c));
        }
        let v = self.g.concat_rows(&rows);
        self.value_rows[slot] = Some(v);
        v
    }

    pub fn encode_turn(&mut self, turn: &Turn) -> TurnEncoding {
        let model = self.model;
        let paths = model.config.ablations.encoder_paths();
        let store = &model.params;
        let utt = &turn.user_utterance;
        let x_u = self.embed(utt);
        let shared_u = paths.shared.then(|| shared_states(&mut self.g, store, &model.ids.utterance, x_u));
        let actions: Vec<(Var, Option<Var>)> = turn
            .system_actions
            .iter()
            .map(|a| {
                let x = self.embed(&a.tokens());
                let sh = paths.shared.then(|| shared_states(&mut self.g, store, &model.ids.action, x));
                (x, sh)
            })
            .collect();
        let mut slots = Vec::with_capacity(model.ontology.slots.len());
        for (s, spec) in model.ontology.slots.iter().enumerate() {
            let out = encode_sequence(&mut self.g, store, &model.ids.utterance, paths, s, x_u, shared_u);
            let h_u = self.drop(out.h);
            let c_u = self.drop(out.c);
            let c_a = if actions.is_empty() {
                None
            } else {
                let mut rows = Vec::with_capacity(actions.len());
                for &(x, sh) in &actions {
                    let o = encode_sequence(&mut self.g, store, &model.ids.action, paths, s, x, sh);
                    rows.push(self.drop(o.c));
                }
                Some(self.g.concat_rows(&rows))
            };
            let c_n = interact_actions(&mut self.g, c_a, c_u);
            let keys = match c_a {
                Some(c_a) => self.g.concat_rows(&[h_u, c_a]),
                None => h_u,
            };
            let values = self.value_rows(s);
            let stop = self.g.param(store, model.ids.stop[s]);
            let copy_block = model.config.ablations.copy.then_some(h_u);
            let memory = build_memory(&mut self.g, s, spec, utt, copy_block, values, stop).expect("shapes agree by construction");
            let h0 = match model.config.decoder_init {
                DecoderInit::ActionContext => c_n,
                DecoderInit::Zeros => self.g.constant(Tensor::zeros(1, model.config.d_rnn)),
            };
            slots.push(SlotContext { memory, keys, h0 });
        }
        TurnEncoding {
            utterance: utt.clone(),
            slots,
        }
    }

    fn token_embedding(&mut self, token: &str) -> Var {
        self.g.constant(self.model.embeddings.embed(&[token]))
    }

    /// First decoder step from GO: new state and raw memory scores (`rows × 1`).
    pub fn first_step(&mut self, ctx: &SlotContext) -> (DecoderState, Var) {
        let paths = self.model.config.ablations.decoder_paths();
        let state = decoder::initial_state(&mut self.g, paths, ctx.h0);
        let go = self.g.constant(self.model.embeddings.go_row());
        self.step(ctx, state, go)
    }

    /// Continuation step fed with the embedding of `token`.
    pub fn next_step(&mut self, ctx: &SlotContext, state: DecoderState, token: &str) -> (DecoderState, Var) {
        let y = self.token_embedding(token);
        self.step(ctx, state, y)
    }

    fn step(&mut self, ctx: &SlotContext, state: DecoderState, y: Var) -> (DecoderState, Var) {
        let model = self.model;
        let (state, s_t) = decoder::decoder_step(&mut self.g, &model.params, &model.ids.decoder, ctx.memory.slot, state, y, ctx.keys);
        let st = self.g.transpose(s_t);
        let scores = self.g.matmul(ctx.memory.matrix, st);
        (state, scores)
    }

    pub fn decode_slot(&mut self, enc: &TurnEncoding, slot: usize) -> SlotPrediction {
        let model = self.model;
        let ctx = &enc.slots[slot];
        let spec = &model.ontology.slots[slot];
        let none = spec.special_index(NONE).expect("every slot has none");
        let layout = ctx.memory.layout;
        match spec.kind {
            SlotKind::Multi => {
                let (_, scores) = self.first_step(ctx);
                let (outcomes, dist) = decode_multi(&layout, &self.g.value(scores).data.clone(), none);
                SlotPrediction {
                    slot,
                    outcomes,
                    steps: vec![dist],
                }
            }
            SlotKind::Single => {
                let mut state: Option<DecoderState> = None;
                let mut scorer = |prev: Option<usize>| {
                    let (next, scores) = match (prev, state) {
                        (None, _) => self.first_step(ctx),
                        (Some(row), Some(st)) => self.next_step(ctx, st, &enc.utterance[row]),
                        (Some(_), None) => unreachable!("continuation before first step"),
                    };
                    state = Some(next);
                    self.g.value(scores).data.clone()
                };
                let (outcome, steps) = decode_single(&layout, &mut scorer, none, model.config.max_copy_len);
                SlotPrediction {
                    slot,
                    outcomes: vec![outcome],
                    steps,
                }
            }
        }
    }
}

impl Outcome {
    /// True when this outcome's surface is not a value or special of the slot.
    pub fn is_unknown_in(&self, ontology: &Ontology, slot: usize, utterance: &[String]) -> bool {
        let spec = &ontology.slots[slot];
        ontology.is_unknown(&spec.name, &self.surface(spec, utterance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{SlotSpec, SystemAction, TurnLabel};
    use crate::embeddings::Vocabulary;
    use crate::state_space::DistMode;
    use proptest::prelude::*;

    fn ontology() -> Ontology {
        Ontology::new(vec![
            SlotSpec::single("food", &["thai", "chinese"]),
            SlotSpec::multi("request", &["phone", "address"]),
        ])
    }

    const WORDS: [&str; 8] = ["i", "want", "thai", "food", "cheap", "phone", "please", "kosher"];

    fn model(ablations: Ablations, seed: u64) -> Model {
        let vocab = Vocabulary::from_tokens(WORDS.iter().map(|w| w.to_string()));
        let table = EmbeddingTable::seeded_random(vocab, 5, seed);
        let cfg = ModelConfig {
            d_rnn: 6,
            ablations,
            ..ModelConfig::default()
        };
        Model::new(cfg, ontology(), table, seed).unwrap()
    }

    fn turn(utt: &[&str]) -> Turn {
        Turn {
            system_actions: vec![SystemAction::new("request", Some("food"), None)],
            user_utterance: utt.iter().map(|w| w.to_string()).collect(),
            gold: TurnLabel::default(),
        }
    }

    #[test]
    fn ablation_names_and_conflicts() {
        let all = Ablations::default();
        for name in Ablations::NAMES {
            let off = all.without(name).unwrap();
            assert_ne!(off, all, "{name}");
            off.validate().unwrap();
        }
        assert!(all.without("attention").is_err());
        let bad = all.without("multi_decoder").unwrap().without("shared_lstm").unwrap();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let cfg = ModelConfig {
            d_rnn: 5,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tied_encoders_share_parameters() {
        let vocab = Vocabulary::from_tokens(WORDS.iter().map(|w| w.to_string()));
        let table = EmbeddingTable::seeded_random(vocab, 5, 0);
        let tied = ModelConfig {
            d_rnn: 6,
            tie_encoders: true,
            ..ModelConfig::default()
        };
        let a = Model::new(tied, ontology(), table.clone(), 0).unwrap();
        let b = model(Ablations::default(), 0);
        assert_eq!(a.ids.utterance.gate, a.ids.value.gate);
        assert!(a.params.len() < b.params.len());
    }

    #[test]
    fn initial_gates_are_even() {
        for g in model(Ablations::default(), 1).gates() {
            assert_eq!((g.beta_utterance, g.beta_action, g.beta_value, g.gamma), (0.5, 0.5, 0.5, 0.5));
        }
    }

    #[test]
    fn predictions_are_deterministic_and_cached_values_agree() {
        let m = model(Ablations::default(), 2);
        let t = turn(&["i", "want", "kosher", "food"]);
        let tables = m.value_tables();
        assert_eq!(m.predict(&t, None), m.predict(&t, Some(&tables)));
        assert_eq!(m.predict_labels(&t, None), m.predict_labels(&t, None));
        assert_eq!(tables[0].shape(), (4, 6));
        assert_eq!(tables[1].shape(), (3, 6));
    }

    #[test]
    fn without_copy_nothing_is_copied() {
        let mut m = model(Ablations::default().without("copy").unwrap(), 3);
        // large stop and value weights make every row decisive
        for id in m.params.ids().collect::<Vec<_>>() {
            for x in &mut m.params.get_mut(id).data {
                *x *= 4.0;
            }
        }
        for utt in [["kosher", "food", "please"], ["cheap", "thai", "phone"]] {
            let t = turn(&utt);
            for p in m.predict(&t, None) {
                assert!(p.outcomes.iter().all(|o| !o.is_copied()));
                let spec = &m.ontology.slots[p.slot];
                assert_eq!(p.steps[0].probs.len(), spec.values.len() + spec.specials.len() + 1);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn decoded_distributions_are_normalized(seed in 0u64..1000, words in prop::collection::vec(0usize..8, 1..7), scale in 0.5f64..4.0) {
            let mut m = model(Ablations::default(), seed);
            for id in m.params.ids().collect::<Vec<_>>() {
                for x in &mut m.params.get_mut(id).data {
                    *x *= scale;
                }
            }
            let utt: Vec<&str> = words.iter().map(|&i| WORDS[i]).collect();
            let t = turn(&utt);
            for p in m.predict(&t, None) {
                for d in &p.steps {
                    match d.mode {
                        DistMode::Softmax => prop_assert!((d.total() - 1.0).abs() < 1e-9),
                        DistMode::Sigmoid => prop_assert!(d.probs.iter().all(|x| (0.0..=1.0).contains(x))),
                    }
                }
                for o in &p.outcomes {
                    if let Outcome::Copied { start, end } = *o {
                        prop_assert!(start <= end && end < utt.len() && end - start < m.config.max_copy_len);
                    }
                }
            }
        }
    }
}
