//! Copy-augmented multi-decoder: per-slot private and shared LSTM cells mixed
//! by a gate, attention over utterance states and action contexts, and the
//! greedy single-value and thresholded multi-value decoding rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::SlotSpec;
use crate::encoder::{gate, mix, LstmIds};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::state_space::{DecodeDistribution, DistMode, MemoryLayout, RowKind};
use crate::tensor::{argmax, sigmoid, softmax, Tensor};

#[derive(Debug, Clone)]
pub struct DecoderIds {
    pub private: Vec<LstmIds>,
    pub shared: LstmIds,
    /// Raw gate per slot; `γ = logistic(raw)`.
    pub gate: Vec<ParamId>,
    /// Attention query projection, `d_emb × d_rnn`.
    pub query: ParamId,
}

impl DecoderIds {
    pub fn register(store: &mut ParamStore, slots: &[String], d_emb: usize, d_rnn: usize, rng: &mut impl Rng) -> Self {
        let d_in = d_emb + d_rnn;
        let mut private = Vec::new();
        let mut gates = Vec::new();
        for s in slots {
            private.push(LstmIds::register(store, &format!("dec.private.{s}"), d_in, d_rnn, rng));
            gates.push(store.add_zeros(format!("dec.gate.{s}"), 1, 1));
        }
        DecoderIds {
            private,
            shared: LstmIds::register(store, "dec.shared", d_in, d_rnn, rng),
            gate: gates,
            query: store.add_xavier("dec.query", d_emb, d_rnn, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderPaths {
    pub private: bool,
    pub shared: bool,
}

impl Default for DecoderPaths {
    fn default() -> Self {
        DecoderPaths {
            private: true,
            shared: true,
        }
    }
}

/// Hidden and cell states of the private and shared cells.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub private: Option<(Var, Var)>,
    pub shared: Option<(Var, Var)>,
}

/// Both cells start from hidden state `h0` and a zero cell state.
pub fn initial_state(g: &mut Graph, paths: DecoderPaths, h0: Var) -> DecoderState {
    let d = g.shape(h0).1;
    let c0 = g.constant(Tensor::zeros(1, d));
    DecoderState {
        private: paths.private.then_some((h0, c0)),
        shared: paths.shared.then_some((h0, c0)),
    }
}

/// `K = [H_u; c_a]`, `q = e(y) Q`, `a = softmax(K qᵀ)ᵀ K`.
pub fn attend(g: &mut Graph, store: &ParamStore, ids: &DecoderIds, keys: Var, y_emb: Var) -> Var {
    let q_w = g.param(store, ids.query);
    let q = g.matmul(y_emb, q_w);
    let qt = g.transpose(q);
    let scores = g.matmul(keys, qt);
    let p = g.softmax(scores);
    let pt = g.transpose(p);
    g.matmul(pt, keys)
}

fn cell(g: &mut Graph, store: &ParamStore, l: &LstmIds, x: Var, (h, c): (Var, Var)) -> (Var, Var) {
    let (wx, wh, b) = (g.param(store, l.wx), g.param(store, l.wh), g.param(store, l.b));
    let out = g.lstm_cell(x, h, c, wx, wh, b);
    let d = g.shape(h).1;
    (g.slice_cols(out, 0, d), g.slice_cols(out, d, d))
}

/// One step on input `[e(y_{t-1}); a_{t-1}]`; returns the new state and
/// `s_t = γ s^s_t + (1 − γ) s^g_t`.
pub fn decoder_step(
    g: &mut Graph,
    store: &ParamStore,
    ids: &DecoderIds,
    slot: usize,
    state: DecoderState,
    y_emb: Var,
    keys: Var,
) -> (DecoderState, Var) {
    let a = attend(g, store, ids, keys, y_emb);
    let x = g.concat_cols(&[y_emb, a]);
    let private = state.private.map(|s| cell(g, store, &ids.private[slot], x, s));
    let shared = state.shared.map(|s| cell(g, store, &ids.shared, x, s));
    let s_t = match (private, shared) {
        (Some((hp, _)), Some((hg, _))) => {
            let gamma = gate(g, store, ids.gate[slot]);
            mix(g, gamma, hp, hg)
        }
        (Some((h, _)), None) | (None, Some((h, _))) => h,
        (None, None) => panic!("no decoder path enabled"),
    };
    (DecoderState { private, shared }, s_t)
}

/// One decoded outcome of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Value { value: usize },
    Special { special: usize },
    /// Inclusive utterance positions.
    Copied { start: usize, end: usize },
}

impl Outcome {
    pub fn surface(&self, spec: &SlotSpec, utterance: &[String]) -> String {
        match *self {
            Outcome::Value { value } => spec.values[value].clone(),
            Outcome::Special { special } => spec.specials[special].clone(),
            Outcome::Copied { start, end } => utterance[start..=end].join(" "),
        }
    }

    pub fn is_copied(&self) -> bool {
        matches!(self, Outcome::Copied { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotPrediction {
    pub slot: usize,
    pub outcomes: Vec<Outcome>,
    pub steps: Vec<DecodeDistribution>,
}

/// Raw memory scores for the next decoding step, given the row emitted at
/// the previous step (`None` at the first step).
pub trait StepScorer {
    fn scores(&mut self, prev_row: Option<usize>) -> Vec<f64>;
}

impl<F: FnMut(Option<usize>) -> Vec<f64>> StepScorer for F {
    fn scores(&mut self, prev_row: Option<usize>) -> Vec<f64> {
        self(prev_row)
    }
}

/// Greedy single-value decoding. The first step picks among all rows. A
/// value or special row ends decoding; the stop row yields special `none`.
/// A copy row starts a span that grows while the next adjacent position wins
/// among copy rows and stop, up to `max_copy_len` tokens.
pub fn decode_single(layout: &MemoryLayout, scorer: &mut impl StepScorer, none: usize, max_copy_len: usize) -> (Outcome, Vec<DecodeDistribution>) {
    let first = scorer.scores(None);
    assert_eq!(first.len(), layout.rows());
    let probs = softmax(&first);
    let best = argmax(&probs).expect("memory has rows");
    let mut steps = vec![DecodeDistribution {
        probs,
        mode: DistMode::Softmax,
    }];
    let (start, mut end) = match layout.kind(best) {
        RowKind::Generate(v) => return (Outcome::Value { value: v }, steps),
        RowKind::Special(s) => return (Outcome::Special { special: s }, steps),
        RowKind::Stop => return (Outcome::Special { special: none }, steps),
        RowKind::Copy(p) => (p, p),
    };
    let allowed = layout.continuation_rows();
    while end - start + 1 < max_copy_len {
        let scores = scorer.scores(Some(end));
        let restricted: Vec<f64> = allowed.iter().map(|&r| scores[r]).collect();
        let p = softmax(&restricted);
        let mut full = vec![0.0; layout.rows()];
        for (&r, &pr) in allowed.iter().zip(&p) {
            full[r] = pr;
        }
        steps.push(DecodeDistribution {
            probs: full,
            mode: DistMode::Softmax,
        });
        let next = allowed[argmax(&p).expect("continuation rows")];
        if next == end + 1 && next < layout.n_copy {
            end = next;
        } else {
            break;
        }
    }
    (Outcome::Copied { start, end }, steps)
}

/// Maximal runs of consecutive positions, as inclusive `(start, end)` pairs.
pub fn segment_copied(positions: &[usize]) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for &p in positions {
        match spans.last_mut() {
            Some((_, end)) if p == *end + 1 => *end = p,
            _ => spans.push((p, p)),
        }
    }
    spans
}

/// Single-step multi-value decoding: every row with `sigmoid(score) > 0.5`
/// is selected (stop excluded). Selected copy rows are segmented into spans.
/// Nothing selected, or only `none`, gives `none`.
pub fn decode_multi(layout: &MemoryLayout, scores: &[f64], none: usize) -> (Vec<Outcome>, DecodeDistribution) {
    assert_eq!(scores.len(), layout.rows());
    let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
    let selected: Vec<usize> = (0..layout.rows()).filter(|&r| probs[r] > 0.5 && r != layout.stop_row()).collect();
    let copies: Vec<usize> = selected.iter().copied().filter(|&r| r < layout.n_copy).collect();
    let mut outcomes: Vec<Outcome> = segment_copied(&copies)
        .into_iter()
        .map(|(start, end)| Outcome::Copied { start, end })
        .collect();
    for &r in &selected {
        match layout.kind(r) {
            RowKind::Generate(v) => outcomes.push(Outcome::Value { value: v }),
            RowKind::Special(s) if s != none => outcomes.push(Outcome::Special { special: s }),
            _ => {}
        }
    }
    if outcomes.is_empty() {
        outcomes.push(Outcome::Special { special: none });
    }
    (outcomes, DecodeDistribution { probs, mode: DistMode::Sigmoid })
}
