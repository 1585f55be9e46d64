//! Joint-goal, turn-request and turn-goal accuracy, per-slot accuracy, and
//! unknown-value statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::data_model::{accumulate_joint_goal, canonical_match, canonicalize, gold_joint_goals, Dialogue, DialogueState, Ontology, Turn, NONE};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::training::Checkpoint;

/// A tracker's labels for one turn. `turn_goal` omits unmentioned slots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub turn_goal: BTreeMap<String, String>,
    pub requests: BTreeSet<String>,
}

pub trait TurnPredictor {
    fn predict(&mut self, turn: &Turn) -> TurnPrediction;
}

/// Adapts a [`Model`]; encoded values are computed once and reused.
pub struct ModelPredictor<'m> {
    model: &'m Model,
    values: Vec<Tensor>,
}

impl<'m> ModelPredictor<'m> {
    pub fn new(model: &'m Model) -> Self {
        ModelPredictor {
            model,
            values: model.value_tables(),
        }
    }
}

impl TurnPredictor for ModelPredictor<'_> {
    fn predict(&mut self, turn: &Turn) -> TurnPrediction {
        let (turn_goal, requests) = self.model.predict_labels(turn, Some(&self.values));
        TurnPrediction { turn_goal, requests }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnkStats {
    /// Predicted values outside the model-visible ontology.
    pub all: usize,
    /// Of those, the ones matching a gold unknown value at that turn and slot.
    pub correct: usize,
}

impl UnkStats {
    pub fn precision(&self) -> f64 {
        if self.all == 0 {
            0.0
        } else {
            self.correct as f64 / self.all as f64
        }
    }
}

/// Turn-level recall on gold values that are unknown to the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UnkRecall {
    pub gold: usize,
    pub correct: usize,
}

impl UnkRecall {
    pub fn rate(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.correct as f64 / self.gold as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub joint_goal: f64,
    pub turn_request: f64,
    pub turn_goal: f64,
    /// Per single-valued slot: share of turns whose accumulated value matches.
    pub per_slot: BTreeMap<String, f64>,
    pub unk: UnkStats,
    pub unk_recall: BTreeMap<String, UnkRecall>,
    pub turns: usize,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

fn same_goal(pred: &BTreeMap<String, String>, gold: &BTreeMap<String, String>) -> bool {
    pred.len() == gold.len() && pred.iter().all(|(k, v)| gold.get(k).is_some_and(|g| canonical_match(v, g)))
}

fn same_set(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> bool {
    let p: BTreeSet<String> = pred.iter().map(|s| canonicalize(s)).collect();
    let g: BTreeSet<String> = gold.iter().map(|s| canonicalize(s)).collect();
    p == g
}

fn without_none(goal: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    goal.iter().filter(|(_, v)| canonicalize(v) != NONE).map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Unknown-value counts of one turn's predictions against its gold labels.
pub fn count_unknown_generation(ontology: &Ontology, pred: &TurnPrediction, gold: &Turn) -> UnkStats {
    let mut stats = UnkStats::default();
    for (slot, value) in &pred.turn_goal {
        if !ontology.is_unknown(slot, value) {
            continue;
        }
        stats.all += 1;
        if gold
            .gold
            .turn_goal
            .get(slot)
            .is_some_and(|g| ontology.is_unknown(slot, g) && canonical_match(value, g))
        {
            stats.correct += 1;
        }
    }
    if let Some(req) = ontology.request_slot() {
        for value in &pred.requests {
            if !ontology.is_unknown(&req.name, value) {
                continue;
            }
            stats.all += 1;
            if gold
                .gold
                .requests
                .iter()
                .any(|g| ontology.is_unknown(&req.name, g) && canonical_match(value, g))
            {
                stats.correct += 1;
            }
        }
    }
    stats
}

/// Scores `predictor` on `dialogues`. The joint goal is reset per dialogue and
/// accumulated turn by turn from the predicted turn goals; a turn counts when
/// every single-valued slot matches the gold joint goal. `ontology` is the one
/// the predictor sees, which decides what counts as unknown.
pub fn evaluate(predictor: &mut impl TurnPredictor, ontology: &Ontology, dialogues: &[Dialogue]) -> Result<Metrics> {
    let singles: Vec<String> = ontology.single_slots().map(|s| s.name.clone()).collect();
    let (mut joint, mut request, mut goal, mut turns) = (0usize, 0usize, 0usize, 0usize);
    let mut slot_hits: BTreeMap<String, usize> = singles.iter().map(|s| (s.clone(), 0)).collect();
    let mut unk = UnkStats::default();
    let mut recall: BTreeMap<String, UnkRecall> = BTreeMap::new();

    for d in dialogues {
        let gold_states = gold_joint_goals(ontology, d)?;
        let mut state = DialogueState::default();
        for (turn, gold_state) in d.turns.iter().zip(&gold_states) {
            let pred = predictor.predict(turn);
            state = accumulate_joint_goal(ontology, &state, &pred.turn_goal)?;
            turns += 1;
            joint += usize::from(same_goal(&state.joint_goal, &gold_state.joint_goal));
            request += usize::from(same_set(&pred.requests, &turn.gold.requests));
            goal += usize::from(same_goal(&without_none(&pred.turn_goal), &without_none(&turn.gold.turn_goal)));
            for s in &singles {
                let ok = match (state.get(s), gold_state.get(s)) {
                    (None, None) => true,
                    (Some(p), Some(g)) => canonical_match(p, g),
                    _ => false,
                };
                *slot_hits.get_mut(s).expect("slot") += usize::from(ok);
            }
            let stats = count_unknown_generation(ontology, &pred, turn);
            unk.all += stats.all;
            unk.correct += stats.correct;
            for (slot, g) in &turn.gold.turn_goal {
                if ontology.is_unknown(slot, g) {
                    let r = recall.entry(slot.clone()).or_default();
                    r.gold += 1;
                    r.correct += usize::from(pred.turn_goal.get(slot).is_some_and(|p| canonical_match(p, g)));
                }
            }
        }
    }
    let frac = |n: usize| if turns == 0 { 0.0 } else { n as f64 / turns as f64 };
    Ok(Metrics {
        joint_goal: frac(joint),
        turn_request: frac(request),
        turn_goal: frac(goal),
        per_slot: slot_hits.into_iter().map(|(k, v)| (k, frac(v))).collect(),
        unk,
        unk_recall: recall,
        turns,
    })
}

pub fn evaluate_model(model: &Model, corpus: &Corpus, split: Split) -> Result<Metrics> {
    evaluate(&mut ModelPredictor::new(model), &model.ontology, corpus.split(split))
}

/// Loads the checkpoint's model for `corpus`, refusing a vocabulary mismatch,
/// and evaluates `split`.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, corpus: &Corpus, split: Split) -> Result<Metrics> {
    let model = checkpoint.model_for(corpus)?;
    evaluate_model(&model, corpus, split)
}
