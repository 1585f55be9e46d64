//! Seeded template dialogues in the restaurant schema.
//!
//! Every informed value is mentioned verbatim (or, with probability
//! `paraphrase_noise`, through a fixed paraphrase token), so copy targets are
//! always well defined. Slots listed in `oov_slots` get a held-out value pool
//! that never appears in train; a dev/test mention of such a slot draws from
//! it with probability `oov_test_fraction`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Provenance, Split};
use crate::data_model::{tokenize, Dialogue, Ontology, SlotSpec, SystemAction, Turn, TurnLabel, DONTCARE};
use crate::error::{Error, Result};

const INFORMABLE: [&str; 3] = ["area", "food", "price range"];
const REQUESTABLE: [&str; 4] = ["address", "phone", "postcode", "opening hours"];

const AREA_TEMPLATES: &[&str] = &[
    "in the {v}",
    "somewhere in the {v} area",
    "in the {v} part of town",
    "it should be in the {v}",
];
const FOOD_TEMPLATES: &[&str] = &[
    "i want {v} food",
    "{v} food please",
    "how about {v} food",
    "i am looking for {v} cuisine",
    "something that serves {v} food",
];
const PRICE_TEMPLATES: &[&str] = &[
    "a {v} restaurant",
    "something in the {v} price range",
    "{v} price range please",
    "it should be {v}",
];
const BARE_TEMPLATES: &[&str] = &["{v}", "{v} please", "i would like {v}"];
const DONTCARE_TEMPLATES: [&[&str]; 3] = [
    &["any area is fine", "i do not care about the area"],
    &["any food is fine", "i do not care about the food"],
    &["any price is fine", "i do not care about the price"],
];
const REQUEST_TEMPLATES: &[&str] = &["what is the {v}", "can i have the {v}", "may i get the {v}"];
const FILLERS: &[&str] = &["thank you", "that sounds good", "okay great", "goodbye", "no thanks"];
const DISTRACTORS: &[&str] = &["i heard {v} is nice", "my friend {v} told me about it"];
const PREFIXES: &[&str] = &["", "", "", "hello", "yes", "well"];
const SUFFIXES: &[&str] = &["", "", "", "thanks", "please"];
const ACT_WORDS: &[&str] = &["welcome", "request", "confirm", "offer", "and", "side"];

fn templates(slot: usize) -> &'static [&'static str] {
    match slot {
        0 => AREA_TEMPLATES,
        1 => FOOD_TEMPLATES,
        _ => PRICE_TEMPLATES,
    }
}

fn default_max_turns() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Total lexicon size; tokens not needed by templates and values become
    /// distractor words.
    pub vocab_size: usize,
    pub values_per_slot: usize,
    pub oov_test_fraction: f64,
    /// Informable slots with a held-out pool; empty means all of them.
    #[serde(default)]
    pub oov_slots: Vec<String>,
    pub paraphrase_noise: f64,
    pub seed: u64,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 500,
            n_dev: 100,
            n_test: 100,
            vocab_size: 300,
            values_per_slot: 10,
            oov_test_fraction: 0.0,
            oov_slots: Vec::new(),
            paraphrase_noise: 0.05,
            seed: 17,
            max_turns: default_max_turns(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return bad("dialogue counts must be >= 1".into());
        }
        if self.values_per_slot < 2 {
            return bad("values_per_slot must be >= 2".into());
        }
        if self.max_turns < 2 {
            return bad("max_turns must be >= 2".into());
        }
        for (name, f) in [("oov_test_fraction", self.oov_test_fraction), ("paraphrase_noise", self.paraphrase_noise)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        for s in &self.oov_slots {
            if !INFORMABLE.contains(&s.as_str()) {
                return bad(format!("oov slot '{s}' is not an informable slot"));
            }
        }
        Ok(())
    }

    fn is_oov_slot(&self, slot: &str) -> bool {
        self.oov_test_fraction > 0.0 && (self.oov_slots.is_empty() || self.oov_slots.iter().any(|s| s == slot))
    }
}

/// Held-out values that actually occur in dev/test labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub oov_values: BTreeMap<String, BTreeSet<String>>,
    pub lexicon_size: usize,
}

impl SynthManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

struct WordMaker {
    used: BTreeSet<String>,
}

impl WordMaker {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch"];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
        loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(VOWELS.choose(rng).unwrap());
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

struct Lexicon {
    known: [Vec<String>; 3],
    held_out: [Vec<String>; 3],
    paraphrase: BTreeMap<String, String>,
    distractors: Vec<String>,
}

fn fixed_words() -> BTreeSet<String> {
    let all = AREA_TEMPLATES
        .iter()
        .chain(FOOD_TEMPLATES)
        .chain(PRICE_TEMPLATES)
        .chain(BARE_TEMPLATES)
        .chain(DONTCARE_TEMPLATES.iter().flat_map(|t| t.iter()))
        .chain(REQUEST_TEMPLATES)
        .chain(FILLERS)
        .chain(DISTRACTORS)
        .chain(PREFIXES)
        .chain(SUFFIXES)
        .chain(ACT_WORDS)
        .chain(INFORMABLE.iter())
        .chain(REQUESTABLE.iter());
    let mut words: BTreeSet<String> = all.flat_map(|t| tokenize(&t.replace("{v}", " "))).collect();
    words.insert("none".into());
    words.insert(DONTCARE.into());
    words
}

fn build_lexicon(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Lexicon> {
    let fixed = fixed_words();
    let mut maker = WordMaker { used: fixed.clone() };
    let value = |maker: &mut WordMaker, rng: &mut ChaCha8Rng, slot: usize, i: usize| {
        let w = maker.fresh(rng);
        // every third area value spans two tokens
        if slot == 0 && i % 3 == 2 {
            format!("{w} side")
        } else {
            w
        }
    };
    let mut known: [Vec<String>; 3] = Default::default();
    let mut held_out: [Vec<String>; 3] = Default::default();
    for slot in 0..3 {
        known[slot] = (0..cfg.values_per_slot).map(|i| value(&mut maker, rng, slot, i)).collect();
    }
    for slot in 0..3 {
        if cfg.is_oov_slot(INFORMABLE[slot]) {
            held_out[slot] = (0..cfg.values_per_slot).map(|i| value(&mut maker, rng, slot, i)).collect();
        }
    }
    let mut paraphrase = BTreeMap::new();
    if cfg.paraphrase_noise > 0.0 {
        for v in known.iter().flatten() {
            paraphrase.insert(v.clone(), maker.fresh(rng));
        }
    }
    let required = maker.used.len();
    if required > cfg.vocab_size {
        return Err(Error::Config(format!(
            "vocab_size {} too small to host {} template and value tokens",
            cfg.vocab_size, required
        )));
    }
    let distractors = (required..cfg.vocab_size).map(|_| maker.fresh(rng)).collect();
    Ok(Lexicon {
        known,
        held_out,
        paraphrase,
        distractors,
    })
}

fn fill(template: &str, v: &str) -> String {
    template.replace("{v}", v)
}

struct DialogueMaker<'a> {
    cfg: &'a SynthConfig,
    lex: &'a Lexicon,
    manifest: &'a mut SynthManifest,
}

impl DialogueMaker<'_> {
    fn pick_value(&mut self, rng: &mut ChaCha8Rng, slot: usize, split: Split, current: Option<&String>) -> String {
        let use_held_out = split != Split::Train
            && !self.lex.held_out[slot].is_empty()
            && rng.random_bool(self.cfg.oov_test_fraction);
        let pool = if use_held_out { &self.lex.held_out[slot] } else { &self.lex.known[slot] };
        loop {
            let v = pool.choose(rng).unwrap();
            if Some(v) != current {
                if use_held_out {
                    self.manifest
                        .oov_values
                        .entry(INFORMABLE[slot].to_owned())
                        .or_default()
                        .insert(v.clone());
                }
                return v.clone();
            }
        }
    }

    fn dialogue(&mut self, rng: &mut ChaCha8Rng, id: String, split: Split) -> Dialogue {
        let n_turns = rng.random_range(2..=self.cfg.max_turns);
        let mut joint: [Option<String>; 3] = Default::default();
        let mut turns = Vec::with_capacity(n_turns);
        let mut asked: Option<usize> = None;
        let mut actions: Vec<SystemAction> = if rng.random_bool(0.5) {
            vec![SystemAction::new("welcome", None, None)]
        } else {
            Vec::new()
        };

        for t in 0..n_turns {
            let mut mentioned: Vec<usize> = Vec::new();
            if let Some(s) = asked.filter(|_| rng.random_bool(0.8)) {
                mentioned.push(s);
            } else {
                let count = if t == 0 {
                    rng.random_range(1..=2)
                } else {
                    match rng.random_range(0..10) {
                        0..=5 => 1,
                        6 => 2,
                        _ => 0,
                    }
                };
                let mut order = [0usize, 1, 2];
                for i in (1..3).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                mentioned.extend(order.iter().take(count));
            }

            let mut clauses = Vec::new();
            let mut goal = BTreeMap::new();
            for &slot in &mentioned {
                if rng.random_bool(0.08) && joint[slot].as_deref() != Some(DONTCARE) {
                    clauses.push(DONTCARE_TEMPLATES[slot].choose(rng).unwrap().to_string());
                    goal.insert(INFORMABLE[slot].to_owned(), DONTCARE.to_owned());
                    joint[slot] = Some(DONTCARE.to_owned());
                    continue;
                }
                let value = self.pick_value(rng, slot, split, joint[slot].as_ref());
                let surface = match self.lex.paraphrase.get(&value) {
                    Some(p) if rng.random_bool(self.cfg.paraphrase_noise) => p.clone(),
                    _ => value.clone(),
                };
                let template = if asked == Some(slot) && mentioned.len() == 1 && rng.random_bool(0.4) {
                    BARE_TEMPLATES.choose(rng).unwrap()
                } else {
                    templates(slot).choose(rng).unwrap()
                };
                clauses.push(fill(template, &surface));
                goal.insert(INFORMABLE[slot].to_owned(), value.clone());
                joint[slot] = Some(value);
            }

            let mut requests = BTreeSet::new();
            if t > 0 && rng.random_bool(0.35) {
                let k = rng.random_range(1..=2);
                for r in REQUESTABLE.choose_multiple(rng, k) {
                    requests.insert((*r).to_owned());
                    clauses.push(fill(REQUEST_TEMPLATES.choose(rng).unwrap(), r));
                }
            }
            if !self.lex.distractors.is_empty() && rng.random_bool(0.15) {
                let d = self.lex.distractors.choose(rng).unwrap();
                clauses.push(fill(DISTRACTORS.choose(rng).unwrap(), d));
            }
            if clauses.is_empty() {
                clauses.push(FILLERS.choose(rng).unwrap().to_string());
            }
            let mut text = String::new();
            let prefix = PREFIXES.choose(rng).unwrap();
            if !prefix.is_empty() {
                text.push_str(prefix);
                text.push_str(" , ");
            }
            text.push_str(&clauses.join(" and "));
            text.push(' ');
            text.push_str(SUFFIXES.choose(rng).unwrap());

            turns.push(Turn {
                system_actions: std::mem::take(&mut actions),
                user_utterance: tokenize(&text),
                gold: TurnLabel {
                    turn_goal: goal,
                    requests,
                },
            });

            // system move for the next turn
            asked = None;
            let unfilled: Vec<usize> = (0..3).filter(|&s| joint[s].is_none()).collect();
            if !unfilled.is_empty() && rng.random_bool(0.5) {
                let s = *unfilled.choose(rng).unwrap();
                asked = Some(s);
                actions.push(SystemAction::new("request", Some(INFORMABLE[s]), None));
            } else {
                let filled: Vec<usize> = (0..3).filter(|&s| joint[s].is_some()).collect();
                if !filled.is_empty() && rng.random_bool(0.4) {
                    let s = *filled.choose(rng).unwrap();
                    actions.push(SystemAction::new("confirm", Some(INFORMABLE[s]), joint[s].as_deref()));
                } else if rng.random_bool(0.7) {
                    actions.push(SystemAction::new("offer", None, None));
                }
            }
        }
        Dialogue { id, turns }
    }
}

/// Deterministic corpus plus the manifest of held-out (unknown) test values.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Corpus, SynthManifest)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = build_lexicon(cfg, &mut rng)?;
    let mut manifest = SynthManifest {
        oov_values: BTreeMap::new(),
        lexicon_size: cfg.vocab_size,
    };

    let ontology = Ontology::new(
        INFORMABLE
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let vs: Vec<&str> = lex.known[i].iter().map(String::as_str).collect();
                SlotSpec::single(name, &vs)
            })
            .chain(std::iter::once(SlotSpec::multi("request", &REQUESTABLE)))
            .collect(),
    );

    let mut maker = DialogueMaker {
        cfg,
        lex: &lex,
        manifest: &mut manifest,
    };
    let mut make = |split: Split, n: usize, rng: &mut ChaCha8Rng| -> Vec<Dialogue> {
        (0..n)
            .map(|i| maker.dialogue(rng, format!("{}-{:04}", split.name(), i), split))
            .collect()
    };
    let train = make(Split::Train, cfg.n_train, &mut rng);
    let dev = make(Split::Dev, cfg.n_dev, &mut rng);
    let test = make(Split::Test, cfg.n_test, &mut rng);

    let corpus = Corpus {
        ontology,
        train,
        dev,
        test,
        provenance: Provenance::Synthetic,
    };
    corpus.validate()?;
    Ok((corpus, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_to_json;
    use crate::data_model::find_subsequences;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_train: 40,
            n_dev: 10,
            n_test: 10,
            vocab_size: 200,
            values_per_slot: 6,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn byte_identical_for_same_config() {
        let (a, ma) = generate_synthetic(&small(3)).unwrap();
        let (b, mb) = generate_synthetic(&small(3)).unwrap();
        assert_eq!(corpus_to_json(&a), corpus_to_json(&b));
        assert_eq!(ma, mb);
        let (c, _) = generate_synthetic(&small(4)).unwrap();
        assert_ne!(corpus_to_json(&a), corpus_to_json(&c));
    }

    #[test]
    fn no_oov_means_all_test_values_known() {
        let (c, m) = generate_synthetic(&SynthConfig {
            paraphrase_noise: 0.0,
            ..small(1)
        })
        .unwrap();
        assert!(m.oov_values.is_empty());
        for turn in c.test.iter().flat_map(|d| &d.turns) {
            for (slot, v) in &turn.gold.turn_goal {
                assert!(!c.ontology.is_unknown(slot, v), "{slot}={v}");
            }
        }
    }

    #[test]
    fn full_oov_slot_is_entirely_unseen() {
        let cfg = SynthConfig {
            oov_test_fraction: 1.0,
            oov_slots: vec!["food".into()],
            ..small(2)
        };
        let (c, m) = generate_synthetic(&cfg).unwrap();
        let train_foods: BTreeSet<&String> = c
            .train
            .iter()
            .flat_map(|d| &d.turns)
            .filter_map(|t| t.gold.turn_goal.get("food"))
            .collect();
        let mut seen = 0;
        for turn in c.test.iter().flat_map(|d| &d.turns) {
            if let Some(v) = turn.gold.turn_goal.get("food").filter(|v| *v != DONTCARE) {
                seen += 1;
                assert!(c.ontology.is_unknown("food", v));
                assert!(!train_foods.contains(v));
                assert!(m.oov_values["food"].contains(v));
            }
            for slot in ["area", "price range"] {
                if let Some(v) = turn.gold.turn_goal.get(slot) {
                    assert!(!c.ontology.is_unknown(slot, v));
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn values_are_mentioned_verbatim_unless_paraphrased() {
        let (c, _) = generate_synthetic(&SynthConfig {
            paraphrase_noise: 0.0,
            ..small(5)
        })
        .unwrap();
        for turn in c.dialogues().flat_map(|d| &d.turns) {
            for v in turn.gold.turn_goal.values().filter(|v| *v != DONTCARE) {
                assert!(!find_subsequences(&turn.user_utterance, &tokenize(v)).is_empty());
            }
        }
    }

    #[test]
    fn tiny_vocab_is_a_config_error() {
        let err = generate_synthetic(&SynthConfig {
            vocab_size: 20,
            ..small(1)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn lexicon_respects_vocab_size() {
        let (c, _) = generate_synthetic(&small(9)).unwrap();
        let tokens: BTreeSet<String> = c
            .dialogues()
            .flat_map(|d| &d.turns)
            .flat_map(|t| t.user_utterance.iter().cloned().chain(t.system_actions.iter().flat_map(|a| a.tokens())))
            .collect();
        assert!(tokens.len() <= 200, "{}", tokens.len());
    }
}
