//! Corpora: the JSON dialogue format, the bAbI task-5 text format, the
//! unknown-value masking protocol and a seeded synthetic generator.

mod babi;
mod json;
mod mask;
mod synth;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data_model::{validate_ontology, Dialogue, Ontology, NONE};
use crate::error::{Error, Result};

pub use babi::{load_babi_task5, parse_babi_task5, BabiFiles, BABI_SLOTS};
pub use json::{corpus_from_json, corpus_to_json, load_woz, write_corpus};
pub use mask::{mask_unknown_values, MaskReport};
pub use synth::{generate_synthetic, SynthConfig, SynthManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    WozJson,
    BabiTask5,
    Synthetic,
    Masked {
        parent: Box<Provenance>,
        ratio: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub ontology: Ontology,
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Dialogue] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn dialogues(&self) -> impl Iterator<Item = &Dialogue> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn turn_count(&self) -> usize {
        self.dialogues().map(|d| d.turns.len()).sum()
    }

    /// Checks ontology, split and label invariants.
    ///
    /// Label values outside the ontology are allowed: they are the unknown
    /// values the tracker has to copy.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = validate_ontology(&self.ontology).first() {
            return Err(Error::schema(None, v.to_string()));
        }
        if self.train.is_empty() {
            return Err(Error::schema(None, "train split empty"));
        }
        if self.test.is_empty() {
            return Err(Error::schema(None, "test split empty"));
        }
        let mut ids = BTreeSet::new();
        for d in self.dialogues() {
            let id = Some(d.id.as_str());
            if !ids.insert(d.id.as_str()) {
                return Err(Error::schema(id, "duplicate dialogue id"));
            }
            if d.turns.is_empty() {
                return Err(Error::schema(id, "dialogue has no turns"));
            }
            for (t, turn) in d.turns.iter().enumerate() {
                if turn.user_utterance.is_empty() {
                    return Err(Error::schema(id, format!("turn {t}: empty user utterance")));
                }
                for a in &turn.system_actions {
                    a.check().map_err(|m| Error::schema(id, format!("turn {t}: {m}")))?;
                }
                for slot in turn.gold.turn_goal.keys() {
                    match self.ontology.slot(slot) {
                        Some(spec) if spec.is_single() => {}
                        Some(_) => {
                            return Err(Error::schema(
                                id,
                                format!("turn {t}: multi-valued slot '{slot}' in turn goal"),
                            ))
                        }
                        None => return Err(Error::schema(id, format!("turn {t}: unknown slot '{slot}'"))),
                    }
                }
                if !turn.gold.requests.is_empty() {
                    let Some(req) = self.ontology.request_slot() else {
                        return Err(Error::schema(id, format!("turn {t}: requests but no request slot")));
                    };
                    for r in &turn.gold.requests {
                        if !req.is_known(r) || r == NONE {
                            return Err(Error::schema(id, format!("turn {t}: unknown requestable '{r}'")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
