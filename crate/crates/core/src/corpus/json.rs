use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Provenance};
use crate::data_model::{canonicalize, tokenize, Dialogue, Ontology, SystemAction, Turn, TurnLabel};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    ontology: Ontology,
    splits: SplitsFile,
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    #[serde(default)]
    train: Vec<DialogueFile>,
    #[serde(default)]
    dev: Vec<DialogueFile>,
    #[serde(default)]
    test: Vec<DialogueFile>,
}

#[derive(Serialize, Deserialize)]
struct DialogueFile {
    id: String,
    turns: Vec<TurnFile>,
}

#[derive(Serialize, Deserialize)]
struct TurnFile {
    #[serde(default)]
    system_actions: Vec<SystemAction>,
    user_utterance: String,
    #[serde(default)]
    turn_goal: BTreeMap<String, String>,
    #[serde(default)]
    requests: Vec<String>,
}

impl DialogueFile {
    fn into_dialogue(self) -> Dialogue {
        Dialogue {
            id: self.id,
            turns: self
                .turns
                .into_iter()
                .map(|t| Turn {
                    system_actions: t
                        .system_actions
                        .into_iter()
                        .map(|a| SystemAction {
                            act: canonicalize(&a.act),
                            slot: a.slot.map(|s| canonicalize(&s)),
                            value: a.value.map(|v| canonicalize(&v)),
                        })
                        .collect(),
                    user_utterance: tokenize(&t.user_utterance),
                    gold: TurnLabel {
                        turn_goal: t
                            .turn_goal
                            .into_iter()
                            .map(|(k, v)| (canonicalize(&k), canonicalize(&v)))
                            .collect(),
                        requests: t.requests.iter().map(|r| canonicalize(r)).collect::<BTreeSet<_>>(),
                    },
                })
                .collect(),
        }
    }

    fn from_dialogue(d: &Dialogue) -> Self {
        DialogueFile {
            id: d.id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnFile {
                    system_actions: t.system_actions.clone(),
                    user_utterance: t.user_utterance.join(" "),
                    turn_goal: t.gold.turn_goal.clone(),
                    requests: t.gold.requests.iter().cloned().collect(),
                })
                .collect(),
        }
    }
}

/// Parses and validates a corpus from its JSON text.
pub fn corpus_from_json(text: &str, location: &str) -> Result<Corpus> {
    let file: CorpusFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("{location}:{}:{}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut ontology = file.ontology;
    for slot in &mut ontology.slots {
        slot.name = canonicalize(&slot.name);
        for v in slot.values.iter_mut().chain(slot.specials.iter_mut()) {
            *v = canonicalize(v);
        }
    }
    let corpus = Corpus {
        ontology,
        train: file.splits.train.into_iter().map(DialogueFile::into_dialogue).collect(),
        dev: file.splits.dev.into_iter().map(DialogueFile::into_dialogue).collect(),
        test: file.splits.test.into_iter().map(DialogueFile::into_dialogue).collect(),
        provenance: Provenance::WozJson,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Loads a corpus in the documented JSON dialogue format.
pub fn load_woz(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    corpus_from_json(&text, &path.display().to_string())
}

/// Pretty JSON in the same schema `load_woz` reads. Utterances are written as
/// their space-joined tokens, which tokenize back to themselves.
pub fn corpus_to_json(corpus: &Corpus) -> String {
    let file = CorpusFile {
        ontology: corpus.ontology.clone(),
        splits: SplitsFile {
            train: corpus.train.iter().map(DialogueFile::from_dialogue).collect(),
            dev: corpus.dev.iter().map(DialogueFile::from_dialogue).collect(),
            test: corpus.test.iter().map(DialogueFile::from_dialogue).collect(),
        },
    };
    let mut s = serde_json::to_string_pretty(&file).expect("corpus serializes");
    s.push('\n');
    s
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corpus_to_json(corpus)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"{
      "ontology": {"slots": [
        {"name": "food", "kind": "single", "values": ["thai", "chinese"], "specials": ["none", "dontcare"]},
        {"name": "request", "kind": "multi", "values": ["address", "phone"], "specials": ["none"]}
      ]},
      "splits": {
        "train": [{"id": "d1", "turns": [
          {"system_actions": [], "user_utterance": "Thai food, please", "turn_goal": {"food": "thai"}, "requests": []},
          {"system_actions": [{"act": "inform", "slot": "food", "value": "thai"}], "user_utterance": "what is the address?", "requests": ["address"]}
        ]}],
        "test": [{"id": "t1", "turns": [{"user_utterance": "hello"}]}]
      }
    }"#;

    #[test]
    fn loads_and_tokenizes() {
        let c = corpus_from_json(MINI, "mini").unwrap();
        assert_eq!(c.train.len(), 1);
        assert_eq!(c.train[0].turns[0].user_utterance, ["thai", "food", ",", "please"]);
        assert_eq!(c.train[0].turns[1].system_actions[0].tokens(), ["inform", "food", "thai"]);
        assert!(c.train[0].turns[1].gold.requests.contains("address"));
        assert!(c.dev.is_empty());
    }

    #[test]
    fn unknown_slot_names_dialogue() {
        let bad = MINI.replace(r#"{"food": "thai"}"#, r#"{"parking": "yes"}"#);
        let err = corpus_from_json(&bad, "mini").unwrap_err();
        match err {
            Error::Schema { dialogue, message } => {
                assert_eq!(dialogue.as_deref(), Some("d1"));
                assert!(message.contains("parking"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_train_is_rejected() {
        let text = r#"{"ontology": {"slots": [{"name": "food", "kind": "single", "values": ["thai"], "specials": ["none", "dontcare"]}]},
                      "splits": {"train": [], "test": []}}"#;
        let err = corpus_from_json(text, "x").unwrap_err();
        assert!(err.to_string().contains("train split empty"), "{err}");
    }

    #[test]
    fn empty_user_turn_is_rejected() {
        let bad = MINI.replace(r#""user_utterance": "hello""#, r#""user_utterance": "  ""#);
        assert!(matches!(corpus_from_json(&bad, "mini"), Err(Error::Schema { .. })));
    }

    #[test]
    fn parse_error_carries_position() {
        let err = corpus_from_json("{\n  \"ontology\": [", "broken.json").unwrap_err();
        match err {
            Error::Parse { location, .. } => assert!(location.starts_with("broken.json:2:"), "{location}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = corpus_from_json(MINI, "mini").unwrap();
        let text = corpus_to_json(&c);
        let again = corpus_from_json(&text, "again").unwrap();
        assert_eq!(again, c);
        assert_eq!(corpus_to_json(&again), text);
    }
}
