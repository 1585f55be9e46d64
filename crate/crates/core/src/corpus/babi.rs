//! bAbI dialog task 5: numbered lines, `N user<TAB>system`, blank line between
//! dialogues. Knowledge-base result lines (no tab) are skipped. The positional
//! arguments of each `api_call` line are the dialogue state.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::{Corpus, Provenance};
use crate::data_model::{find_subsequences, tokenize, Dialogue, Ontology, SlotSpec, SystemAction, Turn, TurnLabel};
use crate::error::{Error, Result};

/// `api_call <food> <location> <number> <price>`
pub const BABI_SLOTS: [&str; 4] = ["food", "location", "number", "price"];

#[derive(Debug, Clone)]
pub struct BabiFiles {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    /// Regular or OOV test file.
    pub test: PathBuf,
}

struct RawTurn {
    user: String,
    system: String,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn split_dialogues(text: &str, source: &str) -> Result<Vec<Vec<RawTurn>>> {
    let mut dialogues = Vec::new();
    let mut current: Vec<RawTurn> = Vec::new();
    let mut expected = 1usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                dialogues.push(std::mem::take(&mut current));
            }
            expected = 1;
            continue;
        }
        let location = || format!("{source}:{}", lineno + 1);
        let (num, rest) = line.split_once(' ').ok_or_else(|| Error::Parse {
            location: location(),
            message: "expected '<number> <text>'".into(),
        })?;
        let n: usize = num.parse().map_err(|_| Error::Parse {
            location: location(),
            message: format!("bad line number '{num}'"),
        })?;
        if n == 1 && expected != 1 {
            // a new dialogue without a separating blank line
            if !current.is_empty() {
                dialogues.push(std::mem::take(&mut current));
            }
        } else if n != expected {
            return Err(Error::Parse {
                location: location(),
                message: format!("line number {n}, expected {expected}"),
            });
        }
        expected = n + 1;
        if let Some((user, system)) = rest.split_once('\t') {
            current.push(RawTurn {
                user: user.to_owned(),
                system: system.to_owned(),
            });
        }
    }
    if !current.is_empty() {
        dialogues.push(current);
    }
    Ok(dialogues)
}

fn parse_api_call(system: &str) -> Option<Vec<String>> {
    let tokens = tokenize(system);
    if tokens.first().map(String::as_str) != Some("api_call") {
        return None;
    }
    Some(tokens[1..].to_vec())
}

/// Parses one task-5 file. Each `api_call` closes a segment of turns; a value
/// that changed since the previous call is labelled at the first turn of the
/// segment whose user utterance contains it, otherwise at the call turn.
/// Dialogues without any `api_call` are skipped.
pub fn parse_babi_task5(text: &str, source: &str) -> Result<Vec<Dialogue>> {
    let raw = split_dialogues(text, source)?;
    let mut out = Vec::new();
    for (index, turns) in raw.into_iter().enumerate() {
        let id = format!("{source}-{}", index + 1);
        let mut dialogue_turns: Vec<Turn> = Vec::with_capacity(turns.len());
        let mut prev_system: Option<&str> = None;
        for t in &turns {
            let system_actions = match prev_system {
                Some(s) => vec![SystemAction::new(s, None, None)],
                None => Vec::new(),
            };
            dialogue_turns.push(Turn {
                system_actions,
                user_utterance: tokenize(&t.user),
                gold: TurnLabel::default(),
            });
            prev_system = Some(t.system.as_str());
        }

        let mut has_call = false;
        let mut previous: BTreeMap<&str, String> = BTreeMap::new();
        let mut segment_start = 0usize;
        for (k, t) in turns.iter().enumerate() {
            let Some(args) = parse_api_call(&t.system) else { continue };
            if args.len() != BABI_SLOTS.len() {
                return Err(Error::Parse {
                    location: id.clone(),
                    message: format!("api_call with {} arguments, expected {}", args.len(), BABI_SLOTS.len()),
                });
            }
            has_call = true;
            for (slot, value) in BABI_SLOTS.iter().zip(args) {
                if previous.get(slot) == Some(&value) {
                    continue;
                }
                let needle = vec![value.clone()];
                let at = (segment_start..=k)
                    .find(|&j| !find_subsequences(&dialogue_turns[j].user_utterance, &needle).is_empty())
                    .unwrap_or(k);
                dialogue_turns[at].gold.turn_goal.insert((*slot).to_owned(), value.clone());
                previous.insert(slot, value);
            }
            segment_start = k + 1;
        }
        if !has_call {
            log::warn!("{id}: no api_call, dialogue skipped");
            continue;
        }
        out.push(Dialogue { id, turns: dialogue_turns });
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "babi".into())
}

/// Ontology values come from the training file only, so values that occur
/// only in an OOV test file are unknown to the tracker.
pub fn load_babi_task5(files: &BabiFiles) -> Result<Corpus> {
    let train = parse_babi_task5(&read(&files.train)?, &stem(&files.train))?;
    let dev = match &files.dev {
        Some(p) => parse_babi_task5(&read(p)?, &stem(p))?,
        None => Vec::new(),
    };
    let test = parse_babi_task5(&read(&files.test)?, &stem(&files.test))?;

    let mut values: BTreeMap<&str, BTreeSet<String>> = BABI_SLOTS.iter().map(|s| (*s, BTreeSet::new())).collect();
    for turn in train.iter().flat_map(|d| &d.turns) {
        for (slot, value) in &turn.gold.turn_goal {
            values.get_mut(slot.as_str()).expect("known slot").insert(value.clone());
        }
    }
    let ontology = Ontology::new(
        BABI_SLOTS
            .iter()
            .map(|slot| {
                let vs: Vec<&str> = values[slot].iter().map(String::as_str).collect();
                SlotSpec::single(slot, &vs)
            })
            .collect(),
    );
    let corpus = Corpus {
        ontology,
        train,
        dev,
        test,
        provenance: Provenance::BabiTask5,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRAIN: &str = "1 good morning\thello what can i help you with today
2 may i have a table with british food\ti'm on it
3 <SILENCE>\twhere should it be
4 in london\thow many people would be in your party
5 for four please\twhich price range are looking for
6 in a cheap price range please\tok let me look into some options for you
7 <SILENCE>\tapi_call british london four cheap
8 resto_london_cheap_british_1stars R_phone resto_london_cheap_british_1stars_phone
9 instead could it be with spanish food\tsure is there anything else to update
10 no\tok let me look into some options for you
11 <SILENCE>\tapi_call spanish london four cheap

1 hi\thello what can i help you with today
2 thanks\tyou're welcome
";

    #[test]
    fn api_call_becomes_state() {
        let ds = parse_babi_task5(TRAIN, "trn").unwrap();
        assert_eq!(ds.len(), 1, "dialogue without api_call is skipped");
        let d = &ds[0];
        assert_eq!(d.turns.len(), 10);
        assert_eq!(d.turns[1].gold.turn_goal.get("food").map(String::as_str), Some("british"));
        assert_eq!(d.turns[3].gold.turn_goal.get("location").map(String::as_str), Some("london"));
        assert_eq!(d.turns[4].gold.turn_goal.get("number").map(String::as_str), Some("four"));
        assert_eq!(d.turns[5].gold.turn_goal.get("price").map(String::as_str), Some("cheap"));
        assert_eq!(d.turns[7].gold.turn_goal.get("food").map(String::as_str), Some("spanish"));
        assert_eq!(d.turns[7].gold.turn_goal.len(), 1);
        // system response of the previous line becomes the action
        assert_eq!(d.turns[1].system_actions[0].tokens()[0], "hello");
        assert!(d.turns[0].system_actions.is_empty());
    }

    #[test]
    fn joint_goal_at_the_call_matches_the_call() {
        let ds = parse_babi_task5(TRAIN, "trn").unwrap();
        let o = Ontology::new(BABI_SLOTS.iter().map(|s| SlotSpec::single(s, &[])).collect());
        let joint = crate::data_model::gold_joint_goals(&o, &ds[0]).unwrap();
        let at_call = &joint[6].joint_goal;
        let expected: BTreeMap<String, String> = [("food", "british"), ("location", "london"), ("number", "four"), ("price", "cheap")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(at_call, &expected);
    }

    #[test]
    fn bad_line_numbers_are_parse_errors() {
        let text = "1 hi\thello\n3 bye\tok\n";
        assert!(matches!(parse_babi_task5(text, "x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn oov_test_values_are_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let trn = dir.path().join("task5-trn.txt");
        let oov = dir.path().join("task5-tst-OOV.txt");
        std::fs::write(&trn, TRAIN).unwrap();
        std::fs::write(
            &oov,
            "1 i want korean food in seoul for two in an expensive price range\tok\n2 <SILENCE>\tapi_call korean seoul two expensive\n",
        )
        .unwrap();
        let c = load_babi_task5(&BabiFiles {
            train: trn,
            dev: None,
            test: oov,
        })
        .unwrap();
        assert_eq!(c.ontology.slot("food").unwrap().values, ["british", "spanish"]);
        let labels = &c.test[0].turns[0].gold.turn_goal;
        assert_eq!(labels.len(), 4);
        for (slot, value) in labels {
            assert!(c.ontology.is_unknown(slot, value), "{slot}={value}");
        }
    }
}
