//! Domain types shared across the tracker, plus the joint-goal accumulation
//! rule and the canonical value matcher used at evaluation time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NONE: &str = "none";
pub const DONTCARE: &str = "dontcare";

/// Lowercase, trim and collapse internal whitespace.
pub fn canonicalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Equality after canonicalization. Rephrasings are distinct surface forms.
pub fn canonical_match(predicted: &str, gold: &str) -> bool {
    canonicalize(predicted) == canonicalize(gold)
}

const DETACHED: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"', '[', ']', '{', '}'];

/// Lowercase, detach punctuation, split on whitespace.
///
/// Apostrophes, hyphens and underscores stay inside tokens so that forms like
/// `mid-priced` or `resto_rome_cheap` survive as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars() {
        if DETACHED.contains(&ch) {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.extend(ch.to_lowercase());
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

/// Start positions of every occurrence of `needle` inside `haystack`.
pub fn find_subsequences(haystack: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub kind: SlotKind,
    pub values: Vec<String>,
    pub specials: Vec<String>,
}

impl SlotSpec {
    pub fn single(name: &str, values: &[&str]) -> Self {
        SlotSpec {
            name: name.to_owned(),
            kind: SlotKind::Single,
            values: values.iter().map(|v| canonicalize(v)).collect(),
            specials: vec![NONE.to_owned(), DONTCARE.to_owned()],
        }
    }

    pub fn multi(name: &str, values: &[&str]) -> Self {
        SlotSpec {
            name: name.to_owned(),
            kind: SlotKind::Multi,
            values: values.iter().map(|v| canonicalize(v)).collect(),
            specials: vec![NONE.to_owned()],
        }
    }

    pub fn is_single(&self) -> bool {
        self.kind == SlotKind::Single
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        let c = canonicalize(value);
        self.values.iter().position(|v| *v == c)
    }

    pub fn special_index(&self, value: &str) -> Option<usize> {
        let c = canonicalize(value);
        self.specials.iter().position(|v| *v == c)
    }

    pub fn is_known(&self, value: &str) -> bool {
        self.value_index(value).is_some()
    }

    fn expected_specials(&self) -> &'static [&'static str] {
        match self.kind {
            SlotKind::Single => &[NONE, DONTCARE],
            SlotKind::Multi => &[NONE],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub slots: Vec<SlotSpec>,
}

impl Ontology {
    pub fn new(slots: Vec<SlotSpec>) -> Self {
        Ontology { slots }
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn single_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.is_single())
    }

    /// The multi-value slot holding requestable names, when the ontology has one.
    pub fn request_slot(&self) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.kind == SlotKind::Multi)
    }

    /// True when `value` is neither a canonical value nor a special of `slot`.
    pub fn is_unknown(&self, slot: &str, value: &str) -> bool {
        match self.slot(slot) {
            Some(spec) => !spec.is_known(value) && spec.special_index(value).is_none(),
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub slot: Option<String>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.slot {
            Some(slot) => write!(f, "slot '{}': {}", slot, self.rule),
            None => write!(f, "ontology: {}", self.rule),
        }
    }
}

/// Every broken ontology invariant, one entry per (slot, rule).
pub fn validate_ontology(o: &Ontology) -> Vec<Violation> {
    let mut out = Vec::new();
    if o.slots.is_empty() {
        out.push(Violation {
            slot: None,
            rule: "ontology has no slots".into(),
        });
    }
    let mut names = BTreeSet::new();
    for spec in &o.slots {
        let slot = Some(spec.name.clone());
        if spec.name.trim().is_empty() {
            out.push(Violation {
                slot: slot.clone(),
                rule: "slot name is empty".into(),
            });
        }
        if !names.insert(spec.name.as_str()) {
            out.push(Violation {
                slot: slot.clone(),
                rule: "duplicate slot name".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for v in &spec.values {
            let c = canonicalize(v);
            if c.is_empty() {
                out.push(Violation {
                    slot: slot.clone(),
                    rule: "empty value".into(),
                });
            } else if !seen.insert(c.clone()) {
                out.push(Violation {
                    slot: slot.clone(),
                    rule: format!("value '{c}' is not unique after canonicalization"),
                });
            }
        }
        let expected = spec.expected_specials();
        if spec.specials.len() != expected.len()
            || spec.specials.iter().zip(expected).any(|(a, b)| a != b)
        {
            out.push(Violation {
                slot: slot.clone(),
                rule: format!("specials must be exactly {expected:?}, found {:?}", spec.specials),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SystemAction {
    pub act: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl SystemAction {
    pub fn new(act: &str, slot: Option<&str>, value: Option<&str>) -> Self {
        SystemAction {
            act: act.to_owned(),
            slot: slot.map(str::to_owned),
            value: value.map(canonicalize),
        }
    }

    /// Serialization "act [slot] [value]" as tokens.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = tokenize(&self.act);
        if let Some(slot) = &self.slot {
            out.extend(tokenize(slot));
        }
        if let Some(value) = &self.value {
            out.extend(tokenize(value));
        }
        out
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.tokens().is_empty() {
            return Err("system action has no tokens".into());
        }
        if self.value.is_some() && self.slot.is_none() {
            return Err(format!("system action '{}' has a value but no slot", self.act));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabel {
    pub turn_goal: BTreeMap<String, String>,
    pub requests: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub system_actions: Vec<SystemAction>,
    pub user_utterance: Vec<String>,
    pub gold: TurnLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// Accumulated single-slot constraints. `none` is represented by absence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub joint_goal: BTreeMap<String, String>,
}

impl DialogueState {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.joint_goal.get(slot).map(String::as_str)
    }
}

/// Carry over every slot the turn does not mention, replace the ones it does.
/// A turn value of `none` retracts the slot.
pub fn accumulate_joint_goal(
    ontology: &Ontology,
    prev: &DialogueState,
    turn_goal: &BTreeMap<String, String>,
) -> Result<DialogueState> {
    let mut next = prev.clone();
    for (slot, value) in turn_goal {
        match ontology.slot(slot) {
            Some(spec) if spec.is_single() => {}
            Some(_) => {
                return Err(Error::schema(
                    None,
                    format!("slot '{slot}' is multi-valued and cannot appear in a turn goal"),
                ))
            }
            None => return Err(Error::schema(None, format!("unknown slot '{slot}'"))),
        }
        let value = canonicalize(value);
        if value == NONE {
            next.joint_goal.remove(slot);
        } else {
            next.joint_goal.insert(slot.clone(), value);
        }
    }
    Ok(next)
}

/// Gold joint goals after each turn of a dialogue.
pub fn gold_joint_goals(ontology: &Ontology, dialogue: &Dialogue) -> Result<Vec<DialogueState>> {
    let mut state = DialogueState::default();
    let mut out = Vec::with_capacity(dialogue.turns.len());
    for turn in &dialogue.turns {
        state = accumulate_joint_goal(ontology, &state, &turn.gold.turn_goal).map_err(|e| match e {
            Error::Schema { message, .. } => Error::schema(Some(&dialogue.id), message),
            other => other,
        })?;
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn woz_ontology() -> Ontology {
        Ontology::new(vec![
            SlotSpec::single("area", &["north", "south", "centre"]),
            SlotSpec::single("food", &["chinese", "thai", "kosher"]),
            SlotSpec::single("price range", &["cheap", "moderate", "expensive"]),
            SlotSpec::multi("request", &["address", "phone", "postcode"]),
        ])
    }

    fn goal(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn state(pairs: &[(&str, &str)]) -> DialogueState {
        DialogueState { joint_goal: goal(pairs) }
    }

    #[test]
    fn accumulate_carries_over_and_replaces() {
        let o = woz_ontology();
        let prev = state(&[("food", "chinese")]);
        assert_eq!(
            accumulate_joint_goal(&o, &prev, &goal(&[("area", "north")])).unwrap(),
            state(&[("food", "chinese"), ("area", "north")])
        );
        assert_eq!(
            accumulate_joint_goal(&o, &prev, &goal(&[("food", "thai")])).unwrap(),
            state(&[("food", "thai")])
        );
        assert_eq!(
            accumulate_joint_goal(&o, &DialogueState::default(), &goal(&[])).unwrap(),
            DialogueState::default()
        );
        // input untouched
        assert_eq!(prev, state(&[("food", "chinese")]));
    }

    #[test]
    fn accumulate_none_retracts_and_dontcare_is_kept() {
        let o = woz_ontology();
        let prev = state(&[("food", "chinese"), ("area", "north")]);
        let next = accumulate_joint_goal(&o, &prev, &goal(&[("food", "none"), ("area", "dontcare")])).unwrap();
        assert_eq!(next, state(&[("area", "dontcare")]));
    }

    #[test]
    fn accumulate_rejects_unknown_and_multi_slots() {
        let o = woz_ontology();
        let prev = DialogueState::default();
        assert!(matches!(
            accumulate_joint_goal(&o, &prev, &goal(&[("parking", "yes")])),
            Err(Error::Schema { .. })
        ));
        assert!(matches!(
            accumulate_joint_goal(&o, &prev, &goal(&[("request", "phone")])),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn canonical_match_examples() {
        assert!(canonical_match("Moderate ", "moderate"));
        assert!(!canonical_match("mid-priced", "moderate"));
        assert!(canonical_match("north  part", "north part"));
    }

    #[test]
    fn tokenize_detaches_punctuation() {
        assert_eq!(tokenize("Cheap, Kosher food please!"), ["cheap", ",", "kosher", "food", "please", "!"]);
        assert_eq!(tokenize("a mid-priced place"), ["a", "mid-priced", "place"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn subsequence_search() {
        let hay = tokenize("the north part of the north part town");
        assert_eq!(find_subsequences(&hay, &tokenize("north part")), vec![1, 5]);
        assert!(find_subsequences(&hay, &[]).is_empty());
    }

    #[test]
    fn validate_well_formed_woz_ontology() {
        assert!(validate_ontology(&woz_ontology()).is_empty());
    }

    #[test]
    fn validate_reports_duplicate_value() {
        let mut o = woz_ontology();
        o.slots[0].values = vec!["north".into(), "North ".into(), "south".into()];
        let v = validate_ontology(&o);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].slot.as_deref(), Some("area"));
    }

    #[test]
    fn validate_reports_empty_ontology() {
        assert_eq!(validate_ontology(&Ontology::new(vec![])).len(), 1);
    }

    #[test]
    fn validate_reports_bad_specials_and_names() {
        let mut o = woz_ontology();
        o.slots[1].specials = vec!["none".into()];
        o.slots[2].name = "area".into();
        let v = validate_ontology(&o);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn system_action_tokens() {
        let a = SystemAction::new("request", Some("price range"), None);
        assert_eq!(a.tokens(), ["request", "price", "range"]);
        assert!(a.check().is_ok());
        let bad = SystemAction {
            act: "inform".into(),
            slot: None,
            value: Some("thai".into()),
        };
        assert!(bad.check().is_err());
    }

    fn slot_name() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["area", "food", "price range"]).prop_map(str::to_owned)
    }

    fn value() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["north", "thai", "cheap", "none", "dontcare", "kosher"]).prop_map(str::to_owned)
    }

    fn turn_goals() -> impl Strategy<Value = Vec<BTreeMap<String, String>>> {
        prop::collection::vec(prop::collection::btree_map(slot_name(), value(), 0..3), 0..8)
    }

    fn fold(o: &Ontology, start: &DialogueState, goals: &[BTreeMap<String, String>]) -> DialogueState {
        goals
            .iter()
            .fold(start.clone(), |s, g| accumulate_joint_goal(o, &s, g).unwrap())
    }

    proptest! {
        #[test]
        fn accumulation_is_prefix_associative(goals in turn_goals(), split in 0usize..8) {
            let o = woz_ontology();
            let split = split.min(goals.len());
            let whole = fold(&o, &DialogueState::default(), &goals);
            let prefix = fold(&o, &DialogueState::default(), &goals[..split]);
            prop_assert_eq!(whole, fold(&o, &prefix, &goals[split..]));
        }

        #[test]
        fn accumulation_idempotent_on_empty_goal(goals in turn_goals()) {
            let o = woz_ontology();
            let s = fold(&o, &DialogueState::default(), &goals);
            let again = accumulate_joint_goal(&o, &s, &BTreeMap::new()).unwrap();
            prop_assert_eq!(again, s);
        }

        #[test]
        fn canonical_match_is_an_equivalence(a in "[ A-Za-z]{0,6}", b in "[ A-Za-z]{0,6}", c in "[ A-Za-z]{0,6}") {
            prop_assert!(canonical_match(&a, &a));
            prop_assert_eq!(canonical_match(&a, &b), canonical_match(&b, &a));
            if canonical_match(&a, &b) && canonical_match(&b, &c) {
                prop_assert!(canonical_match(&a, &c));
            }
        }
    }
}
