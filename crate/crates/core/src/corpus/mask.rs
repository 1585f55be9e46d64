use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub masked_values: BTreeMap<String, BTreeSet<String>>,
    pub requested_ratio: f64,
    pub achieved_ratio: f64,
    pub seed: u64,
    /// Slots left untouched, with the reason.
    #[serde(default)]
    pub skipped: BTreeMap<String, String>,
    /// Train-split label entries deleted because their value was masked.
    #[serde(default)]
    pub deleted_train_labels: usize,
}

impl MaskReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// `floor(ratio * n)`, robust to products like `0.57 * 100 = 56.99999999999999`.
pub(crate) fn masked_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Turns a share of each single-valued slot's known values into unknown values.
///
/// Per slot, `floor(ratio * |values|)` values are drawn uniformly without
/// replacement. They leave the ontology, and every train label carrying one is
/// deleted. Utterances are untouched; dev and test labels are kept and become
/// unknown values because the ontology no longer lists them.
pub fn mask_unknown_values(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, MaskReport)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("mask ratio must lie in (0, 1), got {ratio}")));
    }
    if matches!(corpus.provenance, Provenance::Masked { .. }) {
        return Err(Error::Config("corpus is already masked".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    let mut masked_values = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let (mut total, mut total_masked) = (0usize, 0usize);

    for spec in out.ontology.slots.iter_mut().filter(|s| s.is_single()) {
        let n = spec.values.len();
        total += n;
        if n < 2 {
            skipped.insert(spec.name.clone(), format!("only {n} value(s), cannot mask"));
            continue;
        }
        let k = masked_count(ratio, n);
        let chosen: BTreeSet<String> = rand::seq::index::sample(&mut rng, n, k)
            .into_iter()
            .map(|i| spec.values[i].clone())
            .collect();
        spec.values.retain(|v| !chosen.contains(v));
        total_masked += chosen.len();
        masked_values.insert(spec.name.clone(), chosen);
    }

    let mut deleted = 0usize;
    for turn in out.train.iter_mut().flat_map(|d| d.turns.iter_mut()) {
        turn.gold.turn_goal.retain(|slot, value| {
            let hit = masked_values.get(slot).is_some_and(|m: &BTreeSet<String>| m.contains(value));
            deleted += usize::from(hit);
            !hit
        });
    }

    out.provenance = Provenance::Masked {
        parent: Box::new(corpus.provenance.clone()),
        ratio,
        seed,
    };
    let report = MaskReport {
        masked_values,
        requested_ratio: ratio,
        achieved_ratio: if total == 0 { 0.0 } else { total_masked as f64 / total as f64 },
        seed,
        skipped,
        deleted_train_labels: deleted,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{Dialogue, Ontology, SlotSpec, Turn, TurnLabel};

    fn corpus(values: usize) -> Corpus {
        let names: Vec<String> = (0..values).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let ontology = Ontology::new(vec![
            SlotSpec::single("food", &refs),
            SlotSpec::single("area", &["north"]),
            SlotSpec::multi("request", &["phone"]),
        ]);
        let dialogue = |id: &str| Dialogue {
            id: id.into(),
            turns: names
                .iter()
                .map(|v| Turn {
                    system_actions: vec![],
                    user_utterance: vec![v.clone(), "food".into()],
                    gold: TurnLabel {
                        turn_goal: [("food".to_string(), v.clone())].into_iter().collect(),
                        requests: Default::default(),
                    },
                })
                .collect(),
        };
        Corpus {
            ontology,
            train: vec![dialogue("a")],
            dev: vec![],
            test: vec![dialogue("b")],
            provenance: Provenance::Synthetic,
        }
    }

    #[test]
    fn floor_counts() {
        assert_eq!(masked_count(0.4, 10), 4);
        assert_eq!(masked_count(0.6, 10), 6);
        assert_eq!(masked_count(0.2, 3), 0);
        assert_eq!(masked_count(0.57, 100), 57);
    }

    #[test]
    fn masks_exactly_floor_and_deletes_train_labels() {
        let c = corpus(10);
        let (m, report) = mask_unknown_values(&c, 0.4, 7).unwrap();
        let masked = &report.masked_values["food"];
        assert_eq!(masked.len(), 4);
        assert_eq!(m.ontology.slot("food").unwrap().values.len(), 6);
        assert!(m.ontology.slot("food").unwrap().values.iter().all(|v| !masked.contains(v)));
        assert_eq!(report.deleted_train_labels, 4);
        for t in &m.train[0].turns {
            if let Some(v) = t.gold.turn_goal.get("food") {
                assert!(!masked.contains(v));
            }
        }
        // test labels kept, now unknown
        let unknown = m.test[0]
            .turns
            .iter()
            .filter(|t| m.ontology.is_unknown("food", &t.gold.turn_goal["food"]))
            .count();
        assert_eq!(unknown, 4);
        assert_eq!(m.turn_count(), c.turn_count());
        assert!(report.skipped.contains_key("area"));
        assert!((report.achieved_ratio - 4.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let c = corpus(10);
        let (a, ra) = mask_unknown_values(&c, 0.4, 7).unwrap();
        let (b, rb) = mask_unknown_values(&c, 0.4, 7).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_ratio_and_double_masking() {
        let c = corpus(10);
        assert!(mask_unknown_values(&c, 0.0, 1).is_err());
        assert!(mask_unknown_values(&c, 1.0, 1).is_err());
        let (m, _) = mask_unknown_values(&c, 0.2, 1).unwrap();
        assert!(mask_unknown_values(&m, 0.2, 1).is_err());
    }
}
