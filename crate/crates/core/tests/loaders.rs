use std::path::PathBuf;

use cedst::corpus::{load_babi_task5, load_woz, BabiFiles};
use cedst::data_model::{gold_joint_goals, SystemAction};
use cedst::embeddings::build_vocab;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_owned).collect()
}

#[test]
fn woz_fixture_loads_as_expected() {
    let c = load_woz(fixture("two_dialogues.json")).unwrap();
    assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (2, 0, 1));
    let t = &c.train[0].turns;
    assert_eq!(t[0].user_utterance, words("i want a cheap restaurant in the north ."));
    assert_eq!(t[0].system_actions, vec![SystemAction::new("welcome", None, None)]);
    assert_eq!(t[1].user_utterance, words("kosher food , please"));
    assert_eq!(t[1].gold.turn_goal["food"], "kosher");
    assert!(c.ontology.is_unknown("food", "kosher"));
    assert_eq!(t[2].system_actions[0].tokens(), words("confirm food kosher"));
    assert_eq!(t[2].gold.requests.iter().collect::<Vec<_>>(), ["phone"]);
    assert_eq!(c.train[1].turns[0].user_utterance, words("any thai place , i don't care about the price"));

    let joint = gold_joint_goals(&c.ontology, &c.train[0]).unwrap();
    assert_eq!(joint[2].joint_goal.len(), 3);
    assert_eq!(joint[2].get("food"), Some("kosher"));
    let joint = gold_joint_goals(&c.ontology, &c.train[1]).unwrap();
    assert_eq!(joint[2].get("food"), Some("chinese"));
    assert_eq!(joint[2].get("price range"), Some("dontcare"));

    let vocab = build_vocab(&c);
    assert!(vocab.id("kosher").is_some() && vocab.id("postcode").is_some());
    assert_eq!(vocab.hash(), build_vocab(&load_woz(fixture("two_dialogues.json")).unwrap()).hash());
}

#[test]
fn babi_fixture_labels_follow_api_calls() {
    let c = load_babi_task5(&BabiFiles {
        train: fixture("babi/train.txt"),
        dev: None,
        test: fixture("babi/test_oov.txt"),
    })
    .unwrap();
    assert_eq!(c.train.len(), 2);
    let d = &c.train[0];
    assert_eq!(d.turns.len(), 10, "knowledge-base lines are skipped");
    let label = |t: usize, slot: &str| d.turns[t].gold.turn_goal.get(slot).cloned();
    assert_eq!(label(1, "food").as_deref(), Some("italian"));
    assert_eq!(label(3, "location").as_deref(), Some("rome"));
    assert_eq!(label(4, "number").as_deref(), Some("six"));
    assert_eq!(label(5, "price").as_deref(), Some("cheap"));
    assert_eq!(label(7, "location").as_deref(), Some("paris"));
    assert_eq!(d.turns[7].gold.turn_goal.len(), 1, "only the changed value is labelled again");
    assert_eq!(d.turns[2].user_utterance, words("<silence>"));
    assert!(d.turns[0].system_actions.is_empty());
    assert_eq!(d.turns[1].system_actions[0].act, "hello what can i help you with today");

    let food = c.ontology.slot("food").unwrap();
    assert_eq!(food.values, ["italian", "spanish"]);
    let test = &c.test[0].turns[1].gold.turn_goal;
    assert_eq!(test["food"], "ethiopian");
    assert!(c.ontology.is_unknown("food", "ethiopian"));
    assert!(c.ontology.is_unknown("location", "hanoi"));
    assert!(!c.ontology.is_unknown("number", "two"));
}
