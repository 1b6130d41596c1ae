mod common;

use std::collections::{BTreeMap, BTreeSet};

use geosent::classifier::{evaluate, parse_labeled_corpus, train, Label, LabeledTweet, UnigramModel};
use proptest::prelude::*;

/// Class statistics counted straight from whitespace-split documents.
struct FractionModel {
    counts: [BTreeMap<String, u128>; 2],
    totals: [u128; 2],
    docs: [u128; 2],
    vocab: u128,
}

impl FractionModel {
    fn new(docs: &[(&str, Label)]) -> Self {
        let mut counts: [BTreeMap<String, u128>; 2] = Default::default();
        let mut totals = [0; 2];
        let mut ndocs = [0; 2];
        let mut vocab = BTreeSet::new();
        for (text, label) in docs {
            let c = usize::from(*label == Label::Negative);
            ndocs[c] += 1;
            for w in text.split_whitespace() {
                *counts[c].entry(w.to_string()).or_insert(0) += 1;
                totals[c] += 1;
                vocab.insert(w.to_string());
            }
        }
        FractionModel {
            counts,
            totals,
            docs: ndocs,
            vocab: vocab.len() as u128,
        }
    }

    /// Unnormalised posterior of class `c` as an exact fraction.
    fn posterior(&self, c: usize, text: &str) -> (u128, u128) {
        let (mut num, mut den) = (self.docs[c], self.docs[0] + self.docs[1]);
        for w in text.split_whitespace() {
            let in_vocab = self.counts[0].contains_key(w) || self.counts[1].contains_key(w);
            if !in_vocab {
                continue;
            }
            num *= self.counts[c].get(w).copied().unwrap_or(0) + 1;
            den *= self.totals[c] + self.vocab;
        }
        (num, den)
    }

    fn label(&self, text: &str) -> (Label, f64) {
        let (pn, pd) = self.posterior(0, text);
        let (nn, nd) = self.posterior(1, text);
        let margin = (pn as f64 / pd as f64).ln() - (nn as f64 / nd as f64).ln();
        // pn/pd >= nn/nd
        let label = if pn * nd >= nn * pd {
            Label::Positive
        } else {
            Label::Negative
        };
        (label, margin)
    }
}

const FIXTURE: [(&str, Label); 2] = [("happy joy happy", Label::Positive), ("sad cry", Label::Negative)];

fn fixture_model() -> UnigramModel {
    train(FIXTURE.iter().map(|(t, l)| LabeledTweet::new(*t, *l))).unwrap()
}

#[test]
fn classify_matches_exact_fractions() {
    let oracle = FractionModel::new(&FIXTURE);
    let clf = fixture_model().classifier();
    let inputs = [
        "happy",
        "sad",
        "joy",
        "cry",
        "happy sad",
        "happy cry",
        "joy sad",
        "joy cry",
        "sad cry sad",
        "happy joy",
        "happy happy sad",
        "sad sad happy",
        "cry cry joy",
        "unknown",
        "",
        "happy unknown",
        "sad unknown words",
        "joy joy cry cry",
        "happy sad cry",
        "joy sad happy cry",
    ];
    for text in inputs {
        let (want, want_margin) = oracle.label(text);
        let (got, margin) = clf.classify(text);
        assert_eq!(got, want, "{text:?}");
        assert!((margin - want_margin).abs() < 1e-9, "{text:?}: {margin} vs {want_margin}");
    }
}

#[test]
fn hand_computed_probabilities() {
    let m = fixture_model();
    assert_eq!(m.token_probability(Label::Positive, "happy"), Some(3.0 / 7.0));
    assert_eq!(m.token_probability(Label::Negative, "happy"), Some(1.0 / 6.0));
    assert_eq!((m.class_total(Label::Positive), m.class_total(Label::Negative)), (3, 2));
    let clf = m.classifier();
    assert_eq!(clf.classify("happy").0, Label::Positive);
    assert_eq!(clf.classify("sad cry sad").0, Label::Negative);
    assert_eq!(clf.classify("nothing known"), (Label::Positive, 0.0));
    assert_eq!(clf.classify(""), (Label::Positive, 0.0));
}

#[test]
fn smoothed_probabilities_sum_to_one() {
    let corpus = parse_labeled_corpus(&common::read_fixture("train.tsv")).unwrap();
    for model in [fixture_model(), train(corpus).unwrap()] {
        for label in Label::ALL {
            let sum: f64 = model
                .vocabulary
                .iter()
                .map(|t| model.token_probability(label, t).unwrap())
                .sum();
            // unseen tokens carry no mass under the skip rule
            assert!((sum - 1.0).abs() < 1e-9, "{label}: {sum}");
        }
    }
}

#[test]
fn evaluation_on_training_fixture() {
    let corpus = parse_labeled_corpus(&common::read_fixture("train.tsv")).unwrap();
    let model = train(corpus.clone()).unwrap();
    let report = evaluate(&model, corpus).unwrap();
    assert_eq!(report.accuracy, 1.0);

    let half = evaluate(
        &fixture_model(),
        [LabeledTweet::new("happy", Label::Positive), LabeledTweet::new("happy", Label::Negative)],
    )
    .unwrap();
    assert_eq!((half.total, half.correct, half.accuracy), (2, 1, 0.5));
    assert_eq!(half.confusion, [[1, 0], [1, 0]]);
}

#[test]
fn packaged_model_matches_training_fixture() {
    let corpus = parse_labeled_corpus(&common::read_fixture("train.tsv")).unwrap();
    let mut bytes = Vec::new();
    train(corpus).unwrap().write_to(&mut bytes).unwrap();
    assert_eq!(String::from_utf8(bytes).unwrap(), common::read_fixture("model.nb"));
    let loaded = UnigramModel::load(common::fixture("model.nb")).unwrap();
    assert_eq!(loaded.doc_count(Label::Positive), 7);
}

fn word() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec!["happy", "joy", "sad", "cry", "meh", "news"])
}

fn doc() -> impl Strategy<Value = LabeledTweet> {
    (prop::collection::vec(word(), 1..6), any::<bool>()).prop_map(|(ws, pos)| {
        LabeledTweet::new(ws.join(" "), if pos { Label::Positive } else { Label::Negative })
    })
}

proptest! {
    #[test]
    fn training_is_additive(a in prop::collection::vec(doc(), 0..10), b in prop::collection::vec(doc(), 0..10)) {
        let mut ma = UnigramModel::default();
        a.iter().for_each(|d| ma.observe(d));
        let mut mb = UnigramModel::default();
        b.iter().for_each(|d| mb.observe(d));
        let mut union = UnigramModel::default();
        a.iter().chain(&b).for_each(|d| union.observe(d));
        ma.merge(&mb);
        prop_assert_eq!(ma, union);
    }

    #[test]
    fn positive_evidence_never_flips_to_negative(words in prop::collection::vec(word(), 0..8)) {
        let clf = fixture_model().classifier();
        let text = words.join(" ");
        if clf.classify(&text).0 == Label::Positive {
            for extra in ["happy", "joy"] {
                prop_assert_eq!(clf.classify(&format!("{text} {extra}")).0, Label::Positive);
            }
        }
    }
}
