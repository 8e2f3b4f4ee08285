use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use shortcut_stack::data::{
    format_conll, gen_synthetic, load_conll, parse_conll, save_conll, split, synthetic_table, synthetic_tag,
    synthetic_token, DataError, SyntheticSpec,
};
use shortcut_stack::{Sentence, TaggedCorpus};

#[test]
fn conll_examples() {
    let c = parse_conll("the DT\ncat NN\n\n").unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c.num_tokens(), 2);
    assert_eq!(c.sentences[0].tags, vec!["DT", "NN"]);
    assert!(parse_conll("").unwrap().is_empty());
    assert!(matches!(parse_conll("foo\n"), Err(DataError::Malformed { line: 1, found: 1 })));
    assert!(matches!(parse_conll("a B\n\nx Y Z\n"), Err(DataError::Malformed { line: 3, found: 3 })));
    assert_eq!(parse_conll("a B\n\n\n\nc D\n\n\n").unwrap().len(), 2);
}

#[test]
fn file_round_trip() {
    let (train, _, _) = gen_synthetic(&SyntheticSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.txt");
    save_conll(&train, &path).unwrap();
    assert_eq!(load_conll(&path).unwrap(), train);
    assert!(matches!(load_conll(&dir.path().join("missing")), Err(DataError::Io { .. })));
}

#[test]
fn synthetic_is_deterministic_and_disjoint() {
    let spec = SyntheticSpec::default();
    let a = gen_synthetic(&spec).unwrap();
    let b = gen_synthetic(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.0.len(), a.1.len(), a.2.len()), (64, 32, 32));
    let key = |s: &Sentence| s.tokens.join(" ");
    let train: HashSet<String> = a.0.sentences.iter().map(key).collect();
    assert!(a.1.sentences.iter().chain(&a.2.sentences).all(|s| !train.contains(&key(s))));
    let other = gen_synthetic(&SyntheticSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(a.0, other.0);
}

#[test]
fn synthetic_tag_counts_are_reproducible() {
    let count = |c: &TaggedCorpus| {
        let mut m: HashMap<String, usize> = HashMap::new();
        for t in c.tags() {
            *m.entry(t.to_string()).or_default() += 1;
        }
        m
    };
    let spec = SyntheticSpec::default();
    assert_eq!(count(&gen_synthetic(&spec).unwrap().0), count(&gen_synthetic(&spec).unwrap().0));
}

#[test]
fn synthetic_tags_follow_the_table_rule() {
    let spec = SyntheticSpec::default();
    let table = synthetic_table(&spec);
    let ids: HashMap<String, usize> = (0..spec.vocab).map(|i| (synthetic_token(i), i)).collect();
    let (train, dev, test) = gen_synthetic(&spec).unwrap();
    for s in train.sentences.iter().chain(&dev.sentences).chain(&test.sentences) {
        assert!((spec.min_len..=spec.max_len).contains(&s.len()));
        for t in 0..s.len() {
            let cur = ids[&s.tokens[t]];
            let prev = if t >= spec.distance { ids[&s.tokens[t - spec.distance]] } else { spec.vocab };
            assert_eq!(s.tags[t], synthetic_tag(table[cur][prev]));
        }
    }
}

/// Accuracy of the best classifier that sees only `key(sentence, t)`,
/// fitted on the evaluation data itself (an upper bound).
fn best_lookup_accuracy(c: &TaggedCorpus, key: impl Fn(&Sentence, usize) -> String) -> f64 {
    let mut counts: HashMap<String, HashMap<&str, usize>> = HashMap::new();
    for s in &c.sentences {
        for t in 0..s.len() {
            *counts.entry(key(s, t)).or_default().entry(&s.tags[t]).or_default() += 1;
        }
    }
    let best: usize = counts.values().map(|m| m.values().copied().max().unwrap()).sum();
    best as f64 / c.num_tokens() as f64
}

fn window3(s: &Sentence, t: usize) -> String {
    let at = |i: isize| -> &str {
        if i < 0 || i as usize >= s.len() {
            "<pad>"
        } else {
            &s.tokens[i as usize]
        }
    };
    let t = t as isize;
    format!("{} {} {}", at(t - 1), at(t), at(t + 1))
}

#[test]
fn zero_distance_is_solved_by_a_unigram_classifier() {
    let spec = SyntheticSpec {
        distance: 0,
        ..Default::default()
    };
    let (_, _, test) = gen_synthetic(&spec).unwrap();
    assert_eq!(best_lookup_accuracy(&test, |s, t| s.tokens[t].clone()), 1.0);
}

#[test]
fn long_range_task_is_not_solved_by_the_window() {
    let spec = SyntheticSpec {
        test: 4000,
        ..Default::default()
    };
    let (_, _, test) = gen_synthetic(&spec).unwrap();
    let window = best_lookup_accuracy(&test, window3);
    assert!(window < 1.0, "window-only bound {window}");

    // Interior positions: the partner token is uniform and independent of
    // the window, so the best guess per current token is the table row's mode.
    let table = synthetic_table(&spec);
    let interior: f64 = table
        .iter()
        .map(|row| {
            let mut c = vec![0usize; spec.tags];
            for &tag in &row[..spec.vocab] {
                c[tag] += 1;
            }
            *c.iter().max().unwrap() as f64 / spec.vocab as f64
        })
        .sum::<f64>()
        / spec.vocab as f64;
    assert!(interior < 0.8, "interior Bayes accuracy {interior}");
    let with_partner = best_lookup_accuracy(&test, |s, t| {
        let prev = t.checked_sub(spec.distance).map_or("<b>", |p| &s.tokens[p]);
        format!("{} {prev}", s.tokens[t])
    });
    assert_eq!(with_partner, 1.0);
}

#[test]
fn impossible_spec_is_reported() {
    let spec = SyntheticSpec {
        vocab: 1,
        min_len: 10,
        max_len: 10,
        train: 3,
        ..Default::default()
    };
    assert!(matches!(gen_synthetic(&spec), Err(DataError::Spec(_))));
}

#[test]
fn split_examples() {
    let (train, _, _) = gen_synthetic(&SyntheticSpec::default()).unwrap();
    let (a, b, c) = split(&train, [1.0, 0.0, 0.0], 3).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (64, 0, 0));
    assert!(split(&train, [0.5, 0.6, 0.0], 3).is_err());
    assert!(split(&train, [1.2, -0.2, 0.0], 3).is_err());
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 0usize..60, f0 in 0.0f64..1.0, f1 in 0.0f64..1.0, seed in any::<u64>()) {
        let f1 = f1 * (1.0 - f0);
        let fr = [f0, f1, 1.0 - f0 - f1];
        let corpus = TaggedCorpus {
            sentences: (0..n)
                .map(|i| Sentence::new([(format!("t{i}"), "X".to_string())]))
                .collect(),
        };
        let (a, b, c) = split(&corpus, fr, seed).unwrap();
        for (part, f) in [(&a, fr[0]), (&b, fr[1]), (&c, fr[2])] {
            prop_assert!((part.len() as f64 - f * n as f64).abs() <= 1.0 + 1e-9);
        }
        let mut all: Vec<String> = a.tokens().chain(b.tokens()).chain(c.tokens()).map(String::from).collect();
        all.sort();
        let mut want: Vec<String> = corpus.tokens().map(String::from).collect();
        want.sort();
        prop_assert_eq!(all, want);
    }

    #[test]
    fn conll_text_round_trip(sents in prop::collection::vec(prop::collection::vec(("[a-zA-Z0-9.,]{1,8}", "[A-Z]{1,3}"), 1..6), 0..6)) {
        let corpus = TaggedCorpus {
            sentences: sents.into_iter().map(Sentence::new).collect(),
        };
        prop_assert_eq!(parse_conll(&format_conll(&corpus)).unwrap(), corpus);
    }
}
