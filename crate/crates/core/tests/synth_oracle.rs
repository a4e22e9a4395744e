use std::path::Path;

use mlpilot_core::bench::{generate_synthetic, positive_count, SyntheticKind, SyntheticSpec};
use proptest::prelude::*;

/// Reads `(features, label)` rows with a plain line split; generated fields
/// never need quoting.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let body = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, body)
}

/// Reverse complement via a lookup string, independent of the crate's.
fn revcomp(seq: &str) -> String {
    let from = "ACGT";
    let to = "TGCA";
    seq.chars()
        .rev()
        .map(|c| to.chars().nth(from.find(c).unwrap()).unwrap())
        .collect()
}

/// The exact-match rule: predict 1 iff the motif occurs.
fn rule_classifier_accuracy(path: &Path, motif: &str) -> f64 {
    let (header, body) = rows(path);
    assert_eq!(header, ["sequence", "label"]);
    let correct = body
        .iter()
        .filter(|r| (if r[0].contains(motif) { "1" } else { "0" }) == r[1])
        .count();
    correct as f64 / body.len() as f64
}

#[test]
fn rule_classifier_is_perfect_on_planted_motif() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate_synthetic(&SyntheticSpec { seed: 7, ..SyntheticSpec::default() }, dir.path()).unwrap();
    assert_eq!(rule_classifier_accuracy(&out.test_path, "TATAAT"), 1.0);
    assert_eq!(rule_classifier_accuracy(&out.train_path, "TATAAT"), 1.0);
    let (_, test) = rows(&out.test_path);
    assert_eq!(test.len(), 500);
    assert!(test.iter().all(|r| r[0].len() == 100));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn planted_motif_labels_follow_the_construction(
        seed in any::<u64>(),
        motif in "[ACGT]{4,7}",
        balance in 0.2f64..0.8,
        n in 10usize..60,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            name: "pm".into(),
            n_train: n,
            n_test: n / 2 + 1,
            seq_len: 40,
            motif: motif.clone(),
            class_balance: balance,
            seed,
            ..SyntheticSpec::default()
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        for (path, size) in [(&out.train_path, spec.n_train), (&out.test_path, spec.n_test)] {
            let (_, body) = rows(path);
            prop_assert_eq!(body.len(), size);
            for r in &body {
                prop_assert_eq!(r[1] == "1", r[0].contains(&motif));
            }
            let positives = body.iter().filter(|r| r[1] == "1").count() as f64;
            prop_assert!((positives - size as f64 * balance).abs() <= 1.0);
            prop_assert_eq!(positives as usize, positive_count(size, balance));
        }
    }

    #[test]
    fn paired_labels_follow_the_construction(seed in any::<u64>(), lo in 4usize..8, extra in 0usize..5) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            name: "ps".into(),
            kind: SyntheticKind::PairedSequence,
            n_train: 40,
            n_test: 20,
            seq_len: 30,
            len_range: Some((lo, lo + extra)),
            seed,
            ..SyntheticSpec::default()
        };
        let out = generate_synthetic(&spec, dir.path()).unwrap();
        let (header, body) = rows(&out.train_path);
        prop_assert_eq!(header, vec!["target".to_string(), "probe".into(), "label".into()]);
        for r in &body {
            prop_assert!((lo..=lo + extra).contains(&r[1].len()));
            prop_assert_eq!(r[0].len(), 30);
            prop_assert_eq!(r[2] == "1", r[0].contains(&revcomp(&r[1])));
        }
    }

    #[test]
    fn same_seed_same_files(seed in any::<u64>()) {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { n_train: 30, n_test: 10, seed, ..SyntheticSpec::default() };
        let x = generate_synthetic(&spec, a.path()).unwrap();
        let y = generate_synthetic(&spec, b.path()).unwrap();
        prop_assert_eq!(std::fs::read(&x.train_path).unwrap(), std::fs::read(&y.train_path).unwrap());
        prop_assert_eq!(std::fs::read(&x.test_path).unwrap(), std::fs::read(&y.test_path).unwrap());
    }
}
