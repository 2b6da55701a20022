mod common;

use std::time::Instant;

use promptscope::cluster::{cluster_exclusions, purity};

fn fixture() -> (Vec<String>, Vec<String>) {
    common::read_fixture("exclusions/sentences.tsv")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (label, s) = l.split_once('\t').expect("label<TAB>sentence");
            (s.to_string(), label.to_string())
        })
        .unzip()
}

#[test]
fn exclusion_purity_and_determinism() {
    let (sentences, labels) = fixture();
    assert_eq!(sentences.len(), 25);
    let start = Instant::now();
    let a = cluster_exclusions(&sentences, 5, 0).unwrap();
    let b = cluster_exclusions(&sentences, 5, 0).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(a, b);
    let p = purity(&a.assignments, &labels);
    println!("purity {p:.3} in {elapsed:?}; terms {:?}", a.centroid_terms);
    assert!(p >= 0.8, "purity {p}");
    assert!(elapsed.as_secs_f64() < 2.0);
}

/// Single seeds can land in poorer local optima; the average should still clear the bar.
#[test]
fn mean_purity_across_seeds() {
    let (sentences, labels) = fixture();
    let scores: Vec<f64> =
        (0..10).map(|seed| purity(&cluster_exclusions(&sentences, 5, seed).unwrap().assignments, &labels)).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    println!("per-seed purity {scores:?}, mean {mean:.3}");
    assert!(mean >= 0.8, "mean purity {mean}");
}
