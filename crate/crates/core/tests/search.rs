mod common;

use std::collections::BTreeMap;

use common::*;
use rand::Rng;
use viser::embedding::format::{load_corpus, write_binary, write_jsonl};
use viser::embedding::{Corpus, EmbeddingRecord};
use viser::mil_pooling::LabelVector;
use viser::neighbor_search::{exact_search, map_phase, recall, search, transfer_labels, SearchParams};

#[test]
fn full_emission_search_equals_exact_search() {
    let mut rng = rng(31);
    for _ in 0..12 {
        let a = rng.random_range(1..=60);
        let u = rng.random_range(1..=800);
        let d = rng.random_range(1..=32);
        let labeled = random_corpus(&mut rng, a, d);
        let unlabeled = random_corpus(&mut rng, u, d);
        let k_r = rng.random_range(1..=12);
        let oracle = exact_search(&labeled, &unlabeled, k_r).unwrap();
        for shards in [1, 2, 3, 8, 13] {
            let got = search(&labeled, &unlabeled, &SearchParams::new(a, k_r, shards).unwrap()).unwrap();
            assert_eq!(got, oracle, "a={a} u={u} d={d} shards={shards}");
        }
    }
}

#[test]
fn exact_search_agrees_with_brute_force() {
    let mut rng = rng(32);
    for _ in 0..10 {
        let labeled = random_corpus(&mut rng, 20, 16);
        let unlabeled = random_corpus(&mut rng, 300, 16);
        let k_r = 7;
        let got = exact_search(&labeled, &unlabeled, k_r).unwrap();
        for l in labeled.records() {
            let row = brute_force_row(l, &unlabeled);
            let mine = &got[&l.id];
            assert_eq!(mine.len(), k_r);
            for (m, (id, s)) in mine.iter().zip(&row) {
                assert!((m.score - s).abs() < 1e-12);
                // Distinct random vectors: ids agree unless scores nearly tie.
                if (m.score - s).abs() < 1e-15 {
                    assert_eq!(m.unlabeled_id, *id);
                }
            }
        }
    }
}

#[test]
fn map_phase_is_the_sorted_similarity_row() {
    let mut rng = rng(33);
    for _ in 0..20 {
        let labeled = random_corpus(&mut rng, 40, 8);
        let cand = random_corpus(&mut rng, 1, 8).records()[0].clone();
        let emitted = map_phase(&cand, labeled.records(), labeled.len()).unwrap();
        let row = brute_force_row(&cand, &labeled);
        assert_eq!(emitted.len(), row.len());
        for (m, (id, s)) in emitted.iter().zip(&row) {
            assert_eq!(m.labeled_id, *id);
            assert!((m.score - s).abs() < 1e-12);
        }
        let short = map_phase(&cand, labeled.records(), 5).unwrap();
        assert_eq!(short, emitted[..5].to_vec());
    }
}

#[test]
fn truncated_emission_only_returns_true_matches() {
    let mut rng = rng(34);
    for _ in 0..8 {
        let labeled = random_corpus(&mut rng, 50, 6);
        let unlabeled = random_corpus(&mut rng, 600, 6);
        let full = exact_search(&labeled, &unlabeled, unlabeled.len()).unwrap();
        let exact = exact_search(&labeled, &unlabeled, 10).unwrap();
        let got = search(&labeled, &unlabeled, &SearchParams::new(3, 10, 4).unwrap()).unwrap();
        for (lid, matches) in &got {
            let ranking: BTreeMap<u64, f64> = full[lid].iter().map(|m| (m.unlabeled_id, m.score)).collect();
            for m in matches {
                assert_eq!(ranking[&m.unlabeled_id].to_bits(), m.score.to_bits());
            }
        }
        let r = recall(&got, &exact);
        assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn every_labeled_id_has_an_entry() {
    // Two labeled points, one candidate: with k_m = 1 only one key receives it.
    let labeled = Corpus::new(vec![
        EmbeddingRecord::new(0, vec![1.0, 0.0]).unwrap(),
        EmbeddingRecord::new(1, vec![0.0, 1.0]).unwrap(),
    ])
    .unwrap();
    let unlabeled = Corpus::new(vec![EmbeddingRecord::new(0, vec![1.0, 0.1]).unwrap()]).unwrap();
    let got = search(&labeled, &unlabeled, &SearchParams::new(1, 5, 1).unwrap()).unwrap();
    assert_eq!(got.len(), 2);
    assert_eq!(got[&0].len(), 1);
    assert!(got[&1].is_empty());
}

#[test]
fn corpus_files_round_trip_and_report_damage() {
    let mut rng = rng(35);
    let corpus = random_corpus(&mut rng, 5, 3);
    let dir = tempfile::tempdir().unwrap();

    let bin = dir.path().join("c.bin");
    let mut bytes = Vec::new();
    write_binary(&corpus, &mut bytes).unwrap();
    std::fs::write(&bin, &bytes).unwrap();
    let back = load_corpus::<f64>(&bin).unwrap();
    assert_eq!(back.len(), 5);

    std::fs::write(&bin, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_corpus::<f64>(&bin).unwrap_err().to_string();
    assert!(err.contains("record 4"), "{err}");

    let jsonl = dir.path().join("c.jsonl");
    let mut text = Vec::new();
    write_jsonl(&corpus, &mut text).unwrap();
    let mut text = String::from_utf8(text).unwrap();
    text.push_str("{\"id\": 9, \"vector\": [1.0, \n");
    std::fs::write(&jsonl, text).unwrap();
    let err = load_corpus::<f64>(&jsonl).unwrap_err().to_string();
    assert!(err.contains("line 6"), "{err}");
}

#[test]
fn label_transfer_copies_donor_labels() {
    let mut rng = rng(36);
    let labeled = random_corpus(&mut rng, 10, 4);
    let unlabeled = random_corpus(&mut rng, 100, 4);
    let table: BTreeMap<u64, LabelVector> = labeled
        .records()
        .iter()
        .map(|r| (r.id, LabelVector::from_indices(3, &[(r.id % 3) as u32]).unwrap()))
        .collect();
    let got = search(&labeled, &unlabeled, &SearchParams::default()).unwrap();
    let samples = transfer_labels(&got, &table, 1).unwrap();
    assert_eq!(samples.len(), 10);
    for s in &samples {
        assert_eq!(s.labels, table[&s.donor_id]);
        assert_eq!(got[&s.donor_id][0].unlabeled_id, s.features_source_id);
    }
}
