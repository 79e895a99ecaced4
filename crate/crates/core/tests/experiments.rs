mod common;

use std::collections::HashSet;

use humal_core::corpus::{AnnotatedDocument, Label, SyntheticSpec};
use humal_core::experiments::{
    auc, bootstrap_eval, first_crossing, format_cell, horizontal_gap, label_cost_curve, length_stratify,
    lowess, minority_count, significance, split_test, subsample, write_curve_csv, write_replicate_csv,
    write_summary_csv, ExperimentSpec, LengthProfile,
};
use humal_core::humal::{StrategyConfig, StrategyKind};
use humal_core::model::TrainConfig;
use humal_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Count positive/negative pairs directly, ties worth one half.
fn pairwise_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut wins = 0u64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if li != Label::Positive {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != Label::Negative {
                continue;
            }
            pairs += 1;
            wins += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    wins as f64 / (2 * pairs) as f64
}

fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Label>) {
    let n = rng.random_range(2..=1000);
    let coarse = rng.random_bool(0.5);
    let mut labels: Vec<Label> = (0..n).map(|_| Label::from(rng.random_bool(0.4))).collect();
    labels[0] = Label::Positive;
    labels[1] = Label::Negative;
    let scores = (0..n)
        .map(|_| {
            if coarse {
                // many ties
                f64::from(rng.random_range(0..8u8)) / 8.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    (scores, labels)
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let (scores, labels) = random_fixture(&mut rng);
        assert_eq!(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
    }
}

#[test]
fn auc_edge_cases() {
    let labels = [Label::Negative, Label::Negative, Label::Positive, Label::Positive];
    assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &labels).unwrap(), 1.0);
    assert_eq!(auc(&[0.5; 4], &labels).unwrap(), 0.5);
    assert!(matches!(auc(&[0.1, 0.2], &[Label::Positive; 2]), Err(Error::SingleClass { .. })));
}

#[test]
fn minority_count_examples() {
    assert_eq!(minority_count(200, 0.5), 100);
    assert_eq!(minority_count(250, 0.01), 2);
    assert_eq!(minority_count(250, 0.05), 12);
    assert_eq!(minority_count(50, 0.01), 1);
}

#[test]
fn subsample_reports_shortfall() {
    let labels = vec![Label::Negative; 30];
    match subsample(&labels, 20, 0.1, Label::Positive, 0) {
        Err(Error::InsufficientClass {
            required, available, ..
        }) => {
            assert_eq!(required, 2);
            assert_eq!(available, 0);
        }
        other => panic!("expected shortfall, got {other:?}"),
    }
}

#[test]
fn train_subsamples_never_touch_the_test_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<Label> = (0..1500).map(|_| Label::from(rng.random_bool(0.5))).collect();
    let (test, pool) = split_test(&labels, 200, 0).unwrap();
    let positives = test.iter().filter(|&&i| labels[i] == Label::Positive).count();
    assert_eq!(positives, 100);
    let test_set: HashSet<usize> = test.iter().copied().collect();
    let pool_labels: Vec<Label> = pool.iter().map(|&i| labels[i]).collect();
    for seed in 0..20 {
        let picked = subsample(&pool_labels, 250, 0.05, Label::Positive, seed).unwrap();
        let ids: Vec<usize> = picked.iter().map(|&k| pool[k]).collect();
        assert!(ids.iter().all(|i| !test_set.contains(i)));
        let minority = ids.iter().filter(|&&i| labels[i] == Label::Positive).count();
        assert_eq!(minority, 12);
        assert_eq!(ids.iter().collect::<HashSet<_>>().len(), 250);
    }
    assert_eq!(
        subsample(&pool_labels, 250, 0.05, Label::Positive, 3).unwrap(),
        subsample(&pool_labels, 250, 0.05, Label::Positive, 3).unwrap()
    );
}

#[test]
fn shift_of_one_tenth_is_significant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let base: Vec<f64> = (0..20).map(|_| rng.random_range(0.6..0.8)).collect();
    let var: Vec<f64> = base.iter().map(|b| b + 0.1).collect();
    let s = significance(&base, &var).unwrap();
    assert!(s.p_value < 0.001);
    assert!((s.p_value - 2.0 * 2f64.powi(-20)).abs() < 1e-15);
    assert!(s.significant);
    assert!(!significance(&var, &base).unwrap().significant);
    assert!(significance(&base, &var[..19]).is_err());
}

proptest! {
    #[test]
    fn significance_invariant_to_affine_rescaling(
        diffs in prop::collection::vec(-0.3f64..0.3, 5..30),
        scale in 0.01f64..50.0,
        shift in -1.0f64..1.0,
    ) {
        let base: Vec<f64> = (0..diffs.len()).map(|i| 0.5 + 0.01 * i as f64).collect();
        let var: Vec<f64> = base.iter().zip(&diffs).map(|(b, d)| b + d).collect();
        let a = significance(&base, &var).unwrap();
        let base2: Vec<f64> = base.iter().map(|b| scale * b + shift).collect();
        let var2: Vec<f64> = var.iter().map(|v| scale * v + shift).collect();
        let b = significance(&base2, &var2).unwrap();
        prop_assert_eq!(a.significant, b.significant);
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
    }

    #[test]
    fn minority_count_is_monotone(size in 1usize..3000, ratio in 0.001f64..0.99) {
        prop_assert!(minority_count(size + 1, ratio) >= minority_count(size, ratio));
        prop_assert!(minority_count(size, (ratio + 0.01).min(1.0)) >= minority_count(size, ratio));
    }
}

#[test]
fn lowess_reproduces_linear_curve() {
    let x: Vec<f64> = [50, 100, 250, 500, 750, 1000, 1250, 1500, 1750, 2000]
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let y: Vec<f64> = x.iter().map(|v| 0.55 + 2e-4 * v).collect();
    for (a, b) in lowess(&x, &y, 0.2).unwrap().iter().zip(&y) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn gap_matches_direct_interpolation() {
    let xs = [50.0, 100.0, 250.0, 500.0, 1000.0, 2000.0];
    let base = [0.55, 0.6, 0.68, 0.75, 0.8, 0.85];
    let var = [0.6, 0.7, 0.78, 0.84, 0.87, 0.9];
    let target = 0.8;
    // baseline reaches 0.8 exactly at 1000; variant between 250 (0.78) and 500 (0.84)
    let variant_at = 250.0 + (0.8 - 0.78) / (0.84 - 0.78) * 250.0;
    let gap = horizontal_gap(&xs, &base, &var, target).unwrap();
    assert!((gap - (1000.0 - variant_at)).abs() < 1e-9);
    assert_eq!(first_crossing(&xs, &base, 0.95), None);
}

#[test]
fn length_buckets_follow_word_counts() {
    let doc = |id: &str, n: usize| AnnotatedDocument {
        id: id.into(),
        text: String::new(),
        words: vec!["w".into(); n],
        annotations: Vec::new(),
        self_report_label: None,
        resolved_label: None,
    };
    let docs = [doc("a", 50), doc("b", 51), doc("c", 101), doc("d", 201), doc("e", 100)];
    let yelp = length_stratify(&docs, LengthProfile::Yelp);
    let ids = |k: usize| yelp[k].ids.clone();
    assert_eq!(ids(0), ["a"]);
    assert_eq!(ids(1), ["b", "e"]);
    assert_eq!(ids(2), ["c"]);
    let pers = length_stratify(&docs, LengthProfile::Personality);
    assert_eq!(pers[0].ids, ["a", "b", "e"]);
    assert_eq!(pers[1].ids, ["c", "d"]);
    assert!(length_stratify(&[], LengthProfile::Yelp).iter().all(|b| b.ids.is_empty()));
}

#[test]
fn report_cell_format() {
    assert_eq!(format_cell(0.8412, 0.0791), "0.84 (0.08)");
}

fn tiny_spec(vocab: usize) -> ExperimentSpec {
    ExperimentSpec {
        size: 40,
        ratio: 0.2,
        replicates: 3,
        test_size: 40,
        base_seed: 7,
        strategies: vec![
            StrategyConfig::baseline(),
            StrategyConfig::new(StrategyKind::Al, 2.0),
            StrategyConfig::new(StrategyKind::An, 2.0),
        ],
        model: common::small_model(vocab, 0),
        train: TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        },
        ..ExperimentSpec::default()
    }
}

#[test]
fn bootstrap_eval_is_deterministic() {
    let (_, vocab, prepared) = common::synthetic(&SyntheticSpec {
        documents: 300,
        ..SyntheticSpec::default()
    });
    let spec = tiny_spec(vocab.len());
    let a = bootstrap_eval(&spec, &prepared).unwrap();
    let b = bootstrap_eval(&spec, &prepared).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.seeds, [7, 8, 9]);
    for s in &a.strategies {
        assert_eq!(s.aucs.len(), 3);
        assert!(s.aucs.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s.significance.is_none(), s.strategy.kind == StrategyKind::Baseline);
    }
    assert!(a.strategy(StrategyKind::An).unwrap().human_aucs.is_some());

    let csv = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut buf = Vec::new();
        f(&mut buf);
        String::from_utf8(buf).unwrap()
    };
    let reps = csv(&|w| write_replicate_csv(std::slice::from_ref(&a), w).unwrap());
    assert!(reps.starts_with("size,ratio,strategy,replicate,auc\n"));
    // three strategies plus the AN row with test-time human attention
    assert_eq!(reps.lines().count(), 1 + 4 * 3);
    let summary = csv(&|w| write_summary_csv(std::slice::from_ref(&a), w).unwrap());
    assert!(summary.starts_with("size,ratio,strategy,mean,std,p_value,significant"));
    assert_eq!(summary, csv(&|w| write_summary_csv(std::slice::from_ref(&b), w).unwrap()));

    let other = ExperimentSpec {
        base_seed: 8,
        ..spec.clone()
    };
    let c = bootstrap_eval(&other, &prepared).unwrap();
    // shifted seeds reuse two replicates but draw a different test set
    assert_eq!(c.seeds, [8, 9, 10]);
}

#[test]
fn bootstrap_eval_rejects_bad_spec() {
    let (_, vocab, prepared) = common::synthetic(&SyntheticSpec {
        documents: 100,
        ..SyntheticSpec::default()
    });
    let spec = ExperimentSpec {
        replicates: 0,
        ..tiny_spec(vocab.len())
    };
    assert!(bootstrap_eval(&spec, &prepared).is_err());
    let too_big = ExperimentSpec {
        size: 5000,
        ..tiny_spec(vocab.len())
    };
    assert!(bootstrap_eval(&too_big, &prepared).is_err());
}

#[test]
fn curve_is_reproducible_and_summarized() {
    let (_, vocab, prepared) = common::synthetic(&SyntheticSpec {
        documents: 300,
        ..SyntheticSpec::default()
    });
    let spec = ExperimentSpec {
        replicates: 2,
        strategies: vec![StrategyConfig::baseline(), StrategyConfig::new(StrategyKind::Al, 2.0)],
        ..tiny_spec(vocab.len())
    };
    let sizes = [20, 40, 60];
    let r = label_cost_curve(&spec, &prepared, &sizes, &[0.2]).unwrap();
    assert_eq!(r.curves.len(), 2);
    assert_eq!(r.gaps.len(), 1);
    assert_eq!(r.runs.len(), 3);
    let mut a = Vec::new();
    write_curve_csv(&r.curves, &mut a).unwrap();
    let again = label_cost_curve(&spec, &prepared, &sizes, &[0.2]).unwrap();
    let mut b = Vec::new();
    write_curve_csv(&again.curves, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("ratio,strategy,size,raw_auc,smoothed_auc\n"));
    assert!(label_cost_curve(&spec, &prepared, &[40, 20], &[0.2]).is_err());
}
