mod common;

use humal_core::corpus::{Label, SyntheticSpec};
use humal_core::humal::{
    al_total_loss, ap_total_loss, strategy_loss, BatchItem, StrategyConfig, StrategyKind,
};
use humal_core::model::{
    fit, forward, forward_batch, grad_check, load_checkpoint, predict, save_checkpoint,
    ModelConfig, Params, Readout, TrainConfig, TrainItem,
};
use humal_core::tokenizer::{subword_tokenize, word_tokenize};
use humal_core::Error;

fn batch(documents: usize, seed: u64) -> (Vec<TrainItem>, usize) {
    let spec = SyntheticSpec {
        documents,
        seed,
        label_given_cue: 1.0,
        ..SyntheticSpec::default()
    };
    let (_, vocab, prepared) = common::synthetic(&spec);
    (prepared.iter().map(|d| d.train_item()).collect(), vocab.len())
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let start = std::time::Instant::now();
    let (items, vocab) = batch(6, 3);
    let params = Params::init(&ModelConfig {
        head_std: 0.3,
        ..common::small_model(vocab, 11)
    });
    for kind in StrategyKind::ALL {
        let strategy = StrategyConfig::new(kind, 2.0);
        let report = grad_check(&params, &items, &strategy, 1e-3, 6, 1).unwrap();
        assert!(report.checked > 100);
        assert!(report.max_relative_error < 1e-4, "{kind}: {report:?}");
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn attention_rows_are_distributions() {
    let (items, vocab) = batch(10, 4);
    let params = Params::init(&common::small_model(vocab, 1));
    let seqs: Vec<&[u32]> = items.iter().map(|i| i.ids.as_slice()).collect();
    let (outs, _) = forward_batch(&params, &seqs, Readout::Cls, &[], None).unwrap();
    for (o, s) in outs.iter().zip(&seqs) {
        assert_eq!(o.trace.seq_len, s.len());
        for layer in &o.trace.rows {
            for row in layer {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        for l in 0..o.trace.layers() {
            let avg = o.trace.head_average(l).unwrap();
            assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(o.states.layers.iter().all(|h| h.nrows() == s.len()));
    }
}

#[test]
fn batched_forward_matches_single_sequences() {
    let (items, vocab) = batch(5, 6);
    let params = Params::init(&ModelConfig {
        head_std: 0.5,
        ..common::small_model(vocab, 9)
    });
    let seqs: Vec<&[u32]> = items.iter().map(|i| i.ids.as_slice()).collect();
    let (outs, _) = forward_batch(&params, &seqs, Readout::Cls, &[], None).unwrap();
    for (o, s) in outs.iter().zip(&seqs) {
        let (single, _) = forward_batch(&params, &[s], Readout::Cls, &[], None).unwrap();
        for (a, b) in o.prediction.logits.iter().zip(single[0].prediction.logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn classifier_plus_one_token_and_zero_head() {
    let vocab = humal_core::tokenizer::train_vocab(&["ok"], 2, 0).unwrap();
    let tokens = subword_tokenize(&word_tokenize("k"), &vocab);
    assert_eq!(tokens.len(), 2);
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let out = forward(&tokens, &Params::init(&cfg), Readout::Cls, None).unwrap();
    assert_eq!(out.prediction.logits, [0.0, 0.0]);
    assert_eq!(out.prediction.probability, 0.5);
    for row in out.trace.rows.iter().flatten() {
        assert_eq!(row.len(), 2);
        assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sequence_longer_than_max_len_is_rejected() {
    let cfg = ModelConfig {
        vocab_size: 4,
        max_len: 3,
        ..ModelConfig::default()
    };
    let err = forward_batch(&Params::init(&cfg), &[&[0, 3, 3, 3]], Readout::Cls, &[], None);
    assert!(matches!(err, Err(Error::SequenceTooLong { len: 4, max: 3 })));
    assert!(err.err().unwrap().to_string().contains('3'));
}

#[test]
fn zero_alpha_reduces_to_cross_entropy() {
    let (items, vocab) = batch(8, 7);
    let params = Params::init(&ModelConfig {
        head_std: 0.4,
        ..common::small_model(vocab, 3)
    });
    let seqs: Vec<&[u32]> = items.iter().map(|i| i.ids.as_slice()).collect();
    let (outs, _) = forward_batch(&params, &seqs, Readout::Cls, &[], None).unwrap();
    let view: Vec<BatchItem<'_>> = outs
        .iter()
        .zip(&items)
        .map(|(o, it)| BatchItem {
            output: o,
            label: it.label,
            human: it.human.as_deref(),
        })
        .collect();
    let ce = strategy_loss(&StrategyConfig::baseline(), &view).unwrap().total;
    for loss in [al_total_loss(&view, 0.0), ap_total_loss(&view, 0.0)] {
        let loss = loss.unwrap();
        assert!((loss.total - ce).abs() < 1e-12);
        assert!(loss.attention > 0.0);
    }

    let model = common::small_model(vocab, 5);
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 3,
        learning_rate: 1e-3,
        seed: 8,
        ..TrainConfig::default()
    };
    let (base, _) = fit(&items, &model, &StrategyConfig::baseline(), &tcfg).unwrap();
    for kind in [StrategyKind::Al, StrategyKind::Ap] {
        let (p, h) = fit(&items, &model, &StrategyConfig::new(kind, 0.0), &tcfg).unwrap();
        assert!(p.tensors.bitwise_eq(&base.tensors), "{kind}");
        assert_eq!(h.alpha, 0.0);
    }
}

#[test]
fn training_is_deterministic() {
    let (items, vocab) = batch(12, 8);
    let model = common::small_model(vocab, 2);
    let tcfg = TrainConfig {
        epochs: 2,
        batch_size: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let al = StrategyConfig::new(StrategyKind::Al, 2.0);
    let (p1, h1) = fit(&items, &model, &al, &tcfg).unwrap();
    let (p2, h2) = fit(&items, &model, &al, &tcfg).unwrap();
    assert!(p1.tensors.bitwise_eq(&p2.tensors));
    assert!(h1.bitwise_eq(&h2));
    let (p3, _) = fit(&items, &model, &al, &TrainConfig { seed: 4, ..tcfg }).unwrap();
    assert!(!p1.tensors.bitwise_eq(&p3.tensors));
}

#[test]
fn separable_set_is_fit_exactly() {
    let (items, vocab) = batch(16, 12);
    assert!(items.iter().any(|i| i.label == Label::Positive));
    assert!(items.iter().any(|i| i.label == Label::Negative));
    let tcfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let baseline = StrategyConfig::baseline();
    let (p, h) = fit(&items, &common::small_model(vocab, 2), &baseline, &tcfg).unwrap();
    assert_eq!(h.epochs.len(), 10);
    let seqs: Vec<&[u32]> = items.iter().map(|i| i.ids.as_slice()).collect();
    let out = predict(&p, &seqs, &baseline).unwrap();
    let correct = out
        .iter()
        .zip(&items)
        .filter(|(o, it)| (o.prediction.probability > 0.5) == (it.label == Label::Positive))
        .count();
    assert_eq!(correct, items.len());
}

#[test]
fn history_is_additive_and_written_as_csv() {
    let (items, vocab) = batch(10, 9);
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let al = StrategyConfig::new(StrategyKind::Al, 2.0);
    let (_, h) = fit(&items, &common::small_model(vocab, 1), &al, &tcfg).unwrap();
    assert_eq!(h.step_losses.len(), 9);
    for e in &h.epochs {
        assert!((e.total_loss - (e.ce_loss + 2.0 * e.attn_loss)).abs() < 1e-9);
    }
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("epoch,total_loss,ce_loss,attn_loss,train_auc\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn fit_preconditions() {
    let (mut items, vocab) = batch(4, 10);
    let model = common::small_model(vocab, 1);
    let tcfg = TrainConfig::default();
    let al = StrategyConfig::new(StrategyKind::Al, 2.0);
    assert!(matches!(fit(&[], &model, &al, &tcfg), Err(Error::EmptyTrainSet)));
    items[1].human = None;
    let missing = items[1].id.clone();
    match fit(&items, &model, &al, &tcfg) {
        Err(Error::MissingAttention(ids)) => assert_eq!(ids, [missing]),
        other => panic!("unexpected {other:?}"),
    }
    fit(&items, &model, &StrategyConfig::baseline(), &TrainConfig { epochs: 1, ..tcfg }).unwrap();
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let params = Params::init(&common::small_model(30, 4));
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, params.config);
    assert!(back.tensors.bitwise_eq(&params.tensors));
}
