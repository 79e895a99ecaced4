//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::path::Path;
use std::time::Instant;

use humal_core::analysis::{loss_report, MONOTONE_TOLERANCE};
use humal_core::corpus::{
    aggregate_annotations, normalize_attention, propagate_raw, read_dataset, resolve_labels, AnnotatedDocument,
    AnnotatorRecord, Label, ResolutionMode, SyntheticSpec,
};
use humal_core::experiments::{
    auc, bootstrap_eval, write_replicate_csv, write_summary_csv, ExperimentSpec, RunResult,
};
use humal_core::humal::{al_total_loss, ap_total_loss, strategy_loss, BatchItem, StrategyConfig, StrategyKind};
use humal_core::model::{fit, forward_batch, grad_check, ModelConfig, Params, Readout, TrainConfig, TrainItem};
use humal_core::tokenizer::{subword_tokenize, word_tokenize, SubwordVocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn items(documents: usize, seed: u64) -> (Vec<TrainItem>, usize) {
    let spec = SyntheticSpec {
        documents,
        seed,
        label_given_cue: 1.0,
        ..SyntheticSpec::default()
    };
    let (_, vocab, prepared) = common::synthetic(&spec);
    (prepared.iter().map(|d| d.train_item()).collect(), vocab.len())
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (batch, vocab) = items(6, 3);
    let params = Params::init(&ModelConfig {
        head_std: 0.3,
        ..common::small_model(vocab, 11)
    });
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for kind in StrategyKind::ALL {
        let report = grad_check(&params, &batch, &StrategyConfig::new(kind, 2.0), 1e-3, 6, 1)
            .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_relative_error);
        parts.push(format!("{kind} {:.1e}", report.max_relative_error));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 60.0,
        format!("max rel err {worst:.2e} ({}), {secs:.1}s", parts.join(", ")),
    )
}

fn alpha_zero_reduction() -> Outcome {
    let (batch, vocab) = items(8, 7);
    let params = Params::init(&ModelConfig {
        head_std: 0.4,
        ..common::small_model(vocab, 3)
    });
    let seqs: Vec<&[u32]> = batch.iter().map(|i| i.ids.as_slice()).collect();
    let (outs, _) = forward_batch(&params, &seqs, Readout::Cls, &[], None).map_err(|e| e.to_string())?;
    let view: Vec<BatchItem<'_>> = outs
        .iter()
        .zip(&batch)
        .map(|(o, it)| BatchItem {
            output: o,
            label: it.label,
            human: it.human.as_deref(),
        })
        .collect();
    let ce = strategy_loss(&StrategyConfig::baseline(), &view)
        .map_err(|e| e.to_string())?
        .total;
    let mut diff = 0.0f64;
    for loss in [al_total_loss(&view, 0.0), ap_total_loss(&view, 0.0)] {
        diff = diff.max((loss.map_err(|e| e.to_string())?.total - ce).abs());
    }
    let model = common::small_model(vocab, 5);
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 3,
        learning_rate: 1e-3,
        seed: 8,
        ..TrainConfig::default()
    };
    let (base, _) = fit(&batch, &model, &StrategyConfig::baseline(), &tcfg).map_err(|e| e.to_string())?;
    let mut identical = true;
    for kind in [StrategyKind::Al, StrategyKind::Ap] {
        let (p, _) = fit(&batch, &model, &StrategyConfig::new(kind, 0.0), &tcfg).map_err(|e| e.to_string())?;
        identical &= p.tensors.bitwise_eq(&base.tensors);
    }
    check(
        diff <= 1e-12 && identical,
        format!("|loss - ce| = {diff:.1e}, trajectories bitwise identical: {identical}"),
    )
}

fn attention_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for n in 0..10_000 {
        let len = rng.random_range(1..=80);
        let annotators = rng.random_range(1..=5);
        let p = rng.random_range(0.01..0.6);
        let mut annotations: Vec<AnnotatorRecord> = (0..annotators)
            .map(|a| AnnotatorRecord {
                annotator_id: format!("a{a}"),
                highlights: (0..len).map(|_| u8::from(rng.random_bool(p))).collect(),
                label: Label::Positive,
            })
            .collect();
        annotations[0].highlights[rng.random_range(0..len)] = 1;
        let words: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let doc = AnnotatedDocument {
            id: format!("d{n}"),
            text: words.join(" "),
            words,
            annotations,
            self_report_label: None,
            resolved_label: None,
        };
        let raw = aggregate_annotations(&doc).map_err(|e| e.to_string())?;
        let sum: f64 = normalize_attention(&raw).map_err(|e| e.to_string())?.weights.iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }

    let mut entries: Vec<String> = ["[CLS]", "[PAD]", "[UNK]"].iter().map(|s| s.to_string()).collect();
    for t in ["will", "be", "back", "to", "this", "place", "!", "def", "##initely", "go", "##ing"] {
        entries.push(t.into());
    }
    let vocab = SubwordVocab::from_entries(entries, "##").map_err(|e| e.to_string())?;
    let seq = subword_tokenize(&word_tokenize("Will definitely be going back to this place!"), &vocab);
    let mask = [0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let sub = propagate_raw(&mask, &seq.word_alignment).map_err(|e| e.to_string())?;
    let expected = [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    check(
        worst < 1e-9 && sub == expected,
        format!("10^4 fixtures max |sum - 1| = {worst:.1e}; subword vector {sub:?}"),
    )
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=1000);
        let coarse = rng.random_bool(0.5);
        let mut labels: Vec<Label> = (0..n).map(|_| Label::from(rng.random_bool(0.4))).collect();
        labels[0] = Label::Positive;
        labels[1] = Label::Negative;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(0..8u8)) / 8.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let (mut wins, mut pairs) = (0u64, 0u64);
        for i in (0..n).filter(|&i| labels[i] == Label::Positive) {
            for j in (0..n).filter(|&j| labels[j] == Label::Negative) {
                pairs += 1;
                wins += match scores[i].total_cmp(&scores[j]) {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        let brute = wins as f64 / (2 * pairs) as f64;
        if auc(&scores, &labels).map_err(|e| e.to_string())? != brute {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of 100 fixtures differ from pairwise counting"))
}

fn synthetic_direction(run: &RunResult, secs: f64) -> Outcome {
    let base = run.strategy(StrategyKind::Baseline).ok_or("no baseline")?;
    let al = run.strategy(StrategyKind::Al).ok_or("no AL")?;
    let sig = al.significance.ok_or("no paired test")?;
    check(
        al.aucs.len() == 20 && al.mean > base.mean && sig.p_value < 0.05,
        format!(
            "baseline {} vs AL {}, p = {:.2e}, {secs:.0}s",
            base.cell(),
            al.cell(),
            sig.p_value
        ),
    )
}

fn cosine_direction(run: &RunResult) -> Outcome {
    let base = run.strategy(StrategyKind::Baseline).ok_or("no baseline")?;
    let al = run.strategy(StrategyKind::Al).ok_or("no AL")?;
    let wins = al.cosines.iter().zip(&base.cosines).filter(|(a, b)| a > b).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    check(
        wins >= 16,
        format!(
            "AL above baseline in {wins}/20 replicates (mean {:.3} vs {:.3})",
            mean(&al.cosines),
            mean(&base.cosines)
        ),
    )
}

fn loss_decomposition(run: &RunResult) -> Outcome {
    let al = run.strategy(StrategyKind::Al).ok_or("no AL")?;
    let mut additive = 0;
    let mut monotone = 0;
    for h in &al.histories {
        let r = loss_report(h, MONOTONE_TOLERANCE).map_err(|e| e.to_string())?;
        additive += usize::from(r.additive);
        monotone += usize::from(r.attention_nonincreasing);
    }
    let n = al.histories.len();
    let first = &al.histories[0].epochs;
    check(
        n > 0 && additive == n && monotone == n,
        format!(
            "additive {additive}/{n}, attention nonincreasing {monotone}/{n} (replicate 0: {:.3} -> {:.3})",
            first[0].attn_loss,
            first[first.len() - 1].attn_loss
        ),
    )
}

fn personality_counts() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/personality_labels.jsonl");
    let docs = read_dataset(&path).map_err(|e| e.to_string())?;
    let c = resolve_labels(docs, ResolutionMode::Majority).confusion;
    check(
        c.counts == [[58, 89], [26, 66]] && c.agreement_count == 124,
        format!("counts {:?}, agreement {}", c.counts, c.agreement_count),
    )
}

fn sweep_determinism() -> Outcome {
    let (_, vocab, prepared) = common::synthetic(&SyntheticSpec {
        documents: 400,
        ..SyntheticSpec::default()
    });
    let sweep = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let runs = [(40, 0.1), (60, 0.2)]
            .iter()
            .map(|&(size, ratio)| {
                bootstrap_eval(
                    &ExperimentSpec {
                        size,
                        ratio,
                        replicates: 3,
                        test_size: 40,
                        base_seed: 11,
                        model: common::small_model(vocab.len(), 0),
                        train: TrainConfig {
                            epochs: 2,
                            batch_size: 8,
                            learning_rate: 1e-3,
                            ..TrainConfig::default()
                        },
                        ..ExperimentSpec::default()
                    },
                    &prepared,
                )
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let mut reps = Vec::new();
        let mut summary = Vec::new();
        write_replicate_csv(&runs, &mut reps).map_err(|e| e.to_string())?;
        write_summary_csv(&runs, &mut summary).map_err(|e| e.to_string())?;
        Ok((reps, summary))
    };
    let a = sweep()?;
    let b = sweep()?;
    check(
        a == b,
        format!("replicate CSV {} bytes, summary CSV {} bytes, identical: {}", a.0.len(), a.1.len(), a == b),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradient_correctness()),
        ("alpha = 0 reduction", alpha_zero_reduction()),
        ("attention normalization", attention_normalization()),
        ("AUC oracle equivalence", auc_oracle()),
    ];

    let (_, vocab, prepared) = common::synthetic(&SyntheticSpec::default());
    let spec = ExperimentSpec {
        model: ModelConfig {
            vocab_size: vocab.len(),
            ..ModelConfig::default()
        },
        ..ExperimentSpec::default()
    };
    let start = Instant::now();
    match bootstrap_eval(&spec, &prepared) {
        Ok(run) => {
            let secs = start.elapsed().as_secs_f64();
            results.push(("synthetic planted-cue experiment", synthetic_direction(&run, secs)));
            results.push(("attention alignment direction", cosine_direction(&run)));
            results.push(("loss decomposition", loss_decomposition(&run)));
        }
        Err(e) => {
            for name in ["synthetic planted-cue experiment", "attention alignment direction", "loss decomposition"] {
                results.push((name, Err(e.to_string())));
            }
        }
    }
    results.push(("personality confusion counts", personality_counts()));
    results.push(("harness determinism", sweep_determinism()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
