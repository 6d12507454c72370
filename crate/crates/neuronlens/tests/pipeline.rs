//! Cross-module integration tests on trained toy pipelines: separation
//! effects, layer-wise normality trends, salient-set overlap, recording
//! determinism, and evaluation-harness contracts.

use std::sync::OnceLock;

use neuronlens::dataset::{self, ConceptId, Corpus, CorpusSpec};
use neuronlens::error::Error;
use neuronlens::eval::{self, PolicySpec, ProbeHyper};
use neuronlens::intervention::{InterventionKind, InterventionScope, SplitTag};
use neuronlens::model::{self, Model, ModelConfig, ReadoutMode, TrainConfig};
use neuronlens::saliency;
use neuronlens::stats;
use neuronlens::store::{self, ActivationSet};

fn toy_spec(separation: f64, seed: u64, samples: usize) -> CorpusSpec {
    CorpusSpec {
        num_concepts: 4,
        vocab_size: 24,
        seq_len: 12,
        samples_per_concept: samples,
        separation,
        seed,
    }
}

fn toy_config(seed: u64, num_layers: usize) -> ModelConfig {
    ModelConfig {
        num_layers,
        hidden_dim: 16,
        num_heads: 2,
        vocab_size: 24,
        num_classes: 4,
        readout_mode: ReadoutMode::LastToken,
        seed,
        train: TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 3e-3,
        },
    }
}

struct Trained {
    corpus: Corpus,
    model: Model,
    train_set: ActivationSet,
}

/// Five seeds at separation 0.8 with layers 1 and penultimate recorded.
fn trained_fixture() -> &'static [Trained] {
    static FIXTURE: OnceLock<Vec<Trained>> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        (0..5u64)
            .map(|seed| {
                let corpus = dataset::generate(&toy_spec(0.8, seed, 150)).unwrap();
                let model = model::train(&corpus, &toy_config(seed, 3)).unwrap();
                let layers = [1, model.penultimate_layer()];
                let train_set = store::record_corpus(
                    &model,
                    &corpus.train,
                    &corpus.concept_labels(),
                    &layers,
                    SplitTag::Train,
                )
                .unwrap();
                Trained {
                    corpus,
                    model,
                    train_set,
                }
            })
            .collect()
    })
}

#[test]
fn eval_accuracy_is_monotone_in_separation() {
    let mut means = Vec::new();
    for sep in [0.0, 0.4, 0.8] {
        let mut accs = Vec::new();
        for seed in 0..5u64 {
            let corpus = dataset::generate(&toy_spec(sep, seed, 150)).unwrap();
            let model = model::train(&corpus, &toy_config(seed, 2)).unwrap();
            accs.push(eval::accuracy(&model, &corpus.eval).unwrap());
        }
        means.push(accs.iter().sum::<f64>() / accs.len() as f64);
    }
    assert!(
        means[1] >= means[0] - 0.03 && means[2] >= means[1] - 0.03,
        "mean accuracies not monotone: {means:?}"
    );
}

#[test]
fn disjoint_support_corpus_is_learned_with_high_confidence() {
    let corpus = dataset::generate(&toy_spec(1.0, 3, 250)).unwrap();
    let model = model::train(&corpus, &toy_config(3, 2)).unwrap();
    let acc = eval::accuracy(&model, &corpus.eval).unwrap();
    assert!(acc >= 0.95, "separable corpus accuracy {acc}");
    let mean_proba: f64 = corpus
        .eval
        .iter()
        .map(|s| model.predict_proba(&s.tokens).unwrap().proba[s.concept.index()])
        .sum::<f64>()
        / corpus.eval.len() as f64;
    assert!(
        mean_proba >= 0.9,
        "mean true-class probability {mean_proba}"
    );
}

#[test]
fn zero_separation_corpus_learns_nothing() {
    let corpus = dataset::generate(&toy_spec(0.0, 3, 250)).unwrap();
    let model = model::train(&corpus, &toy_config(3, 2)).unwrap();
    let acc = eval::accuracy(&model, &corpus.eval).unwrap();
    assert!(
        (acc - 0.25).abs() <= 0.05,
        "zero-separation accuracy {acc} not near chance"
    );

    // A probe trained on the recorded activations also generalizes at chance.
    let layer = model.penultimate_layer();
    let train_set = store::record_corpus(
        &model,
        &corpus.train,
        &corpus.concept_labels(),
        &[layer],
        SplitTag::Train,
    )
    .unwrap();
    let eval_set = store::record_corpus(
        &model,
        &corpus.eval,
        &corpus.concept_labels(),
        &[layer],
        SplitTag::Eval,
    )
    .unwrap();
    let probe =
        saliency::probe_train(&train_set.partition(layer).unwrap(), 1e-4, 1e-4, 300, 0).unwrap();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (concept, matrix) in eval_set.partition(layer).unwrap() {
        for row in &matrix.rows {
            let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            if probe.predict(&x) == concept.index() {
                correct += 1;
            }
            total += 1;
        }
    }
    let probe_acc = correct as f64 / total as f64;
    assert!(
        (probe_acc - 0.25).abs() <= 0.08,
        "probe accuracy {probe_acc} beats chance on zero-separation activations"
    );
}

/// Mirrors the layer-wise statistics trend: deeper representations look more
/// Gaussian than layer 1, by majority over seeds.
#[test]
fn penultimate_layer_is_more_practically_normal_than_layer_one() {
    let mut wins = 0usize;
    for t in trained_fixture() {
        let layer = t.model.penultimate_layer();
        let f1 = stats::practical_normality_fraction(&t.train_set, 1, 0.1).unwrap();
        let fp = stats::practical_normality_fraction(&t.train_set, layer, 0.1).unwrap();
        if fp >= f1 {
            wins += 1;
        }
    }
    assert!(wins >= 3, "trend held in only {wins}/5 seeds");
}

#[test]
fn salient_set_overlap_grows_toward_one() {
    let corpus = dataset::generate(&toy_spec(1.0, 5, 150)).unwrap();
    let model = model::train(&corpus, &toy_config(5, 3)).unwrap();
    let layer = model.penultimate_layer();
    let set = store::record_corpus(
        &model,
        &corpus.train,
        &corpus.concept_labels(),
        &[layer],
        SplitTag::Train,
    )
    .unwrap();
    let partitions = set.partition(layer).unwrap();
    let rank_a =
        saliency::rank(&saliency::max_scores(&partitions[&ConceptId(0)]).unwrap()).unwrap();
    let rank_b =
        saliency::rank(&saliency::max_scores(&partitions[&ConceptId(1)]).unwrap()).unwrap();

    let overlap_at = |p: f64| {
        saliency::overlap(
            &saliency::top_fraction(&rank_a, p).unwrap(),
            &saliency::top_fraction(&rank_b, p).unwrap(),
        )
        .unwrap()
    };
    let o30 = overlap_at(0.3);
    let o60 = overlap_at(0.6);
    let o100 = overlap_at(1.0);
    assert!(o30 < 1.0, "top-30% overlap is exactly 1.0");
    assert!(o60 >= o30, "overlap dropped from {o30} to {o60}");
    assert!(o100 >= o60, "overlap dropped from {o60} to {o100}");
    assert_eq!(o100, 1.0);
}

#[test]
fn recording_counts_and_determinism() {
    let t = &trained_fixture()[0];
    // 25 samples per concept; the train split is grouped by concept in
    // blocks of 120.
    let subset: Vec<dataset::LabeledSequence> = (0..4)
        .flat_map(|c| t.corpus.train[c * 120..c * 120 + 25].to_vec())
        .collect();
    let layers = [1usize, 2];
    let set_a = store::record_corpus(
        &t.model,
        &subset,
        &t.corpus.concept_labels(),
        &layers,
        SplitTag::Train,
    )
    .unwrap();
    assert_eq!(set_a.len(), 200, "one record per (sample, layer)");

    let set_b = store::record_corpus(
        &t.model,
        &subset,
        &t.corpus.concept_labels(),
        &layers,
        SplitTag::Train,
    )
    .unwrap();
    assert_eq!(set_a.to_bytes(), set_b.to_bytes(), "re-recording differs");

    for layer in layers {
        let partitions = set_a.partition(layer).unwrap();
        let total: usize = partitions.values().map(|m| m.n()).sum();
        assert_eq!(total, set_a.records_at(layer).unwrap().len());
    }
}

#[test]
fn class_mean_recovers_seeded_gaussian_center() {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(85);
    let dist = rand_distr::Normal::new(5.0f64, 1.0).unwrap();
    let d = 6;
    let records: Vec<store::ActivationRecord> = (0..1000u64)
        .map(|sample_id| store::ActivationRecord {
            sample_id,
            concept: ConceptId((sample_id % 2) as u16),
            layer: 1,
            vector: (0..d).map(|_| dist.sample(&mut rng) as f32).collect(),
        })
        .collect();
    let set = ActivationSet::new(
        d,
        vec!["a".into(), "b".into()],
        0,
        ReadoutMode::LastToken,
        SplitTag::Train,
        records,
    )
    .unwrap();
    // 3 sigma / sqrt(n) with n = 500 per class is under 0.15.
    for c in 0..2u16 {
        for &m in &set.class_mean(1, ConceptId(c)).unwrap() {
            assert!((m - 5.0).abs() < 0.15, "class mean {m} too far from 5");
        }
    }
}

fn policy_spec(t: &Trained, scope: InterventionScope, fraction: f64) -> PolicySpec {
    PolicySpec {
        method: saliency::SaliencyMethod::Max,
        scope,
        function: InterventionKind::Zero,
        alpha: None,
        beta: None,
        tau: 2.5,
        fraction,
        concept: ConceptId(1),
        layer: t.model.penultimate_layer(),
        probe: ProbeHyper::default(),
    }
}

#[test]
fn report_deltas_recompute_bitwise() {
    let t = &trained_fixture()[1];
    let policy = eval::build_policy(
        &t.train_set,
        None,
        &policy_spec(t, InterventionScope::Range, 0.5),
    )
    .unwrap();
    let report = eval::erase_and_evaluate(&t.model, &t.corpus.eval, &policy).unwrap();
    assert_eq!(
        report.delta.acc.to_bits(),
        (report.post_summary.acc - report.baseline_summary.acc).to_bits()
    );
    assert_eq!(
        report.delta.conf.to_bits(),
        (report.post_summary.conf - report.baseline_summary.conf).to_bits()
    );
    assert_eq!(
        report.delta.cacc.to_bits(),
        (report.post_summary.cacc - report.baseline_summary.cacc).to_bits()
    );
    assert_eq!(
        report.delta.cconf.to_bits(),
        (report.post_summary.cconf - report.baseline_summary.cconf).to_bits()
    );
    // The baseline block matches an independent baseline run.
    let baseline = eval::baseline_metrics(&t.model, &t.corpus.eval).unwrap();
    assert_eq!(report.baseline, baseline);
}

/// Zero-masking every neuron at the final hook collapses the target concept
/// (unless the target happens to be the collapse class itself).
#[test]
fn full_neuron_mask_collapses_some_target() {
    let t = &trained_fixture()[2];
    let mut strong_drop = false;
    for c in 0..4u16 {
        let spec = PolicySpec {
            concept: ConceptId(c),
            ..policy_spec(t, InterventionScope::Neuron, 1.0)
        };
        let policy = eval::build_policy(&t.train_set, None, &spec).unwrap();
        let report = eval::erase_and_evaluate(&t.model, &t.corpus.eval, &policy).unwrap();
        if report.delta.acc <= -0.5 {
            strong_drop = true;
        }
    }
    assert!(strong_drop, "no concept showed a strong accuracy collapse");
}

#[test]
fn single_point_tau_sweep_equals_direct_evaluation() {
    let t = &trained_fixture()[3];
    let spec = policy_spec(t, InterventionScope::Range, 0.5);
    let sweep =
        eval::sweep_tau(&t.model, &t.corpus.eval, &t.train_set, None, &spec, &[2.5]).unwrap();
    let policy = eval::build_policy(&t.train_set, None, &spec).unwrap();
    let direct = eval::erase_and_evaluate(&t.model, &t.corpus.eval, &policy).unwrap();
    assert_eq!(sweep.points.len(), 1);
    assert_eq!(sweep.points[0].report, direct);

    assert!(matches!(
        eval::sweep_tau(
            &t.model,
            &t.corpus.eval,
            &t.train_set,
            None,
            &spec,
            &[2.5, 1.0]
        ),
        Err(Error::Config(_))
    ));
}

#[test]
fn zero_fraction_sweep_point_is_a_no_op() {
    let t = &trained_fixture()[4];
    let spec = policy_spec(t, InterventionScope::Range, 0.0);
    let sweep = eval::sweep_fraction(
        &t.model,
        &t.corpus.eval,
        &t.train_set,
        None,
        &spec,
        &[0.0, 0.5],
    )
    .unwrap();
    let zero_point = &sweep.points[0].report;
    assert_eq!(zero_point.delta.acc, 0.0);
    assert_eq!(zero_point.delta.conf, 0.0);
    assert_eq!(zero_point.delta.cacc, 0.0);
    assert_eq!(zero_point.delta.cconf, 0.0);
    assert!(zero_point.policy.neurons.is_empty());
}

#[test]
fn layer_sweep_reports_every_layer_and_flags_the_default() {
    let t = &trained_fixture()[0];
    let spec = PolicySpec {
        layer: 1,
        ..policy_spec(t, InterventionScope::Range, 0.3)
    };
    let layers = [1usize, t.model.penultimate_layer()];
    let sweep =
        eval::sweep_layer(&t.model, &t.corpus.eval, &t.train_set, None, &spec, &layers).unwrap();
    assert_eq!(sweep.points.len(), 2);
    assert_eq!(sweep.default_layer, Some(t.model.penultimate_layer()));
    for (point, layer) in sweep.points.iter().zip(layers) {
        assert_eq!(point.report.layer, layer);
    }
}

#[test]
fn evaluation_refuses_non_training_statistics() {
    let t = &trained_fixture()[1];
    let eval_set = store::record_corpus(
        &t.model,
        &t.corpus.eval,
        &t.corpus.concept_labels(),
        &[t.model.penultimate_layer()],
        SplitTag::Eval,
    )
    .unwrap();
    // Building from an eval-split recording is rejected outright.
    assert!(matches!(
        eval::build_policy(
            &eval_set,
            None,
            &policy_spec(t, InterventionScope::Range, 0.5)
        ),
        Err(Error::Config(_))
    ));
    // A policy whose tag was tampered with is rejected at evaluation time.
    let mut policy = eval::build_policy(
        &t.train_set,
        None,
        &policy_spec(t, InterventionScope::Range, 0.5),
    )
    .unwrap();
    policy.stats_split = SplitTag::Eval;
    assert!(matches!(
        eval::erase_and_evaluate(&t.model, &t.corpus.eval, &policy),
        Err(Error::Config(_))
    ));
}

#[test]
fn runaway_learning_rate_reports_divergence_step() {
    let corpus = dataset::generate(&toy_spec(1.0, 9, 50)).unwrap();
    let mut config = toy_config(9, 2);
    config.train.learning_rate = 1e9;
    config.train.epochs = 2;
    match model::train(&corpus, &config) {
        Err(Error::TrainingDiverged { step }) => assert!(step >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn mean_replacement_policy_pools_a_reference_set() {
    let t = &trained_fixture()[2];
    let eval_set = store::record_corpus(
        &t.model,
        &t.corpus.eval,
        &t.corpus.concept_labels(),
        &[t.model.penultimate_layer()],
        SplitTag::Eval,
    )
    .unwrap();
    let spec = PolicySpec {
        function: InterventionKind::Mean,
        ..policy_spec(t, InterventionScope::Range, 0.5)
    };
    // Without a reference source the build fails.
    assert!(eval::build_policy(&t.train_set, None, &spec).is_err());
    let policy = eval::build_policy(&t.train_set, Some(&eval_set), &spec).unwrap();
    let pooled = eval_set.pooled_mean(t.model.penultimate_layer()).unwrap();
    for np in &policy.neurons {
        assert_eq!(np.mu_ref, Some(pooled[np.j]));
    }
    let report = eval::erase_and_evaluate(&t.model, &t.corpus.eval, &policy).unwrap();
    assert!(report.delta.acc <= 0.0 + 1e-9);
}
