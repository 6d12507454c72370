//! Concept-erasure evaluation: baseline vs. post-intervention Acc/Conf and
//! the auxiliary-concept averages CAcc/CConf, plus tau / fraction / layer
//! sweeps.
//!
//! Policy hygiene is enforced here: evaluation refuses any policy whose
//! statistics were not computed from the training split.

use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptId, LabeledSequence};
use crate::error::{Error, Result};
use crate::intervention::{
    InterventionKind, InterventionPolicy, InterventionScope, NeuronParams, SplitTag,
};
use crate::model::{HookSpec, Model, Prediction};
use crate::saliency::{self, SaliencyMethod};
use crate::stats::gaussian_params;
use crate::store::ActivationSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub concept: ConceptId,
    /// Fraction of samples with this true label predicted correctly.
    pub acc: f64,
    /// Mean predicted probability of the true class over those samples.
    pub conf: f64,
}

/// Target metrics plus unweighted means over the auxiliary concepts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub acc: f64,
    pub conf: f64,
    pub cacc: f64,
    pub cconf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasureReport {
    pub target: ConceptId,
    pub layer: usize,
    pub baseline: Vec<ClassMetrics>,
    pub post: Vec<ClassMetrics>,
    pub baseline_summary: MetricsBlock,
    pub post_summary: MetricsBlock,
    /// `post_summary - baseline_summary`, componentwise.
    pub delta: MetricsBlock,
    pub policy: InterventionPolicy,
}

/// Per-class metrics from `(true_label, prediction)` outcomes. Every class
/// must appear at least once.
pub fn class_metrics(
    outcomes: &[(ConceptId, Prediction)],
    num_classes: usize,
) -> Result<Vec<ClassMetrics>> {
    let mut counts = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    let mut conf_sum = vec![0.0f64; num_classes];
    for (truth, pred) in outcomes {
        let c = truth.index();
        if c >= num_classes {
            return Err(Error::UnknownConcept { concept: c });
        }
        counts[c] += 1;
        if pred.class == *truth {
            correct[c] += 1;
        }
        conf_sum[c] += pred.proba[c];
    }
    let mut metrics = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        if counts[c] == 0 {
            return Err(Error::Config(format!(
                "concept {c} has no evaluation samples"
            )));
        }
        metrics.push(ClassMetrics {
            concept: ConceptId(c as u16),
            acc: correct[c] as f64 / counts[c] as f64,
            conf: conf_sum[c] / counts[c] as f64,
        });
    }
    Ok(metrics)
}

fn summarize(metrics: &[ClassMetrics], target: ConceptId) -> MetricsBlock {
    let t = &metrics[target.index()];
    let aux: Vec<&ClassMetrics> = metrics.iter().filter(|m| m.concept != target).collect();
    let n = aux.len() as f64;
    MetricsBlock {
        acc: t.acc,
        conf: t.conf,
        cacc: aux.iter().map(|m| m.acc).sum::<f64>() / n,
        cconf: aux.iter().map(|m| m.conf).sum::<f64>() / n,
    }
}

/// Per-class metrics of the unmodified model on an evaluation split.
pub fn baseline_metrics(model: &Model, eval_set: &[LabeledSequence]) -> Result<Vec<ClassMetrics>> {
    if eval_set.is_empty() {
        return Err(Error::EmptyInput("baseline over empty evaluation set"));
    }
    let mut outcomes = Vec::with_capacity(eval_set.len());
    for seq in eval_set {
        outcomes.push((seq.concept, model.predict_proba(&seq.tokens)?));
    }
    class_metrics(&outcomes, model.num_classes())
}

/// Plain accuracy of the model on a split.
pub fn accuracy(model: &Model, eval_set: &[LabeledSequence]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::EmptyInput("accuracy over empty evaluation set"));
    }
    let mut correct = 0usize;
    for seq in eval_set {
        if model.predict_proba(&seq.tokens)?.class == seq.concept {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_set.len() as f64)
}

/// Run the intervention and report baseline vs. post metrics with deltas.
pub fn erase_and_evaluate(
    model: &Model,
    eval_set: &[LabeledSequence],
    policy: &InterventionPolicy,
) -> Result<ErasureReport> {
    if eval_set.is_empty() {
        return Err(Error::EmptyInput("erasure over empty evaluation set"));
    }
    policy.validate(model.hidden_dim())?;
    if policy.stats_split != SplitTag::Train {
        return Err(Error::Config(
            "policy statistics must come from the training split".into(),
        ));
    }
    if policy.concept.index() >= model.num_classes() {
        return Err(Error::UnknownConcept {
            concept: policy.concept.index(),
        });
    }
    let hook = HookSpec::intervene(policy.layer, policy.clone());
    let mut base_outcomes = Vec::with_capacity(eval_set.len());
    let mut post_outcomes = Vec::with_capacity(eval_set.len());
    for seq in eval_set {
        base_outcomes.push((seq.concept, model.predict_proba(&seq.tokens)?));
        let (pred, _) = model.forward_with_hook(&seq.tokens, &hook)?;
        post_outcomes.push((seq.concept, pred));
    }
    let baseline = class_metrics(&base_outcomes, model.num_classes())?;
    let post = class_metrics(&post_outcomes, model.num_classes())?;
    let baseline_summary = summarize(&baseline, policy.concept);
    let post_summary = summarize(&post, policy.concept);
    let delta = MetricsBlock {
        acc: post_summary.acc - baseline_summary.acc,
        conf: post_summary.conf - baseline_summary.conf,
        cacc: post_summary.cacc - baseline_summary.cacc,
        cconf: post_summary.cconf - baseline_summary.cconf,
    };
    Ok(ErasureReport {
        target: policy.concept,
        layer: policy.layer,
        baseline,
        post,
        baseline_summary,
        post_summary,
        delta,
        policy: policy.clone(),
    })
}

/// Symmetric trimmed mean: drop `floor(trim * k)` lowest and highest values,
/// average the rest.
pub fn trimmed_mean(values: &[f64], trim: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("trimmed_mean over empty values"));
    }
    if !(0.0..1.0).contains(&trim) {
        return Err(Error::Config(format!(
            "trim fraction must lie in [0, 1), got {trim}"
        )));
    }
    let k = values.len();
    let drop = (trim * k as f64).floor() as usize;
    if 2 * drop >= k {
        return Err(Error::Config(format!(
            "trimming {drop} from each tail empties {k} values"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let kept = &sorted[drop..k - drop];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Probe hyperparameters used when a sweep or the CLI builds probe-based
/// policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub l1: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper {
            l1: 1e-4,
            l2: 1e-4,
            epochs: 300,
            seed: 0,
        }
    }
}

/// Recipe for building an [`InterventionPolicy`] from recorded activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub method: SaliencyMethod,
    pub scope: InterventionScope,
    pub function: InterventionKind,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub tau: f64,
    /// Fraction of neurons to select; 0 builds an empty (no-op) policy.
    pub fraction: f64,
    pub concept: ConceptId,
    pub layer: usize,
    pub probe: ProbeHyper,
}

/// Saliency scores for `concept` at `layer`, computed from a recorded set
/// with the requested method.
pub fn scores_from_set(
    set: &ActivationSet,
    layer: usize,
    method: SaliencyMethod,
    concept: ConceptId,
    probe: &ProbeHyper,
) -> Result<saliency::SaliencyScores> {
    let partitions = set.partition(layer)?;
    let target = partitions.get(&concept).ok_or(Error::UnknownConcept {
        concept: concept.index(),
    })?;
    match method {
        SaliencyMethod::Max => saliency::max_scores(target),
        SaliencyMethod::Probe => {
            let probe_model =
                saliency::probe_train(&partitions, probe.l1, probe.l2, probe.epochs, probe.seed)?;
            saliency::probe_scores(&probe_model, concept)
        }
        SaliencyMethod::Probeless => {
            let mut means = std::collections::BTreeMap::new();
            for c in partitions.keys() {
                means.insert(*c, set.class_mean(layer, *c)?);
            }
            saliency::probeless_scores(&means, concept)
        }
    }
}

/// Build a policy from training-split statistics. `mu_ref_source` supplies
/// the generic pooled activations required by the mean-replacement function
/// (the held-out analog of a generic corpus).
pub fn build_policy(
    train_set: &ActivationSet,
    mu_ref_source: Option<&ActivationSet>,
    spec: &PolicySpec,
) -> Result<InterventionPolicy> {
    if train_set.split() != SplitTag::Train {
        return Err(Error::Config(
            "policy statistics must come from a training-split recording".into(),
        ));
    }
    let partitions = train_set.partition(spec.layer)?;
    let target = partitions.get(&spec.concept).ok_or(Error::UnknownConcept {
        concept: spec.concept.index(),
    })?;

    let scores = scores_from_set(
        train_set,
        spec.layer,
        spec.method,
        spec.concept,
        &spec.probe,
    )?;
    let ranking = saliency::rank(&scores)?;
    let selected: Vec<usize> = if spec.fraction == 0.0 {
        Vec::new()
    } else {
        saliency::top_fraction(&ranking, spec.fraction)?
            .into_iter()
            .collect()
    };

    let mu_ref_pool = if spec.function == InterventionKind::Mean {
        let source = mu_ref_source.ok_or_else(|| {
            Error::Config("mean-replacement policies need a mu_ref activation source".into())
        })?;
        Some(source.pooled_mean(spec.layer)?)
    } else {
        None
    };

    let mut neurons = Vec::with_capacity(selected.len());
    for j in selected {
        let params = gaussian_params(&target.column(j))?;
        neurons.push(NeuronParams {
            j,
            mu: params.mu,
            sigma: params.sigma,
            mu_ref: mu_ref_pool.as_ref().map(|pool| pool[j]),
        });
    }

    let policy = InterventionPolicy {
        scope: spec.scope,
        function: spec.function,
        alpha: spec.alpha,
        beta: spec.beta,
        tau: spec.tau,
        concept: spec.concept,
        layer: spec.layer,
        stats_split: SplitTag::Train,
        neurons,
    };
    policy.validate(train_set.hidden_dim())?;
    Ok(policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Tau,
    Fraction,
    Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: ErasureReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    /// Flagged default for layer sweeps (the penultimate layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_layer: Option<usize>,
    pub points: Vec<SweepPoint>,
}

fn require_ascending(values: &[f64], what: &'static str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{what} must be strictly ascending")));
    }
    Ok(())
}

/// One report per tau; ranges are recomputed from the same (mu, sigma) at
/// each tau.
pub fn sweep_tau(
    model: &Model,
    eval_set: &[LabeledSequence],
    train_set: &ActivationSet,
    mu_ref_source: Option<&ActivationSet>,
    base: &PolicySpec,
    taus: &[f64],
) -> Result<SweepResult> {
    require_ascending(taus, "tau sweep values")?;
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        let spec = PolicySpec {
            tau,
            ..base.clone()
        };
        let policy = build_policy(train_set, mu_ref_source, &spec)?;
        points.push(SweepPoint {
            value: tau,
            report: erase_and_evaluate(model, eval_set, &policy)?,
        });
    }
    Ok(SweepResult {
        variable: SweepVariable::Tau,
        default_layer: None,
        points,
    })
}

/// One report per neuron fraction; fraction 0 is the no-op policy.
pub fn sweep_fraction(
    model: &Model,
    eval_set: &[LabeledSequence],
    train_set: &ActivationSet,
    mu_ref_source: Option<&ActivationSet>,
    base: &PolicySpec,
    fractions: &[f64],
) -> Result<SweepResult> {
    require_ascending(fractions, "fraction sweep values")?;
    if fractions.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Config("fractions must lie in [0, 1]".into()));
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let spec = PolicySpec {
            fraction,
            ..base.clone()
        };
        let policy = build_policy(train_set, mu_ref_source, &spec)?;
        points.push(SweepPoint {
            value: fraction,
            report: erase_and_evaluate(model, eval_set, &policy)?,
        });
    }
    Ok(SweepResult {
        variable: SweepVariable::Fraction,
        default_layer: None,
        points,
    })
}

/// One report per layer; the penultimate layer is flagged as the default.
pub fn sweep_layer(
    model: &Model,
    eval_set: &[LabeledSequence],
    train_set: &ActivationSet,
    mu_ref_source: Option<&ActivationSet>,
    base: &PolicySpec,
    layers: &[usize],
) -> Result<SweepResult> {
    let as_f64: Vec<f64> = layers.iter().map(|&l| l as f64).collect();
    require_ascending(&as_f64, "layer sweep values")?;
    let mut points = Vec::with_capacity(layers.len());
    for &layer in layers {
        let spec = PolicySpec {
            layer,
            ..base.clone()
        };
        let policy = build_policy(train_set, mu_ref_source, &spec)?;
        points.push(SweepPoint {
            value: layer as f64,
            report: erase_and_evaluate(model, eval_set, &policy)?,
        });
    }
    Ok(SweepResult {
        variable: SweepVariable::Layer,
        default_layer: Some(model.penultimate_layer()),
        points,
    })
}

const CSV_METRIC_HEADER: &str =
    "base_acc,base_conf,base_cacc,base_cconf,delta_acc,delta_conf,delta_cacc,delta_cconf";

fn metric_row(report: &ErasureReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        report.baseline_summary.acc,
        report.baseline_summary.conf,
        report.baseline_summary.cacc,
        report.baseline_summary.cconf,
        report.delta.acc,
        report.delta.conf,
        report.delta.cacc,
        report.delta.cconf
    )
}

/// Single-report CSV with baseline and delta blocks.
pub fn report_to_csv(report: &ErasureReport) -> String {
    format!(
        "target,layer,{CSV_METRIC_HEADER}\n{},{},{}\n",
        report.target,
        report.layer,
        metric_row(report)
    )
}

/// Sweep CSV: one row per point with baseline and delta blocks.
pub fn sweep_to_csv(sweep: &SweepResult) -> String {
    let variable = match sweep.variable {
        SweepVariable::Tau => "tau",
        SweepVariable::Fraction => "fraction",
        SweepVariable::Layer => "layer",
    };
    let mut out = format!("{variable},target,{CSV_METRIC_HEADER}\n");
    for point in &sweep.points {
        out.push_str(&format!(
            "{},{},{}\n",
            point.value,
            point.report.target,
            metric_row(&point.report)
        ));
    }
    out
}
