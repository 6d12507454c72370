//! Saliency scoring, ranking, top-fraction selection, and salient-set overlap.
//!
//! Three scoring methods: `max` (column-wise mean of absolute activations),
//! `probe` (absolute rows of an elastic-net multinomial probe's weight
//! matrix), and `probeless` (summed element-wise differences between concept
//! mean vectors; concept-independent by construction).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::ConceptId;
use crate::error::{Error, Result};
use crate::store::ConceptMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    Max,
    Probe,
    Probeless,
}

impl std::fmt::Display for SaliencyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SaliencyMethod::Max => "max",
            SaliencyMethod::Probe => "probe",
            SaliencyMethod::Probeless => "probeless",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyScores {
    pub method: SaliencyMethod,
    pub concept: ConceptId,
    pub scores: Vec<f64>,
}

/// Permutation of neuron indices in non-increasing score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRanking {
    pub method: SaliencyMethod,
    pub concept: ConceptId,
    pub order: Vec<usize>,
}

/// `s_j = mean_i |H_c[i, j]|`.
pub fn max_scores(matrix: &ConceptMatrix) -> Result<SaliencyScores> {
    if matrix.n() == 0 {
        return Err(Error::EmptyInput("max_scores over empty concept matrix"));
    }
    let d = matrix.dim();
    let mut scores = vec![0.0f64; d];
    for row in &matrix.rows {
        for (acc, &v) in scores.iter_mut().zip(row) {
            *acc += (v as f64).abs();
        }
    }
    for acc in &mut scores {
        *acc /= matrix.n() as f64;
    }
    Ok(SaliencyScores {
        method: SaliencyMethod::Max,
        concept: matrix.concept,
        scores,
    })
}

/// Multinomial logistic probe with elastic-net regularization, trained by
/// deterministic full-batch gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// Row-major `[num_classes][dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
    pub l1: f64,
    pub l2: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

/// Mean multinomial cross-entropy plus `l2 * sum(w^2) + l1 * sum(|w|)`
/// (weights only; the bias is unpenalized).
#[allow(clippy::too_many_arguments)]
pub fn probe_loss(
    weights: &[f64],
    bias: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
    num_classes: usize,
    dim: usize,
    l1: f64,
    l2: f64,
) -> f64 {
    let mut total = 0.0;
    let mut logits = vec![0.0f64; num_classes];
    for (x, &y) in xs.iter().zip(ys) {
        for k in 0..num_classes {
            let row = &weights[k * dim..(k + 1) * dim];
            logits[k] = bias[k] + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>();
        }
        softmax_in_place(&mut logits);
        total += -logits[y].ln();
    }
    let mut loss = total / xs.len() as f64;
    for &w in weights {
        loss += l2 * w * w + l1 * w.abs();
    }
    loss
}

/// Gradient of [`probe_loss`]. The l1 subgradient at exactly 0 is taken as 0.
#[allow(clippy::too_many_arguments)]
pub fn probe_grad(
    weights: &[f64],
    bias: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
    num_classes: usize,
    dim: usize,
    l1: f64,
    l2: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0f64; num_classes * dim];
    let mut db = vec![0.0f64; num_classes];
    let mut logits = vec![0.0f64; num_classes];
    for (x, &y) in xs.iter().zip(ys) {
        for k in 0..num_classes {
            let row = &weights[k * dim..(k + 1) * dim];
            logits[k] = bias[k] + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>();
        }
        softmax_in_place(&mut logits);
        logits[y] -= 1.0;
        for k in 0..num_classes {
            let g = logits[k];
            db[k] += g;
            let drow = &mut dw[k * dim..(k + 1) * dim];
            for (dwj, &v) in drow.iter_mut().zip(x) {
                *dwj += g * v;
            }
        }
    }
    let scale = 1.0 / xs.len() as f64;
    for g in dw.iter_mut().chain(db.iter_mut()) {
        *g *= scale;
    }
    for (g, &w) in dw.iter_mut().zip(weights) {
        *g += 2.0 * l2 * w + l1 * w.signum() * f64::from(w != 0.0);
    }
    (dw, db)
}

/// Train the probe on per-concept hidden representations.
///
/// The step size is fixed for the whole run and derived from the data scale
/// and penalty strengths so full-batch descent stays stable; the `l1^2` term
/// keeps the subgradient oscillation around zero below the step size itself
/// in the penalty-dominated regime.
pub fn probe_train(
    partitions: &BTreeMap<ConceptId, ConceptMatrix>,
    l1: f64,
    l2: f64,
    epochs: usize,
    seed: u64,
) -> Result<ProbeModel> {
    if partitions.len() < 2 {
        return Err(Error::Config(format!(
            "probe needs >= 2 concepts, got {}",
            partitions.len()
        )));
    }
    if l1 < 0.0 || l2 < 0.0 {
        return Err(Error::Config("penalties must be non-negative".into()));
    }
    if epochs == 0 {
        return Err(Error::Config("probe epochs must be >= 1".into()));
    }
    let num_classes = partitions.keys().map(|c| c.index()).max().unwrap() + 1;
    let dim = partitions
        .values()
        .next()
        .map(ConceptMatrix::dim)
        .unwrap_or(0);
    if dim == 0 {
        return Err(Error::EmptyInput("probe over zero-dimensional activations"));
    }
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<usize> = Vec::new();
    for (concept, matrix) in partitions {
        for row in &matrix.rows {
            xs.push(row.iter().map(|&v| v as f64).collect());
            ys.push(concept.index());
        }
    }

    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let init = rand_distr::Normal::new(0.0f64, 0.01).expect("valid init");
    let mut weights: Vec<f64> = (0..num_classes * dim)
        .map(|_| init.sample(&mut rng))
        .collect();
    let mut bias = vec![0.0f64; num_classes];

    let mean_sq_norm = xs
        .iter()
        .map(|x| x.iter().map(|&v| v * v).sum::<f64>())
        .sum::<f64>()
        / xs.len() as f64;
    let lr = 1.0 / (1.0 + 0.5 * mean_sq_norm + 2.0 * l2 + 2.0 * l1 * l1);

    let initial_loss = probe_loss(&weights, &bias, &xs, &ys, num_classes, dim, l1, l2);
    let mut final_loss = initial_loss;
    for step in 0..epochs {
        let (dw, db) = probe_grad(&weights, &bias, &xs, &ys, num_classes, dim, l1, l2);
        for (w, g) in weights.iter_mut().zip(&dw) {
            *w -= lr * g;
        }
        for (b, g) in bias.iter_mut().zip(&db) {
            *b -= lr * g;
        }
        final_loss = probe_loss(&weights, &bias, &xs, &ys, num_classes, dim, l1, l2);
        if !final_loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
    }

    Ok(ProbeModel {
        weights,
        bias,
        num_classes,
        dim,
        l1,
        l2,
        initial_loss,
        final_loss,
    })
}

impl ProbeModel {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..self.num_classes {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            let score = self.bias[k] + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>();
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        best
    }
}

/// `s_j = |W[c, j]|`.
pub fn probe_scores(probe: &ProbeModel, concept: ConceptId) -> Result<SaliencyScores> {
    if concept.index() >= probe.num_classes {
        return Err(Error::UnknownConcept {
            concept: concept.index(),
        });
    }
    let row = &probe.weights[concept.index() * probe.dim..(concept.index() + 1) * probe.dim];
    Ok(SaliencyScores {
        method: SaliencyMethod::Probe,
        concept,
        scores: row.iter().map(|w| w.abs()).collect(),
    })
}

/// `r_j = sum over unordered concept pairs of |q(c)_j - q(c')_j|`. The same
/// vector is reported for every concept.
pub fn probeless_scores(
    class_means: &BTreeMap<ConceptId, Vec<f64>>,
    concept: ConceptId,
) -> Result<SaliencyScores> {
    if class_means.len() < 2 {
        return Err(Error::Config(format!(
            "probeless needs >= 2 concepts, got {}",
            class_means.len()
        )));
    }
    let means: Vec<&Vec<f64>> = class_means.values().collect();
    let d = means[0].len();
    for m in &means {
        if m.len() != d {
            return Err(Error::SizeMismatch {
                context: "class mean dimensions",
                expected: d,
                found: m.len(),
            });
        }
    }
    let mut scores = vec![0.0f64; d];
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            for j in 0..d {
                scores[j] += (means[a][j] - means[b][j]).abs();
            }
        }
    }
    Ok(SaliencyScores {
        method: SaliencyMethod::Probeless,
        concept,
        scores,
    })
}

/// Stable descending sort; ties broken by lower neuron index.
pub fn rank(scores: &SaliencyScores) -> Result<SaliencyRanking> {
    if scores.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("non-finite saliency score".into()));
    }
    let mut order: Vec<usize> = (0..scores.scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .partial_cmp(&scores.scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    Ok(SaliencyRanking {
        method: scores.method,
        concept: scores.concept,
        order,
    })
}

/// First `ceil(p * d)` neurons of the ranking, for `p` in (0, 1].
pub fn top_fraction(ranking: &SaliencyRanking, p: f64) -> Result<BTreeSet<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "fraction must lie in (0, 1], got {p}"
        )));
    }
    let d = ranking.order.len();
    // The epsilon guards against ceil(0.3 * 10) = 4 style float artifacts.
    let k = ((p * d as f64 - 1e-9).ceil() as usize).clamp(1, d);
    Ok(ranking.order[..k].iter().copied().collect())
}

/// JSON export of a ranking together with its score vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankExport {
    pub method: SaliencyMethod,
    pub concept: ConceptId,
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankExport {
    pub fn new(ranking: SaliencyRanking, scores: SaliencyScores) -> Self {
        RankExport {
            method: ranking.method,
            concept: ranking.concept,
            order: ranking.order,
            scores: scores.scores,
        }
    }
}

/// `|A intersect B| / k` for equal-size non-empty sets.
pub fn overlap(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("overlap of empty salient sets"));
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            context: "salient set sizes",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.intersection(b).count() as f64 / a.len() as f64)
}
