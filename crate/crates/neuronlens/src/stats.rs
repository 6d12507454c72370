//! Gaussian parameter estimation and normality diagnostics for recorded
//! activations.
//!
//! Estimators use population normalization (divide by `n`) and moment-based
//! skewness/kurtosis (`g1 = m3 / m2^1.5`, `g2 = m4 / m2^2`, Gaussian reference
//! 3.0). The KS statistic is computed against a standard normal after
//! normalizing the sample to zero mean and unit variance, and is compared to
//! an effect-size threshold rather than converted to a p-value. Activations
//! arrive as `f32`; all statistics are computed in `f64`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::dataset::ConceptId;
use crate::error::{Error, Result};
use crate::store::ActivationSet;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    static STD_NORMAL: OnceLock<Normal> = OnceLock::new();
    STD_NORMAL
        .get_or_init(|| Normal::new(0.0, 1.0).expect("valid standard normal"))
        .cdf(x)
}

fn normal_pdf(x: f64) -> f64 {
    static STD_NORMAL: OnceLock<Normal> = OnceLock::new();
    STD_NORMAL
        .get_or_init(|| Normal::new(0.0, 1.0).expect("valid standard normal"))
        .pdf(x)
}

/// Default KS effect-size threshold for practical normality (10% deviation).
pub const PRACTICAL_NORMALITY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

/// Population mean and standard deviation of a sample.
pub fn gaussian_params(sample: &[f32]) -> Result<GaussianParams> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("gaussian_params over empty sample"));
    }
    let n = sample.len() as f64;
    let mu = sample.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = sample
        .iter()
        .map(|&x| {
            let d = x as f64 - mu;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(GaussianParams {
        mu,
        sigma: var.sqrt(),
        n: sample.len(),
    })
}

fn central_moments(sample: &[f32]) -> (f64, f64, f64, f64) {
    let n = sample.len() as f64;
    let mu = sample.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in sample {
        let d = x as f64 - mu;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mu, m2 / n, m3 / n, m4 / n)
}

fn require_spread(sample: &[f32], context: &'static str) -> Result<f64> {
    if sample.len() < 3 {
        return Err(Error::Config(format!(
            "{context} needs at least 3 observations, got {}",
            sample.len()
        )));
    }
    let (_, m2, _, _) = central_moments(sample);
    if m2 <= 0.0 {
        return Err(Error::ZeroVariance { context });
    }
    Ok(m2)
}

/// Moment skewness `g1 = m3 / m2^(3/2)`.
pub fn skewness(sample: &[f32]) -> Result<f64> {
    let m2 = require_spread(sample, "skewness")?;
    let (_, _, m3, _) = central_moments(sample);
    Ok(m3 / m2.powf(1.5))
}

/// Moment kurtosis `g2 = m4 / m2^2` (non-excess; 3.0 for a Gaussian).
pub fn kurtosis(sample: &[f32]) -> Result<f64> {
    let m2 = require_spread(sample, "kurtosis")?;
    let (_, _, _, m4) = central_moments(sample);
    Ok(m4 / (m2 * m2))
}

/// KS statistic of the normalized sample against the standard normal:
/// `D = max_i max(|Phi(z_(i)) - (i-1)/n|, |Phi(z_(i)) - i/n|)`.
pub fn ks_statistic(sample: &[f32]) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::Config(format!(
            "ks_statistic needs at least 2 observations, got {}",
            sample.len()
        )));
    }
    let params = gaussian_params(sample)?;
    if params.sigma <= 0.0 {
        return Err(Error::ZeroVariance {
            context: "ks_statistic",
        });
    }
    let mut z: Vec<f64> = sample
        .iter()
        .map(|&x| (x as f64 - params.mu) / params.sigma)
        .collect();
    z.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    let n = z.len() as f64;
    let mut d = 0.0f64;
    for (i, &zi) in z.iter().enumerate() {
        let phi = normal_cdf(zi);
        let lo = (phi - i as f64 / n).abs();
        let hi = (phi - (i as f64 + 1.0) / n).abs();
        d = d.max(lo).max(hi);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostics {
    pub skewness: f64,
    /// Non-excess kurtosis; 3.0 is the Gaussian reference.
    pub kurtosis: f64,
    pub ks_statistic: f64,
    pub practically_normal: bool,
}

pub fn normality_diagnostics(sample: &[f32], threshold: f64) -> Result<NormalityDiagnostics> {
    let ks = ks_statistic(sample)?;
    Ok(NormalityDiagnostics {
        skewness: skewness(sample)?,
        kurtosis: kurtosis(sample)?,
        ks_statistic: ks,
        practically_normal: ks < threshold,
    })
}

/// One CSV row of per-(layer, neuron, concept) statistics.
///
/// Degenerate samples (zero variance or fewer than 3 observations) report NaN
/// diagnostics and count as not practically normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronConceptStats {
    pub layer: usize,
    pub neuron: usize,
    pub concept: ConceptId,
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    pub skew: f64,
    pub kurt: f64,
    pub ks: f64,
    pub normal: bool,
}

/// Gaussian parameters and normality diagnostics for every (neuron, concept)
/// pair recorded at `layer`.
pub fn layer_stats(
    set: &ActivationSet,
    layer: usize,
    threshold: f64,
) -> Result<Vec<NeuronConceptStats>> {
    let partitions = set.partition(layer)?;
    let d = set.hidden_dim();
    let mut rows = Vec::with_capacity(partitions.len() * d);
    for (concept, matrix) in &partitions {
        for neuron in 0..d {
            let column = matrix.column(neuron);
            let params = gaussian_params(&column)?;
            let diag = normality_diagnostics(&column, threshold);
            let (skew, kurt, ks, normal) = match diag {
                Ok(diag) => (
                    diag.skewness,
                    diag.kurtosis,
                    diag.ks_statistic,
                    diag.practically_normal,
                ),
                Err(Error::ZeroVariance { .. }) | Err(Error::Config(_)) => {
                    (f64::NAN, f64::NAN, f64::NAN, false)
                }
                Err(e) => return Err(e),
            };
            rows.push(NeuronConceptStats {
                layer,
                neuron,
                concept: *concept,
                mu: params.mu,
                sigma: params.sigma,
                n: params.n,
                skew,
                kurt,
                ks,
                normal,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no (neuron, concept) pairs at layer"));
    }
    Ok(rows)
}

/// Fraction of (neuron, concept) pairs at `layer` whose KS statistic is below
/// `threshold`.
pub fn practical_normality_fraction(
    set: &ActivationSet,
    layer: usize,
    threshold: f64,
) -> Result<f64> {
    let rows = layer_stats(set, layer, threshold)?;
    let normal = rows.iter().filter(|r| r.normal).count();
    Ok(normal as f64 / rows.len() as f64)
}

/// `layer,neuron,concept,mu,sigma,n,skew,kurt,ks,normal` CSV.
pub fn stats_to_csv(rows: &[NeuronConceptStats]) -> String {
    let mut out = String::from("layer,neuron,concept,mu,sigma,n,skew,kurt,ks,normal\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.layer, r.neuron, r.concept, r.mu, r.sigma, r.n, r.skew, r.kurt, r.ks, r.normal
        ));
    }
    out
}

/// Histogram plus Gaussian-kernel density for one (neuron, concept) pair,
/// ready for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionExport {
    pub layer: usize,
    pub neuron: usize,
    pub concept: ConceptId,
    pub n: usize,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

const KDE_GRID_POINTS: usize = 512;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi.min(n - 1)] * frac
}

/// Silverman's rule of thumb: `0.9 * min(sigma, IQR / 1.34) * n^(-1/5)`.
fn silverman_bandwidth(values: &[f64], sigma: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let mut spread = sigma.min(iqr / 1.34);
    if spread <= 0.0 {
        spread = sigma;
    }
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

/// Histogram and KDE export for `neuron` at `layer`, one entry per requested
/// concept.
pub fn distribution_export(
    set: &ActivationSet,
    layer: usize,
    neuron: usize,
    concepts: &[ConceptId],
    bins: usize,
) -> Result<Vec<DistributionExport>> {
    if neuron >= set.hidden_dim() {
        return Err(Error::Config(format!(
            "neuron {neuron} out of range for hidden_dim {}",
            set.hidden_dim()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("bins must be >= 1".into()));
    }
    if concepts.is_empty() {
        return Err(Error::EmptyInput("distribution_export with no concepts"));
    }
    let partitions = set.partition(layer)?;
    let mut exports = Vec::with_capacity(concepts.len());
    for &concept in concepts {
        let matrix = partitions.get(&concept).ok_or(Error::UnknownConcept {
            concept: concept.index(),
        })?;
        let column = matrix.column(neuron);
        let params = gaussian_params(&column)?;
        if params.sigma <= 0.0 {
            return Err(Error::ZeroVariance {
                context: "distribution_export",
            });
        }
        let values: Vec<f64> = column.iter().map(|&x| x as f64).collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let bin_edges: Vec<f64> = (0..=bins)
            .map(|i| min + (max - min) * i as f64 / bins as f64)
            .collect();
        let width = (max - min) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in &values {
            let idx = (((v - min) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }

        let bandwidth = silverman_bandwidth(&values, params.sigma);
        let lo = min - params.sigma;
        let hi = max + params.sigma;
        let grid: Vec<f64> = (0..KDE_GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (KDE_GRID_POINTS - 1) as f64)
            .collect();
        let scale = 1.0 / (values.len() as f64 * bandwidth);
        let density: Vec<f64> = grid
            .iter()
            .map(|&g| {
                scale
                    * values
                        .iter()
                        .map(|&v| normal_pdf((g - v) / bandwidth))
                        .sum::<f64>()
            })
            .collect();

        exports.push(DistributionExport {
            layer,
            neuron,
            concept,
            n: values.len(),
            bin_edges,
            counts,
            bandwidth,
            grid,
            density,
        });
    }
    Ok(exports)
}

/// Trapezoid integral of a sampled function on an evenly spaced grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| (g[1] - g[0]) * (v[0] + v[1]) / 2.0)
        .sum()
}
