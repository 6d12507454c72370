//! Correlated activation ranges and the intervention functions applied to
//! them.
//!
//! A policy selects neurons and replaces their activations with `phi(x)`,
//! either unconditionally (neuron scope) or only when the live activation
//! falls inside the neuron's correlated range `[mu - tau*sigma, mu + tau*sigma]`
//! (range scope). The interval is closed on both ends.

use serde::{Deserialize, Serialize};

use crate::dataset::ConceptId;
use crate::error::{Error, Result};
use crate::stats::normal_cdf;

/// Default range half-width in standard deviations.
pub const DEFAULT_TAU: f64 = 2.5;
/// Default dampening factor.
pub const DEFAULT_ALPHA: f64 = 0.125;
/// Default adaptive-dampening ceiling.
pub const DEFAULT_BETA: f64 = 0.5;
/// Fixed scale in the adaptive dampening formula `beta * |x - mu| / (2.5 sigma)`.
const ADAPTIVE_SCALE: f64 = 2.5;

/// Closed interval `[mu - tau*sigma, mu + tau*sigma]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedRange {
    pub lo: f64,
    pub hi: f64,
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl CorrelatedRange {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

pub fn correlated_range(mu: f64, sigma: f64, tau: f64) -> CorrelatedRange {
    debug_assert!(sigma >= 0.0 && tau >= 0.0);
    CorrelatedRange {
        lo: mu - tau * sigma,
        hi: mu + tau * sigma,
        mu,
        sigma,
        tau,
    }
}

/// Fraction of a true Gaussian covered by `[mu - tau*sigma, mu + tau*sigma]`:
/// `2 * Phi(tau) - 1`.
pub fn gaussian_coverage(tau: f64) -> f64 {
    2.0 * normal_cdf(tau) - 1.0
}

pub fn phi_zero(_x: f64) -> f64 {
    0.0
}

pub fn phi_damp(x: f64, alpha: f64) -> f64 {
    alpha * x
}

pub fn phi_mean(_x: f64, mu_ref: f64) -> f64 {
    mu_ref
}

/// Runtime-controlled dampening: `a(x) = beta * |x - mu| / (2.5 sigma)`,
/// `phi(x) = a(x) * x`. Fully suppresses at the range center and dampens
/// least at the range edges. Defined only for `sigma > 0`.
pub fn phi_adaptive(x: f64, mu: f64, sigma: f64, beta: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::ZeroVariance {
            context: "phi_adaptive",
        });
    }
    let a = beta * (x - mu).abs() / (ADAPTIVE_SCALE * sigma);
    Ok(a * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionScope {
    /// Apply `phi` to every selected neuron unconditionally.
    Neuron,
    /// Apply `phi` only when the live activation falls inside the neuron's
    /// correlated range.
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Zero,
    Damp,
    Mean,
    Adaptive,
}

/// Which split produced the policy's statistics. Evaluation requires `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    #[default]
    Train,
    Eval,
}

/// Per-neuron statistics backing the intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Neuron index within the hidden state vector.
    pub j: usize,
    pub mu: f64,
    pub sigma: f64,
    /// Replacement value for the mean function; taken from a generic pool of
    /// activations rather than the target concept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPolicy {
    pub scope: InterventionScope,
    pub function: InterventionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub tau: f64,
    pub concept: ConceptId,
    /// Hook layer the policy statistics were computed at (1-based).
    pub layer: usize,
    #[serde(default)]
    pub stats_split: SplitTag,
    pub neurons: Vec<NeuronParams>,
}

impl InterventionPolicy {
    /// Structural validation against a hidden dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        match self.function {
            InterventionKind::Damp => {
                let alpha = self
                    .alpha
                    .ok_or_else(|| Error::Config("damp function requires alpha".into()))?;
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::Config(format!(
                        "alpha must lie in [0, 1], got {alpha}"
                    )));
                }
            }
            InterventionKind::Adaptive => {
                let beta = self
                    .beta
                    .ok_or_else(|| Error::Config("adaptive function requires beta".into()))?;
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::Config(format!(
                        "beta must lie in [0, 1], got {beta}"
                    )));
                }
                // The adaptive formula is defined within the correlated range
                // only, so it cannot back an unconditional intervention.
                if self.scope == InterventionScope::Neuron {
                    return Err(Error::Config(
                        "adaptive dampening is defined within the correlated range only; \
                         use range scope"
                            .into(),
                    ));
                }
                for n in &self.neurons {
                    if n.sigma <= 0.0 {
                        return Err(Error::ZeroVariance {
                            context: "adaptive dampening with zero sigma",
                        });
                    }
                }
            }
            InterventionKind::Mean => {
                for n in &self.neurons {
                    if n.mu_ref.is_none() {
                        return Err(Error::Config(format!(
                            "mean function requires mu_ref for neuron {}",
                            n.j
                        )));
                    }
                }
            }
            InterventionKind::Zero => {}
        }
        for n in &self.neurons {
            if n.j >= d {
                return Err(Error::SizeMismatch {
                    context: "selected neuron index vs hidden_dim",
                    expected: d,
                    found: n.j,
                });
            }
            if n.sigma < 0.0 {
                return Err(Error::Config(format!("negative sigma for neuron {}", n.j)));
            }
        }
        Ok(())
    }

    pub fn range_for(&self, params: &NeuronParams) -> CorrelatedRange {
        correlated_range(params.mu, params.sigma, self.tau)
    }

    fn phi(&self, params: &NeuronParams, x: f64) -> Result<f64> {
        match self.function {
            InterventionKind::Zero => Ok(phi_zero(x)),
            InterventionKind::Damp => Ok(phi_damp(
                x,
                self.alpha
                    .ok_or_else(|| Error::Config("damp function requires alpha".into()))?,
            )),
            InterventionKind::Mean => Ok(phi_mean(
                x,
                params.mu_ref.ok_or_else(|| {
                    Error::Config(format!(
                        "mean function requires mu_ref for neuron {}",
                        params.j
                    ))
                })?,
            )),
            InterventionKind::Adaptive => phi_adaptive(
                x,
                params.mu,
                params.sigma,
                self.beta
                    .ok_or_else(|| Error::Config("adaptive function requires beta".into()))?,
            ),
        }
    }

    /// The `(index, replacement)` pairs the policy would write into `h`.
    /// Under range scope a neuron is touched only when its live activation
    /// falls inside the closed correlated range.
    pub fn touched(&self, h: &[f32]) -> Result<Vec<(usize, f32)>> {
        let mut out = Vec::new();
        for params in &self.neurons {
            let Some(&live) = h.get(params.j) else {
                return Err(Error::SizeMismatch {
                    context: "policy neuron index vs hidden vector",
                    expected: params.j + 1,
                    found: h.len(),
                });
            };
            let x = live as f64;
            if self.scope == InterventionScope::Range && !self.range_for(params).contains(x) {
                continue;
            }
            out.push((params.j, self.phi(params, x)? as f32));
        }
        Ok(out)
    }

    /// Apply the policy to a hidden vector, leaving untouched coordinates
    /// bitwise unchanged.
    pub fn apply(&self, h: &[f32]) -> Result<Vec<f32>> {
        let mut out = h.to_vec();
        for (j, value) in self.touched(h)? {
            out[j] = value;
        }
        Ok(out)
    }
}
