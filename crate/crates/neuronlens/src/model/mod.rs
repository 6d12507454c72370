//! A small pre-norm transformer classifier with a hook point on the residual
//! stream.
//!
//! The classification head reads a single token selected by the readout mode:
//! `LastToken` pairs with causal attention (decoder regime), `FirstToken`
//! with bidirectional attention (CLS-style regime). Hooks observe or replace
//! the residual stream after a block's output at the readout token only.
//!
//! Parameters are `f32`; every forward/backward computation runs in `f64`,
//! which keeps checkpoints bitwise-faithful while leaving gradients accurate
//! enough for finite-difference checks.

mod checkpoint;
mod layout;
mod net;
mod train;

use serde::{Deserialize, Serialize};

use crate::dataset::ConceptId;
use crate::error::{Error, Result};
use crate::intervention::InterventionPolicy;

pub use layout::ParamLayout;
pub use train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    FirstToken,
    LastToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub readout_mode: ReadoutMode,
    pub seed: u64,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, d = 64, 4 heads, last-token readout.
    pub fn desk_default(vocab_size: usize, num_classes: usize, seed: u64) -> Self {
        ModelConfig {
            num_layers: 4,
            hidden_dim: 64,
            num_heads: 4,
            vocab_size,
            num_classes,
            readout_mode: ReadoutMode::LastToken,
            seed,
            train: TrainConfig {
                epochs: 10,
                batch_size: 32,
                learning_rate: 3e-3,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidSpec {
                field: "num_layers",
                message: "must be >= 1".into(),
            });
        }
        if self.hidden_dim == 0 || self.num_heads == 0 {
            return Err(Error::InvalidSpec {
                field: "hidden_dim",
                message: "hidden_dim and num_heads must be >= 1".into(),
            });
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidSpec {
                field: "num_heads",
                message: format!(
                    "num_heads {} must divide hidden_dim {}",
                    self.num_heads, self.hidden_dim
                ),
            });
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidSpec {
                field: "vocab_size",
                message: "must be >= 1".into(),
            });
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec {
                field: "num_classes",
                message: "must be >= 2".into(),
            });
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::InvalidSpec {
                field: "train",
                message: "epochs and batch_size must be >= 1".into(),
            });
        }
        if !self.train.learning_rate.is_finite() || self.train.learning_rate <= 0.0 {
            return Err(Error::InvalidSpec {
                field: "learning_rate",
                message: format!(
                    "must be positive and finite, got {}",
                    self.train.learning_rate
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HookMode {
    /// Observe the readout hidden state without touching the stream.
    Capture,
    /// Replace selected neurons per the policy before later layers run.
    Intervene(InterventionPolicy),
}

/// Hook on the residual stream after block `layer` (1-based), at the readout
/// token.
#[derive(Debug, Clone, PartialEq)]
pub struct HookSpec {
    pub layer: usize,
    pub mode: HookMode,
}

impl HookSpec {
    pub fn capture(layer: usize) -> Self {
        HookSpec {
            layer,
            mode: HookMode::Capture,
        }
    }

    pub fn intervene(layer: usize, policy: InterventionPolicy) -> Self {
        HookSpec {
            layer,
            mode: HookMode::Intervene(policy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: ConceptId,
    pub proba: Vec<f64>,
}

impl Prediction {
    fn from_probs(probs: Vec<f64>) -> Self {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Prediction {
            class: ConceptId(best as u16),
            proba: probs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    seq_len: usize,
    layout: ParamLayout,
    params: Vec<f32>,
}

impl Model {
    pub(crate) fn init(config: ModelConfig, seq_len: usize) -> Result<Self> {
        config.validate()?;
        if seq_len == 0 {
            return Err(Error::InvalidSpec {
                field: "seq_len",
                message: "must be >= 1".into(),
            });
        }
        let layout = ParamLayout::new(
            config.vocab_size,
            seq_len,
            config.hidden_dim,
            config.num_heads,
            config.num_layers,
            config.num_classes,
        );
        let params = layout.init_params(config.seed);
        Ok(Model {
            config,
            seq_len,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn readout_mode(&self) -> ReadoutMode {
        self.config.readout_mode
    }

    /// Default hook layer: the network's penultimate layer, i.e. the last
    /// block's residual output feeding the classification head.
    pub fn penultimate_layer(&self) -> usize {
        self.config.num_layers
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Overwrite a single parameter; used by finite-difference checks.
    pub fn set_param(&mut self, index: usize, value: f32) {
        self.params[index] = value;
    }

    /// CRC32 of the little-endian parameter blob; identifies the exact
    /// weights an activation set was recorded from.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for &p in &self.params {
            hasher.update(&p.to_le_bytes());
        }
        hasher.finalize()
    }

    pub fn predict_proba(&self, tokens: &[u32]) -> Result<Prediction> {
        let out = net::forward(self, tokens, None, false)?;
        Ok(Prediction::from_probs(out.probs))
    }

    /// Forward pass with a hook. Capture mode returns the readout hidden
    /// state at the hook layer unchanged; intervene mode replaces selected
    /// neurons before subsequent layers consume the stream.
    pub fn forward_with_hook(
        &self,
        tokens: &[u32],
        hook: &HookSpec,
    ) -> Result<(Prediction, Option<Vec<f32>>)> {
        let out = net::forward(self, tokens, Some(hook), false)?;
        Ok((Prediction::from_probs(out.probs), out.captured))
    }

    /// Readout hidden state after every block, in layer order (1-based layer
    /// `l` is element `l - 1`).
    pub fn readout_states(&self, tokens: &[u32]) -> Result<Vec<Vec<f32>>> {
        let out = net::forward(self, tokens, None, false)?;
        Ok(out.layer_readouts)
    }

    /// Mean cross-entropy over a batch of `(tokens, label)` pairs.
    pub fn batch_loss(&self, batch: &[(&[u32], usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("loss over empty batch"));
        }
        let mut total = 0.0;
        for &(tokens, label) in batch {
            if label >= self.config.num_classes {
                return Err(Error::UnknownConcept { concept: label });
            }
            let out = net::forward(self, tokens, None, false)?;
            total += -out.probs[label].ln();
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter,
    /// laid out like [`Model::params`].
    pub fn batch_loss_and_grad(&self, batch: &[(&[u32], usize)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("loss over empty batch"));
        }
        let mut grads = vec![0.0f64; self.layout.total()];
        let mut total = 0.0;
        for &(tokens, label) in batch {
            if label >= self.config.num_classes {
                return Err(Error::UnknownConcept { concept: label });
            }
            let out = net::forward(self, tokens, None, true)?;
            let cache = out.cache.expect("cache requested");
            total += -cache.probs[label].ln();
            net::backward(self, tokens, label, &cache, &mut grads);
        }
        let scale = 1.0 / batch.len() as f64;
        for g in &mut grads {
            *g *= scale;
        }
        Ok((total * scale, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{self, CorpusSpec};
    use crate::intervention::{InterventionKind, InterventionScope, NeuronParams, SplitTag};

    fn tiny_corpus(separation: f64, seed: u64) -> dataset::Corpus {
        dataset::generate(&CorpusSpec {
            num_concepts: 3,
            vocab_size: 12,
            seq_len: 8,
            samples_per_concept: 40,
            separation,
            seed,
        })
        .unwrap()
    }

    fn tiny_config(seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 16,
            num_heads: 2,
            vocab_size: 12,
            num_classes: 3,
            readout_mode: ReadoutMode::LastToken,
            seed,
            train: TrainConfig {
                epochs: 4,
                batch_size: 16,
                learning_rate: 3e-3,
            },
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus(1.0, 3);
        let a = train(&corpus, &tiny_config(5)).unwrap();
        let b = train(&corpus, &tiny_config(5)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn probabilities_normalize_and_argmax_matches_class() {
        use rand::Rng;
        use rand::SeedableRng;
        let corpus = tiny_corpus(0.5, 7);
        let model = train(&corpus, &tiny_config(7)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let tokens: Vec<u32> = (0..8).map(|_| rng.gen_range(0..12)).collect();
            let pred = model.predict_proba(&tokens).unwrap();
            let sum: f64 = pred.proba.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(pred.proba.iter().all(|&p| p >= 0.0));
            let argmax = pred
                .proba
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(pred.class.index(), argmax);
        }
    }

    #[test]
    fn capture_hook_is_transparent() {
        let corpus = tiny_corpus(0.8, 11);
        let model = train(&corpus, &tiny_config(11)).unwrap();
        let tokens = &corpus.eval[0].tokens;
        let plain = model.predict_proba(tokens).unwrap();
        let (hooked, captured) = model
            .forward_with_hook(tokens, &HookSpec::capture(1))
            .unwrap();
        assert_eq!(plain, hooked);
        let captured = captured.expect("capture mode returns the hidden state");
        assert_eq!(captured.len(), model.hidden_dim());
        assert_eq!(captured, model.readout_states(tokens).unwrap()[0]);
    }

    #[test]
    fn empty_policy_hook_is_identity() {
        let corpus = tiny_corpus(0.8, 13);
        let model = train(&corpus, &tiny_config(13)).unwrap();
        let tokens = &corpus.eval[1].tokens;
        let policy = InterventionPolicy {
            scope: InterventionScope::Neuron,
            function: InterventionKind::Zero,
            alpha: None,
            beta: None,
            tau: 2.5,
            concept: ConceptId(0),
            layer: 2,
            stats_split: SplitTag::Train,
            neurons: vec![],
        };
        let plain = model.predict_proba(tokens).unwrap();
        let (hooked, captured) = model
            .forward_with_hook(tokens, &HookSpec::intervene(2, policy))
            .unwrap();
        assert_eq!(plain, hooked);
        assert!(captured.is_none());
    }

    #[test]
    fn zeroing_final_layer_matches_manual_head_recomputation() {
        let corpus = tiny_corpus(0.8, 17);
        let model = train(&corpus, &tiny_config(17)).unwrap();
        let tokens = &corpus.eval[2].tokens;
        let d = model.hidden_dim();
        let policy = InterventionPolicy {
            scope: InterventionScope::Neuron,
            function: InterventionKind::Zero,
            alpha: None,
            beta: None,
            tau: 2.5,
            concept: ConceptId(0),
            layer: model.num_layers(),
            stats_split: SplitTag::Train,
            neurons: (0..d)
                .map(|j| NeuronParams {
                    j,
                    mu: 0.0,
                    sigma: 1.0,
                    mu_ref: None,
                })
                .collect(),
        };
        let (_, captured) = model
            .forward_with_hook(tokens, &HookSpec::capture(model.num_layers()))
            .unwrap();
        assert!(captured.unwrap().iter().any(|&v| v != 0.0));

        let (hooked, _) = model
            .forward_with_hook(tokens, &HookSpec::intervene(model.num_layers(), policy))
            .unwrap();

        // Independent recomputation: final layer norm and head on a zero
        // vector, straight from the raw parameters.
        let layout = model.layout();
        let params = model.params();
        let mean = 0.0f64;
        let rstd = 1.0 / (0.0f64 + 1e-5).sqrt();
        let nf: Vec<f64> = (0..d)
            .map(|i| {
                (0.0 - mean) * rstd * params[layout.lnf_g + i] as f64
                    + params[layout.lnf_b + i] as f64
            })
            .collect();
        let logits: Vec<f64> = (0..model.num_classes())
            .map(|k| {
                let row = &params[layout.head_w + k * d..layout.head_w + (k + 1) * d];
                row.iter()
                    .zip(&nf)
                    .map(|(&w, &x)| w as f64 * x)
                    .sum::<f64>()
                    + params[layout.head_b + k] as f64
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (k, &e) in exps.iter().enumerate() {
            assert!((hooked.proba[k] - e / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_point_range_rarely_fires() {
        let corpus = tiny_corpus(0.8, 19);
        let model = train(&corpus, &tiny_config(19)).unwrap();
        let tokens = &corpus.eval[3].tokens;
        // tau -> 0+ gives a point range [mu, mu]; a live activation almost
        // surely differs from mu, so the prediction matches plain forward.
        let policy = InterventionPolicy {
            scope: InterventionScope::Range,
            function: InterventionKind::Zero,
            alpha: None,
            beta: None,
            tau: 1e-300,
            concept: ConceptId(0),
            layer: 1,
            stats_split: SplitTag::Train,
            neurons: (0..model.hidden_dim())
                .map(|j| NeuronParams {
                    j,
                    mu: 0.123_456_789,
                    sigma: 1.0,
                    mu_ref: None,
                })
                .collect(),
        };
        let plain = model.predict_proba(tokens).unwrap();
        let (hooked, _) = model
            .forward_with_hook(tokens, &HookSpec::intervene(1, policy))
            .unwrap();
        assert_eq!(plain, hooked);
    }

    fn check_gradients(readout_mode: ReadoutMode, seed: u64) {
        // 2-layer, d = 8 model per the gradient sanity contract.
        let config = ModelConfig {
            num_layers: 2,
            hidden_dim: 8,
            num_heads: 2,
            vocab_size: 10,
            num_classes: 3,
            readout_mode,
            seed,
            train: TrainConfig {
                epochs: 1,
                batch_size: 4,
                learning_rate: 1e-3,
            },
        };
        let mut model = Model::init(config, 6).unwrap();
        let batch_tokens: Vec<Vec<u32>> = vec![
            vec![0, 1, 2, 3, 4, 5],
            vec![9, 8, 7, 6, 5, 4],
            vec![2, 2, 4, 4, 6, 6],
        ];
        let batch: Vec<(&[u32], usize)> = batch_tokens
            .iter()
            .zip([0usize, 1, 2])
            .map(|(t, l)| (t.as_slice(), l))
            .collect();
        let (_, grads) = model.batch_loss_and_grad(&batch).unwrap();

        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let n = model.params().len();
        let mut checked = 0;
        while checked < 12 {
            let idx = rng.gen_range(0..n);
            if grads[idx].abs() < 1e-6 {
                continue; // skip near-zero gradients where relative error is meaningless
            }
            let orig = model.params()[idx];
            let h = 1e-4f32 * orig.abs().max(0.5);
            let hi = orig + h;
            let lo = orig - h;
            model.set_param(idx, hi);
            let loss_hi = model.batch_loss(&batch).unwrap();
            model.set_param(idx, lo);
            let loss_lo = model.batch_loss(&batch).unwrap();
            model.set_param(idx, orig);
            let fd = (loss_hi - loss_lo) / (hi as f64 - lo as f64);
            let rel = (fd - grads[idx]).abs() / grads[idx].abs().max(fd.abs());
            assert!(
                rel < 1e-3,
                "param {idx}: analytic {}, fd {fd}, rel {rel}",
                grads[idx]
            );
            checked += 1;
        }
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        check_gradients(ReadoutMode::LastToken, 23);
    }

    #[test]
    fn bidirectional_gradients_match_finite_differences_too() {
        check_gradients(ReadoutMode::FirstToken, 24);
    }

    #[test]
    fn capture_hook_agrees_with_readout_states_at_every_layer() {
        let corpus = tiny_corpus(0.8, 41);
        let model = train(&corpus, &tiny_config(41)).unwrap();
        let tokens = &corpus.eval[5].tokens;
        let states = model.readout_states(tokens).unwrap();
        assert_eq!(states.len(), model.num_layers());
        for layer in 1..=model.num_layers() {
            let (_, captured) = model
                .forward_with_hook(tokens, &HookSpec::capture(layer))
                .unwrap();
            assert_eq!(captured.unwrap(), states[layer - 1]);
        }
    }

    #[test]
    fn shorter_sequences_than_the_trained_length_are_accepted() {
        let corpus = tiny_corpus(0.8, 43);
        let model = train(&corpus, &tiny_config(43)).unwrap();
        let pred = model.predict_proba(&[1, 2, 3]).unwrap();
        assert!((pred.proba.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn first_token_readout_trains_too() {
        let corpus = tiny_corpus(1.0, 31);
        let mut config = tiny_config(31);
        config.readout_mode = ReadoutMode::FirstToken;
        config.train.epochs = 6;
        let model = train(&corpus, &config).unwrap();
        let correct = corpus
            .eval
            .iter()
            .filter(|s| model.predict_proba(&s.tokens).unwrap().class == s.concept)
            .count();
        let acc = correct as f64 / corpus.eval.len() as f64;
        assert!(acc >= 0.9, "first-token accuracy {acc}");
    }

    #[test]
    fn invalid_tokens_are_rejected() {
        let corpus = tiny_corpus(0.5, 37);
        let model = train(&corpus, &tiny_config(37)).unwrap();
        assert!(model.predict_proba(&[]).is_err());
        assert!(model.predict_proba(&[99, 0, 0, 0]).is_err());
        assert!(model.predict_proba(&vec![0; 100]).is_err());
        let policy_err = model.forward_with_hook(&corpus.eval[0].tokens, &HookSpec::capture(99));
        assert!(policy_err.is_err());
    }
}
