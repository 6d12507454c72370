//! Deterministic Adam training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net;
use super::{Model, ModelConfig};
use crate::dataset::Corpus;
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Train a classifier on the corpus train split. Deterministic given the
/// config seed: batch order, initialization, and accumulation order are all
/// fixed.
pub fn train(corpus: &Corpus, config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    if config.num_classes != corpus.num_concepts() {
        return Err(Error::Config(format!(
            "model num_classes {} != corpus concept count {}",
            config.num_classes,
            corpus.num_concepts()
        )));
    }
    if corpus.train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    for seq in &corpus.train {
        if let Some(&t) = seq
            .tokens
            .iter()
            .find(|&&t| t as usize >= config.vocab_size)
        {
            return Err(Error::Config(format!(
                "corpus token {t} out of range for model vocab_size {}",
                config.vocab_size
            )));
        }
    }

    let mut model = Model::init(config.clone(), corpus.spec.seq_len)?;
    let n = model.layout().total();
    let mut m1 = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    let mut grads = vec![0.0f64; n];
    let mut step = 0usize;

    for epoch in 0..config.train.epochs {
        let mut order: Vec<usize> = (0..corpus.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add((epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        );
        order.shuffle(&mut rng);

        for chunk in order.chunks(config.train.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut loss_sum = 0.0;
            for &idx in chunk {
                let seq = &corpus.train[idx];
                let out = net::forward(&model, &seq.tokens, None, true)?;
                let cache = out.cache.expect("cache requested");
                loss_sum += -cache.probs[seq.concept.index()].ln();
                net::backward(&model, &seq.tokens, seq.concept.index(), &cache, &mut grads);
            }
            let scale = 1.0 / chunk.len() as f64;
            let loss = loss_sum * scale;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { step });
            }
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for i in 0..n {
                let g = grads[i] * scale;
                m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * g;
                m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * g * g;
                let update =
                    config.train.learning_rate * (m1[i] / bc1) / ((m2[i] / bc2).sqrt() + ADAM_EPS);
                let p = model.params()[i] as f64 - update;
                model.set_param(i, p as f32);
            }
        }
    }
    Ok(model)
}
