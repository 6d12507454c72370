//! Flat parameter layout for the transformer.
//!
//! All parameters live in one `Vec<f32>`; the layout maps named segments to
//! ranges. Weight matrices are row-major `[out][in]` so a linear layer is
//! `y_o = sum_i W[o * in + i] * x_i + b_o`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub mlp_dim: usize,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub layers: Vec<LayerOffsets>,
    total: usize,
}

impl ParamLayout {
    pub fn new(
        vocab_size: usize,
        seq_len: usize,
        hidden_dim: usize,
        num_heads: usize,
        num_layers: usize,
        num_classes: usize,
    ) -> Self {
        let d = hidden_dim;
        let mlp_dim = 4 * d;
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let at = cursor;
            cursor += len;
            at
        };
        let tok_emb = take(vocab_size * d);
        let pos_emb = take(seq_len * d);
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            layers.push(LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(mlp_dim * d),
                b1: take(mlp_dim),
                w2: take(d * mlp_dim),
                b2: take(d),
            });
        }
        let lnf_g = take(d);
        let lnf_b = take(d);
        let head_w = take(num_classes * d);
        let head_b = take(num_classes);
        ParamLayout {
            vocab_size,
            seq_len,
            hidden_dim,
            num_heads,
            num_layers,
            num_classes,
            mlp_dim,
            tok_emb,
            pos_emb,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            layers,
            total: cursor,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn tok_emb_row(&self, token: usize) -> Range<usize> {
        let d = self.hidden_dim;
        let at = self.tok_emb + token * d;
        at..at + d
    }

    pub fn pos_emb_row(&self, pos: usize) -> Range<usize> {
        let d = self.hidden_dim;
        let at = self.pos_emb + pos * d;
        at..at + d
    }

    /// Seeded initialization: embeddings and weights N(0, 0.02), layer-norm
    /// gains 1, all biases 0.
    pub fn init_params(&self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid init distribution");
        let mut params = vec![0.0f32; self.total];
        let mut fill_gauss = |params: &mut [f32], at: usize, len: usize| {
            for p in &mut params[at..at + len] {
                *p = normal.sample(&mut rng) as f32;
            }
        };
        let d = self.hidden_dim;
        fill_gauss(&mut params, self.tok_emb, self.vocab_size * d);
        fill_gauss(&mut params, self.pos_emb, self.seq_len * d);
        for lo in &self.layers {
            for p in &mut params[lo.ln1_g..lo.ln1_g + d] {
                *p = 1.0;
            }
            for p in &mut params[lo.ln2_g..lo.ln2_g + d] {
                *p = 1.0;
            }
            fill_gauss(&mut params, lo.wq, d * d);
            fill_gauss(&mut params, lo.wk, d * d);
            fill_gauss(&mut params, lo.wv, d * d);
            fill_gauss(&mut params, lo.wo, d * d);
            fill_gauss(&mut params, lo.w1, self.mlp_dim * d);
            fill_gauss(&mut params, lo.w2, d * self.mlp_dim);
        }
        for p in &mut params[self.lnf_g..self.lnf_g + d] {
            *p = 1.0;
        }
        fill_gauss(&mut params, self.head_w, self.num_classes * d);
        // Keep the RNG stream position stable regardless of future segments.
        let _ = rng.gen::<u64>();
        params
    }
}
