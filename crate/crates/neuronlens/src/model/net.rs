//! Forward and backward passes.
//!
//! Parameters are stored as `f32`; all arithmetic runs in `f64` so gradients
//! survive central finite-difference checks. Activations are row-major
//! `[token][dim]` flat buffers.

use super::{HookMode, HookSpec, Model};
use crate::error::{Error, Result};
use crate::model::ReadoutMode;

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

#[inline]
fn gelu_deriv(u: f64) -> f64 {
    let w = GELU_C * (u + GELU_A * u * u * u);
    let t = w.tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// `y = W x + b` with `W` row-major `[out][in]`.
fn linear(x: &[f64], w: &[f32], b: &[f32], out_dim: usize, in_dim: usize, y: &mut [f64]) {
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o] as f64;
        for i in 0..in_dim {
            acc += row[i] as f64 * x[i];
        }
        y[o] = acc;
    }
}

/// Accumulates parameter and (optionally) input gradients for `linear`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    w: &[f32],
    dy: &[f64],
    out_dim: usize,
    in_dim: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for o in 0..out_dim {
        let g = dy[o];
        db[o] += g;
        let drow = &mut dw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            drow[i] += g * x[i];
        }
    }
    if let Some(dx) = dx {
        for o in 0..out_dim {
            let g = dy[o];
            let row = &w[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dx[i] += g * row[i] as f64;
            }
        }
    }
}

/// Normalizes one row; returns `(mean, rstd)` for the backward pass.
fn layer_norm_row(x: &[f64], gain: &[f32], bias: &[f32], out: &mut [f64]) -> (f64, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gain[i] as f64 + bias[i] as f64;
    }
    (mean, rstd)
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward_row(
    dy: &[f64],
    x: &[f64],
    mean: f64,
    rstd: f64,
    gain: &[f32],
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let d = x.len();
    let mut sum_dxhat = 0.0;
    let mut sum_dxhat_xhat = 0.0;
    for i in 0..d {
        let xhat = (x[i] - mean) * rstd;
        let dxhat = dy[i] * gain[i] as f64;
        dgain[i] += dy[i] * xhat;
        dbias[i] += dy[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
    }
    let dn = d as f64;
    for i in 0..d {
        let xhat = (x[i] - mean) * rstd;
        let dxhat = dy[i] * gain[i] as f64;
        dx[i] += rstd * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub(crate) struct LayerCache {
    x_in: Vec<f64>,
    ln1_stats: Vec<(f64, f64)>,
    n1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>, // [head][t][u]
    ctx: Vec<f64>,
    x_mid: Vec<f64>,
    ln2_stats: Vec<(f64, f64)>,
    n2: Vec<f64>,
    u_pre: Vec<f64>,
    g_act: Vec<f64>,
}

pub(crate) struct ForwardCache {
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    lnf_stats: (f64, f64),
    nf: Vec<f64>,
    pub(crate) probs: Vec<f64>,
}

pub(crate) struct ForwardOutput {
    pub(crate) probs: Vec<f64>,
    pub(crate) captured: Option<Vec<f32>>,
    /// Post-hook readout rows (f32 view), one per layer.
    pub(crate) layer_readouts: Vec<Vec<f32>>,
    pub(crate) cache: Option<ForwardCache>,
}

pub(crate) fn validate_tokens(model: &Model, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("forward pass over empty token sequence"));
    }
    if tokens.len() > model.seq_len() {
        return Err(Error::SizeMismatch {
            context: "sequence length vs model positional range",
            expected: model.seq_len(),
            found: tokens.len(),
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= model.vocab_size()) {
        return Err(Error::Config(format!(
            "token {t} out of range for vocab_size {}",
            model.vocab_size()
        )));
    }
    Ok(())
}

pub(crate) fn forward(
    model: &Model,
    tokens: &[u32],
    hook: Option<&HookSpec>,
    want_cache: bool,
) -> Result<ForwardOutput> {
    validate_tokens(model, tokens)?;
    let layout = model.layout();
    let params = model.params();
    let d = layout.hidden_dim;
    let heads = layout.num_heads;
    let dh = d / heads;
    let f_dim = layout.mlp_dim;
    let t_len = tokens.len();
    let causal = model.readout_mode() == ReadoutMode::LastToken;
    let readout = match model.readout_mode() {
        ReadoutMode::FirstToken => 0,
        ReadoutMode::LastToken => t_len - 1,
    };

    if let Some(hook) = hook {
        if hook.layer == 0 || hook.layer > layout.num_layers {
            return Err(Error::Config(format!(
                "hook layer {} out of range 1..={}",
                hook.layer, layout.num_layers
            )));
        }
        if let HookMode::Intervene(policy) = &hook.mode {
            policy.validate(d)?;
        }
    }

    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = vec![0.0f64; t_len * d];
    for (t, &token) in tokens.iter().enumerate() {
        let tok_row = &params[layout.tok_emb_row(token as usize)];
        let pos_row = &params[layout.pos_emb_row(t)];
        let row = &mut x[t * d..(t + 1) * d];
        for i in 0..d {
            row[i] = tok_row[i] as f64 + pos_row[i] as f64;
        }
    }

    let mut caches = Vec::with_capacity(if want_cache { layout.num_layers } else { 0 });
    let mut captured = None;
    let mut layer_readouts = Vec::with_capacity(layout.num_layers);

    for (l, lo) in layout.layers.iter().enumerate() {
        let x_in = x.clone();
        let mut n1 = vec![0.0f64; t_len * d];
        let mut ln1_stats = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let stats = layer_norm_row(
                &x_in[t * d..(t + 1) * d],
                &params[lo.ln1_g..lo.ln1_g + d],
                &params[lo.ln1_b..lo.ln1_b + d],
                &mut n1[t * d..(t + 1) * d],
            );
            ln1_stats.push(stats);
        }

        let mut q = vec![0.0f64; t_len * d];
        let mut k = vec![0.0f64; t_len * d];
        let mut v = vec![0.0f64; t_len * d];
        for t in 0..t_len {
            let row = &n1[t * d..(t + 1) * d];
            linear(
                row,
                &params[lo.wq..lo.wq + d * d],
                &params[lo.bq..lo.bq + d],
                d,
                d,
                &mut q[t * d..(t + 1) * d],
            );
            linear(
                row,
                &params[lo.wk..lo.wk + d * d],
                &params[lo.bk..lo.bk + d],
                d,
                d,
                &mut k[t * d..(t + 1) * d],
            );
            linear(
                row,
                &params[lo.wv..lo.wv + d * d],
                &params[lo.bv..lo.bv + d],
                d,
                d,
                &mut v[t * d..(t + 1) * d],
            );
        }

        let mut att = vec![0.0f64; heads * t_len * t_len];
        let mut ctx = vec![0.0f64; t_len * d];
        for h in 0..heads {
            let col = h * dh;
            for t in 0..t_len {
                let limit = if causal { t } else { t_len - 1 };
                let q_row = &q[t * d + col..t * d + col + dh];
                let mut scores = Vec::with_capacity(limit + 1);
                for u in 0..=limit {
                    let k_row = &k[u * d + col..u * d + col + dh];
                    let mut s = 0.0;
                    for i in 0..dh {
                        s += q_row[i] * k_row[i];
                    }
                    scores.push(s * scale);
                }
                let probs = softmax(&scores);
                let att_row = &mut att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                att_row[..=limit].copy_from_slice(&probs);
                let ctx_row = &mut ctx[t * d + col..t * d + col + dh];
                for (u, &p) in probs.iter().enumerate() {
                    let v_row = &v[u * d + col..u * d + col + dh];
                    for i in 0..dh {
                        ctx_row[i] += p * v_row[i];
                    }
                }
            }
        }

        let mut x_mid = vec![0.0f64; t_len * d];
        {
            let mut atty = vec![0.0f64; d];
            for t in 0..t_len {
                linear(
                    &ctx[t * d..(t + 1) * d],
                    &params[lo.wo..lo.wo + d * d],
                    &params[lo.bo..lo.bo + d],
                    d,
                    d,
                    &mut atty,
                );
                for i in 0..d {
                    x_mid[t * d + i] = x_in[t * d + i] + atty[i];
                }
            }
        }

        let mut n2 = vec![0.0f64; t_len * d];
        let mut ln2_stats = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let stats = layer_norm_row(
                &x_mid[t * d..(t + 1) * d],
                &params[lo.ln2_g..lo.ln2_g + d],
                &params[lo.ln2_b..lo.ln2_b + d],
                &mut n2[t * d..(t + 1) * d],
            );
            ln2_stats.push(stats);
        }

        let mut u_pre = vec![0.0f64; t_len * f_dim];
        let mut g_act = vec![0.0f64; t_len * f_dim];
        for t in 0..t_len {
            linear(
                &n2[t * d..(t + 1) * d],
                &params[lo.w1..lo.w1 + f_dim * d],
                &params[lo.b1..lo.b1 + f_dim],
                f_dim,
                d,
                &mut u_pre[t * f_dim..(t + 1) * f_dim],
            );
            for i in 0..f_dim {
                g_act[t * f_dim + i] = gelu(u_pre[t * f_dim + i]);
            }
        }

        {
            let mut mlp_out = vec![0.0f64; d];
            for t in 0..t_len {
                linear(
                    &g_act[t * f_dim..(t + 1) * f_dim],
                    &params[lo.w2..lo.w2 + d * f_dim],
                    &params[lo.b2..lo.b2 + d],
                    d,
                    f_dim,
                    &mut mlp_out,
                );
                for i in 0..d {
                    x[t * d + i] = x_mid[t * d + i] + mlp_out[i];
                }
            }
        }

        // Residual stream after block l+1, at the readout token. The hook
        // sees (and may replace) the f32 view of this vector.
        if let Some(hook) = hook {
            if hook.layer == l + 1 {
                let h32: Vec<f32> = x[readout * d..(readout + 1) * d]
                    .iter()
                    .map(|&v| v as f32)
                    .collect();
                match &hook.mode {
                    HookMode::Capture => captured = Some(h32),
                    HookMode::Intervene(policy) => {
                        for (j, value) in policy.touched(&h32)? {
                            x[readout * d + j] = value as f64;
                        }
                    }
                }
            }
        }
        layer_readouts.push(
            x[readout * d..(readout + 1) * d]
                .iter()
                .map(|&v| v as f32)
                .collect(),
        );

        if want_cache {
            caches.push(LayerCache {
                x_in,
                ln1_stats,
                n1,
                q,
                k,
                v,
                att,
                ctx,
                x_mid,
                ln2_stats,
                n2,
                u_pre,
                g_act,
            });
        }
    }

    let x_final = x;
    let mut nf = vec![0.0f64; d];
    let lnf_stats = layer_norm_row(
        &x_final[readout * d..(readout + 1) * d],
        &params[layout.lnf_g..layout.lnf_g + d],
        &params[layout.lnf_b..layout.lnf_b + d],
        &mut nf,
    );
    let mut logits = vec![0.0f64; layout.num_classes];
    linear(
        &nf,
        &params[layout.head_w..layout.head_w + layout.num_classes * d],
        &params[layout.head_b..layout.head_b + layout.num_classes],
        layout.num_classes,
        d,
        &mut logits,
    );
    let probs = softmax(&logits);

    let cache = want_cache.then(|| ForwardCache {
        layers: caches,
        x_final,
        lnf_stats,
        nf,
        probs: probs.clone(),
    });

    Ok(ForwardOutput {
        probs,
        captured,
        layer_readouts,
        cache,
    })
}

/// Accumulates the gradient of `-ln p[label]` into `grads` (same layout as
/// the parameter vector). Must be called with the cache produced by a
/// hook-free forward pass over the same tokens.
pub(crate) fn backward(
    model: &Model,
    tokens: &[u32],
    label: usize,
    cache: &ForwardCache,
    grads: &mut [f64],
) {
    let layout = model.layout();
    let params = model.params();
    let d = layout.hidden_dim;
    let heads = layout.num_heads;
    let dh = d / heads;
    let f_dim = layout.mlp_dim;
    let t_len = tokens.len();
    let readout = match model.readout_mode() {
        ReadoutMode::FirstToken => 0,
        ReadoutMode::LastToken => t_len - 1,
    };
    let causal = model.readout_mode() == ReadoutMode::LastToken;

    // Cross-entropy + softmax: dlogits = p - onehot(label).
    let mut dlogits = cache.probs.clone();
    dlogits[label] -= 1.0;

    let mut dnf = vec![0.0f64; d];
    {
        let (dw, rest) = grads.split_at_mut(layout.head_b);
        linear_backward(
            &cache.nf,
            &params[layout.head_w..layout.head_w + layout.num_classes * d],
            &dlogits,
            layout.num_classes,
            d,
            &mut dw[layout.head_w..layout.head_w + layout.num_classes * d],
            &mut rest[..layout.num_classes],
            Some(&mut dnf),
        );
    }

    let mut dx = vec![0.0f64; t_len * d];
    {
        let (dgain_zone, dbias_zone) = {
            let (a, b) = grads.split_at_mut(layout.lnf_b);
            (&mut a[layout.lnf_g..layout.lnf_g + d], &mut b[..d])
        };
        let mut dx_row = vec![0.0f64; d];
        layer_norm_backward_row(
            &dnf,
            &cache.x_final[readout * d..(readout + 1) * d],
            cache.lnf_stats.0,
            cache.lnf_stats.1,
            &params[layout.lnf_g..layout.lnf_g + d],
            &mut dx_row,
            dgain_zone,
            dbias_zone,
        );
        dx[readout * d..(readout + 1) * d].copy_from_slice(&dx_row);
    }

    for (l, lo) in layout.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        // x_out = x_mid + W2 gelu(W1 n2 + b1) + b2
        let mut dx_mid = dx.clone();
        let mut dn2 = vec![0.0f64; t_len * d];
        {
            let mut dg = vec![0.0f64; f_dim];
            let mut du = vec![0.0f64; f_dim];
            for t in 0..t_len {
                let dy = &dx[t * d..(t + 1) * d];
                dg.fill(0.0);
                // dW2 / db2 and gradient into the gelu output.
                for o in 0..d {
                    let g = dy[o];
                    grads[lo.b2 + o] += g;
                    let w_row = &params[lo.w2 + o * f_dim..lo.w2 + (o + 1) * f_dim];
                    let dw_row = &mut grads[lo.w2 + o * f_dim..lo.w2 + (o + 1) * f_dim];
                    let g_row = &lc.g_act[t * f_dim..(t + 1) * f_dim];
                    for i in 0..f_dim {
                        dw_row[i] += g * g_row[i];
                    }
                    for i in 0..f_dim {
                        dg[i] += g * w_row[i] as f64;
                    }
                }
                for i in 0..f_dim {
                    du[i] = dg[i] * gelu_deriv(lc.u_pre[t * f_dim + i]);
                }
                let (dw1, rest) = grads.split_at_mut(lo.b1);
                linear_backward(
                    &lc.n2[t * d..(t + 1) * d],
                    &params[lo.w1..lo.w1 + f_dim * d],
                    &du,
                    f_dim,
                    d,
                    &mut dw1[lo.w1..lo.w1 + f_dim * d],
                    &mut rest[..f_dim],
                    Some(&mut dn2[t * d..(t + 1) * d]),
                );
            }
        }
        for t in 0..t_len {
            let (dgain_zone, dbias_zone) = {
                let (a, b) = grads.split_at_mut(lo.ln2_b);
                (&mut a[lo.ln2_g..lo.ln2_g + d], &mut b[..d])
            };
            layer_norm_backward_row(
                &dn2[t * d..(t + 1) * d],
                &lc.x_mid[t * d..(t + 1) * d],
                lc.ln2_stats[t].0,
                lc.ln2_stats[t].1,
                &params[lo.ln2_g..lo.ln2_g + d],
                &mut dx_mid[t * d..(t + 1) * d],
                dgain_zone,
                dbias_zone,
            );
        }

        // x_mid = x_in + Wo ctx + bo
        let mut dx_in = dx_mid.clone();
        let mut dctx = vec![0.0f64; t_len * d];
        for t in 0..t_len {
            let (dwo, rest) = grads.split_at_mut(lo.bo);
            linear_backward(
                &lc.ctx[t * d..(t + 1) * d],
                &params[lo.wo..lo.wo + d * d],
                &dx_mid[t * d..(t + 1) * d],
                d,
                d,
                &mut dwo[lo.wo..lo.wo + d * d],
                &mut rest[..d],
                Some(&mut dctx[t * d..(t + 1) * d]),
            );
        }

        let mut dq = vec![0.0f64; t_len * d];
        let mut dk = vec![0.0f64; t_len * d];
        let mut dv = vec![0.0f64; t_len * d];
        let scale = 1.0 / (dh as f64).sqrt();
        for h in 0..heads {
            let col = h * dh;
            for t in 0..t_len {
                let limit = if causal { t } else { t_len - 1 };
                let att_row = &lc.att[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                let dctx_row = &dctx[t * d + col..t * d + col + dh];
                // da[u] = dctx . v_u ; dv_u += att[u] * dctx
                let mut da = vec![0.0f64; limit + 1];
                for u in 0..=limit {
                    let v_row = &lc.v[u * d + col..u * d + col + dh];
                    let dv_row = &mut dv[u * d + col..u * d + col + dh];
                    let p = att_row[u];
                    let mut acc = 0.0;
                    for i in 0..dh {
                        acc += dctx_row[i] * v_row[i];
                        dv_row[i] += p * dctx_row[i];
                    }
                    da[u] = acc;
                }
                // Softmax backward within the attended window.
                let dot: f64 = (0..=limit).map(|u| da[u] * att_row[u]).sum();
                for u in 0..=limit {
                    let ds = att_row[u] * (da[u] - dot) * scale;
                    let k_row = &lc.k[u * d + col..u * d + col + dh];
                    let q_row = &lc.q[t * d + col..t * d + col + dh];
                    let dq_row = &mut dq[t * d + col..t * d + col + dh];
                    for i in 0..dh {
                        dq_row[i] += ds * k_row[i];
                    }
                    let dk_row = &mut dk[u * d + col..u * d + col + dh];
                    for i in 0..dh {
                        dk_row[i] += ds * q_row[i];
                    }
                }
            }
        }

        let mut dn1 = vec![0.0f64; t_len * d];
        for t in 0..t_len {
            let n1_row = &lc.n1[t * d..(t + 1) * d];
            let dn1_row = &mut dn1[t * d..(t + 1) * d];
            let (dwq, rest) = grads.split_at_mut(lo.bq);
            linear_backward(
                n1_row,
                &params[lo.wq..lo.wq + d * d],
                &dq[t * d..(t + 1) * d],
                d,
                d,
                &mut dwq[lo.wq..lo.wq + d * d],
                &mut rest[..d],
                Some(dn1_row),
            );
            let (dwk, rest) = grads.split_at_mut(lo.bk);
            linear_backward(
                n1_row,
                &params[lo.wk..lo.wk + d * d],
                &dk[t * d..(t + 1) * d],
                d,
                d,
                &mut dwk[lo.wk..lo.wk + d * d],
                &mut rest[..d],
                Some(dn1_row),
            );
            let (dwv, rest) = grads.split_at_mut(lo.bv);
            linear_backward(
                n1_row,
                &params[lo.wv..lo.wv + d * d],
                &dv[t * d..(t + 1) * d],
                d,
                d,
                &mut dwv[lo.wv..lo.wv + d * d],
                &mut rest[..d],
                Some(dn1_row),
            );
        }
        for t in 0..t_len {
            let (dgain_zone, dbias_zone) = {
                let (a, b) = grads.split_at_mut(lo.ln1_b);
                (&mut a[lo.ln1_g..lo.ln1_g + d], &mut b[..d])
            };
            layer_norm_backward_row(
                &dn1[t * d..(t + 1) * d],
                &lc.x_in[t * d..(t + 1) * d],
                lc.ln1_stats[t].0,
                lc.ln1_stats[t].1,
                &params[lo.ln1_g..lo.ln1_g + d],
                &mut dx_in[t * d..(t + 1) * d],
                dgain_zone,
                dbias_zone,
            );
        }

        dx = dx_in;
    }

    for (t, &token) in tokens.iter().enumerate() {
        let tok_range = layout.tok_emb_row(token as usize);
        let pos_range = layout.pos_emb_row(t);
        for i in 0..d {
            grads[tok_range.start + i] += dx[t * d + i];
            grads[pos_range.start + i] += dx[t * d + i];
        }
    }
}
