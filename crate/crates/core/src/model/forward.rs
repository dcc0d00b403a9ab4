use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Block, ModelParams, Weights, LN_EPS};
use crate::error::{Error, Result};
use crate::physics::{cap_penalty, ramp_penalty, tv_penalty, LossWeights};
use crate::tokenizer::TokenId;

const LOG_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)

pub(super) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(super) fn layer_norm(
    x: &Array2<f64>,
    g: &Array1<f64>,
    b: &Array1<f64>,
) -> (Array2<f64>, LnCache) {
    let (t, d) = x.dim();
    let mut xhat = Array2::zeros((t, d));
    let mut rstd = Array1::zeros(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        xhat.row_mut(i)
            .iter_mut()
            .zip(row)
            .for_each(|(o, v)| *o = (v - mean) * r);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(
    dy: &Array2<f64>,
    g: &Array1<f64>,
    cache: &LnCache,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dh.sum() / d;
        let m2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        let r = cache.rstd[i];
        dx.row_mut(i)
            .iter_mut()
            .zip(dh.iter().zip(xh))
            .for_each(|(o, (a, b))| *o = r * (a - m1 - b * m2));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Tanh-form GELU.
pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Softmax of `row[..=last]` written back in place; entries after `last` are zeroed.
pub(super) fn causal_softmax_row(row: &mut [f64], last: usize) {
    let max = row[..=last]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in &mut row[..=last] {
        *v = (*v - max).exp();
        sum += *v;
    }
    row[..=last].iter_mut().for_each(|v| *v /= sum);
    row[last + 1..].iter_mut().for_each(|v| *v = 0.0);
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct LayerCache {
    ln1: LnCache,
    n1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    mask1: Option<Array2<f64>>,
    ln2: LnCache,
    n2: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    mask2: Option<Array2<f64>>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    pub tokens: Vec<TokenId>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    nf: Array2<f64>,
    /// Pre-softmax scores, `T × V`.
    pub logits: Array2<f64>,
}

impl ForwardCache {
    /// Next-token distributions, one row per position.
    pub fn probs(&self) -> Array2<f64> {
        let mut p = self.logits.clone();
        for mut row in p.rows_mut() {
            let lse = log_sum_exp(row.view());
            row.mapv_inplace(|v| (v - lse).exp());
        }
        p
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

pub(super) fn check_tokens(params: &ModelParams, tokens: &[TokenId]) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_len {
        return Err(Error::Context {
            len: tokens.len(),
            max: cfg.max_len,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Domain(format!(
            "token {t} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Full forward pass keeping activations. Dropout is active only when a seed
/// is given and the configured rate is positive.
pub fn forward_cached(
    params: &ModelParams,
    tokens: &[TokenId],
    dropout_seed: Option<u64>,
) -> Result<ForwardCache> {
    check_tokens(params, tokens)?;
    let cfg = &params.config;
    let w = &params.weights;
    let (t_len, d, dk) = (tokens.len(), cfg.d_model, cfg.d_head());
    let scale = 1.0 / (dk as f64).sqrt();
    let mut rng = dropout_seed
        .filter(|_| cfg.dropout > 0.0)
        .map(ChaCha8Rng::seed_from_u64);

    let mut h = Array2::zeros((t_len, d));
    for (i, &tok) in tokens.iter().enumerate() {
        let row = &w.embed.row(tok as usize) + &params.positions.row(i);
        h.row_mut(i).assign(&row);
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for b in &w.blocks {
        let (n1, ln1) = layer_norm(&h, &b.ln1_g, &b.ln1_b);
        let q = n1.dot(&b.wq);
        let k = n1.dot(&b.wk);
        let v = n1.dot(&b.wv);
        let mut o = Array2::zeros((t_len, d));
        let mut attn = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let cols = s![.., head * dk..(head + 1) * dk];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for (i, mut row) in a.rows_mut().into_iter().enumerate() {
                causal_softmax_row(row.as_slice_mut().expect("row-major"), i);
            }
            o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            attn.push(a);
        }
        let mut att = o.dot(&b.wo);
        let mask1 = rng
            .as_mut()
            .map(|r| dropout_mask(r, att.dim(), cfg.dropout));
        if let Some(m) = &mask1 {
            att *= m;
        }
        let u = &h + &att;
        let (n2, ln2) = layer_norm(&u, &b.ln2_g, &b.ln2_b);
        let f1 = n2.dot(&b.w1) + &b.b1;
        let g = f1.mapv(gelu);
        let mut f2 = g.dot(&b.w2) + &b.b2;
        let mask2 = rng.as_mut().map(|r| dropout_mask(r, f2.dim(), cfg.dropout));
        if let Some(m) = &mask2 {
            f2 *= m;
        }
        let next = &u + &f2;
        layers.push(LayerCache {
            ln1,
            n1,
            q,
            k,
            v,
            attn,
            o,
            mask1,
            ln2,
            n2,
            f1,
            g,
            mask2,
        });
        h = next;
    }
    let (nf, lnf) = layer_norm(&h, &w.lnf_g, &w.lnf_b);
    let logits = nf.dot(&w.w_out.t());
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::training("forward/logits", "non-finite logits"));
    }
    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        layers,
        lnf,
        nf,
        logits,
    })
}

/// Next-token probability vectors `o_t` for every position (no dropout).
pub fn forward(params: &ModelParams, tokens: &[TokenId]) -> Result<Array2<f64>> {
    Ok(forward_cached(params, tokens, None)?.probs())
}

/// `−Σ_t log o_t[target_t]`, with each log floored at `ln(1e-12)`.
pub fn loss_ce(probs: &Array2<f64>, targets: &[TokenId]) -> Result<f64> {
    if probs.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} distributions vs {} targets",
            probs.nrows(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (row, &t) in probs.rows().into_iter().zip(targets) {
        let p = *row
            .get(t as usize)
            .ok_or_else(|| Error::Domain(format!("target {t} outside vocabulary")))?;
        total -= p.max(1e-12).ln();
    }
    Ok(total)
}

/// Which next-token targets contribute to the cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeMask {
    AllChannels,
    PowerOnly,
}

/// Composite objective: per-target mean cross-entropy plus weighted physics
/// penalties on the expected de-quantized power at every power position.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub n_channels: usize,
    /// Normalized de-quantized level of each power token; power ids are `0..len`.
    pub power_levels: &'a [f64],
    pub ce_mask: CeMask,
    pub weights: LossWeights,
    /// Normalized ramp limits.
    pub ramp_up: f64,
    pub ramp_down: f64,
}

/// Per-window physics inputs: normalized cap `min(1, α·P_norm(v_s)/rated)`
/// for every step `s` of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPhysics {
    pub caps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Mean cross-entropy per target token, nats.
    pub ce: f64,
    pub cap: f64,
    pub ramp: f64,
    pub tv: f64,
    pub ce_targets: usize,
}

impl Objective<'_> {
    /// Expected normalized power at position `t`, with the power sub-softmax.
    fn expected_power(&self, logits: ArrayView1<f64>) -> (f64, Vec<f64>) {
        let power = logits.slice(s![..self.power_levels.len()]);
        let lse = log_sum_exp(power);
        let sp: Vec<f64> = power.iter().map(|v| (v - lse).exp()).collect();
        let e = sp.iter().zip(self.power_levels).map(|(p, l)| p * l).sum();
        (e, sp)
    }

    /// Loss value and its gradient with respect to the logits.
    pub fn evaluate(
        &self,
        logits: &Array2<f64>,
        tokens: &[TokenId],
        physics: &WindowPhysics,
    ) -> Result<(LossParts, Array2<f64>)> {
        let c = self.n_channels;
        let t_len = tokens.len();
        if c == 0 || !t_len.is_multiple_of(c) {
            return Err(Error::Shape(format!(
                "{t_len} tokens do not form {c}-channel steps"
            )));
        }
        let steps = t_len / c;
        if physics.caps.len() != steps {
            return Err(Error::Shape(format!(
                "{} caps for {steps} steps",
                physics.caps.len()
            )));
        }
        let mut dlogits = Array2::zeros(logits.dim());

        let positions: Vec<usize> = (0..t_len - 1)
            .filter(|&t| self.ce_mask == CeMask::AllChannels || (t + 1) % c == 0)
            .collect();
        let n = positions.len().max(1) as f64;
        let mut ce = 0.0;
        for &t in &positions {
            let row = logits.row(t);
            let lse = log_sum_exp(row);
            let target = tokens[t + 1] as usize;
            let logp = row[target] - lse;
            ce -= logp.max(LOG_FLOOR);
            if logp > LOG_FLOOR {
                let mut drow = dlogits.row_mut(t);
                drow.iter_mut()
                    .zip(row)
                    .for_each(|(g, v)| *g += (v - lse).exp() / n);
                drow[target] -= 1.0 / n;
            }
        }
        let mut parts = LossParts {
            ce: ce / n,
            ce_targets: positions.len(),
            ..LossParts::default()
        };

        let w = &self.weights;
        if !w.is_zero() && steps >= 2 {
            let power_pos: Vec<usize> = (1..steps).map(|s| s * c - 1).collect();
            let (expected, subsoft): (Vec<f64>, Vec<Vec<f64>>) = power_pos
                .iter()
                .map(|&t| self.expected_power(logits.row(t)))
                .unzip();
            let mut de = vec![0.0; expected.len()];
            let (cap, g) = cap_penalty(&expected, &physics.caps[1..])?;
            parts.cap = cap;
            de.iter_mut()
                .zip(g)
                .for_each(|(d, g)| *d += w.lambda_cap * g);
            if expected.len() >= 2 {
                let (ramp, g) = ramp_penalty(&expected, self.ramp_up, self.ramp_down)?;
                parts.ramp = ramp;
                de.iter_mut()
                    .zip(g)
                    .for_each(|(d, g)| *d += w.lambda_ramp * g);
                let (tv, g) = tv_penalty(&expected, w.delta)?;
                parts.tv = tv;
                de.iter_mut()
                    .zip(g)
                    .for_each(|(d, g)| *d += w.lambda_tv * g);
            }
            for (((&t, e), sp), d) in power_pos.iter().zip(&expected).zip(&subsoft).zip(&de) {
                let mut drow = dlogits.row_mut(t);
                for (i, (p, l)) in sp.iter().zip(self.power_levels).enumerate() {
                    drow[i] += d * p * (l - e);
                }
            }
        }
        parts.total = crate::physics::total_loss(parts.ce, parts.cap, parts.ramp, parts.tv, w);
        Ok((parts, dlogits))
    }
}

/// Loss and exact gradients of the composite objective for one window.
pub fn backward(
    params: &ModelParams,
    tokens: &[TokenId],
    physics: &WindowPhysics,
    objective: &Objective<'_>,
    dropout_seed: Option<u64>,
) -> Result<(LossParts, Weights)> {
    let cache = forward_cached(params, tokens, dropout_seed)?;
    let (parts, dlogits) = objective.evaluate(&cache.logits, tokens, physics)?;
    if !parts.total.is_finite() {
        return Err(Error::training(
            "objective",
            format!("non-finite loss {parts:?}"),
        ));
    }
    let grads = backprop(params, &cache, &dlogits);
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::training(
            format!("backward/{name}"),
            "non-finite gradient",
        ));
    }
    Ok((parts, grads))
}

fn backprop(params: &ModelParams, cache: &ForwardCache, dlogits: &Array2<f64>) -> Weights {
    let cfg = &params.config;
    let w = &params.weights;
    let dk = cfg.d_head();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut grads = Weights::zeros(cfg);

    grads.w_out = dlogits.t().dot(&cache.nf);
    let dnf = dlogits.dot(&w.w_out);
    let mut dh = layer_norm_back(
        &dnf,
        &w.lnf_g,
        &cache.lnf,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
    );

    for (l, (b, lc)) in w.blocks.iter().zip(&cache.layers).enumerate().rev() {
        let gb: &mut Block = &mut grads.blocks[l];

        // h = u + dropout(g·W2 + b2)
        let mut df2 = dh.clone();
        if let Some(m) = &lc.mask2 {
            df2 *= m;
        }
        gb.w2 = lc.g.t().dot(&df2);
        gb.b2 = df2.sum_axis(Axis(0));
        let dg = df2.dot(&b.w2.t());
        let df1 = &dg * &lc.f1.mapv(gelu_grad);
        gb.w1 = lc.n2.t().dot(&df1);
        gb.b1 = df1.sum_axis(Axis(0));
        let dn2 = df1.dot(&b.w1.t());
        let du = dh + layer_norm_back(&dn2, &b.ln2_g, &lc.ln2, &mut gb.ln2_g, &mut gb.ln2_b);

        // u = x + dropout(concat(heads)·Wo)
        let mut datt = du.clone();
        if let Some(m) = &lc.mask1 {
            datt *= m;
        }
        gb.wo = lc.o.t().dot(&datt);
        let d_o = datt.dot(&b.wo.t());
        let mut dq = Array2::zeros(lc.q.dim());
        let mut dkm = Array2::zeros(lc.k.dim());
        let mut dv = Array2::zeros(lc.v.dim());
        for (head, a) in lc.attn.iter().enumerate() {
            let cols = s![.., head * dk..(head + 1) * dk];
            let doh = d_o.slice(cols);
            let da = doh.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&doh));
            let mut ds = &da * a;
            for (mut srow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot: f64 = srow.sum();
                srow.iter_mut().zip(arow).for_each(|(s, &p)| *s -= p * dot);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dkm.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        gb.wq = lc.n1.t().dot(&dq);
        gb.wk = lc.n1.t().dot(&dkm);
        gb.wv = lc.n1.t().dot(&dv);
        let dn1 = dq.dot(&b.wq.t()) + dkm.dot(&b.wk.t()) + dv.dot(&b.wv.t());
        dh = du + layer_norm_back(&dn1, &b.ln1_g, &lc.ln1, &mut gb.ln1_g, &mut gb.ln1_b);
    }

    for (i, &tok) in cache.tokens.iter().enumerate() {
        let mut row = grads.embed.row_mut(tok as usize);
        row += &dh.row(i);
    }
    grads
}
