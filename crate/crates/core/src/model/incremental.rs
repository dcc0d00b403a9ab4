use ndarray::{s, Array1, Array2, ArrayView1};

use super::forward::{check_tokens, gelu};
use super::{ModelParams, LN_EPS};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

fn layer_norm_row(x: &Array1<f64>, g: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let r = 1.0 / (var + LN_EPS).sqrt();
    x.mapv(|v| (v - mean) * r) * g + b
}

/// Key/value cache for autoregressive decoding. Cloning a state forks the
/// prefix so several continuations can share one prefill.
#[derive(Debug, Clone)]
pub struct DecodeState {
    keys: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
    len: usize,
    last_logits: Option<Array1<f64>>,
}

impl DecodeState {
    pub fn new(params: &ModelParams) -> Self {
        let cfg = &params.config;
        let empty = || Array2::zeros((cfg.max_len, cfg.d_model));
        DecodeState {
            keys: (0..cfg.n_layers).map(|_| empty()).collect(),
            values: (0..cfg.n_layers).map(|_| empty()).collect(),
            len: 0,
            last_logits: None,
        }
    }

    /// Runs the prefix through the model; the returned state holds the
    /// logits for the token after `prefix`.
    pub fn prefill(params: &ModelParams, prefix: &[TokenId]) -> Result<Self> {
        check_tokens(params, prefix)?;
        let mut state = DecodeState::new(params);
        for &t in prefix {
            state.push(params, t)?;
        }
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Logits predicting the next token, if any token has been consumed.
    pub fn logits(&self) -> Option<ArrayView1<'_, f64>> {
        self.last_logits.as_ref().map(|l| l.view())
    }

    /// Appends one token and returns the logits for the position after it.
    pub fn push(&mut self, params: &ModelParams, token: TokenId) -> Result<ArrayView1<'_, f64>> {
        let cfg = &params.config;
        if self.len >= cfg.max_len {
            return Err(Error::Context {
                len: self.len + 1,
                max: cfg.max_len,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::Domain(format!(
                "token {token} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let w = &params.weights;
        let t = self.len;
        let dk = cfg.d_head();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut x = &w.embed.row(token as usize) + &params.positions.row(t);
        for (l, b) in w.blocks.iter().enumerate() {
            let n1 = layer_norm_row(&x, &b.ln1_g, &b.ln1_b);
            let q = n1.dot(&b.wq);
            self.keys[l].row_mut(t).assign(&n1.dot(&b.wk));
            self.values[l].row_mut(t).assign(&n1.dot(&b.wv));
            let mut o = Array1::zeros(cfg.d_model);
            for head in 0..cfg.n_heads {
                let cols = head * dk..(head + 1) * dk;
                let kh = self.keys[l].slice(s![..=t, cols.clone()]);
                let vh = self.values[l].slice(s![..=t, cols.clone()]);
                let mut a = kh.dot(&q.slice(s![cols.clone()])) * scale;
                let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                a.mapv_inplace(|v| (v - max).exp());
                let sum = a.sum();
                a /= sum;
                o.slice_mut(s![cols]).assign(&a.dot(&vh));
            }
            let u = &x + &o.dot(&b.wo);
            let n2 = layer_norm_row(&u, &b.ln2_g, &b.ln2_b);
            let g = (n2.dot(&b.w1) + &b.b1).mapv(gelu);
            x = &u + &(g.dot(&b.w2) + &b.b2);
        }
        let nf = layer_norm_row(&x, &w.lnf_g, &w.lnf_b);
        let logits = w.w_out.dot(&nf);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Decode(format!("non-finite logits at position {t}")));
        }
        self.len += 1;
        Ok(self.last_logits.insert(logits).view())
    }
}
