//! Weight encoder, two-layer policy network and linear value baseline, with
//! hand-written backpropagation over one flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::softmax;

pub const N_ACTIONS: usize = 6;
pub const CODES: usize = 30;
pub const CODE_UNIT: usize = 12;
/// Quantization levels per objective in lookup-table mode (0.0, 0.1, ..., 1.0).
pub const LOOKUP_BINS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    #[default]
    Codebook,
    LookupTable,
    Raw,
}

impl std::str::FromStr for EncoderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "codebook" => Ok(EncoderMode::Codebook),
            "lookup_table" | "lookup" => Ok(EncoderMode::LookupTable),
            "raw" => Ok(EncoderMode::Raw),
            other => Err(Error::invalid(format!("unknown encoder mode '{other}'"))),
        }
    }
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Shapes {
    pub k: usize,
    pub mode: EncoderMode,
    pub hidden: usize,
    pub feat_dim: usize,
    pub emb_dim: usize,
    pub input_dim: usize,
    enc_w: usize,
    enc_b: usize,
    codes: usize,
    table: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    v: usize,
    vb: usize,
    pub total: usize,
}

impl Shapes {
    pub fn new(k: usize, mode: EncoderMode, hidden: usize, feat_dim: usize) -> Shapes {
        let emb_dim = match mode {
            EncoderMode::Codebook | EncoderMode::LookupTable => k * CODE_UNIT,
            EncoderMode::Raw => k,
        };
        let input_dim = feat_dim + emb_dim;
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let codebook = mode == EncoderMode::Codebook;
        let enc_w = take(if codebook { CODES * k } else { 0 });
        let enc_b = take(if codebook { CODES } else { 0 });
        let codes = take(if codebook { CODES * emb_dim } else { 0 });
        let table = take(if mode == EncoderMode::LookupTable { k * LOOKUP_BINS * CODE_UNIT } else { 0 });
        let w1 = take(hidden * input_dim);
        let b1 = take(hidden);
        let w2 = take(N_ACTIONS * hidden);
        let b2 = take(N_ACTIONS);
        let v = take(input_dim);
        let vb = take(1);
        Shapes { k, mode, hidden, feat_dim, emb_dim, input_dim, enc_w, enc_b, codes, table, w1, b1, w2, b2, v, vb, total: at }
    }

    /// Range of the weight-encoder parameters.
    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        0..self.w1
    }

    pub fn policy_range(&self) -> std::ops::Range<usize> {
        self.w1..self.v
    }

    pub fn value_range(&self) -> std::ops::Range<usize> {
        self.v..self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    attn: Vec<f64>,
    bins: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub logits: [f64; N_ACTIONS],
    pub probs: [f64; N_ACTIONS],
    pub log_probs: [f64; N_ACTIONS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub shapes: Shapes,
    pub params: Vec<f64>,
}

fn lookup_bin(w: f64) -> usize {
    ((w * (LOOKUP_BINS - 1) as f64).round().max(0.0) as usize).min(LOOKUP_BINS - 1)
}

impl Network {
    /// Zero output layer, hidden layer uniform in ±0.05, encoder uniform in ±0.5.
    pub fn new<R: Rng>(k: usize, mode: EncoderMode, hidden: usize, feat_dim: usize, rng: &mut R) -> Network {
        let shapes = Shapes::new(k, mode, hidden, feat_dim);
        let mut params = vec![0.0; shapes.total];
        for p in &mut params[shapes.enc_w..shapes.enc_b] {
            *p = rng.random_range(-0.5..0.5);
        }
        for p in &mut params[shapes.codes..shapes.w1] {
            *p = rng.random_range(-0.5..0.5);
        }
        for p in &mut params[shapes.w1..shapes.b1] {
            *p = rng.random_range(-0.05..0.05);
        }
        Network { shapes, params }
    }

    pub fn from_params(shapes: Shapes, params: Vec<f64>) -> Result<Network> {
        if params.len() != shapes.total {
            return Err(Error::invalid(format!("expected {} parameters, found {}", shapes.total, params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Network { shapes, params })
    }

    pub fn embed(&self, w: &[f64]) -> Result<Embedding> {
        let s = &self.shapes;
        if w.len() != s.k {
            return Err(Error::invalid(format!("weights have {} entries, network expects {}", w.len(), s.k)));
        }
        Ok(match s.mode {
            EncoderMode::Raw => Embedding { values: w.to_vec(), attn: Vec::new(), bins: Vec::new() },
            EncoderMode::LookupTable => {
                let bins: Vec<usize> = w.iter().map(|&x| lookup_bin(x)).collect();
                let mut values = Vec::with_capacity(s.emb_dim);
                for (k, &b) in bins.iter().enumerate() {
                    let at = s.table + (k * LOOKUP_BINS + b) * CODE_UNIT;
                    values.extend_from_slice(&self.params[at..at + CODE_UNIT]);
                }
                Embedding { values, attn: Vec::new(), bins }
            }
            EncoderMode::Codebook => {
                let z: Vec<f64> = (0..CODES)
                    .map(|i| {
                        let row = &self.params[s.enc_w + i * s.k..s.enc_w + (i + 1) * s.k];
                        self.params[s.enc_b + i] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                let attn = softmax(&z);
                let mut values = vec![0.0; s.emb_dim];
                for (i, &a) in attn.iter().enumerate() {
                    let code = &self.params[s.codes + i * s.emb_dim..s.codes + (i + 1) * s.emb_dim];
                    for (v, c) in values.iter_mut().zip(code) {
                        *v += a * c;
                    }
                }
                Embedding { values, attn, bins: Vec::new() }
            }
        })
    }

    /// The 30 latent codes (codebook mode only).
    pub fn codes(&self) -> Vec<&[f64]> {
        let s = &self.shapes;
        if s.mode != EncoderMode::Codebook {
            return Vec::new();
        }
        (0..CODES).map(|i| &self.params[s.codes + i * s.emb_dim..s.codes + (i + 1) * s.emb_dim]).collect()
    }

    pub fn forward(&self, feats: &[f64], emb: &[f64]) -> Forward {
        let s = &self.shapes;
        debug_assert_eq!(feats.len(), s.feat_dim);
        debug_assert_eq!(emb.len(), s.emb_dim);
        let d = s.input_dim;
        let mut hidden = Vec::with_capacity(s.hidden);
        for h in 0..s.hidden {
            let row = &self.params[s.w1 + h * d..s.w1 + (h + 1) * d];
            let (rf, re) = row.split_at(s.feat_dim);
            let pre = self.params[s.b1 + h]
                + rf.iter().zip(feats).map(|(a, b)| a * b).sum::<f64>()
                + re.iter().zip(emb).map(|(a, b)| a * b).sum::<f64>();
            hidden.push(pre.tanh());
        }
        let mut logits = [0.0; N_ACTIONS];
        for (a, l) in logits.iter_mut().enumerate() {
            let row = &self.params[s.w2 + a * s.hidden..s.w2 + (a + 1) * s.hidden];
            *l = self.params[s.b2 + a] + row.iter().zip(&hidden).map(|(x, y)| x * y).sum::<f64>();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs = logits.map(|l| l - lse);
        let probs = log_probs.map(f64::exp);
        Forward { hidden, logits, probs, log_probs }
    }

    pub fn value(&self, feats: &[f64], emb: &[f64]) -> f64 {
        let s = &self.shapes;
        let u = &self.params[s.v..s.v + s.input_dim];
        self.params[s.vb] + u.iter().zip(feats.iter().chain(emb)).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Accumulates parameter gradients for upstream gradient `dlogits` and adds
    /// the gradient with respect to the embedding into `d_emb`.
    pub fn backward_step(
        &self,
        feats: &[f64],
        emb: &[f64],
        fwd: &Forward,
        dlogits: &[f64; N_ACTIONS],
        grad: &mut [f64],
        d_emb: &mut [f64],
    ) {
        let s = &self.shapes;
        let d = s.input_dim;
        let mut dh = vec![0.0; s.hidden];
        for (a, &dz) in dlogits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            grad[s.b2 + a] += dz;
            let base = s.w2 + a * s.hidden;
            for h in 0..s.hidden {
                grad[base + h] += dz * fwd.hidden[h];
                dh[h] += dz * self.params[base + h];
            }
        }
        for h in 0..s.hidden {
            let dpre = dh[h] * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
            if dpre == 0.0 {
                continue;
            }
            grad[s.b1 + h] += dpre;
            let base = s.w1 + h * d;
            for (i, &x) in feats.iter().enumerate() {
                grad[base + i] += dpre * x;
            }
            for (j, &x) in emb.iter().enumerate() {
                grad[base + s.feat_dim + j] += dpre * x;
                d_emb[j] += dpre * self.params[base + s.feat_dim + j];
            }
        }
    }

    /// Gradient of the value output scaled by `dv`; does not reach the encoder.
    pub fn backward_value(&self, feats: &[f64], emb: &[f64], dv: f64, grad: &mut [f64]) {
        let s = &self.shapes;
        grad[s.vb] += dv;
        for (i, x) in feats.iter().chain(emb).enumerate() {
            grad[s.v + i] += dv * x;
        }
    }

    pub fn backward_embed(&self, w: &[f64], e: &Embedding, d_emb: &[f64], grad: &mut [f64]) {
        let s = &self.shapes;
        match s.mode {
            EncoderMode::Raw => {}
            EncoderMode::LookupTable => {
                for (k, &b) in e.bins.iter().enumerate() {
                    let at = s.table + (k * LOOKUP_BINS + b) * CODE_UNIT;
                    for u in 0..CODE_UNIT {
                        grad[at + u] += d_emb[k * CODE_UNIT + u];
                    }
                }
            }
            EncoderMode::Codebook => {
                let mut da = vec![0.0; CODES];
                for i in 0..CODES {
                    let base = s.codes + i * s.emb_dim;
                    for j in 0..s.emb_dim {
                        da[i] += d_emb[j] * self.params[base + j];
                        grad[base + j] += e.attn[i] * d_emb[j];
                    }
                }
                let mean: f64 = e.attn.iter().zip(&da).map(|(a, g)| a * g).sum();
                for i in 0..CODES {
                    let dz = e.attn[i] * (da[i] - mean);
                    grad[s.enc_b + i] += dz;
                    for k in 0..s.k {
                        grad[s.enc_w + i * s.k + k] += dz * w[k];
                    }
                }
            }
        }
    }

    /// `log π(a | x; w)` summed over `(features, action)` pairs, with its parameter gradient.
    pub fn log_prob_and_grad(&self, steps: &[(Vec<f64>, usize)], w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.embed(w)?;
        let mut grad = vec![0.0; self.shapes.total];
        let mut d_emb = vec![0.0; self.shapes.emb_dim];
        let mut total = 0.0;
        for (x, a) in steps {
            let f = self.forward(x, &e.values);
            total += f.log_probs[*a];
            let mut dl = f.probs.map(|p| -p);
            dl[*a] += 1.0;
            self.backward_step(x, &e.values, &f, &dl, &mut grad, &mut d_emb);
        }
        self.backward_embed(w, &e, &d_emb, &mut grad);
        Ok((total, grad))
    }
}
