//! Canonical, causally masked, and ProbSparse multi-head attention.
//!
//! ProbSparse attention computes full softmax rows only for the `u` most
//! "dominant" queries, `u = ceil(c ln L_Q)`. Dominance is measured as
//! max-minus-mean of the scaled scores against a random key sample of size
//! `ceil(c ln L_K)`. Every other query row receives the mean of `V` (the
//! running mean up to its own position when a causal mask is in force).

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, ParamStore, Tensor, Var};

pub const DEFAULT_SAMPLING_FACTOR: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// `c` in `u = ceil(c ln L_Q)` and in the key-sample size.
    pub sampling_factor: f64,
    /// Salt mixed into every query-sampling stream of a layer.
    pub seed: u64,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize) -> Result<Self> {
        let cfg = Self {
            d_model,
            n_heads,
            sampling_factor: DEFAULT_SAMPLING_FACTOR,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_sampling_factor(mut self, c: f64) -> Self {
        self.sampling_factor = c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible into {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(self.sampling_factor > 0.0 && self.sampling_factor.is_finite()) {
            return Err(Error::Config(format!(
                "sampling factor must be positive, got {}",
                self.sampling_factor
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn log_count(&self, len: usize) -> usize {
        let raw = (self.sampling_factor * (len as f64).ln()).ceil();
        (raw.max(1.0) as usize).min(len.max(1))
    }

    /// `u = ceil(c ln L_Q)` clamped to `[1, L_Q]`.
    pub fn active_queries(&self, l_q: usize) -> usize {
        self.log_count(l_q)
    }

    /// Size of the key sample used for scoring, clamped to `[1, L_K]`.
    pub fn sampled_keys(&self, l_k: usize) -> usize {
        self.log_count(l_k)
    }
}

/// Causal visibility: query `i` may attend key `j` iff `j <= i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CausalMask;

impl CausalMask {
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        j <= i
    }

    /// Highest visible key per flattened `(batch, query)` row.
    pub fn row_limits(&self, batch: usize, positions: &[usize]) -> Vec<usize> {
        (0..batch).flat_map(|_| positions.iter().copied()).collect()
    }
}

/// One head's result. `weights` holds the realised softmax rows
/// (`[N, L_Q, L_K]` for dense heads, `[N, u, L_K]` for ProbSparse ones).
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub output: Var,
    pub weights: Var,
    /// Per batch item, the ascending query positions given full attention.
    pub selected: Option<Vec<Vec<usize>>>,
}

fn check_qkv(g: &Graph, q: Var, k: Var, v: Var) -> Result<()> {
    let (sq, sk, sv) = (g.shape(q), g.shape(k), g.shape(v));
    if sq.batch() != sk.batch() || sq.channels() != sk.channels() {
        return Err(Error::shape_mismatch("attention q/k", sq, sk));
    }
    if sk.batch() != sv.batch() || sk.len() != sv.len() {
        return Err(Error::shape_mismatch("attention k/v", sk, sv));
    }
    if sk.len() == 0 {
        return Err(Error::Shape("attention over zero keys".into()));
    }
    Ok(())
}

fn scaled_scores(g: &mut Graph, q: Var, k: Var) -> Result<Var> {
    let d = g.shape(q).channels();
    let kt = g.transpose(k);
    let s = g.matmul(q, kt)?;
    Ok(g.scale(s, 1.0 / (d as f64).sqrt()))
}

/// `Softmax(Q K^T / sqrt(d)) V` for a single head.
pub fn scaled_dot_product(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<CausalMask>,
) -> Result<HeadOutput> {
    check_qkv(g, q, k, v)?;
    let scores = scaled_scores(g, q, k)?;
    let weights = match mask {
        Some(m) => {
            let (n, lq, lk) = (g.shape(q).batch(), g.shape(q).len(), g.shape(k).len());
            if lq != lk {
                return Err(Error::Shape(format!(
                    "causal mask needs equal query/key lengths, got {lq} and {lk}"
                )));
            }
            let positions: Vec<usize> = (0..lq).collect();
            g.masked_softmax(scores, &m.row_limits(n, &positions))?
        }
        None => g.softmax(scores, 2)?,
    };
    let output = g.matmul(weights, v)?;
    Ok(HeadOutput {
        output,
        weights,
        selected: None,
    })
}

/// Draws `count` distinct key positions out of `l_k`, ascending.
pub fn sample_keys(l_k: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if count >= l_k {
        return (0..l_k).collect();
    }
    let mut picked = index::sample(rng, l_k, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Max-minus-mean of `q_i . k_j / sqrt(d)` over the sampled keys, per batch
/// item and query. With `causal`, query `i` only sees sampled keys `j <= i`
/// and scores 0 when it sees none.
pub fn sparsity_scores(q: &Tensor, k: &Tensor, sample: &[usize], causal: bool) -> Vec<Vec<f64>> {
    let [n, lq, d] = q.dims();
    let scale = 1.0 / (d as f64).sqrt();
    (0..n)
        .map(|b| {
            (0..lq)
                .map(|i| {
                    let qi = &q.data()[q.offset(b, i, 0)..q.offset(b, i, 0) + d];
                    let mut max = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for &j in sample.iter().filter(|&&j| !causal || j <= i) {
                        let kj = &k.data()[k.offset(b, j, 0)..k.offset(b, j, 0) + d];
                        let s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                        max = max.max(s);
                        sum += s;
                        count += 1;
                    }
                    if count == 0 {
                        0.0
                    } else {
                        max - sum / count as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Indices of the `u` highest scores per batch item, returned ascending.
/// Equal scores prefer the lower index.
pub fn select_dominant(scores: &[Vec<f64>], u: usize) -> Vec<Vec<usize>> {
    scores
        .iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut top: Vec<usize> = order.into_iter().take(u).collect();
            top.sort_unstable();
            top
        })
        .collect()
}

/// ProbSparse attention for a single head.
pub fn probsparse_head(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    cfg: &AttentionConfig,
    mask: Option<CausalMask>,
    rng: &mut ChaCha8Rng,
) -> Result<HeadOutput> {
    check_qkv(g, q, k, v)?;
    let (n, lq, lk) = (g.shape(q).batch(), g.shape(q).len(), g.shape(k).len());
    if mask.is_some() && lq != lk {
        return Err(Error::Shape(format!(
            "causal mask needs equal query/key lengths, got {lq} and {lk}"
        )));
    }
    let u = cfg.active_queries(lq);
    let selected = if u >= lq {
        vec![(0..lq).collect::<Vec<_>>(); n]
    } else {
        let sample = sample_keys(lk, cfg.sampled_keys(lk), rng);
        let scores = sparsity_scores(g.value(q), g.value(k), &sample, mask.is_some());
        select_dominant(&scores, u)
    };

    let q_bar = g.gather_time(q, selected.clone())?;
    let scores = scaled_scores(g, q_bar, k)?;
    let weights = match mask {
        Some(_) => {
            let limits: Vec<usize> = selected.iter().flatten().copied().collect();
            g.masked_softmax(scores, &limits)?
        }
        None => g.softmax(scores, 2)?,
    };
    let attended = g.matmul(weights, v)?;
    let fallback = match mask {
        Some(_) => g.cummean_time(v),
        None => {
            let m = g.mean_time(v)?;
            g.repeat_time(m, lq)?
        }
    };
    let output = g.scatter_time(fallback, attended, selected.clone())?;
    Ok(HeadOutput {
        output,
        weights,
        selected: Some(selected),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    Canonical,
    ProbSparse,
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub heads: Vec<HeadOutput>,
}

/// Learned Q/K/V projections, per-head attention, concatenation, and an
/// output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub kind: AttentionKind,
    pub mask: Option<CausalMask>,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: AttentionConfig,
        kind: AttentionKind,
        mask: Option<CausalMask>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
            cfg,
            kind,
            mask,
        })
    }

    /// Same parameters, different attention rule.
    pub fn with_kind(&self, kind: AttentionKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    /// Attends `queries` over `keys_values`. `seed` drives query sampling for
    /// this call and is mixed with the layer salt.
    pub fn forward(&self, g: &mut Graph, queries: Var, keys_values: Var, seed: u64) -> Result<AttentionOutput> {
        let (sq, skv) = (g.shape(queries), g.shape(keys_values));
        let d = self.cfg.d_model;
        if sq.channels() != d || skv.channels() != d {
            return Err(Error::shape_mismatch("attention channels", sq, skv));
        }
        if sq.batch() != skv.batch() {
            return Err(Error::shape_mismatch("attention batch", sq, skv));
        }
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, keys_values)?;
        let v = self.value.forward(g, keys_values)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, seed));
        let dh = self.cfg.d_head();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = g.slice_channels(q, h * dh, dh)?;
            let kh = g.slice_channels(k, h * dh, dh)?;
            let vh = g.slice_channels(v, h * dh, dh)?;
            let head = match self.kind {
                AttentionKind::Canonical => scaled_dot_product(g, qh, kh, vh, self.mask)?,
                AttentionKind::ProbSparse => {
                    probsparse_head(g, qh, kh, vh, &self.cfg, self.mask, &mut rng)?
                }
            };
            heads.push(head);
        }
        let merged = if heads.len() == 1 {
            heads[0].output
        } else {
            let parts: Vec<Var> = heads.iter().map(|h| h.output).collect();
            g.concat_channels(&parts)?
        };
        let output = self.out.forward(g, merged)?;
        Ok(AttentionOutput { output, heads })
    }
}

/// SplitMix64-style combination of two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
