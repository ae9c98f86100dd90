//! Input embedding and the contracting / expanding blocks of the encoder and
//! decoder stacks.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    AttentionConfig, AttentionKind, AttentionOutput, CausalMask, MultiHeadAttention,
};
use crate::error::{Error, Result};
use crate::numerics::{
    Conv1d, ConvSpec, ConvTranspose1d, Graph, LayerNorm, Linear, ParamStore, PoolSpec, Shape,
    Tensor, Var, ELU_ALPHA,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Raw value channels; 0 means only positional and calendar terms.
    pub value_channels: usize,
    pub d_model: usize,
    /// Odd kernel of the length-preserving value projection.
    pub value_kernel: usize,
    pub max_len: usize,
    pub time_feature_count: usize,
}

impl EmbeddingConfig {
    pub fn new(value_channels: usize, d_model: usize, time_feature_count: usize, max_len: usize) -> Self {
        Self {
            value_channels,
            d_model,
            value_kernel: 3,
            max_len,
            time_feature_count,
        }
    }
}

/// Fixed sinusoidal table `[1, len, d_model]`: even channels hold
/// `sin(pos / 10000^(2i/d))`, odd channels the matching cosine.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut pe = Tensor::zeros(Shape::new(1, len, d_model));
    for pos in 0..len {
        for c in 0..d_model {
            let pair = (c / 2) as f64 * 2.0;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            pe.set(0, pos, c, if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// Value convolution plus positional table plus linear calendar embedding.
#[derive(Clone, Debug)]
pub struct DataEmbedding {
    pub cfg: EmbeddingConfig,
    value: Option<Conv1d>,
    temporal: Linear,
    positions: Tensor,
}

impl DataEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, cfg: EmbeddingConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.value_kernel % 2 == 0 {
            return Err(Error::Config(format!("value kernel must be odd, got {}", cfg.value_kernel)));
        }
        if cfg.time_feature_count == 0 {
            return Err(Error::Config("embedding needs at least one time feature".into()));
        }
        let value = (cfg.value_channels > 0).then(|| {
            let spec = ConvSpec::new(cfg.value_channels, cfg.d_model, cfg.value_kernel, 1, cfg.value_kernel / 2);
            Conv1d::new(store, &format!("{name}.value"), spec, rng)
        });
        let temporal = Linear::new(store, &format!("{name}.temporal"), cfg.time_feature_count, cfg.d_model, rng);
        let positions = positional_encoding(cfg.max_len, cfg.d_model);
        Ok(Self {
            cfg,
            value,
            temporal,
            positions,
        })
    }

    /// `values` is `[N, L, value_channels]` (absent when there are none),
    /// `marks` the aligned `[N, L, time_feature_count]` calendar features.
    pub fn forward(&self, g: &mut Graph, values: Option<Var>, marks: Var) -> Result<Var> {
        let sm = g.shape(marks);
        if sm.channels() != self.cfg.time_feature_count {
            return Err(Error::Shape(format!(
                "expected {} time features, got {}",
                self.cfg.time_feature_count,
                sm.channels()
            )));
        }
        let len = sm.len();
        if len > self.cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence length {len} exceeds positional table of {}",
                self.cfg.max_len
            )));
        }
        let temporal = self.temporal.forward(g, marks)?;
        let pe = g.constant(self.positions.slice_time(0, len)?);
        let mut out = g.add(temporal, pe)?;
        match (&self.value, values) {
            (Some(conv), Some(v)) => {
                let sv = g.shape(v);
                if sv.batch() != sm.batch() || sv.len() != len {
                    return Err(Error::shape_mismatch("embedding values/timestamps", sv, sm));
                }
                let projected = conv.forward(g, v)?;
                out = g.add(projected, out)?;
            }
            (None, None) => {}
            (Some(_), None) => return Err(Error::Shape("embedding expects value channels".into())),
            (None, Some(v)) => {
                return Err(Error::Shape(format!(
                    "embedding has no value projection but got {}",
                    g.shape(v)
                )))
            }
        }
        Ok(out)
    }
}

/// Layer geometry shared by every block in a stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStackConfig {
    pub depth: usize,
    pub d_model: usize,
    pub distil: ConvSpec,
    pub pool: PoolSpec,
    pub upsample: ConvSpec,
}

impl BlockStackConfig {
    pub fn new(depth: usize, d_model: usize) -> Self {
        Self {
            depth,
            d_model,
            distil: ConvSpec::new(d_model, d_model, 3, 1, 1),
            pool: PoolSpec::new(3, 2, 1),
            upsample: ConvSpec::new(d_model, d_model, 2, 2, 0),
        }
    }

    /// Lengths `L, ceil(L/2), ..., ceil(L/2^depth)` seen along a contracting stack.
    pub fn pyramid_lengths(&self, len: usize) -> Vec<usize> {
        let mut out = vec![len];
        let mut cur = len;
        for _ in 0..self.depth {
            cur = self.pool.output_len(cur).unwrap_or(0);
            out.push(cur);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractingKind {
    ProbSparse,
    Masked,
}

#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub output: Var,
    pub attention: AttentionOutput,
}

/// Self-attention (with residual), Conv1d, LayerNorm, Conv1d, ELU, MaxPool.
#[derive(Clone, Debug)]
pub struct ContractingBlock {
    pub kind: ContractingKind,
    pub attention: MultiHeadAttention,
    first: Conv1d,
    norm: LayerNorm,
    second: Conv1d,
    pool: PoolSpec,
}

impl ContractingBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        stack: &BlockStackConfig,
        attn: AttentionConfig,
        kind: ContractingKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_width(stack, &attn)?;
        let (attn_kind, mask) = match kind {
            ContractingKind::ProbSparse => (AttentionKind::ProbSparse, None),
            ContractingKind::Masked => (AttentionKind::Canonical, Some(CausalMask)),
        };
        let attention = MultiHeadAttention::new(store, &format!("{name}.attn"), attn, attn_kind, mask, rng)?;
        Ok(Self {
            kind,
            attention,
            first: Conv1d::new(store, &format!("{name}.conv1"), stack.distil, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), stack.d_model),
            second: Conv1d::new(store, &format!("{name}.conv2"), stack.distil, rng),
            pool: stack.pool,
        })
    }

    pub fn parameter_count(stack: &BlockStackConfig) -> usize {
        attention_params(stack.d_model) + 2 * conv_params(&stack.distil) + 2 * stack.d_model
    }

    pub fn forward(&self, g: &mut Graph, h: Var, seed: u64) -> Result<BlockOutput> {
        let len = g.shape(h).len();
        if len < 2 {
            return Err(Error::Shape(format!("contracting block needs length >= 2, got {len}")));
        }
        let attention = self.attention.forward(g, h, h, seed)?;
        let x = g.add(h, attention.output)?;
        let x = self.first.forward(g, x)?;
        let x = self.norm.forward(g, x)?;
        let x = self.second.forward(g, x)?;
        let x = g.elu(x, ELU_ALPHA);
        let output = g.maxpool1d(x, self.pool)?;
        Ok(BlockOutput { output, attention })
    }
}

/// Cross-attention (with residual), Conv1d, LayerNorm, ConvTranspose1d, ELU.
#[derive(Clone, Debug)]
pub struct ExpandingBlock {
    pub attention: MultiHeadAttention,
    conv: Conv1d,
    norm: LayerNorm,
    upsample: ConvTranspose1d,
}

impl ExpandingBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        stack: &BlockStackConfig,
        attn: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_width(stack, &attn)?;
        let attention =
            MultiHeadAttention::new(store, &format!("{name}.attn"), attn, AttentionKind::ProbSparse, None, rng)?;
        Ok(Self {
            attention,
            conv: Conv1d::new(store, &format!("{name}.conv"), stack.distil, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), stack.d_model),
            upsample: ConvTranspose1d::new(store, &format!("{name}.upsample"), stack.upsample, rng),
        })
    }

    pub fn parameter_count(stack: &BlockStackConfig) -> usize {
        attention_params(stack.d_model) + conv_params(&stack.distil) + 2 * stack.d_model + conv_params(&stack.upsample)
    }

    pub fn forward(&self, g: &mut Graph, d_prev: Var, e_skip: Var, seed: u64) -> Result<BlockOutput> {
        let attention = self.attention.forward(g, d_prev, e_skip, seed)?;
        let x = g.add(d_prev, attention.output)?;
        let x = self.conv.forward(g, x)?;
        let x = self.norm.forward(g, x)?;
        let x = self.upsample.forward(g, x)?;
        let output = g.elu(x, ELU_ALPHA);
        Ok(BlockOutput { output, attention })
    }
}

fn check_width(stack: &BlockStackConfig, attn: &AttentionConfig) -> Result<()> {
    if attn.d_model != stack.d_model {
        return Err(Error::Config(format!(
            "attention width {} differs from block width {}",
            attn.d_model, stack.d_model
        )));
    }
    Ok(())
}

fn attention_params(d: usize) -> usize {
    4 * (d * d + d)
}

fn conv_params(spec: &ConvSpec) -> usize {
    spec.in_channels * spec.out_channels * spec.kernel_size + spec.out_channels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff::{self, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn attn(d: usize) -> AttentionConfig {
        AttentionConfig::new(d, 2).unwrap()
    }

    #[test]
    fn positional_row_zero_alternates() {
        let pe = positional_encoding(5, 6);
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        // pos 1, channel pair 0: sin(1), cos(1)
        assert_eq!(pe.at(0, 1, 0), 1f64.sin());
        assert_eq!(pe.at(0, 1, 1), 1f64.cos());
        // pos 1, channel pair 2: angle 1 / 10000^(2/6)
        let angle = 1.0 / 10000f64.powf(2.0 / 6.0);
        assert!((pe.at(0, 1, 2) - angle.sin()).abs() < 1e-15);
    }

    #[test]
    fn zero_inputs_embed_to_positions() {
        let mut store = ParamStore::new();
        let emb = DataEmbedding::new(&mut store, "emb", EmbeddingConfig::new(2, 4, 4, 128), &mut rng(0)).unwrap();
        // zero the biases so zero inputs contribute nothing
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with(".bias") {
                store.value_mut(id).data_mut().fill(0.0);
            }
        }
        for len in [24, 48, 96] {
            let mut g = Graph::with_params(&store);
            let v = g.constant(Tensor::zeros(Shape::new(2, len, 2)));
            let m = g.constant(Tensor::zeros(Shape::new(2, len, 4)));
            let out = emb.forward(&mut g, Some(v), m).unwrap();
            assert_eq!(g.shape(out).0, [2, len, 4]);
            let pe = positional_encoding(len, 4);
            for b in 0..2 {
                for i in 0..len {
                    for c in 0..4 {
                        assert_eq!(g.value(out).at(b, i, c), pe.at(0, i, c));
                    }
                }
            }
        }
    }

    #[test]
    fn embedding_rejects_misaligned_marks() {
        let mut store = ParamStore::new();
        let emb = DataEmbedding::new(&mut store, "emb", EmbeddingConfig::new(1, 4, 4, 64), &mut rng(0)).unwrap();
        let mut g = Graph::with_params(&store);
        let v = g.constant(Tensor::zeros(Shape::new(1, 10, 1)));
        let m = g.constant(Tensor::zeros(Shape::new(1, 9, 4)));
        assert!(emb.forward(&mut g, Some(v), m).is_err());
        let m = g.constant(Tensor::zeros(Shape::new(1, 10, 4)));
        assert!(emb.forward(&mut g, None, m).is_err());
    }

    fn run_contracting(kind: ContractingKind, len: usize, d: usize) -> (Vec<usize>, Tensor, Option<Tensor>) {
        let stack = BlockStackConfig::new(1, d);
        let mut store = ParamStore::new();
        let block = ContractingBlock::new(&mut store, "blk", &stack, attn(d), kind, &mut rng(3)).unwrap();
        let mut g = Graph::with_params(&store);
        let x = g.constant(Tensor::randn(Shape::new(2, len, d), &mut rng(4)));
        let out = block.forward(&mut g, x, 0).unwrap();
        let w = out.attention.heads.first().map(|h| g.value(h.weights).clone());
        (g.shape(out.output).0.to_vec(), g.value(out.output).clone(), w)
    }

    #[test]
    fn contracting_lengths() {
        assert_eq!(run_contracting(ContractingKind::ProbSparse, 96, 4).0, vec![2, 48, 4]);
        assert_eq!(run_contracting(ContractingKind::ProbSparse, 7, 4).0, vec![2, 4, 4]);
        assert_eq!(run_contracting(ContractingKind::Masked, 24, 4).0, vec![2, 12, 4]);
        for len in [8, 16] {
            assert_eq!(run_contracting(ContractingKind::Masked, len, 4).0[1], len / 2);
        }
    }

    #[test]
    fn contracting_rejects_single_step() {
        let stack = BlockStackConfig::new(1, 4);
        let mut store = ParamStore::new();
        let block = ContractingBlock::new(&mut store, "blk", &stack, attn(4), ContractingKind::Masked, &mut rng(3)).unwrap();
        let mut g = Graph::with_params(&store);
        let x = g.constant(Tensor::zeros(Shape::new(1, 1, 4)));
        assert!(block.forward(&mut g, x, 0).is_err());
    }

    #[test]
    fn masked_block_attention_is_causal() {
        let (_, _, w) = run_contracting(ContractingKind::Masked, 10, 4);
        let w = w.unwrap();
        for b in 0..2 {
            for i in 0..10 {
                for j in i + 1..10 {
                    assert_eq!(w.at(b, i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn expanding_doubles_and_broadcasts_single_skip() {
        let stack = BlockStackConfig::new(1, 4);
        let mut store = ParamStore::new();
        let block = ExpandingBlock::new(&mut store, "up", &stack, attn(4), &mut rng(5)).unwrap();
        let mut g = Graph::with_params(&store);
        let d = g.constant(Tensor::randn(Shape::new(2, 18, 4), &mut rng(6)));
        let e = g.constant(Tensor::randn(Shape::new(2, 36, 4), &mut rng(7)));
        let out = block.forward(&mut g, d, e, 0).unwrap();
        assert_eq!(g.shape(out.output).0, [2, 36, 4]);

        let e1 = g.constant(Tensor::randn(Shape::new(2, 1, 4), &mut rng(8)));
        let out = block.forward(&mut g, d, e1, 0).unwrap();
        let a = g.value(out.attention.output);
        for b in 0..2 {
            for i in 1..18 {
                for c in 0..4 {
                    assert!((a.at(b, i, c) - a.at(b, 0, c)).abs() < 1e-14);
                }
            }
        }

        let bad = g.constant(Tensor::zeros(Shape::new(2, 36, 3)));
        assert!(block.forward(&mut g, d, bad, 0).is_err());
    }

    #[test]
    fn expanding_restores_contracted_even_length() {
        let stack = BlockStackConfig::new(1, 4);
        let mut store = ParamStore::new();
        let down = ContractingBlock::new(&mut store, "down", &stack, attn(4), ContractingKind::ProbSparse, &mut rng(1)).unwrap();
        let up = ExpandingBlock::new(&mut store, "up", &stack, attn(4), &mut rng(2)).unwrap();
        for len in [2, 8, 14, 40] {
            let mut g = Graph::with_params(&store);
            let x = g.constant(Tensor::randn(Shape::new(1, len, 4), &mut rng(len as u64)));
            let h = down.forward(&mut g, x, 0).unwrap().output;
            let y = up.forward(&mut g, h, x, 0).unwrap().output;
            assert_eq!(g.shape(y).len(), len);
        }
    }

    #[test]
    fn pyramid_lengths_halve_with_ceiling() {
        let stack = BlockStackConfig::new(4, 8);
        assert_eq!(stack.pyramid_lengths(72), vec![72, 36, 18, 9, 5]);
        assert_eq!(stack.pyramid_lengths(7), vec![7, 4, 2, 1, 1]);
    }

    #[test]
    fn parameter_counts_match_store() {
        for d in [4, 8, 16] {
            let stack = BlockStackConfig::new(1, d);
            let mut store = ParamStore::new();
            ContractingBlock::new(&mut store, "c", &stack, attn(d), ContractingKind::ProbSparse, &mut rng(0)).unwrap();
            assert_eq!(store.scalar_count(), ContractingBlock::parameter_count(&stack));
            let mut store = ParamStore::new();
            ExpandingBlock::new(&mut store, "e", &stack, attn(d), &mut rng(0)).unwrap();
            assert_eq!(store.scalar_count(), ExpandingBlock::parameter_count(&stack));
        }
        // d = 4: attention 80, two k3 convs 2 * 52, norm 8
        assert_eq!(ContractingBlock::parameter_count(&BlockStackConfig::new(1, 4)), 192);
        // d = 4: attention 80, conv 52, norm 8, k2 deconv 36
        assert_eq!(ExpandingBlock::parameter_count(&BlockStackConfig::new(1, 4)), 176);
    }

    #[test]
    fn outputs_finite_for_wide_inputs() {
        let stack = BlockStackConfig::new(1, 4);
        let mut store = ParamStore::new();
        let p = ContractingBlock::new(&mut store, "p", &stack, attn(4), ContractingKind::ProbSparse, &mut rng(0)).unwrap();
        let m = ContractingBlock::new(&mut store, "m", &stack, attn(4), ContractingKind::Masked, &mut rng(1)).unwrap();
        let e = ExpandingBlock::new(&mut store, "e", &stack, attn(4), &mut rng(2)).unwrap();
        for seed in 0..100 {
            let mut r = rng(seed);
            let mut g = Graph::with_params(&store);
            let x = g.constant(Tensor::uniform(Shape::new(2, 16, 4), -10.0, 10.0, &mut r));
            let a = p.forward(&mut g, x, seed).unwrap().output;
            let b = m.forward(&mut g, x, seed).unwrap().output;
            let c = e.forward(&mut g, a, x, seed).unwrap().output;
            for v in [a, b, c] {
                assert!(g.value(v).all_finite(), "seed {seed}");
            }
        }
    }

    #[test]
    fn blocks_pass_gradcheck() {
        let stack = BlockStackConfig::new(1, 4);
        let cfg = attn(4).with_sampling_factor(1.0);
        let mut store = ParamStore::new();
        let block = ContractingBlock::new(&mut store, "c", &stack, cfg.clone(), ContractingKind::ProbSparse, &mut rng(0)).unwrap();
        let x = Tensor::randn(Shape::new(1, 8, 4), &mut rng(1));
        let w = Tensor::randn(Shape::new(1, 4, 4), &mut rng(2));
        let report = finite_diff::check_with_params(
            |g, v| {
                let y = block.forward(g, v[0], 0)?.output;
                let wv = g.constant(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            },
            &[x],
            &store,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.passes(DEFAULT_TOLERANCE), "{report:?}");
    }
}
