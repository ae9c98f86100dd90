//! The full encoder/decoder: two contracting encoders whose outputs are
//! concatenated into an embedding pyramid, a decoder that expands back to
//! full resolution with skip connections into that pyramid, and a linear
//! head producing past reconstructions and future forecasts.

mod checkpoint;
mod loss;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{combined_loss, metrics, LossTerms, MetricAccumulator, Metrics};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{mix_seed, AttentionConfig, AttentionKind, AttentionOutput, MultiHeadAttention};
use crate::blocks::{BlockStackConfig, ContractingBlock, ContractingKind, DataEmbedding, EmbeddingConfig, ExpandingBlock};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// History length `T`.
    pub history: usize,
    /// Forecast horizon `tau`.
    pub horizon: usize,
    /// Past-only predictor channels `M`.
    pub predictors: usize,
    /// Target channels `O`.
    pub targets: usize,
    /// Value channels known over the horizon (beyond calendar features).
    #[serde(default)]
    pub future_predictors: usize,
    pub time_features: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Encoder depth `I`; the decoder has as many expanding blocks.
    pub depth: usize,
    pub sampling_factor: f64,
    /// Reconstruction weight in the combined loss.
    pub alpha: f64,
    /// Route the coarsest embedding to every decoder level.
    #[serde(default)]
    pub disable_skips: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(history: usize, horizon: usize, predictors: usize, targets: usize) -> Self {
        Self {
            history,
            horizon,
            predictors,
            targets,
            future_predictors: 0,
            time_features: 4,
            d_model: 32,
            n_heads: 4,
            depth: 2,
            sampling_factor: crate::attention::DEFAULT_SAMPLING_FACTOR,
            alpha: 0.7,
            disable_skips: false,
            seed: 0,
        }
    }

    /// Same model trained without the reconstruction term.
    pub fn alpha_zero(mut self) -> Self {
        self.alpha = 0.0;
        self
    }

    pub fn without_skips(mut self) -> Self {
        self.disable_skips = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Config("history and horizon must be positive".into()));
        }
        if self.targets == 0 {
            return Err(Error::Config("at least one target channel is required".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        if self.depth >= usize::BITS as usize - 1 {
            return Err(Error::Config(format!("encoder depth {} is too large", self.depth)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        self.attention(0).validate()
    }

    fn attention(&self, salt: u64) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            sampling_factor: self.sampling_factor,
            seed: mix_seed(self.seed, salt),
        }
    }

    fn unit(&self) -> usize {
        1 << self.depth
    }

    /// History length after left padding to a multiple of `2^depth`.
    pub fn padded_history(&self) -> usize {
        self.history.div_ceil(self.unit()) * self.unit()
    }

    /// Horizon length after right padding to a multiple of `2^depth`.
    pub fn padded_horizon(&self) -> usize {
        self.horizon.div_ceil(self.unit()) * self.unit()
    }

    pub fn history_pad(&self) -> usize {
        self.padded_history() - self.history
    }

    pub fn horizon_pad(&self) -> usize {
        self.padded_horizon() - self.horizon
    }

    /// Channels of the past encoder input: predictors followed by targets.
    pub fn past_channels(&self) -> usize {
        self.predictors + self.targets
    }

    /// Pyramid lengths `(T+tau) / 2^i` on the padded grid, `i = 0..=depth`.
    pub fn pyramid_lengths(&self) -> Vec<usize> {
        let total = self.padded_history() + self.padded_horizon();
        (0..=self.depth).map(|i| total >> i).collect()
    }
}

/// Everything the model may see for one batch. Future targets have no slot.
#[derive(Clone, Debug)]
pub struct ModelInput {
    /// `[N, T, M + O]`, predictors first.
    pub past: Tensor,
    /// `[N, T, F]` calendar features.
    pub past_marks: Tensor,
    /// `[N, tau, future_predictors]`, absent when there are none.
    pub future: Option<Tensor>,
    /// `[N, tau, F]` calendar features.
    pub future_marks: Tensor,
}

impl ModelInput {
    pub fn batch(&self) -> usize {
        self.past.dims()[0]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForecastOutput {
    /// `[N, T, O]`
    pub y_past: Var,
    /// `[N, tau, O]`
    pub y_fut: Var,
}

/// Concatenated encoder embeddings `e_0 ..= e_I` with the past share of
/// each level's length.
#[derive(Clone, Debug)]
pub struct EmbeddingPyramid {
    pub entries: Vec<Var>,
    pub past_lengths: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: ForecastOutput,
    pub pyramid: EmbeddingPyramid,
    /// `d_0 ..= d_I`.
    pub decoder: Vec<Var>,
    /// Attention of each future-encoder block, shallowest first.
    pub future_attention: Vec<AttentionOutput>,
}

#[derive(Clone, Debug)]
pub struct Yformer {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    past_embedding: DataEmbedding,
    future_embedding: DataEmbedding,
    past_blocks: Vec<ContractingBlock>,
    future_blocks: Vec<ContractingBlock>,
    decoder_attention: MultiHeadAttention,
    expanding: Vec<ExpandingBlock>,
    head: Linear,
}

impl Yformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let d = cfg.d_model;
        let max_len = cfg.padded_history().max(cfg.padded_horizon());
        let stack = BlockStackConfig::new(cfg.depth, d);

        let past_embedding = DataEmbedding::new(
            &mut params,
            "past.embed",
            EmbeddingConfig::new(cfg.past_channels(), d, cfg.time_features, max_len),
            &mut rng,
        )?;
        let future_embedding = DataEmbedding::new(
            &mut params,
            "future.embed",
            EmbeddingConfig::new(cfg.future_predictors, d, cfg.time_features, max_len),
            &mut rng,
        )?;

        let mut salt = 0u64;
        let mut next = || {
            salt += 1;
            salt
        };
        let mut past_blocks = Vec::with_capacity(cfg.depth);
        let mut future_blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            past_blocks.push(ContractingBlock::new(
                &mut params,
                &format!("past.block{i}"),
                &stack,
                cfg.attention(next()),
                ContractingKind::ProbSparse,
                &mut rng,
            )?);
            future_blocks.push(ContractingBlock::new(
                &mut params,
                &format!("future.block{i}"),
                &stack,
                cfg.attention(next()),
                ContractingKind::Masked,
                &mut rng,
            )?);
        }
        let decoder_attention = MultiHeadAttention::new(
            &mut params,
            "decoder.attn",
            cfg.attention(next()),
            AttentionKind::Canonical,
            None,
            &mut rng,
        )?;
        let expanding = (0..cfg.depth)
            .map(|i| ExpandingBlock::new(&mut params, &format!("decoder.block{i}"), &stack, cfg.attention(next()), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut params, "head", d, cfg.targets, &mut rng);

        Ok(Self {
            cfg,
            params,
            past_embedding,
            future_embedding,
            past_blocks,
            future_blocks,
            decoder_attention,
            expanding,
            head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::with_params(&self.params)
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let cfg = &self.cfg;
        let n = input.batch();
        let expect = |what: &str, t: &Tensor, len: usize, ch: usize| -> Result<()> {
            if t.dims() != [n, len, ch] {
                return Err(Error::Shape(format!(
                    "{what}: expected [{n}x{len}x{ch}], got {}",
                    t.shape()
                )));
            }
            Ok(())
        };
        expect("past", &input.past, cfg.history, cfg.past_channels())?;
        expect("past marks", &input.past_marks, cfg.history, cfg.time_features)?;
        expect("future marks", &input.future_marks, cfg.horizon, cfg.time_features)?;
        match (&input.future, cfg.future_predictors) {
            (None, 0) => Ok(()),
            (Some(f), m) if m > 0 => expect("future predictors", f, cfg.horizon, m),
            (Some(_), _) => Err(Error::Shape("model has no future predictor channels".into())),
            (None, m) => Err(Error::Shape(format!("model expects {m} future predictor channels"))),
        }
    }

    pub fn forward(&self, g: &mut Graph, input: &ModelInput, seed: u64) -> Result<ForecastOutput> {
        Ok(self.forward_traced(g, input, seed)?.output)
    }

    /// Forward pass keeping every intermediate level. `seed` drives query
    /// sampling in all ProbSparse layers.
    pub fn forward_traced(&self, g: &mut Graph, input: &ModelInput, seed: u64) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let cfg = &self.cfg;
        let (hp, fp) = (cfg.history_pad(), cfg.horizon_pad());

        let past = g.constant(input.past.pad_time_front(hp));
        let past_marks = g.constant(input.past_marks.pad_time_front(hp));
        let future = input.future.as_ref().map(|f| g.constant(f.pad_time_back(fp)));
        let future_marks = g.constant(input.future_marks.pad_time_back(fp));

        let mut past_h = self.past_embedding.forward(g, Some(past), past_marks)?;
        let mut fut_h = self.future_embedding.forward(g, future, future_marks)?;
        let mut entries = vec![g.concat_time(past_h, fut_h)?];
        let mut past_lengths = vec![g.shape(past_h).len()];
        let mut future_attention = Vec::with_capacity(cfg.depth);
        for (p, f) in self.past_blocks.iter().zip(&self.future_blocks) {
            past_h = p.forward(g, past_h, seed)?.output;
            let out = f.forward(g, fut_h, seed)?;
            fut_h = out.output;
            future_attention.push(out.attention);
            entries.push(g.concat_time(past_h, fut_h)?);
            past_lengths.push(g.shape(past_h).len());
        }

        let coarsest = entries[cfg.depth];
        let mut d = self.decoder_attention.forward(g, coarsest, coarsest, seed)?.output;
        let mut decoder = vec![d];
        for (i, block) in self.expanding.iter().enumerate() {
            let skip = if cfg.disable_skips {
                coarsest
            } else {
                entries[cfg.depth - 1 - i]
            };
            d = block.forward(g, d, skip, seed)?.output;
            decoder.push(d);
        }

        let y = self.head.forward(g, d)?;
        let y_past = g.slice_time(y, hp, cfg.history)?;
        let y_fut = g.slice_time(y, cfg.padded_history(), cfg.horizon)?;
        Ok(ForwardTrace {
            output: ForecastOutput { y_past, y_fut },
            pyramid: EmbeddingPyramid { entries, past_lengths },
            decoder,
            future_attention,
        })
    }

    /// Forward-only prediction returning `(y_past, y_fut)` values.
    pub fn predict(&self, input: &ModelInput, seed: u64) -> Result<(Tensor, Tensor)> {
        let mut g = self.graph();
        let out = self.forward(&mut g, input, seed)?;
        Ok((g.value(out.y_past).clone(), g.value(out.y_fut).clone()))
    }
}

/// Learnable scalar count of the model described by `cfg`.
pub fn parameter_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(Yformer::new(cfg.clone())?.parameter_count())
}

#[cfg(test)]
mod tests;
