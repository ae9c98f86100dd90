//! Finite-difference gradient suite over every graph operation, the
//! attention layers and the composite blocks.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{probsparse_head, scaled_dot_product, AttentionConfig, AttentionKind, CausalMask, MultiHeadAttention};
use crate::blocks::{BlockStackConfig, ContractingBlock, ContractingKind, DataEmbedding, EmbeddingConfig, ExpandingBlock};
use crate::error::Result;
use crate::model::{combined_loss, ModelConfig, ModelInput, Yformer};
use crate::numerics::finite_diff::{self, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::numerics::{ConvSpec, Graph, ParamStore, PoolSpec, Shape, Tensor, Var};

pub const DEFAULT_INSTANCES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteGroup {
    Ops,
    Attention,
    Blocks,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub group: SuiteGroup,
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub max_relative_error: f64,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub tolerance: f64,
    pub step: f64,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

type Case = (SuiteGroup, &'static str, fn(u64) -> Result<GradCheckReport>);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(r: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor {
    Tensor::randn(Shape(dims), r)
}

/// Reduces an output to a scalar with fixed random weights so every
/// output element contributes a distinct gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(Tensor::randn(g.shape(y), &mut rng(seed ^ 0x9e37)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn op_check(seed: u64, inputs: Vec<Tensor>, op: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<GradCheckReport> {
    finite_diff::check(
        |g, v| {
            let y = op(g, v)?;
            project(g, y, seed)
        },
        &inputs,
        DEFAULT_STEP,
    )
}

fn param_check(
    seed: u64,
    inputs: Vec<Tensor>,
    store: &ParamStore,
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    finite_diff::check_with_params(
        |g, v| {
            let y = op(g, v)?;
            project(g, y, seed)
        },
        &inputs,
        store,
        DEFAULT_STEP,
    )
}

fn cases() -> Vec<Case> {
    use SuiteGroup::*;
    vec![
        (Ops, "matmul", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 3, 4]), randn(r, [2, 4, 2])], |g, v| g.matmul(v[0], v[1]))
        }),
        (Ops, "transpose", |s| op_check(s, vec![randn(&mut rng(s), [2, 3, 4])], |g, v| Ok(g.transpose(v[0])))),
        (Ops, "softmax", |s| {
            op_check(s, vec![randn(&mut rng(s), [2, 3, 4])], |g, v| {
                let a = g.softmax(v[0], 0)?;
                let b = g.softmax(a, 1)?;
                g.softmax(b, 2)
            })
        }),
        (Ops, "masked_softmax", |s| {
            op_check(s, vec![randn(&mut rng(s), [2, 3, 3])], |g, v| g.masked_softmax(v[0], &[0, 1, 2, 0, 1, 2]))
        }),
        (Ops, "conv1d", |s| {
            let r = &mut rng(s);
            let spec = ConvSpec::new(2, 3, 3, 2, 1);
            op_check(s, vec![randn(r, [2, 7, 2]), randn(r, [3, 2, 3]), randn(r, [1, 1, 3])], move |g, v| {
                g.conv1d(v[0], v[1], v[2], spec)
            })
        }),
        (Ops, "conv_transpose1d", |s| {
            let r = &mut rng(s);
            let spec = ConvSpec::new(2, 3, 3, 2, 1);
            op_check(s, vec![randn(r, [2, 5, 2]), randn(r, [2, 3, 3]), randn(r, [1, 1, 3])], move |g, v| {
                g.conv_transpose1d(v[0], v[1], v[2], spec)
            })
        }),
        (Ops, "maxpool1d", |s| {
            op_check(s, vec![randn(&mut rng(s), [2, 9, 3])], |g, v| g.maxpool1d(v[0], PoolSpec::new(3, 2, 1)))
        }),
        (Ops, "layer_norm", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 3, 5]), randn(r, [1, 1, 5]), randn(r, [1, 1, 5])], |g, v| {
                g.layer_norm(v[0], v[1], v[2], 1e-5)
            })
        }),
        (Ops, "elu", |s| op_check(s, vec![randn(&mut rng(s), [2, 4, 3])], |g, v| Ok(g.elu(v[0], 1.0)))),
        (Ops, "linear", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 3, 4]), randn(r, [1, 4, 2]), randn(r, [1, 1, 2])], |g, v| {
                g.linear(v[0], v[1], v[2])
            })
        }),
        (Ops, "concat_slice", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 3, 4]), randn(r, [2, 2, 4])], |g, v| {
                let t = g.concat_time(v[0], v[1])?;
                let t = g.slice_time(t, 1, 3)?;
                let a = g.slice_channels(t, 0, 1)?;
                let b = g.slice_channels(t, 2, 2)?;
                g.concat_channels(&[b, a])
            })
        }),
        (Ops, "gather_scatter", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 5, 3]), randn(r, [2, 5, 3])], |g, v| {
                let rows = g.gather_time(v[0], vec![vec![4, 1], vec![0, 2]])?;
                g.scatter_time(v[1], rows, vec![vec![0, 3], vec![4, 1]])
            })
        }),
        (Ops, "time_means", |s| {
            op_check(s, vec![randn(&mut rng(s), [2, 4, 3])], |g, v| {
                let m = g.mean_time(v[0])?;
                let m = g.repeat_time(m, 4)?;
                let c = g.cummean_time(v[0]);
                g.add(m, c)
            })
        }),
        (Ops, "arithmetic", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 3, 4]), randn(r, [1, 3, 1])], |g, v| {
                let a = g.mul(v[0], v[1])?;
                let b = g.sub(a, v[1])?;
                let c = g.square(b);
                let d = g.scale(c, 0.3);
                g.add(d, v[0])
            })
        }),
        (Ops, "reductions", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 3, 4]), randn(r, [2, 3, 4])], |g, v| {
                let a = g.mse(v[0], v[1])?;
                let b = g.mean(v[0]);
                let c = g.mul(a, b)?;
                let d = g.sum(v[1]);
                g.add(c, d)
            })
        }),
        (Attention, "canonical", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 5, 3]), randn(r, [2, 6, 3]), randn(r, [2, 6, 2])], |g, v| {
                Ok(scaled_dot_product(g, v[0], v[1], v[2], None)?.output)
            })
        }),
        (Attention, "canonical_masked", |s| {
            let r = &mut rng(s);
            op_check(s, vec![randn(r, [2, 5, 3]), randn(r, [2, 5, 3]), randn(r, [2, 5, 2])], |g, v| {
                Ok(scaled_dot_product(g, v[0], v[1], v[2], Some(CausalMask))?.output)
            })
        }),
        (Attention, "probsparse", |s| {
            let r = &mut rng(s);
            let cfg = AttentionConfig::new(4, 1)?.with_sampling_factor(1.0);
            op_check(s, vec![randn(r, [2, 8, 4]), randn(r, [2, 8, 4]), randn(r, [2, 8, 4])], move |g, v| {
                Ok(probsparse_head(g, v[0], v[1], v[2], &cfg, None, &mut rng(s))?.output)
            })
        }),
        (Attention, "probsparse_masked", |s| {
            let r = &mut rng(s);
            let cfg = AttentionConfig::new(4, 1)?.with_sampling_factor(1.0);
            op_check(s, vec![randn(r, [2, 8, 4]), randn(r, [2, 8, 4]), randn(r, [2, 8, 4])], move |g, v| {
                Ok(probsparse_head(g, v[0], v[1], v[2], &cfg, Some(CausalMask), &mut rng(s))?.output)
            })
        }),
        (Attention, "multi_head", |s| {
            let r = &mut rng(s);
            let mut store = ParamStore::new();
            let cfg = AttentionConfig::new(4, 2)?.with_sampling_factor(1.0).with_seed(s);
            let mha = MultiHeadAttention::new(&mut store, "mha", cfg, AttentionKind::ProbSparse, None, r)?;
            param_check(s, vec![randn(r, [1, 8, 4]), randn(r, [1, 6, 4])], &store, |g, v| {
                Ok(mha.forward(g, v[0], v[1], s)?.output)
            })
        }),
        (Blocks, "embedding", |s| {
            let r = &mut rng(s);
            let mut store = ParamStore::new();
            let emb = DataEmbedding::new(&mut store, "emb", EmbeddingConfig::new(2, 4, 3, 16), r)?;
            param_check(s, vec![randn(r, [2, 6, 2]), randn(r, [2, 6, 3])], &store, |g, v| emb.forward(g, Some(v[0]), v[1]))
        }),
        (Blocks, "contracting", |s| {
            let r = &mut rng(s);
            let mut store = ParamStore::new();
            let cfg = AttentionConfig::new(4, 2)?.with_sampling_factor(1.0);
            let block = ContractingBlock::new(&mut store, "c", &BlockStackConfig::new(1, 4), cfg, ContractingKind::ProbSparse, r)?;
            param_check(s, vec![randn(r, [1, 8, 4])], &store, |g, v| Ok(block.forward(g, v[0], s)?.output))
        }),
        (Blocks, "contracting_masked", |s| {
            let r = &mut rng(s);
            let mut store = ParamStore::new();
            let cfg = AttentionConfig::new(4, 2)?.with_sampling_factor(1.0);
            let block = ContractingBlock::new(&mut store, "c", &BlockStackConfig::new(1, 4), cfg, ContractingKind::Masked, r)?;
            param_check(s, vec![randn(r, [1, 8, 4])], &store, |g, v| Ok(block.forward(g, v[0], s)?.output))
        }),
        (Blocks, "expanding", |s| {
            let r = &mut rng(s);
            let mut store = ParamStore::new();
            let cfg = AttentionConfig::new(4, 2)?.with_sampling_factor(1.0);
            let block = ExpandingBlock::new(&mut store, "x", &BlockStackConfig::new(1, 4), cfg, r)?;
            param_check(s, vec![randn(r, [1, 4, 4]), randn(r, [1, 8, 4])], &store, |g, v| {
                Ok(block.forward(g, v[0], v[1], s)?.output)
            })
        }),
        (Blocks, "model_loss", |s| {
            let r = &mut rng(s);
            let cfg = ModelConfig {
                d_model: 4,
                n_heads: 2,
                depth: 1,
                time_features: 2,
                sampling_factor: 1.0,
                seed: s,
                ..ModelConfig::new(6, 4, 1, 1)
            };
            let model = Yformer::new(cfg)?;
            let input = ModelInput {
                past: randn(r, [1, 6, 2]),
                past_marks: randn(r, [1, 6, 2]),
                future: None,
                future_marks: randn(r, [1, 4, 2]),
            };
            let (y, y_prime) = (randn(r, [1, 6, 1]), randn(r, [1, 4, 1]));
            finite_diff::check_with_params(
                |g, _| {
                    let out = model.forward(g, &input, s)?;
                    let (a, b) = (g.constant(y.clone()), g.constant(y_prime.clone()));
                    Ok(combined_loss(g, &out, a, b, 0.6)?.total)
                },
                &[],
                &model.params,
                DEFAULT_STEP,
            )
        }),
    ]
}

/// Names of all cases, grouped.
pub fn case_names() -> Vec<(SuiteGroup, &'static str)> {
    cases().into_iter().map(|(g, n, _)| (g, n)).collect()
}

/// Runs `instances` random instances of every case whose group is in
/// `groups` (all groups if empty).
pub fn run_suite(groups: &[SuiteGroup], instances: usize) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut out = Vec::new();
    for (group, name, case) in cases() {
        if !groups.is_empty() && !groups.contains(&group) {
            continue;
        }
        let t0 = Instant::now();
        let mut total = GradCheckReport::default();
        for i in 0..instances {
            total.merge(&case(1000 + i as u64)?);
        }
        out.push(CaseReport {
            group,
            name,
            instances,
            checked: total.checked,
            max_relative_error: total.max_relative_error,
            passed: total.passes(DEFAULT_TOLERANCE),
            seconds: secs(t0.elapsed()),
        });
    }
    Ok(SuiteReport {
        cases: out,
        tolerance: DEFAULT_TOLERANCE,
        step: DEFAULT_STEP,
        seconds: secs(started.elapsed()),
    })
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}
