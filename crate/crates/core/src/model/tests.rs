use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::Shape;

fn small(history: usize, horizon: usize, depth: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        depth,
        ..ModelConfig::new(history, horizon, 1, 2)
    }
}

fn random_input(cfg: &ModelConfig, n: usize, seed: u64) -> ModelInput {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ModelInput {
        past: Tensor::randn(Shape::new(n, cfg.history, cfg.past_channels()), &mut r),
        past_marks: Tensor::uniform(Shape::new(n, cfg.history, cfg.time_features), -0.5, 0.5, &mut r),
        future: (cfg.future_predictors > 0)
            .then(|| Tensor::randn(Shape::new(n, cfg.horizon, cfg.future_predictors), &mut r)),
        future_marks: Tensor::uniform(Shape::new(n, cfg.horizon, cfg.time_features), -0.5, 0.5, &mut r),
    }
}

fn lengths(g: &Graph, vars: &[Var]) -> Vec<usize> {
    vars.iter().map(|&v| g.shape(v).len()).collect()
}

#[test]
fn length_arithmetic_48_24_2() {
    let cfg = small(48, 24, 2);
    let model = Yformer::new(cfg.clone()).unwrap();
    let mut g = model.graph();
    let trace = model.forward_traced(&mut g, &random_input(&cfg, 2, 0), 0).unwrap();
    assert_eq!(lengths(&g, &trace.pyramid.entries), vec![72, 36, 18]);
    assert_eq!(trace.pyramid.past_lengths, vec![48, 24, 12]);
    assert_eq!(lengths(&g, &trace.decoder), vec![18, 36, 72]);
    assert_eq!(g.shape(trace.output.y_past).0, [2, 48, 2]);
    assert_eq!(g.shape(trace.output.y_fut).0, [2, 24, 2]);
    assert_eq!(cfg.pyramid_lengths(), vec![72, 36, 18]);
}

#[test]
fn indivisible_lengths_are_padded_and_cropped() {
    let cfg = small(50, 21, 2);
    assert_eq!((cfg.padded_history(), cfg.padded_horizon()), (52, 24));
    let model = Yformer::new(cfg.clone()).unwrap();
    let mut g = model.graph();
    let trace = model.forward_traced(&mut g, &random_input(&cfg, 1, 1), 0).unwrap();
    assert_eq!(lengths(&g, &trace.pyramid.entries), vec![76, 38, 19]);
    assert_eq!(g.shape(trace.output.y_past).len(), 50);
    assert_eq!(g.shape(trace.output.y_fut).len(), 21);
}

#[test]
fn univariate_head_has_one_channel() {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        ..ModelConfig::new(16, 8, 0, 1)
    };
    let model = Yformer::new(cfg.clone()).unwrap();
    let (past, fut) = model.predict(&random_input(&cfg, 3, 2), 0).unwrap();
    assert_eq!(past.dims(), [3, 16, 1]);
    assert_eq!(fut.dims(), [3, 8, 1]);
}

#[test]
fn skipless_variant_keeps_shapes_and_parameters() {
    let cfg = small(32, 16, 2);
    let full = Yformer::new(cfg.clone()).unwrap();
    let skipless = Yformer::new(cfg.clone().without_skips()).unwrap();
    assert_eq!(full.parameter_count(), skipless.parameter_count());
    let input = random_input(&cfg, 2, 3);
    let (a, b) = (full.predict(&input, 0).unwrap(), skipless.predict(&input, 0).unwrap());
    assert_eq!(a.0.dims(), b.0.dims());
    assert_eq!(a.1.dims(), b.1.dims());
    assert_ne!(a.1, b.1);
}

#[test]
fn future_predictor_channels_are_embedded() {
    let cfg = ModelConfig {
        future_predictors: 2,
        ..small(16, 8, 2)
    };
    let model = Yformer::new(cfg.clone()).unwrap();
    let input = random_input(&cfg, 1, 4);
    let mut moved = input.clone();
    moved.future.as_mut().unwrap().data_mut()[0] += 1.0;
    assert_ne!(model.predict(&input, 0).unwrap().1, model.predict(&moved, 0).unwrap().1);
    let mut missing = input;
    missing.future = None;
    assert!(model.predict(&missing, 0).is_err());
}

#[test]
fn rejects_bad_configs_and_inputs() {
    assert!(Yformer::new(ModelConfig { alpha: 1.5, ..small(8, 8, 1) }).is_err());
    assert!(Yformer::new(ModelConfig { n_heads: 3, ..small(8, 8, 1) }).is_err());
    let cfg = small(8, 8, 1);
    let model = Yformer::new(cfg.clone()).unwrap();
    let mut input = random_input(&cfg, 1, 0);
    input.past = Tensor::zeros(Shape::new(1, 7, 3));
    assert!(model.predict(&input, 0).is_err());
}

#[test]
fn parameter_count_properties() {
    let base = small(48, 24, 2);
    let n = parameter_count(&base).unwrap();
    let wide = parameter_count(&ModelConfig { d_model: 16, ..base.clone() }).unwrap();
    assert!(wide > 2 * n);
    assert_eq!(parameter_count(&ModelConfig { history: 96, horizon: 48, ..base.clone() }).unwrap(), n);
    assert_eq!(parameter_count(&base.clone().without_skips()).unwrap(), n);

    // audit by construction: embeddings, 2I contracting, decoder attention, I expanding, head
    let d = base.d_model;
    let stack = BlockStackConfig::new(base.depth, d);
    let past_embed = 3 * base.past_channels() * d + d + base.time_features * d + d;
    let future_embed = base.time_features * d + d;
    let expected = past_embed
        + future_embed
        + 2 * base.depth * ContractingBlock::parameter_count(&stack)
        + 4 * (d * d + d)
        + base.depth * ExpandingBlock::parameter_count(&stack)
        + d * base.targets
        + base.targets;
    assert_eq!(n, expected);
}

#[test]
fn future_targets_cannot_reach_the_model() {
    // The input type has no slot for y'; outputs depend only on what it holds.
    let cfg = small(24, 8, 2);
    let model = Yformer::new(cfg.clone()).unwrap();
    let input = random_input(&cfg, 2, 5);
    let a = model.predict(&input, 9).unwrap();
    let b = model.predict(&input.clone(), 9).unwrap();
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
}

#[test]
fn pyramid_halves_come_from_their_own_encoder() {
    let cfg = small(32, 16, 2);
    let model = Yformer::new(cfg.clone()).unwrap();
    let input = random_input(&cfg, 1, 6);
    let mut past_zeroed = input.clone();
    past_zeroed.past.data_mut().fill(0.0);
    let mut future_zeroed = input.clone();
    future_zeroed.future_marks.data_mut().fill(0.0);

    let levels = |inp: &ModelInput| -> Vec<Tensor> {
        let mut g = model.graph();
        let t = model.forward_traced(&mut g, inp, 0).unwrap();
        t.pyramid.entries.iter().map(|&e| g.value(e).clone()).collect()
    };
    let (base, no_past, no_future) = (levels(&input), levels(&past_zeroed), levels(&future_zeroed));
    for (i, past_len) in [32usize, 16, 8].into_iter().enumerate() {
        let len = base[i].dims()[1];
        let split = |t: &Tensor| (t.slice_time(0, past_len).unwrap(), t.slice_time(past_len, len - past_len).unwrap());
        let (bp, bf) = split(&base[i]);
        let (pp, pf) = split(&no_past[i]);
        let (fp, ff) = split(&no_future[i]);
        assert_ne!(bp, pp, "level {i}: past slice ignores past input");
        assert_eq!(bf, pf, "level {i}: future slice moved with past input");
        assert_eq!(bp, fp, "level {i}: past slice moved with future input");
        assert_ne!(bf, ff, "level {i}: future slice ignores future input");
    }
}

#[test]
fn future_encoder_attention_is_causal_at_every_level() {
    let cfg = small(32, 16, 3);
    let model = Yformer::new(cfg.clone()).unwrap();
    let mut g = model.graph();
    let trace = model.forward_traced(&mut g, &random_input(&cfg, 2, 7), 0).unwrap();
    assert_eq!(trace.future_attention.len(), 3);
    for level in &trace.future_attention {
        for head in &level.heads {
            let w = g.value(head.weights);
            let [n, l, k] = w.dims();
            assert_eq!(l, k);
            for b in 0..n {
                for i in 0..l {
                    for j in i + 1..k {
                        assert_eq!(w.at(b, i, j), 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for disable_skips in [false, true] {
        let cfg = ModelConfig { disable_skips, ..small(16, 8, 2) };
        let model = Yformer::new(cfg.clone()).unwrap();
        let input = random_input(&cfg, 2, 8);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let mut g = model.graph();
        let out = model.forward(&mut g, &input, 0).unwrap();
        let y = g.constant(Tensor::randn(Shape::new(2, 16, 2), &mut r));
        let y_prime = g.constant(Tensor::randn(Shape::new(2, 8, 2), &mut r));
        let loss = combined_loss(&mut g, &out, y, y_prime, 0.5).unwrap();
        g.backward(loss.total).unwrap();
        for (id, grad) in g.param_grads() {
            let norm = grad.map_or(0.0, |t| t.norm_sq());
            assert!(norm > 0.0, "{} has no gradient (skips disabled: {disable_skips})", model.params.name(id));
        }
    }
}

#[test]
fn seeded_runs_are_identical() {
    let cfg = small(24, 8, 2);
    let input = random_input(&cfg, 2, 10);
    let run = || {
        let m = Yformer::new(cfg.clone()).unwrap();
        m.predict(&input, 3).unwrap()
    };
    assert_eq!(run(), run());
}

fn loss_value(mse_past_target: f64, mse_fut_target: f64, alpha: f64) -> (f64, f64, f64) {
    // predictions are zero, targets are constant, so each MSE is the square
    let mut g = Graph::new();
    let zeros_p = g.constant(Tensor::zeros(Shape::new(1, 2, 1)));
    let zeros_f = g.constant(Tensor::zeros(Shape::new(1, 3, 1)));
    let y = g.constant(Tensor::full(Shape::new(1, 2, 1), mse_past_target.sqrt()));
    let yp = g.constant(Tensor::full(Shape::new(1, 3, 1), mse_fut_target.sqrt()));
    let out = ForecastOutput { y_past: zeros_p, y_fut: zeros_f };
    let t = combined_loss(&mut g, &out, y, yp, alpha).unwrap();
    (g.value(t.total).item().unwrap(), g.value(t.reconstruction).item().unwrap(), g.value(t.forecast).item().unwrap())
}

#[test]
fn loss_endpoints_and_mixture() {
    let (l0, _, f) = loss_value(1.0, 4.0, 0.0);
    assert_eq!(l0, f);
    let (l1, r, _) = loss_value(1.0, 4.0, 1.0);
    assert_eq!(l1, r);
    let (l, r, f) = loss_value(1.0, 4.0, 0.7);
    assert_eq!((r, f), (1.0, 4.0));
    assert!((l - (0.7 + 0.3 * 4.0)).abs() < 1e-15);

    // mse_past = 1, mse_fut = 2 (targets 0 and 2), alpha 0.7 -> 1.3
    let mut g = Graph::new();
    let out = ForecastOutput {
        y_past: g.constant(Tensor::zeros(Shape::new(1, 2, 1))),
        y_fut: g.constant(Tensor::zeros(Shape::new(1, 2, 1))),
    };
    let y = g.constant(Tensor::full(Shape::new(1, 2, 1), 1.0));
    let yp = g.constant(Tensor::from_dims([1, 2, 1], vec![0.0, 2.0]).unwrap());
    let t = combined_loss(&mut g, &out, y, yp, 0.7).unwrap();
    assert!((g.value(t.total).item().unwrap() - 1.3).abs() < 1e-15);
    assert!(combined_loss(&mut g, &out, y, yp, -0.1).is_err());
    assert!(combined_loss(&mut g, &out, yp, out.y_past, 0.5).is_ok());
    let wrong = g.constant(Tensor::zeros(Shape::new(1, 3, 1)));
    assert!(combined_loss(&mut g, &out, wrong, yp, 0.5).is_err());
}

#[test]
fn metric_examples() {
    let a = Tensor::from_dims([1, 2, 2], vec![1.0, 1.0, 3.0, 3.0]).unwrap();
    assert_eq!(metrics(&a, &a).unwrap(), Metrics { mse: 0.0, mae: 0.0 });
    let one = |v| Tensor::from_dims([1, 1, 1], vec![v]).unwrap();
    assert_eq!(metrics(&one(0.0), &one(2.0)).unwrap(), Metrics { mse: 4.0, mae: 2.0 });
    let pred = Tensor::full(Shape::new(1, 2, 2), 2.0);
    assert_eq!(metrics(&a, &pred).unwrap(), Metrics { mse: 1.0, mae: 1.0 });
    assert!(metrics(&a, &one(1.0)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let cfg = small(16, 8, 2);
    let model = Yformer::new(cfg.clone()).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.cfg, cfg);
    for (id, p) in model.params.iter() {
        assert_eq!(loaded.params.value(id), &p.value);
    }
    let input = random_input(&cfg, 1, 0);
    assert_eq!(model.predict(&input, 0).unwrap(), loaded.predict(&input, 0).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint { .. })));
}

proptest! {
    #[test]
    fn loss_lies_between_its_terms(alpha in 0.0f64..=1.0, a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (l, r, f) = loss_value(a, b, alpha);
        prop_assert!(l >= r.min(f) - 1e-15 * l.abs().max(1.0));
        prop_assert!(l <= r.max(f) + 1e-15 * l.abs().max(1.0));
    }
}
