use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::finite_diff::{self, DEFAULT_STEP, DEFAULT_TOLERANCE};
use super::*;
use crate::error::Error;

fn t(dims: [usize; 3], data: &[f64]) -> Tensor {
    Tensor::from_dims(dims, data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::new();
    let id = g.constant(t([1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t([1, 2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let out = g.matmul(id, m).unwrap();
    assert_eq!(g.value(out).data(), &[5.0, 6.0, 7.0, 8.0]);

    let a = g.constant(t([1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t([1, 2, 1], &[1.0, 1.0]));
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(Shape::new(1, 2, 3)));
    let b = g.constant(Tensor::zeros(Shape::new(1, 2, 3)));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[1x2x3]") && err.contains("matmul"), "{err}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let y = g.softmax(x, 2).unwrap();
    assert!(close(g.value(y).data(), &[1.0 / 3.0; 3], 1e-15));

    let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
    let y = g.softmax(x, 2).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.constant(Tensor::vector(vec![0.0, 3f64.ln()]));
    let y = g.softmax(x, 2).unwrap();
    assert!(close(g.value(y).data(), &[0.25, 0.75], 1e-15));
}

#[test]
fn softmax_rejects_non_finite() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, f64::NAN]));
    assert!(matches!(g.softmax(x, 2), Err(Error::NonFinite { .. })));
    let x = g.constant(Tensor::vector(vec![0.0, f64::INFINITY]));
    assert!(g.softmax(x, 2).is_err());
}

#[test]
fn softmax_along_every_axis_normalises() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.constant(Tensor::randn(Shape::new(3, 4, 5), &mut rng));
    for axis in 0..3 {
        let y = g.softmax(x, axis).unwrap();
        let v = g.value(y);
        let dims = v.dims();
        let [n, l, c] = dims;
        for i in 0..n {
            for j in 0..l {
                for k in 0..c {
                    let mut idx = [i, j, k];
                    if idx[axis] != 0 {
                        continue;
                    }
                    let mut s = 0.0;
                    for m in 0..dims[axis] {
                        idx[axis] = m;
                        s += v.at(idx[0], idx[1], idx[2]);
                    }
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn masked_softmax_zeroes_hidden_entries() {
    let mut g = Graph::new();
    let x = g.constant(t([1, 3, 3], &[1.0, 9.0, 9.0, 1.0, 2.0, 9.0, 1.0, 2.0, 3.0]));
    let y = g.masked_softmax(x, &[0, 1, 2]).unwrap();
    let v = g.value(y);
    assert_eq!(v.at(0, 0, 0), 1.0);
    assert_eq!(v.at(0, 0, 1), 0.0);
    assert_eq!(v.at(0, 1, 2), 0.0);
    assert!((v.at(0, 1, 0) + v.at(0, 1, 1) - 1.0).abs() < 1e-15);
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::new();
    let x = g.constant(t([1, 4, 1], &[1.0, -2.0, 3.0, 0.5]));
    let w = g.constant(t([1, 1, 3], &[0.0, 1.0, 0.0]));
    let b = g.constant(Tensor::zeros(Shape::new(1, 1, 1)));
    let y = g.conv1d(x, w, b, ConvSpec::new(1, 1, 3, 1, 1)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0, 0.5]);

    let x = g.constant(t([1, 3, 1], &[1.0, 2.0, 3.0]));
    let w = g.constant(t([1, 1, 2], &[1.0, 1.0]));
    let y = g.conv1d(x, w, b, ConvSpec::new(1, 1, 2, 1, 0)).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);

    let x = g.constant(Tensor::zeros(Shape::new(1, 5, 1)));
    let w = g.constant(Tensor::zeros(Shape::new(1, 1, 3)));
    let y = g.conv1d(x, w, b, ConvSpec::new(1, 1, 3, 2, 1)).unwrap();
    assert_eq!(g.shape(y).len(), 3);
}

#[test]
fn conv1d_rejects_short_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(Shape::new(1, 2, 1)));
    let w = g.constant(Tensor::zeros(Shape::new(1, 1, 5)));
    let b = g.constant(Tensor::zeros(Shape::new(1, 1, 1)));
    assert!(matches!(
        g.conv1d(x, w, b, ConvSpec::new(1, 1, 5, 1, 0)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn conv_transpose1d_examples() {
    let mut g = Graph::new();
    let spec = ConvSpec::new(2, 3, 2, 2, 0);
    let x = g.constant(Tensor::zeros(Shape::new(1, 18, 2)));
    let w = g.constant(Tensor::full(Shape::new(2, 3, 2), 0.3));
    let b = g.constant(Tensor::vector(vec![0.1, -0.2, 0.7]));
    let y = g.conv_transpose1d(x, w, b, spec).unwrap();
    assert_eq!(g.shape(y).0, [1, 36, 3]);
    for row in g.value(y).data().chunks(3) {
        assert_eq!(row, &[0.1, -0.2, 0.7]);
    }
}

/// `<conv1d(x), y> == <x, conv_transpose1d(y)>` with shared weights and no bias.
fn adjoint_gap(seed: u64, len: usize, spec: ConvSpec) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(Shape::new(1, len, spec.in_channels), &mut rng);
    let w = Tensor::randn(Shape::new(spec.out_channels, spec.in_channels, spec.kernel_size), &mut rng);
    let lout = spec.output_len(len).unwrap();
    let y = Tensor::randn(Shape::new(1, lout, spec.out_channels), &mut rng);
    let mut g = Graph::new();
    let (xv, wv, yv) = (g.constant(x.clone()), g.constant(w), g.constant(y.clone()));
    let b_fwd = g.constant(Tensor::zeros(Shape::new(1, 1, spec.out_channels)));
    let b_adj = g.constant(Tensor::zeros(Shape::new(1, 1, spec.in_channels)));
    let fwd = g.conv1d(xv, wv, b_fwd, spec).unwrap();
    let tspec = ConvSpec::new(spec.out_channels, spec.in_channels, spec.kernel_size, spec.stride, spec.padding);
    let adj = g.conv_transpose1d(yv, wv, b_adj, tspec).unwrap();
    assert_eq!(g.shape(adj), x.shape());
    let lhs = g.value(fwd).dot(&y).unwrap();
    let rhs = x.dot(g.value(adj)).unwrap();
    (lhs - rhs).abs()
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    assert!(adjoint_gap(1, 8, ConvSpec::new(2, 2, 2, 2, 0)) < 1e-10);
    assert!(adjoint_gap(2, 8, ConvSpec::new(2, 2, 3, 1, 1)) < 1e-10);
    assert!(adjoint_gap(3, 9, ConvSpec::new(2, 3, 3, 2, 1)) < 1e-10);
}

#[test]
fn maxpool_examples() {
    let mut g = Graph::new();
    let x = g.input(t([1, 5, 1], &[1.0, 3.0, 2.0, 5.0, 4.0]));
    let y = g.maxpool1d(x, PoolSpec::new(3, 2, 1)).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0, 5.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    // window argmaxes: index 1, index 3 (twice)
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 2.0, 0.0]);

    let mut g = Graph::new();
    let x = g.input(Tensor::full(Shape::new(1, 6, 2), 4.0));
    let y = g.maxpool1d(x, PoolSpec::new(3, 2, 1)).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 4.0));
    let s = g.sum(y);
    g.backward(s).unwrap();
    // ties route to the first element of each window
    let gx = g.grad(x).unwrap();
    let routed: Vec<f64> = (0..6).map(|t| gx.at(0, t, 0)).collect();
    assert_eq!(routed, vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(gx.sum(), 6.0);
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::full(Shape::new(1, 1, 3), 1.0));
    let zeros = g.constant(Tensor::zeros(Shape::new(1, 1, 3)));
    let x = g.constant(Tensor::full(Shape::new(1, 2, 3), 7.0));
    let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-12));

    let ones2 = g.constant(Tensor::full(Shape::new(1, 1, 2), 1.0));
    let zeros2 = g.constant(Tensor::zeros(Shape::new(1, 1, 2)));
    let x = g.constant(Tensor::vector(vec![1.0, -1.0]));
    let y = g.layer_norm(x, ones2, zeros2, 1e-5).unwrap();
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!(close(g.value(y).data(), &[expect, -expect], 1e-15));
    assert!((g.value(y).data()[0] - 1.0).abs() < 1e-5);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gamma0 = g.constant(Tensor::zeros(Shape::new(1, 1, 3)));
    let beta = g.constant(Tensor::vector(vec![0.5, -1.0, 2.0]));
    let x = g.constant(Tensor::randn(Shape::new(2, 4, 3), &mut rng));
    let y = g.layer_norm(x, gamma0, beta, 1e-5).unwrap();
    for row in g.value(y).data().chunks(3) {
        assert_eq!(row, &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn elu_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 2.0, -1.0]));
    let y = g.elu(x, ELU_ALPHA);
    let v = g.value(y).data();
    assert_eq!(v[0], 0.0);
    assert_eq!(v[1], 2.0);
    assert!((v[2] - (-0.632_120_558_828_557_7)).abs() < 1e-15);
}

#[test]
fn linear_examples() {
    let mut g = Graph::new();
    let x = g.constant(t([1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let w = g.constant(t([1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = g.constant(Tensor::zeros(Shape::new(1, 1, 2)));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let w = g.constant(t([1, 2, 1], &[1.0, 1.0]));
    let b = g.constant(Tensor::vector(vec![0.5]));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[3.5]);

    let bad = g.constant(Tensor::zeros(Shape::new(1, 3, 1)));
    assert!(g.linear(x, bad, b).is_err());
}

#[test]
fn concat_time_examples() {
    let mut g = Graph::new();
    let a = g.input(t([1, 3, 1], &[1.0, 2.0, 3.0]));
    let b = g.input(t([1, 2, 1], &[4.0, 5.0]));
    let c = g.concat_time(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

    let empty = g.constant(Tensor::zeros(Shape::new(1, 0, 1)));
    let same = g.concat_time(a, empty).unwrap();
    assert_eq!(g.value(same), g.value(a));

    let head = g.slice_time(c, 0, 3).unwrap();
    let s = g.sum(head);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[1.0, 1.0, 1.0]);
    assert_eq!(g.grad(b).unwrap().data(), &[0.0, 0.0]);

    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(Shape::new(1, 3, 2)));
    let b = g.constant(Tensor::zeros(Shape::new(1, 3, 1)));
    assert!(g.concat_time(a, b).is_err());
}

#[test]
fn backward_examples_and_errors() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    assert!(matches!(g.backward(s), Err(Error::AlreadyBackpropagated)));
    g.reset_grads();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 2.0]));
    let sq = g.square(x);
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    assert!(matches!(g.backward(sq), Err(Error::AlreadyBackpropagated)));

    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
}

// --------------------------------------------------------------------------
// finite-difference checks, 20 random instances per operator

fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(Tensor::randn(g.shape(y), &mut rng));
    let p = g.mul(y, r).unwrap();
    g.sum(p)
}

fn gradcheck_20<F>(name: &str, make_inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, op: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let inputs = make_inputs(&mut rng);
        let report = finite_diff::check(
            |g, v| {
                let y = op(g, v);
                Ok(weighted_sum(g, y, seed))
            },
            &inputs,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(
            report.passes(DEFAULT_TOLERANCE),
            "{name} seed {seed}: {report:?}"
        );
    }
}

fn randn(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor {
    Tensor::randn(Shape(dims), rng)
}

#[test]
fn gradcheck_matmul() {
    gradcheck_20(
        "matmul",
        |r| vec![randn(r, [2, 3, 4]), randn(r, [2, 4, 2])],
        |g, v| g.matmul(v[0], v[1]).unwrap(),
    );
}

#[test]
fn gradcheck_softmax() {
    for axis in 0..3 {
        gradcheck_20(
            "softmax",
            |r| vec![randn(r, [2, 3, 4])],
            |g, v| g.softmax(v[0], axis).unwrap(),
        );
    }
    gradcheck_20(
        "masked_softmax",
        |r| vec![randn(r, [2, 3, 3])],
        |g, v| g.masked_softmax(v[0], &[0, 1, 2, 0, 1, 2]).unwrap(),
    );
}

#[test]
fn gradcheck_conv1d() {
    let spec = ConvSpec::new(2, 3, 3, 2, 1);
    gradcheck_20(
        "conv1d",
        |r| vec![randn(r, [2, 7, 2]), randn(r, [3, 2, 3]), randn(r, [1, 1, 3])],
        |g, v| g.conv1d(v[0], v[1], v[2], spec).unwrap(),
    );
}

#[test]
fn gradcheck_conv_transpose1d() {
    let spec = ConvSpec::new(2, 3, 3, 2, 1);
    gradcheck_20(
        "conv_transpose1d",
        |r| vec![randn(r, [2, 5, 2]), randn(r, [2, 3, 3]), randn(r, [1, 1, 3])],
        |g, v| g.conv_transpose1d(v[0], v[1], v[2], spec).unwrap(),
    );
}

#[test]
fn gradcheck_maxpool() {
    gradcheck_20(
        "maxpool1d",
        |r| vec![randn(r, [2, 9, 3])],
        |g, v| g.maxpool1d(v[0], PoolSpec::new(3, 2, 1)).unwrap(),
    );
}

#[test]
fn gradcheck_layer_norm() {
    gradcheck_20(
        "layer_norm",
        |r| vec![randn(r, [2, 3, 5]), randn(r, [1, 1, 5]), randn(r, [1, 1, 5])],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(),
    );
}

#[test]
fn gradcheck_elu_linear_concat() {
    gradcheck_20("elu", |r| vec![randn(r, [2, 4, 3])], |g, v| g.elu(v[0], 1.0));
    gradcheck_20(
        "linear",
        |r| vec![randn(r, [2, 3, 4]), randn(r, [1, 4, 2]), randn(r, [1, 1, 2])],
        |g, v| g.linear(v[0], v[1], v[2]).unwrap(),
    );
    gradcheck_20(
        "concat_time",
        |r| vec![randn(r, [2, 3, 2]), randn(r, [2, 2, 2])],
        |g, v| g.concat_time(v[0], v[1]).unwrap(),
    );
}

#[test]
fn gradcheck_structural_helpers() {
    gradcheck_20(
        "gather/scatter",
        |r| vec![randn(r, [2, 5, 3]), randn(r, [2, 5, 3])],
        |g, v| {
            let rows = g.gather_time(v[0], vec![vec![4, 1], vec![0, 2]]).unwrap();
            g.scatter_time(v[1], rows, vec![vec![0, 3], vec![4, 1]]).unwrap()
        },
    );
    gradcheck_20(
        "means",
        |r| vec![randn(r, [2, 4, 3])],
        |g, v| {
            let m = g.mean_time(v[0]).unwrap();
            let m = g.repeat_time(m, 4).unwrap();
            let c = g.cummean_time(v[0]);
            let t = g.transpose(c);
            let t = g.transpose(t);
            g.add(m, t).unwrap()
        },
    );
    gradcheck_20(
        "broadcast arithmetic",
        |r| vec![randn(r, [2, 3, 4]), randn(r, [1, 3, 1])],
        |g, v| {
            let a = g.mul(v[0], v[1]).unwrap();
            let b = g.sub(a, v[1]).unwrap();
            let s = g.square(b);
            let ch = g.slice_channels(s, 1, 2).unwrap();
            let other = g.slice_channels(v[0], 0, 2).unwrap();
            g.concat_channels(&[ch, other]).unwrap()
        },
    );
}

proptest! {
    #[test]
    fn conv_length_formulas(l in 1usize..=32, k in 1usize..=5, s in 1usize..=3, p in 0usize..=2) {
        let spec = ConvSpec::new(1, 1, k, s, p);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, l, 1)));
        let w = g.constant(Tensor::zeros(Shape::new(1, 1, k)));
        let b = g.constant(Tensor::zeros(Shape::new(1, 1, 1)));
        match spec.output_len(l) {
            Some(lout) => {
                prop_assert_eq!(lout, (l + 2 * p - k) / s + 1);
                let y = g.conv1d(x, w, b, spec).unwrap();
                prop_assert_eq!(g.shape(y).len(), lout);
            }
            None => {
                prop_assert!(l + 2 * p < k);
                prop_assert!(g.conv1d(x, w, b, spec).is_err());
            }
        }
        if let Some(lt) = spec.transposed_output_len(l) {
            prop_assert_eq!(lt, (l - 1) * s + k - 2 * p);
            let y = g.conv_transpose1d(x, w, b, spec).unwrap();
            prop_assert_eq!(g.shape(y).len(), lt);
        } else {
            prop_assert!((l - 1) * s + k <= 2 * p);
        }
    }

    #[test]
    fn conv_adjoint_holds(seed in 0u64..1000, l in 3usize..12, k in 1usize..4, s in 1usize..3, p in 0usize..2) {
        let spec = ConvSpec::new(2, 3, k, s, p);
        prop_assume!(spec.output_len(l).is_some());
        // lengths must round-trip for the transpose to land back on L
        prop_assume!((l + 2 * p - k) % s == 0);
        prop_assert!(adjoint_gap(seed, l, spec) < 1e-10);
    }

    #[test]
    fn maxpool_gradient_mass_equals_window_count(seed in 0u64..1000, l in 1usize..20, k in 1usize..5, s in 1usize..3) {
        let p = k / 2;
        let spec = PoolSpec::new(k, s, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.input(Tensor::randn(Shape::new(2, l, 3), &mut rng));
        let y = g.maxpool1d(x, spec).unwrap();
        let windows = g.shape(y).len();
        let total = g.sum(y);
        g.backward(total).unwrap();
        let gx = g.grad(x).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mass: f64 = (0..l).map(|t| gx.at(n, t, c)).sum();
                prop_assert_eq!(mass, windows as f64);
            }
        }
    }

    #[test]
    fn softmax_shift_invariant(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(Shape::new(2, 3, 6), &mut rng);
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let b = g.constant(x.map(|v| v + shift));
        let ya = g.softmax(a, 2).unwrap();
        let yb = g.softmax(b, 2).unwrap();
        prop_assert!(g.value(ya).max_abs_diff(g.value(yb)) < 1e-12);
        for row in g.value(ya).data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}
