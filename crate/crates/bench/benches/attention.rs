use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use yformer::attention::{probsparse_head, scaled_dot_product, AttentionConfig};
use yformer::numerics::Graph;
use yformer_bench::{randn, rng};

fn single_head(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention_head");
    let d = 16;
    let cfg = AttentionConfig::new(d, 1).unwrap();
    for len in [96, 192, 384, 768] {
        let (q, k, v) = (randn([1, len, d], 1), randn([1, len, d], 2), randn([1, len, d], 3));
        group.bench_with_input(BenchmarkId::new("canonical", len), &len, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
                scaled_dot_product(&mut g, q, k, v, None).unwrap().output
            })
        });
        group.bench_with_input(BenchmarkId::new("probsparse", len), &len, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
                probsparse_head(&mut g, q, k, v, &cfg, None, &mut rng(0)).unwrap().output
            })
        });
    }
    group.finish();
}

criterion_group!(benches, single_head);
criterion_main!(benches);
