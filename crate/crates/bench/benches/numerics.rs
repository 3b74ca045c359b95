use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use homarl::networks::{attention, UniformPolicy, ValueNetwork};
use homarl::offline::{bellman_loss, sample_support};
use homarl::Graph;
use homarl_bench::{navigation_data, random_set, rng, value_net};

const D: usize = 16;

fn set_transformer(c: &mut Criterion) {
    let net = value_net(2, 16, D, 1);
    let mut group = c.benchmark_group("set_transformer");
    for n in [3, 8, 32] {
        let x = random_set(n, D, n as u64);
        group.bench_with_input(BenchmarkId::new("forward", n), &x, |b, x| {
            b.iter(|| net.params.value_forward(black_box(x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", n), &x, |b, x| {
            b.iter(|| {
                let mut g = Graph::new();
                let vars = net.register(&mut g, true);
                let xv = g.constant(x.clone());
                let out = net.build(&mut g, &vars, xv).unwrap();
                g.backward(out).unwrap()
            })
        });
    }
    group.finish();
}

fn attention_layer(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for n in [8, 32, 128] {
        let x = random_set(n, D, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| attention(x, x, x).unwrap()));
    }
    group.finish();
}

fn bellman(c: &mut Criterion) {
    let data = navigation_data(3, 4);
    let n_actions = data.meta.n_actions;
    let net = value_net(2, 16, data.meta.state_dim + n_actions, 5);
    let batch: Vec<_> = data.transitions.iter().take(64).collect();
    let mut r = rng(9);
    let uniform = UniformPolicy { n_actions };
    let supports: Vec<_> = batch.iter().map(|t| sample_support(&uniform, &t.next_state, 4, &mut r)).collect();
    c.bench_function("bellman_loss/64x4", |b| {
        b.iter(|| bellman_loss(&net, &net, black_box(&batch), &supports, 0.95, n_actions).unwrap())
    });
}

criterion_group!(benches, set_transformer, attention_layer, bellman);
criterion_main!(benches);
