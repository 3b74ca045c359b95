use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bounds::{sampling, NormBudget};
use crate::error::Error;
use crate::tensor::{gradient_discrepancy, lp_norm};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

#[test]
fn attention_with_zero_queries_averages_values() {
    let mut r = rng(1);
    let k = random_matrix(4, 3, &mut r);
    let v = random_matrix(4, 2, &mut r);
    let out = attention(&Matrix::zeros(3, 3), &k, &v).unwrap();
    let mean = v.column_sums().scale(0.25);
    for i in 0..3 {
        for (a, b) in out.row(i).iter().zip(mean.row(0)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn attention_with_single_value_row_copies_it() {
    let mut r = rng(2);
    let q = random_matrix(3, 2, &mut r);
    let k = random_matrix(1, 2, &mut r);
    let v = random_matrix(1, 4, &mut r);
    let out = attention(&q, &k, &v).unwrap();
    for i in 0..3 {
        assert_eq!(out.row(i), v.row(0));
    }
}

#[test]
fn attention_rows_are_convex_combinations() {
    let mut r = rng(3);
    for _ in 0..100 {
        let (q, k, v) = (random_matrix(3, 2, &mut r), random_matrix(3, 2, &mut r), random_matrix(3, 2, &mut r));
        let out = attention(&q, &k, &v).unwrap();
        for p in [1.0, 2.0, f64::INFINITY] {
            assert!(out.max_row_norm(p) <= v.max_row_norm(p) + 1e-15);
        }
    }
    assert!(matches!(
        attention(&Matrix::zeros(2, 2), &Matrix::zeros(3, 2), &Matrix::zeros(2, 2)),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn rff_examples() {
    let mut r = rng(4);
    let x = random_matrix(5, 3, &mut r);
    let b = random_matrix(3, 6, &mut r);
    assert_eq!(rff(&x, &Matrix::zeros(1, 6), &b, 2).unwrap(), Matrix::zeros(5, 3));

    let one = Matrix::scalar(1.0);
    for v in [-2.0, 0.0, 3.5] {
        assert_eq!(rff(&Matrix::scalar(v), &one, &one, 1).unwrap().item(), v.max(0.0));
    }

    let a = random_matrix(1, 6, &mut r);
    let full = rff(&x, &a, &b, 2).unwrap();
    for i in 0..5 {
        let row = Matrix::row_vector(x.row(i));
        // direct per-row oracle from the summation formula
        for k in 0..3 {
            let mut want = 0.0;
            for j in 0..2 {
                let col = k * 2 + j;
                let pre: f64 = (0..3).map(|t| b.get(t, col) * row.get(0, t)).sum();
                want += a.get(0, col) * pre.max(0.0);
            }
            assert!((full.get(i, k) - want).abs() < 1e-14);
        }
    }
    assert!(rff(&x, &a, &random_matrix(2, 6, &mut r), 2).is_err());
}

fn budget() -> NormBudget {
    NormBudget::new(2.0, 2.0, 3.0, 2.0, 4.0, 2.0).unwrap()
}

fn random_params(seed: u64, layers: usize, m: usize, d: usize, p: f64) -> SetTransformerParams {
    let mut r = rng(seed);
    let budget = NormBudget { p, q: crate::bounds::conjugate_exponent(p).unwrap(), ..budget() };
    sampling::random_params(&mut r, layers, m, d, &budget, true, 50.0)
}

#[test]
fn set_layer_is_equivariant_and_bounded() {
    let mut r = rng(5);
    for t in 0..100 {
        let p = [1.0, 2.0, f64::INFINITY][t % 3];
        let params = random_params(t as u64, 1, 3, 4, p);
        let x = random_matrix(5, 4, &mut r).scale(3.0);
        let perm = random_perm(5, &mut r);
        let states = params.hidden_states(&x).unwrap();
        let permuted = params.hidden_states(&x.permute_rows(&perm)).unwrap();
        for (s, ps) in states.iter().zip(&permuted) {
            assert!(s.permute_rows(&perm).sub(ps).unwrap().max_abs() <= 1e-10);
            assert!(s.max_row_norm(p) <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn zero_layer_maps_to_zero() {
    let params = SetTransformerParams::zeros(1, 2, 3, 2.0, true, 1.0);
    let mut r = rng(6);
    let x = random_matrix(4, 3, &mut r);
    let states = params.hidden_states(&x).unwrap();
    assert_eq!(states[1], Matrix::zeros(4, 3));
}

#[test]
fn value_head_examples() {
    let mut r = rng(7);
    let params = random_params(8, 2, 2, 4, 2.0);
    let x = random_matrix(6, 4, &mut r);
    let v = params.value_forward(&x).unwrap();
    for _ in 0..20 {
        let perm = random_perm(6, &mut r);
        assert!((params.value_forward(&x.permute_rows(&perm)).unwrap() - v).abs() <= 1e-10);
    }
    let mut zero_w = params.clone();
    zero_w.readout = Some(Matrix::zeros(4, 1));
    assert_eq!(zero_w.value_forward(&x).unwrap(), 0.0);
    assert!(matches!(params.value_forward(&random_matrix(6, 3, &mut r)), Err(Error::Dimension { .. })));
}

#[test]
fn single_channel_value_matches_per_row_oracle() {
    let mut r = rng(9);
    let params = random_params(10, 2, 3, 4, 2.0);
    let x = random_matrix(1, 4, &mut r).scale(2.0);
    // With one channel the softmax is identically 1, so each layer is
    // Π(g·W_V + rFF(g)) and the output is the clipped readout of the last g.
    let project = |v: Vec<f64>| {
        let n = lp_norm(&v, 2.0);
        if n > 1.0 {
            v.iter().map(|e| e / n).collect()
        } else {
            v
        }
    };
    let mut g = project(x.row(0).to_vec());
    for l in &params.layers {
        let d = 4;
        let mut next = vec![0.0; d];
        for (k, nk) in next.iter_mut().enumerate() {
            *nk = (0..d).map(|t| g[t] * l.w_v.get(t, k)).sum::<f64>();
            for j in 0..params.m {
                let col = k * params.m + j;
                let pre: f64 = (0..d).map(|t| l.ff_in.get(t, col) * g[t]).sum();
                *nk += l.ff_out.get(0, col) * pre.max(0.0);
            }
        }
        g = project(next);
    }
    let w = params.readout.as_ref().unwrap();
    let want: f64 = g.iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>().clamp(-params.v_max, params.v_max);
    assert!((params.value_forward(&x).unwrap() - want).abs() < 1e-13);
}

#[test]
fn value_head_graph_matches_plain_forward_and_is_clipped() {
    let mut r = rng(11);
    let mut params = random_params(12, 2, 2, 3, 2.0);
    params.v_max = 0.05;
    let model = SetTransformerValue { params: params.clone(), budget: budget() };
    for _ in 0..20 {
        let x = random_matrix(4, 3, &mut r);
        let a = model.value(&x).unwrap();
        let b = params.value_forward(&x).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(a.abs() <= 0.05);
    }
}

#[test]
fn dynamics_head_examples() {
    let mut r = rng(13);
    let params = random_params(14, 2, 2, 5, 2.0);
    let x = random_matrix(4, 5, &mut r);
    let out = params.dynamics_forward(&x, 3).unwrap();
    assert_eq!(out.shape(), (4, 3));
    let swapped = params.dynamics_forward(&x.permute_rows(&[1, 0, 2, 3]), 3).unwrap();
    assert!(out.permute_rows(&[1, 0, 2, 3]).sub(&swapped).unwrap().max_abs() <= 1e-10);

    let mut zero = SetTransformerParams::zeros(2, 2, 5, 2.0, false, 1.0);
    zero.layers[0] = params.layers[0].clone();
    assert_eq!(zero.dynamics_forward(&x, 3).unwrap(), Matrix::zeros(4, 3));

    let mut graph = Graph::new();
    let (layers, _) = params.register(&mut graph, false);
    let xv = graph.constant(x.clone());
    let node = params.build_dynamics(&mut graph, &layers, xv, 3).unwrap();
    assert!(graph.value(node).sub(&out).unwrap().max_abs() < 1e-14);
}

#[test]
fn dynamics_output_respects_frobenius_bound() {
    let b = budget();
    let mut r = rng(15);
    let (n, m, d) = (4, 3, 5);
    let ceiling = (n as f64).sqrt() * (b.value + m as f64 * (d as f64).sqrt() * b.ff_out * b.ff_in);
    for _ in 0..100 {
        let params = sampling::random_params(&mut r, 2, m, d, &b, false, 1.0);
        let x = random_matrix(n, d, &mut r).scale(5.0);
        let out = params.dynamics_forward(&x, d).unwrap();
        assert!(out.frobenius_norm() <= ceiling);
    }
}

#[test]
fn projection_examples() {
    let b = budget();
    let inside = random_params(16, 2, 2, 3, 2.0);
    let mut copy = inside.clone();
    copy.project(&b);
    assert_eq!(copy, inside);

    let mut one = SetTransformerParams::zeros(1, 1, 2, 2.0, false, 1.0);
    one.layers[0].w_v = Matrix::from_rows(&[&[4.0, 0.0], &[0.0, 0.0]]).unwrap();
    assert_eq!(one.layers[0].w_v.transposed_pq_norm(2.0, 2.0), 2.0 * b.value);
    one.project(&b);
    assert_eq!(one.layers[0].w_v.get(0, 0), 2.0);

    let mut r = rng(17);
    for t in 0..100 {
        let p = [1.0, 2.0, 3.0, f64::INFINITY][t % 4];
        let bb = NormBudget::new(1.5, 1.5, 1.5, 1.5, 1.5, p).unwrap();
        let mut big = SetTransformerParams::random(2, 3, 4, p, true, 1.0, &mut r);
        for blk in big.blocks_mut() {
            blk.scale_in_place(20.0);
        }
        assert!(!big.within(&bb));
        big.project(&bb);
        assert!(big.within(&bb));
    }
}

#[test]
fn deep_sets_examples() {
    let mut r = rng(18);
    let mut net = DeepSets::random(3, 5, 4, 6, &mut r);
    let x = random_matrix(7, 3, &mut r);
    let v = net.value(&x).unwrap();
    for _ in 0..20 {
        let perm = random_perm(7, &mut r);
        assert!((net.value(&x.permute_rows(&perm)).unwrap() - v).abs() <= 1e-10);
    }

    // N identical rows pool to N·φ(row)
    let row = random_matrix(1, 3, &mut r);
    let stacked = Matrix::vcat(&vec![row.clone(); 5]).unwrap();
    let mut g = Graph::new();
    let vars = net.register(&mut g, false);
    let rv = g.constant(row.clone());
    let sv = g.constant(stacked);
    let enc_row = net.build_encoder(&mut g, &vars, rv).unwrap();
    let enc_all = net.build_encoder(&mut g, &vars, sv).unwrap();
    let pooled = g.value(enc_all).column_sums();
    assert!(pooled.sub(&g.value(enc_row).scale(5.0)).unwrap().max_abs() < 1e-13);

    net.enc_out = Matrix::zeros(5, 4);
    net.enc_offset = Matrix::zeros(1, 4);
    let want: f64 = net
        .agg_bias
        .data()
        .iter()
        .zip(net.agg_out.data())
        .map(|(f, g)| g * f.max(0.0))
        .sum::<f64>()
        + net.agg_offset.item();
    assert!((net.value(&x).unwrap() - want).abs() < 1e-14);
}

#[test]
fn policy_examples() {
    let mut r = rng(19);
    let net = PolicyNet::new(6, 16, 5, &mut r);
    let s = random_matrix(3, 6, &mut r);
    let probs = net.probs(&s);
    for i in 0..3 {
        for &p in probs.row(i) {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    let mut det = net.clone();
    det.b2 = Matrix::row_vector(&[50.0, 0.0, 0.0, 0.0, 0.0]);
    let p = det.probs(&s);
    assert!(p.get(0, 0) >= 1.0 - 1e-20);
    for _ in 0..100 {
        let (a, _) = det.sample(&s, &mut r);
        assert!(a.iter().all(|&x| x == 0));
    }

    let mut skew = PolicyNet::new(6, 16, 5, &mut r);
    skew.w2 = random_matrix(16, 5, &mut r).scale(2.0);
    let single = random_matrix(1, 6, &mut r);
    let want = skew.probs(&single);
    let mut counts = [0usize; 5];
    let trials = 100_000;
    for _ in 0..trials {
        let (a, logp) = skew.sample(&single, &mut r);
        counts[a[0]] += 1;
        assert!((logp - want.get(0, a[0]).ln()).abs() < 1e-12);
    }
    for (c, p) in counts.iter().zip(want.row(0)) {
        assert!((*c as f64 / trials as f64 - p).abs() < 0.01);
    }
}

#[test]
fn joint_policy_is_permutation_invariant() {
    let mut r = rng(20);
    let mut net = PolicyNet::new(4, 8, 5, &mut r);
    net.w2 = random_matrix(8, 5, &mut r);
    for _ in 0..50 {
        let s = random_matrix(4, 4, &mut r);
        let a: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
        let perm = random_perm(4, &mut r);
        let pa: Vec<usize> = perm.iter().map(|&i| a[i]).collect();
        let lhs = net.log_prob(&s, &a);
        let rhs = net.log_prob(&s.permute_rows(&perm), &pa);
        assert!((lhs - rhs).abs() <= 1e-10);

        let mut g = Graph::new();
        let vars = net.register(&mut g);
        let lp = net.build_log_prob(&mut g, &vars, &s, &a).unwrap();
        assert!((g.scalar(lp) - lhs).abs() < 1e-12);
    }
}

fn value_grad(model: &SetTransformerValue, x: &Matrix) -> Vec<Matrix> {
    let mut g = Graph::new();
    let vars = model.register(&mut g, true);
    let xv = g.constant(x.clone());
    let out = model.build(&mut g, &vars, xv).unwrap();
    let grads = g.backward(out).unwrap();
    vars.iter().map(|v| grads.wrt(*v)).collect()
}

#[test]
fn value_and_dynamics_gradients_match_finite_differences() {
    let mut r = rng(21);
    for t in 0..5 {
        let params = random_params(100 + t, 2, 2, 3, 2.0);
        let model = SetTransformerValue { params: params.clone(), budget: budget() };
        let x = random_matrix(3, 3, &mut r).scale(2.0);
        let analytic = value_grad(&model, &x);
        let blocks: Vec<Matrix> = model.blocks().into_iter().cloned().collect();
        let err = gradient_discrepancy(&blocks, &analytic, 1e-5, |b| {
            let mut m = model.clone();
            for (dst, src) in m.blocks_mut().into_iter().zip(b) {
                *dst = src.clone();
            }
            m.value(&x).unwrap()
        });
        assert!(err <= 1e-4, "value head error {err}");

        let mut dyn_params = params.clone();
        dyn_params.readout = None;
        let weights = random_matrix(3, 2, &mut r);
        let loss = |p: &SetTransformerParams| -> f64 {
            p.dynamics_forward(&x, 2).unwrap().hadamard(&weights).unwrap().sum()
        };
        let mut g = Graph::new();
        let (layers, _) = dyn_params.register(&mut g, true);
        let xv = g.constant(x.clone());
        let out = dyn_params.build_dynamics(&mut g, &layers, xv, 2).unwrap();
        let wv = g.constant(weights.clone());
        let prod = g.mul(out, wv).unwrap();
        let s = g.sum(prod);
        let grads = g.backward(s).unwrap();
        let analytic: Vec<Matrix> = layers
            .iter()
            .flat_map(|l| [l.w_qk, l.w_v, l.ff_out, l.ff_in])
            .map(|v| grads.wrt(v))
            .collect();
        let blocks: Vec<Matrix> = dyn_params.blocks().into_iter().cloned().collect();
        let err = gradient_discrepancy(&blocks, &analytic, 1e-5, |b| {
            let mut p = dyn_params.clone();
            for (dst, src) in p.blocks_mut().into_iter().zip(b) {
                *dst = src.clone();
            }
            loss(&p)
        });
        assert!(err <= 1e-4, "dynamics head error {err}");
    }
}

#[test]
fn checkpoints_round_trip() {
    let mut r = rng(22);
    let dir = tempfile::tempdir().unwrap();
    let items = [
        Checkpoint::SetTransformer(random_params(23, 2, 3, 4, f64::INFINITY)),
        Checkpoint::SetTransformer(SetTransformerParams::random(1, 2, 3, 2.0, false, 1.0, &mut r)),
        Checkpoint::DeepSets(DeepSets::random(3, 4, 5, 6, &mut r)),
        Checkpoint::Mlp(Mlp::random(3, 4, 8, &mut r)),
        Checkpoint::Policy(PolicyNet::new(4, 8, 5, &mut r)),
    ];
    for (i, c) in items.iter().enumerate() {
        let path = dir.path().join(format!("m{i}.bin"));
        write_checkpoint(&path, c, Some(&budget())).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(&back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert!(checkpoint::manifest_path(&path).exists());
    }
    let bytes = items[0].to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
}

#[test]
fn joint_input_appends_one_hot_actions() {
    let s = Matrix::from_rows(&[&[0.5, -1.0], &[2.0, 3.0]]).unwrap();
    let x = joint_input(&s, &[4, 0], 5).unwrap();
    assert_eq!(x.row(0), &[0.5, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(x.row(1), &[2.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(joint_input(&s, &[1], 5).is_err());
}
