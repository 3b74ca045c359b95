use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

#[test]
fn square_gradient_at_three_is_six() {
    let mut g = Graph::new();
    let x = g.param(Matrix::scalar(3.0));
    let y = g.square(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).item(), 6.0);
}

#[test]
fn constant_output_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(Matrix::scalar(3.0));
    let c = g.constant(Matrix::scalar(5.0));
    let y = g.scale(c, 2.0);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).item(), 0.0);
}

#[test]
fn relu_gradient_is_indicator() {
    let mut g = Graph::new();
    let x = g.param(Matrix::row_vector(&[-1.0, 2.0]));
    let r = g.relu(x);
    let s = g.sum(r);
    assert_eq!(g.backward(s).unwrap().wrt(x).data(), &[0.0, 1.0]);
}

#[test]
fn relu_and_clip_kinks_have_zero_subgradient() {
    let mut g = Graph::new();
    let x = g.param(Matrix::row_vector(&[0.0, 3.0]));
    let r = g.relu(x);
    let c = g.clip(r, 1.0).unwrap();
    let s = g.sum(c);
    assert_eq!(g.backward(s).unwrap().wrt(x).data(), &[0.0, 0.0]);
}

#[test]
fn backward_requires_scalar_output() {
    let mut g = Graph::new();
    let x = g.param(Matrix::zeros(2, 2));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn shared_subexpression_accumulates() {
    // y = (x·x)ᵀ summed uses x twice through the same node
    let mut g = Graph::new();
    let x = g.param(Matrix::row_vector(&[1.0, -2.0]));
    let xx = g.mul(x, x).unwrap();
    let both = g.add(xx, x).unwrap();
    let s = g.sum(both);
    assert_eq!(g.backward(s).unwrap().wrt(x).data(), &[3.0, -3.0]);
}

/// Builds a random composite graph and returns its scalar output along with the
/// parameter leaves. The closure form lets the finite-difference oracle rebuild
/// the same graph with perturbed leaf values.
fn random_graph(seed: u64, leaves: &[Matrix]) -> (Graph, Vec<Var>, Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let params: Vec<Var> = leaves.iter().map(|m| g.param(m.clone())).collect();
    let mut pool = params.clone();
    let steps = rng.gen_range(3..9);
    for _ in 0..steps {
        let a = pool[rng.gen_range(0..pool.len())];
        let (ar, ac) = g.value(a).shape();
        let next = match rng.gen_range(0..16) {
            0 => {
                let cands: Vec<Var> = pool.iter().copied().filter(|b| g.value(*b).rows() == ac).collect();
                cands.get(rng.gen_range(0..cands.len().max(1))).map(|&b| g.matmul(a, b).unwrap())
            }
            1 => {
                let cands: Vec<Var> = pool.iter().copied().filter(|b| g.value(*b).cols() == ac).collect();
                cands.get(rng.gen_range(0..cands.len().max(1))).map(|&b| g.matmul_t(a, b).unwrap())
            }
            2..=4 => {
                let cands: Vec<Var> = pool.iter().copied().filter(|b| g.value(*b).shape() == (ar, ac)).collect();
                let b = cands[rng.gen_range(0..cands.len())];
                Some(match rng.gen_range(0..3) {
                    0 => g.add(a, b).unwrap(),
                    1 => g.sub(a, b).unwrap(),
                    _ => g.mul(a, b).unwrap(),
                })
            }
            5 => {
                let cands: Vec<Var> =
                    pool.iter().copied().filter(|b| g.value(*b).shape() == (1, ac)).collect();
                cands.get(rng.gen_range(0..cands.len().max(1))).map(|&b| {
                    if rng.gen_bool(0.5) {
                        g.add_row(a, b).unwrap()
                    } else {
                        g.mul_row(a, b).unwrap()
                    }
                })
            }
            6 => Some(g.row_softmax(a)),
            7 => Some(g.row_log_softmax(a)),
            8 => Some(g.relu(a)),
            9 => {
                let p = [1.0, 2.0, 3.0, f64::INFINITY][rng.gen_range(0..4)];
                let scaled = g.scale(a, 2.5);
                Some(g.row_project_lp(scaled, p).unwrap())
            }
            10 => Some(g.clip(a, 0.7).unwrap()),
            11 => Some(g.square(a)),
            12 => Some(g.transpose(a)),
            13 if ac > 1 => Some(g.slice_cols(a, 1, ac - 1).unwrap()),
            14 if ac % 2 == 0 => Some(g.group_sum_cols(a, 2).unwrap()),
            15 => Some(g.reshape(a, 1, ar * ac).unwrap()),
            _ => Some(g.scale(a, -1.3)),
        };
        if let Some(v) = next {
            pool.push(v);
        }
    }
    // Mix every produced node into the output so all branches matter.
    let mut sums = Vec::new();
    for (i, v) in pool.iter().enumerate() {
        let sq = g.square(*v);
        let s = g.sum(sq);
        sums.push(g.scale(s, 1.0 / (1.0 + i as f64)));
    }
    let out = g.add_n(&sums).unwrap();
    (g, params, out)
}

fn random_leaves(seed: u64) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shapes = [(3, 4), (4, 3), (3, 4), (1, 4), (3, 3), (1, 3)];
    shapes
        .iter()
        .map(|&(r, c)| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0)))
        .collect()
}

fn check_against_finite_differences(seed: u64) {
    let leaves = random_leaves(seed);
    let (g, params, out) = random_graph(seed, &leaves);
    let grads = g.backward(out).unwrap();
    let h = 1e-5;
    for (li, p) in params.iter().enumerate() {
        let analytic = grads.wrt(*p);
        for e in 0..leaves[li].len() {
            let eval = |delta: f64| {
                let mut moved = leaves.clone();
                moved[li].data_mut()[e] += delta;
                let (g2, _, o2) = random_graph(seed, &moved);
                g2.scalar(o2)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[e];
            let scale = a.abs().max(numeric.abs());
            let err = (a - numeric).abs();
            if scale < 1e-8 {
                assert!(err < 1e-8, "seed {seed} leaf {li} entry {e}: {a} vs {numeric}");
            } else {
                assert!(err / scale <= 1e-4, "seed {seed} leaf {li} entry {e}: {a} vs {numeric}");
            }
        }
    }
}

#[test]
fn two_hundred_random_graphs_match_finite_differences() {
    for seed in 0..200 {
        check_against_finite_differences(seed);
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut x = Matrix::row_vector(&[3.0, -2.0]);
    let mut opt = Adam::new(0.1, &[(1, 2)]);
    for _ in 0..500 {
        let grad = x.scale(2.0);
        opt.step(&mut [&mut x], &[grad]);
    }
    assert!(x.max_abs() < 1e-3);
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (1usize..5, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-50.0f64..50.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(m in matrix_strategy(), c in -100.0f64..100.0) {
        let a = m.row_softmax();
        let b = m.map(|x| x + c).row_softmax();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        for r in 0..a.rows() {
            let s: f64 = a.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent_and_lands_in_ball(m in matrix_strategy(), pi in 0usize..3) {
        let p = [1.0, 2.0, f64::INFINITY][pi];
        let once = m.row_project_lp(p).unwrap();
        let twice = once.row_project_lp(p).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        prop_assert!(once.max_row_norm(p) <= 1.0 + 1e-12);
    }
}
