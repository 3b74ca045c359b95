use homarl::bounds::sampling::{random_params, rows_in_ball};
use homarl::bounds::verify::{falsify, Proposition};
use homarl::bounds::{param_distance, NormBudget};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn no_counterexamples_in_ten_thousand_trials_each() {
    for prop in Proposition::ALL {
        let trials = if prop == Proposition::SoftmaxL1 { 100_000 } else { 10_000 };
        let r = falsify(prop, trials, 2024).unwrap();
        println!("{:<28} trials {:>6}  max ratio {:.6}  violations {}", r.proposition, r.trials, r.max_ratio, r.violations);
        assert_eq!(r.violations, 0, "{r:?}");
    }
}

#[test]
fn distance_bounds_output_gap_on_many_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let budget = NormBudget::new(1.5, 1.5, 2.0, 2.0, 1.5, 2.0).unwrap();
    let a = random_params(&mut rng, 2, 2, 3, &budget, true, 1e6);
    let b = random_params(&mut rng, 2, 2, 3, &budget, true, 1e6);
    let delta = param_distance(&a, &b, &budget).unwrap();
    for _ in 0..1000 {
        let x = rows_in_ball(&mut rng, 4, 3, 2.0, 1.0);
        let gap = (a.value_forward(&x).unwrap() - b.value_forward(&x).unwrap()).abs();
        assert!(gap <= delta, "{gap} > {delta}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_a_pseudometric(seed in any::<u64>(), p_idx in 0usize..4) {
        let p = [1.0, 2.0, 3.0, f64::INFINITY][p_idx];
        let budget = NormBudget::new(1.7, 1.3, 2.2, 1.9, 2.5, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_params(&mut rng, 2, 2, 3, &budget, true, 1.0);
        let b = random_params(&mut rng, 2, 2, 3, &budget, true, 1.0);
        let c = random_params(&mut rng, 2, 2, 3, &budget, true, 1.0);
        let ab = param_distance(&a, &b, &budget).unwrap();
        let ba = param_distance(&b, &a, &budget).unwrap();
        let bc = param_distance(&b, &c, &budget).unwrap();
        let ac = param_distance(&a, &c, &budget).unwrap();
        prop_assert_eq!(param_distance(&a, &a, &budget).unwrap(), 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(ac <= ab + bc + 1e-9);
    }
}
