use cplmix_core::simplex::{
    aitchison_distance, aitchison_distance_pairwise, clr, clr_inverse, closure, perturb, perturbed_distance, power,
    sigma_distance_bounds, weighted_distance_gap, SigmaWeights, SimplexVector,
};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn simplex(k: usize) -> impl Strategy<Value = SimplexVector> {
    prop::collection::vec(-4.0f64..4.0, k).prop_map(|z| closure(&z.iter().map(|v| v.exp()).collect::<Vec<_>>()).unwrap())
}

fn sized_pair() -> impl Strategy<Value = (SimplexVector, SimplexVector, SimplexVector)> {
    prop::sample::select(vec![2usize, 3, 5, 10, 20]).prop_flat_map(|k| (simplex(k), simplex(k), simplex(k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn metric_axioms((x, y, z) in sized_pair()) {
        let dxy = aitchison_distance(&x, &y).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!(aitchison_distance(&x, &x).unwrap() <= TOL);
        prop_assert!((dxy - aitchison_distance(&y, &x).unwrap()).abs() <= TOL);
        let via = dxy + aitchison_distance(&y, &z).unwrap();
        prop_assert!(aitchison_distance(&x, &z).unwrap() <= via + TOL);
    }

    #[test]
    fn translation_invariance((x, y, v) in sized_pair()) {
        let moved = aitchison_distance(&perturb(&x, &v).unwrap(), &perturb(&y, &v).unwrap()).unwrap();
        prop_assert!((moved - aitchison_distance(&x, &y).unwrap()).abs() <= TOL);
    }

    #[test]
    fn clr_is_centered_and_invertible((x, _, _) in sized_pair()) {
        let z = clr(&x);
        prop_assert!(z.coords().iter().sum::<f64>().abs() <= 1e-12);
        let back = clr_inverse(&z);
        for (a, b) in back.parts().iter().zip(x.parts()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pairwise_formula_is_an_isometry((x, y, _) in sized_pair()) {
        let a = aitchison_distance_pairwise(&x, &y).unwrap();
        prop_assert!((a - aitchison_distance(&x, &y).unwrap()).abs() <= TOL);
    }

    #[test]
    fn clr_is_additive_over_perturbation(k in prop::sample::select(vec![2usize, 3, 5, 10, 20]), n in prop::sample::select(vec![2usize, 3, 5]), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<SimplexVector> = (0..n)
            .map(|_| closure(&(0..k).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect::<Vec<_>>()).unwrap())
            .collect();
        let mut acc = parts[0].clone();
        for p in &parts[1..] {
            acc = perturb(&acc, p).unwrap();
        }
        let lhs = clr(&acc);
        for i in 0..k {
            let rhs: f64 = parts.iter().map(|p| clr(p).coords()[i]).sum();
            prop_assert!((lhs.coords()[i] - rhs).abs() <= TOL);
        }
    }

    #[test]
    fn power_scales_clr(alpha in -3.0f64..3.0, (x, _, _) in sized_pair()) {
        let scaled = clr(&power(alpha, &x).unwrap());
        for (a, b) in scaled.coords().iter().zip(clr(&x).coords()) {
            prop_assert!((a - alpha * b).abs() <= 1e-9);
        }
    }

    #[test]
    fn unit_sigma_adds_the_log_ratio_mean((x, y, _) in sized_pair()) {
        let k = x.len();
        let ones = SigmaWeights::ones(k);
        let d2 = perturbed_distance(&x, &y, &ones, &ones).unwrap().powi(2);
        let delta: f64 = x.parts().iter().zip(y.parts()).map(|(a, b)| (a / b).ln()).sum();
        let ds2 = aitchison_distance(&x, &y).unwrap().powi(2);
        prop_assert!((d2 - ds2 - delta * delta / k as f64).abs() <= TOL * d2.max(1.0));
        let b = sigma_distance_bounds(&x, &y, &ones, &ones).unwrap();
        prop_assert_eq!(b.rho_l, 0.0);
        prop_assert_eq!(b.delta_sigma, 0.0);
    }

    // Only the lower side of the weighted gap holds on every draw; the other
    // bounds fail on random inputs and are exercised by the acceptance suite.
    #[test]
    fn weighted_gap_is_nonnegative_and_equals_k_mean_square((x, y, vx) in sized_pair(), seed in 0u64..1000) {
        let vy = closure(&(0..x.len()).map(|i| 1.0 + ((seed as usize + 7 * i) % 11) as f64).collect::<Vec<_>>()).unwrap();
        let g = weighted_distance_gap(&x, &y, &vx, &vy).unwrap();
        prop_assert!(g.gap >= -TOL * g.d2_v.max(1.0));
        prop_assert!((g.gap - g.k_d2).abs() <= TOL * g.d2_v.max(1.0));
    }
}

#[test]
fn sigma_sandwich_counterexample() {
    // Equal σ below one: d_σ² = d_S²/σ² + Δ²/(Kσ²) exceeds d_S² + ρ_u although
    // every ingredient is finite and well conditioned.
    let a = SimplexVector::new(vec![0.7, 0.2, 0.1]).unwrap();
    let b = SimplexVector::new(vec![0.1, 0.2, 0.7]).unwrap();
    let s = SigmaWeights::new(vec![0.3; 3]).unwrap();
    let ds2 = aitchison_distance(&a, &b).unwrap().powi(2);
    let d2 = perturbed_distance(&a, &b, &s, &s).unwrap().powi(2);
    let bounds = sigma_distance_bounds(&a, &b, &s, &s).unwrap();
    assert!(!bounds.contains(ds2, d2, TOL), "{ds2} {d2} {bounds:?}");
}
