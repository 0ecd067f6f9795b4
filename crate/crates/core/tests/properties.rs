use nalgebra::DMatrix;
use proptest::prelude::*;
use rankcast_core::compress::rank_for_ratio;
use rankcast_core::formula::pearson;
use rankcast_core::spectral::{
    effective_rank_of_spectrum, numerical_rank, singular_values, stable_rank_of_spectrum,
    truncation_error_of_spectrum, truncation_floor,
};
use rankcast_core::{load_bundle, save_bundle, ModelBundle, Role, WeightMatrix};

fn matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..12, 1usize..12).prop_flat_map(|(m, n)| {
        prop::collection::vec(-10.0f64..10.0, m * n)
            .prop_map(move |v| DMatrix::from_vec(m, n, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_chain_and_scale_invariance(w in matrix(), c in 1e-3f64..1e3) {
        prop_assume!(w.norm() > 1e-6);
        let s = singular_values(&w).unwrap();
        let (rs, re) = (stable_rank_of_spectrum(&s).unwrap(), effective_rank_of_spectrum(&s).unwrap());
        let rank = numerical_rank(&s) as f64;
        prop_assert!(1.0 - 1e-12 <= rs && rs <= re + 1e-12 && re <= rank + 1e-12);
        let sc = singular_values(&(&w * -c)).unwrap();
        prop_assert!((stable_rank_of_spectrum(&sc).unwrap() - rs).abs() < 1e-9);
        prop_assert!((effective_rank_of_spectrum(&sc).unwrap() - re).abs() < 1e-9);
    }

    #[test]
    fn truncation_error_is_monotone_and_floored(w in matrix()) {
        prop_assume!(w.norm() > 1e-6);
        let s = singular_values(&w).unwrap();
        let rs = stable_rank_of_spectrum(&s).unwrap();
        let errs: Vec<f64> = (0..=s.len()).map(|k| truncation_error_of_spectrum(&s, k).unwrap()).collect();
        prop_assert!((errs[0] - 1.0).abs() < 1e-12);
        prop_assert!(errs[s.len()].abs() < 1e-12);
        for (k, pair) in errs.windows(2).enumerate() {
            prop_assert!(pair[1] <= pair[0] + 1e-15);
            prop_assert!(truncation_floor(rs, k) <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn rank_for_ratio_is_the_largest_fitting_rank(m in 1usize..2000, n in 1usize..2000, gamma in 0.01f64..=1.0) {
        let choice = rank_for_ratio(m, n, gamma).unwrap();
        let budget = gamma * (m * n) as f64;
        let cost = |k: usize| (k * (m + n)) as f64;
        prop_assert!(choice.k >= 1 && choice.k <= m.min(n));
        if choice.over_budget {
            prop_assert_eq!(choice.k, 1);
        } else {
            prop_assert!(cost(choice.k) <= budget * (1.0 + 1e-12));
            prop_assert!(choice.k == m.min(n) || cost(choice.k + 1) > budget);
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&moved, &y).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson(&flipped, &y).unwrap() + r).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn f32_bundles_round_trip(
        shapes in prop::collection::vec((1usize..9, 1usize..9), 1..4),
        seed in any::<u32>(),
    ) {
        let matrices: Vec<WeightMatrix> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let values = (0..r * c)
                    .map(|j| ((seed as usize + i * 131 + j * 7) % 1000) as f32 / 37.0 - 13.0)
                    .collect();
                WeightMatrix::from_f32(format!("layers.{i}.mlp.up"), Role::MlpUp, i as u32, r, c, values).unwrap()
            })
            .collect();
        let bundle = ModelBundle::new(matrices, Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, dir.path().join("b")).unwrap();
        let back = load_bundle(dir.path().join("b")).unwrap();
        prop_assert_eq!(back.matrices, bundle.matrices);
    }
}
