use std::path::Path;

use cplmix_core::data::{
    augment_batch, csv_string, dataset_from_csv, dataset_from_raw, make_synthetic, raw_bytes, SampleCounts,
};
use cplmix_core::{AugmenterKind, Dataset, GaussianMixtureSpec, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..20, 1usize..6, any::<bool>()).prop_flat_map(|(n, d, labeled)| {
        (
            prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, n * d),
            prop::collection::vec(0usize..5, n),
        )
            .prop_map(move |(x, l)| Dataset::new(Tensor::new(n, d, x).unwrap(), labeled.then_some(l)).unwrap())
    })
}

fn bayes_accuracy(spec: &GaussianMixtureSpec, x: &Tensor, labels: &[usize]) -> f64 {
    let hits = (0..x.rows())
        .filter(|&r| {
            let p = spec.posterior(x.row_slice(r)).unwrap();
            let best = (0..p.len()).max_by(|&a, &b| p.parts()[a].total_cmp(&p.parts()[b])).unwrap();
            best == labels[r]
        })
        .count();
    hits as f64 / x.rows() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn raw_round_trip_is_bit_exact(ds in dataset()) {
        let back = dataset_from_raw(&raw_bytes(&ds), Path::new("mem.bin")).unwrap();
        prop_assert_eq!(back.x().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        ds.x().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.x().shape(), ds.x().shape());
    }

    #[test]
    fn csv_round_trip_within_rounding(ds in dataset()) {
        let back = dataset_from_csv(&csv_string(&ds), Path::new("mem.csv"), false).unwrap();
        for (a, b) in back.x().data().iter().zip(ds.x().data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        prop_assert_eq!(back.labels(), ds.labels());
    }
}

#[test]
fn resampled_points_keep_bayes_accuracy() {
    let spec = GaussianMixtureSpec::new(
        vec![0.5, 0.3, 0.2],
        vec![vec![0.0, 0.0], vec![1.5, 0.0], vec![0.0, 1.5]],
        vec![vec![1.0, 1.0], vec![0.5, 1.0], vec![1.0, 2.0]],
    )
    .unwrap();
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let reference = make_synthetic(&spec, &SampleCounts::Total(n), &mut rng).unwrap();
    let labels = reference.labels().unwrap();
    let p = bayes_accuracy(&spec, reference.x(), labels);
    let se = (2.0 * p * (1.0 - p) / n as f64).sqrt();
    for c in [0.3, 1.0] {
        let kind = AugmenterKind::OracleResample { spec: spec.clone(), concentration: c };
        let aug = augment_batch(reference.x(), Some(labels), &kind, &mut rng).unwrap();
        let q = bayes_accuracy(&spec, &aug, labels);
        assert!((q - p).abs() <= 3.0 * se, "c={c}: {q} vs {p} ± {se}");
    }
}
