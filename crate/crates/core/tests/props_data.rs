//! Properties of trace containers, normalization, the dataset file format
//! and the information kernels.

use proptest::prelude::*;

use scd_core::infomath::{
    binned_entropy, mi_gaussian, mi_histogram, redundancy, ClassStats,
};
use scd_core::tracekit::{
    decode_dataset, encode_dataset, fit_normalizer, DualTrace, LabelInfo, LabeledDataset, Record, Trace,
};

fn labels(n: usize) -> Vec<LabelInfo> {
    (0..n)
        .map(|i| LabelInfo {
            name: format!("op{i}"),
            group: i % 2,
        })
        .collect()
}

fn dataset() -> impl Strategy<Value = LabeledDataset> {
    (2usize..12, 1usize..20).prop_flat_map(|(w, n)| {
        prop::collection::vec(
            (
                prop::collection::vec(-5.0f32..5.0, w),
                prop::collection::vec(-5.0f32..5.0, w),
                0usize..3,
            ),
            n,
        )
        .prop_map(|rows| {
            let records = rows
                .into_iter()
                .map(|(p, e, c)| Record {
                    trace: DualTrace::new(Trace::new(p), Trace::new(e)).unwrap(),
                    instr: c,
                    group: c % 2,
                    session: 0,
                })
                .collect();
            LabeledDataset::new(labels(3), records).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn training_traces_normalize_into_unit_range(ds in dataset()) {
        let stats = fit_normalizer(&ds).unwrap();
        let w = stats.window();
        let mut hit_lo = vec![false; w];
        let mut hit_hi = vec![false; w];
        for r in ds.records() {
            let n = stats.normalize_dual(&r.trace).unwrap();
            for (k, &v) in n.power().samples().iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&v));
                hit_lo[k] |= v == 0.0;
                hit_hi[k] |= v == 1.0;
            }
        }
        for k in 0..w {
            if !stats.power.is_constant(k) {
                prop_assert!(hit_lo[k] && hit_hi[k], "index {k}");
            }
            prop_assert!(stats.power.max[k] >= stats.power.min[k]);
        }
    }

    #[test]
    fn normalize_is_idempotent_on_clamped_data(ds in dataset(), probe in prop::collection::vec(-10.0f32..10.0, 12)) {
        let stats = fit_normalizer(&ds).unwrap();
        let w = stats.window();
        let once = stats.power.normalize(&Trace::new(probe[..w].to_vec())).unwrap();
        // unit bounds make normalization the identity on [0, 1]
        let unit = scd_core::tracekit::ChannelBounds { min: vec![0.0; w], max: vec![1.0; w] };
        let twice = unit.normalize(&once).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn dataset_file_round_trip(ds in dataset()) {
        let bytes = encode_dataset(&ds).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        let total: f64 = back.class_priors().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn gaussian_mi_is_non_negative(
        sigma in 0.01f64..2.0,
        classes in prop::collection::vec(0.01f64..2.0, 2..10),
    ) {
        let stats = ClassStats::equal_priors(sigma, classes).unwrap();
        prop_assert!(mi_gaussian(&stats).unwrap() >= 0.0);
    }

    #[test]
    fn gaussian_mi_of_exact_moments_is_non_negative_before_clamping(
        means in prop::collection::vec(0.0f64..1.0, 2..8),
        s in 0.01f64..0.5,
    ) {
        // mixture variance is never below the mean class variance
        let n = means.len();
        let stats = ClassStats::from_moments(means, vec![s; n], vec![1.0 / n as f64; n]).unwrap();
        let raw = 0.5 * (stats.sigma * stats.sigma / (s * s)).log2();
        prop_assert!(raw >= -1e-9);
    }

    #[test]
    fn histogram_mi_ignores_record_order(
        rows in prop::collection::vec((0.0f64..=1.0, 0usize..4), 2..200),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (v, l): (Vec<f64>, Vec<usize>) = rows.iter().cloned().unzip();
        let a = mi_histogram(&v, &l, 16).unwrap();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (v2, l2): (Vec<f64>, Vec<usize>) = shuffled.into_iter().unzip();
        prop_assert!((a - mi_histogram(&v2, &l2, 16).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn redundancy_is_bounded_by_entropies(
        pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2..300),
        bins in 2usize..40,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = redundancy(&a, &b, bins).unwrap();
        let h = binned_entropy(&a, bins).unwrap().min(binned_entropy(&b, bins).unwrap());
        prop_assert!(r >= -1e-12);
        prop_assert!(r <= h + 1e-9);
    }
}
