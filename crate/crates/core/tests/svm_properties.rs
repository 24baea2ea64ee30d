use hypersem_core::geometry::{self, Space};
use hypersem_core::rng;
use hypersem_core::svm::{self, LabeledDataset, SvmConfig};
use proptest::prelude::*;

/// `count` Gaussian points in `d` dimensions labeled by the sign of `n·x`,
/// keeping only those at least `margin` from the hyperplane.
fn planted(d: usize, count: usize, margin: f64, seed: u64) -> (Vec<f64>, LabeledDataset) {
    let mut r = rng::seeded(seed);
    let n = geometry::normalize(&rng::normal_vec(&mut r, d)).unwrap();
    let mut ds = LabeledDataset::new(d, Space::Z);
    while ds.len() < count {
        let x = rng::normal_vec(&mut r, d);
        let s = geometry::dot(&n, &x);
        if s.abs() >= margin {
            ds.push(&x, if s >= 0.0 { 1 } else { -1 }).unwrap();
        }
    }
    (n, ds)
}

#[test]
fn recovers_planted_normal_in_32_dims() {
    let (n, ds) = planted(32, 2000, 0.0, 11);
    let b = svm::fit(&ds, &SvmConfig::default()).unwrap();
    let cos = geometry::dot(&n, b.direction.normal());
    assert!(cos >= 0.95, "cosine {cos}");
}

#[test]
fn separable_with_margin_is_fit_exactly_at_small_lambda() {
    for seed in 0..8 {
        let (_, ds) = planted(16, 600, 0.5, seed);
        let cfg = SvmConfig { lambda: 1e-4, ..SvmConfig::default() };
        let b = svm::fit(&ds, &cfg).unwrap();
        assert_eq!(b.train_accuracy, 1.0, "seed {seed}");
    }
}

#[test]
fn flipped_labels_flip_the_normal() {
    let (_, ds) = planted(16, 800, 0.3, 5);
    let cfg = SvmConfig::default();
    let a = svm::fit(&ds, &cfg).unwrap();
    let b = svm::fit(&ds.flipped(), &cfg).unwrap();
    let cos = geometry::cosine(&a.direction, &b.direction).unwrap();
    assert!(cos <= -0.99, "cosine {cos}");
    for (x, _) in ds.iter() {
        assert_eq!(svm::classify(&a, x).unwrap(), -svm::classify(&b, x).unwrap());
    }
}

#[test]
fn scaled_inputs_classify_the_same() {
    let (_, ds) = planted(12, 500, 0.5, 8);
    let cfg = SvmConfig { lambda: 1e-4, ..SvmConfig::default() };
    let base = svm::fit(&ds, &cfg).unwrap();
    for c in [0.5, 2.0, 10.0] {
        let scaled = svm::fit(&ds.scaled(c), &cfg).unwrap();
        for (x, _) in ds.iter() {
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            assert_eq!(svm::classify(&base, x).unwrap(), svm::classify(&scaled, &xs).unwrap(), "c = {c}");
        }
    }
}

#[test]
fn validation_accuracy_is_recorded() {
    let (_, ds) = planted(8, 400, 0.2, 3);
    let (_, val) = planted(8, 100, 0.2, 3);
    let b = svm::fit_with_validation(&ds, &val, &SvmConfig::default()).unwrap();
    assert_eq!(b.val_accuracy, svm::accuracy(&b, &val).unwrap());
    assert_eq!(b.direction.meta().val_accuracy, b.val_accuracy);
    assert_eq!(b.direction.meta().train_count, 400);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_is_deterministic(seed in any::<u64>(), data_seed in 0u64..1000) {
        let (_, ds) = planted(10, 200, 0.0, data_seed);
        let cfg = SvmConfig::default().with_seed(seed);
        let a = svm::fit(&ds, &cfg).unwrap();
        let b = svm::fit(&ds, &cfg).unwrap();
        prop_assert_eq!(a.direction.normal(), b.direction.normal());
        prop_assert_eq!(a.direction.intercept().to_bits(), b.direction.intercept().to_bits());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn normals_are_unit(data_seed in 0u64..1000, lambda in 1e-4f64..1.0) {
        let (_, ds) = planted(6, 120, 0.0, data_seed);
        let b = svm::fit(&ds, &SvmConfig { lambda, ..SvmConfig::default() }).unwrap();
        prop_assert!((geometry::norm(b.direction.normal()) - 1.0).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&b.train_accuracy));
    }
}
