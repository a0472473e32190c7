use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdcn_core::feature_selection::{f1_curve, f1_score, rfe_rank, train_linear_svm, SvmParams};
use sgdcn_core::features::FeatureMatrix;

/// `n` samples, `d` uniform columns; labels depend on the columns in
/// `informative` plus label noise.
fn planted(n: usize, d: usize, informative: &[usize], seed: u64) -> (FeatureMatrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let score: f64 = informative.iter().map(|&j| row[j] - 0.5).sum::<f64>() + rng.random_range(-0.1..0.1);
        y.push(u8::from(score > 0.0));
        data.extend(row);
    }
    (FeatureMatrix::new((0..d).map(|j| format!("x[{j}]")).collect(), n, data).unwrap(), y)
}

#[test]
fn informative_columns_rank_first() {
    let mut hits = 0;
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut cols: Vec<usize> = (0..30).collect();
        cols.shuffle(&mut rng);
        let inf = &cols[..5];
        let (x, y) = planted(500, 30, inf, seed);
        let r = rfe_rank(&x, &y, &SvmParams::default()).unwrap();
        let mut sorted = r.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
        if inf.iter().all(|j| r.order[..8].contains(j)) {
            hits += 1;
        }
    }
    assert_eq!(hits, 4);
}

#[test]
fn ranking_is_equivariant_under_column_permutation() {
    let (x, y) = planted(300, 8, &[1, 6], 7);
    let perm = [3usize, 7, 0, 5, 1, 6, 2, 4]; // new column i = old column perm[i]
    let xp = x.select_columns(&perm);
    let a = rfe_rank(&x, &y, &SvmParams::default()).unwrap();
    let b = rfe_rank(&xp, &y, &SvmParams::default()).unwrap();
    let mapped: Vec<usize> = b.order.iter().map(|&i| perm[i]).collect();
    // The top of the ranking is driven by the informative columns.
    assert_eq!(&mapped[..2], &a.order[..2]);
    assert_eq!(rfe_rank(&x, &y, &SvmParams::default()).unwrap(), a);
}

#[test]
fn random_labels_give_chance_f1() {
    for seed in 0..5 {
        let (x, _) = planted(200, 10, &[], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let y: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let (xv, _) = planted(200, 10, &[], seed + 1000);
        let yv: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let svm = train_linear_svm(&x, &y, &SvmParams::default()).unwrap();
        let f1 = f1_score(&svm.predict(&xv), &yv);
        assert!((0.3..=0.7).contains(&f1), "seed {seed}: {f1}");
    }
}

#[test]
fn curve_selects_small_k_for_two_relevant_columns() {
    let (x, y) = planted(400, 10, &[2, 5], 11);
    let (xv, yv) = planted(400, 10, &[2, 5], 12);
    let p = SvmParams::default();
    let r = rfe_rank(&x, &y, &p).unwrap();
    let curve = f1_curve(&r, &x, &y, &xv, &yv, &p, 0.005).unwrap();
    assert!(curve.selected_k <= 4, "{curve:?}");
    let full = train_linear_svm(&x, &y, &p).unwrap();
    let full_f1 = f1_score(&full.predict(&xv), &yv);
    assert!((curve.f1[9] - full_f1).abs() <= 0.01);
}

#[test]
fn noise_curve_is_flat() {
    let (x, _) = planted(300, 10, &[], 21);
    let (xv, _) = planted(300, 10, &[], 22);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<u8> = (0..300).map(|_| rng.random_range(0..2)).collect();
    let yv: Vec<u8> = (0..300).map(|_| rng.random_range(0..2)).collect();
    let p = SvmParams::default();
    let r = rfe_rank(&x, &y, &p).unwrap();
    let curve = f1_curve(&r, &x, &y, &xv, &yv, &p, 0.005).unwrap();
    let mean = curve.f1.iter().sum::<f64>() / curve.f1.len() as f64;
    assert!(curve.f1.iter().all(|f| (f - mean).abs() <= 0.1), "{curve:?}");
    assert!((1..=10).contains(&curve.selected_k));
}
