use paced_forest_core::forest::Forest;
use paced_forest_core::leafopt::{update_leaves, update_leaves_with, LeafUpdateConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64) -> (Forest, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 80;
    let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let ys: Vec<f64> = feats.iter().map(|f| f[0] + 0.5 * f[1] * f[1] + rng.random_range(-0.3..0.3)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let forest = Forest::init(3, 3, 5, &ys, seed).unwrap();
    (forest, feats, ys, v)
}

#[test]
fn objective_never_decreases() {
    for seed in 0..5 {
        let (f, x, y, v) = problem(seed);
        let out = update_leaves(&f, &x, &y, &v, &LeafUpdateConfig::default()).unwrap();
        assert_eq!(out.objective.len(), 21);
        for w in out.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {w:?}");
        }
        assert!(out.objective[20] > out.objective[0]);
    }
}

#[test]
fn converged_leaves_are_a_fixed_point() {
    let (f, x, y, v) = problem(11);
    let cfg = LeafUpdateConfig {
        iterations: 400,
        ..Default::default()
    };
    let once = update_leaves(&f, &x, &y, &v, &cfg).unwrap().forest;
    let again = update_leaves(&once, &x, &y, &v, &LeafUpdateConfig { iterations: 1, ..cfg }).unwrap().forest;
    for (a, b) in once.trees().iter().zip(again.trees()) {
        for (la, lb) in a.leaves().iter().zip(b.leaves()) {
            assert!((la.mu - lb.mu).abs() < 1e-6 * (1.0 + la.mu.abs()));
            assert!((la.sigma2 - lb.sigma2).abs() < 1e-6 * (1.0 + la.sigma2));
        }
    }
}

#[test]
fn targets_scaled_and_shifted_move_leaves_alike() {
    let (f, x, y, v) = problem(3);
    let (c, b) = (3.0, -2.0);
    let y2: Vec<f64> = y.iter().map(|t| c * t + b).collect();
    // Same starting point in the transformed coordinates.
    let trees: Vec<_> = f
        .trees()
        .iter()
        .map(|t| {
            let leaves = t
                .leaves()
                .iter()
                .map(|l| paced_forest_core::forest::LeafParams {
                    mu: c * l.mu + b,
                    sigma2: c * c * l.sigma2,
                })
                .collect();
            paced_forest_core::forest::Tree::new(t.depth(), t.split_features().to_vec(), leaves).unwrap()
        })
        .collect();
    let f2 = Forest::new(trees, f.feature_dim(), 1e-4).unwrap();
    let cfg = LeafUpdateConfig {
        iterations: 5,
        sigma2_floor: 1e-12,
        ..Default::default()
    };
    let a = update_leaves(&f, &x, &y, &v, &cfg).unwrap().forest;
    let z = update_leaves(&f2, &x, &y2, &v, &cfg).unwrap().forest;
    for (ta, tz) in a.trees().iter().zip(z.trees()) {
        for (la, lz) in ta.leaves().iter().zip(tz.leaves()) {
            assert!((c * la.mu + b - lz.mu).abs() < 1e-8);
            assert!((c * c * la.sigma2 - lz.sigma2).abs() < 1e-8 * (1.0 + lz.sigma2));
        }
    }
}

#[test]
fn parallel_update_matches_sequential() {
    let (f, x, y, v) = problem(4);
    let a = update_leaves_with(&f, &x, &y, &v, &LeafUpdateConfig::default(), false).unwrap();
    let b = update_leaves_with(&f, &x, &y, &v, &LeafUpdateConfig::default(), true).unwrap();
    assert_eq!(a.objective, b.objective);
    assert_eq!(a.forest, b.forest);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn monotone_on_random_problems(seed in 0u64..1_000_000) {
        let (f, x, y, v) = problem(seed);
        let cfg = LeafUpdateConfig { iterations: 8, ..Default::default() };
        let out = update_leaves(&f, &x, &y, &v, &cfg).unwrap();
        for w in out.objective.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
        for t in out.forest.trees() {
            prop_assert!(t.leaves().iter().all(|l| l.sigma2 >= 1e-4 && l.mu.is_finite()));
        }
    }
}
