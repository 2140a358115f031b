use conceptsel::optim::stream_rng;
use conceptsel::selector::{greedy_indices, init_dictionary, train, TrainConfig};
use conceptsel::stats::{fit_gaussian, mahalanobis};
use conceptsel::synthetic::{gen_planted_task, gen_random_pool, PlantedTaskConfig};
use conceptsel::tensor::{cosine, Matrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn planted_task_reaches_high_validation_accuracy() {
    let task = gen_planted_task(&PlantedTaskConfig::default()).unwrap();
    let (_, _, report) = train(&task.train, &task.pool, &TrainConfig::default()).unwrap();
    assert!(report.best_val_acc >= 0.9, "val acc {}", report.best_val_acc);
    assert!(!report.evals.is_empty());
}

#[test]
fn zero_learning_rate_leaves_init_untouched() {
    let task = gen_planted_task(&PlantedTaskConfig::default()).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let (dict, head, _) = train(&task.train, &task.pool, &cfg).unwrap();
    assert_eq!(dict, init_dictionary(&task.pool, &cfg).unwrap());
    assert!(head.w.data().iter().chain(&head.b).all(|v| *v == 0.0));
}

#[test]
fn same_seed_gives_identical_report() {
    let task = gen_planted_task(&PlantedTaskConfig {
        train_per_class: 20,
        ..PlantedTaskConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 300,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let a = train(&task.train, &task.pool, &cfg).unwrap();
    let b = train(&task.train, &task.pool, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn mahalanobis_distance_falls_as_lambda_grows() {
    let task = gen_planted_task(&PlantedTaskConfig::default()).unwrap();
    let base = TrainConfig::default();
    let g = fit_gaussian(&task.pool, base.ridge_scale).unwrap();
    let mut prev = f64::INFINITY;
    for lambda in [0.0, 0.001, 0.01, 0.1, 1.0] {
        let (dict, _, _) = train(&task.train, &task.pool, &TrainConfig { lambda, ..base.clone() }).unwrap();
        let mean = dict.e.iter_rows().map(|r| mahalanobis(&g, r).unwrap()).sum::<f64>() / dict.e.rows() as f64;
        assert!(mean <= prev, "lambda {lambda}: {mean} > {prev}");
        prev = mean;
    }
}

/// Direct transcription of the sequential argmax with exclusions.
fn brute_force_greedy(e: &Matrix, pool: &Matrix) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for row in e.iter_rows() {
        let mut best = None;
        let mut best_cos = f64::NEG_INFINITY;
        for (i, t) in pool.iter_rows().enumerate() {
            if out.contains(&i) {
                continue;
            }
            let c = cosine(t, row).unwrap();
            if c > best_cos {
                best_cos = c;
                best = Some(i);
            }
        }
        out.push(best.unwrap());
    }
    out
}

proptest! {
    #[test]
    fn greedy_matches_brute_force(seed in 0u64..10_000, k in 1usize..=3, extra in 0usize..=7, d in 2usize..=5) {
        let n = k + extra;
        let pool = gen_random_pool(n, d, seed, false).unwrap();
        let e = gen_random_pool(k, d, seed + 1, false).unwrap().embeddings;
        let got = greedy_indices(&e, &pool.embeddings).unwrap();
        let mut seen = got.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), k);
        prop_assert_eq!(got, brute_force_greedy(&e, &pool.embeddings));
    }

    #[test]
    fn greedy_follows_pool_permutations(seed in 0u64..10_000, k in 1usize..=6) {
        let pool = gen_random_pool(12, 6, seed, false).unwrap();
        let e = gen_random_pool(k, 6, seed + 7, false).unwrap().embeddings;
        let mut perm: Vec<usize> = (0..12).collect();
        perm.shuffle(&mut stream_rng(seed, 5));
        let shuffled = pool.embeddings.select_rows(&perm);
        let a = greedy_indices(&e, &pool.embeddings).unwrap();
        let b: Vec<usize> = greedy_indices(&e, &shuffled).unwrap().into_iter().map(|i| perm[i]).collect();
        prop_assert_eq!(a, b);
    }
}
