use conceptsel::interpret::class_importance;
use conceptsel::io::ImageSet;
use conceptsel::optim::TrainReport;
use conceptsel::probe::{evaluate, train_image_probe, train_probe};
use conceptsel::projection::{semantic_project, ScoreMatrix};
use conceptsel::selector::{select_learned, TrainConfig};
use conceptsel::synthetic::{gen_planted_task, gen_random_pool, PlantedTaskConfig};

fn first_epoch_at_best(r: &TrainReport) -> usize {
    r.evals.iter().find(|e| e.val_acc == r.best_val_acc).unwrap().epoch
}

fn raw_scores(set: &ImageSet) -> ScoreMatrix {
    let names = (0..set.dim()).map(|i| format!("f{i}")).collect();
    ScoreMatrix::new(set.embeddings.clone(), names).unwrap()
}

#[test]
fn planted_attributes_probe_well() {
    let task = gen_planted_task(&PlantedTaskConfig::default()).unwrap();
    let pool = task.pool.subset(&task.planted_indices);
    let cfg = TrainConfig::default();
    let tr = semantic_project(&task.train, &pool).unwrap();
    let model = train_probe(&tr, &task.train.labels, 10, None, &cfg).unwrap();
    let acc = evaluate(&model, &semantic_project(&task.test, &pool).unwrap(), &task.test.labels)
        .unwrap()
        .accuracy;
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn warm_start_reaches_best_no_later_than_cold() {
    let task = gen_planted_task(&PlantedTaskConfig::default()).unwrap();
    let cfg = TrainConfig::default();
    let learned = select_learned(&task.train, &task.pool, &cfg).unwrap();
    let pool = task.pool.subset(&learned.selection.indices);
    let tr = semantic_project(&task.train, &pool).unwrap();
    let cold = train_probe(&tr, &task.train.labels, 10, None, &cfg).unwrap();
    let warm = train_probe(&tr, &task.train.labels, 10, Some(&learned.head), &cfg).unwrap();
    assert!(first_epoch_at_best(&warm.report) <= first_epoch_at_best(&cold.report));
    let acc = evaluate(&cold, &semantic_project(&task.test, &pool).unwrap(), &task.test.labels)
        .unwrap()
        .accuracy;
    assert!(acc >= 0.95, "learned selection accuracy {acc}");
}

#[test]
fn top_attributes_include_a_prototype_component() {
    // Planted attributes plus eight distractors, so the ranking has wrong answers to avoid.
    let task = gen_planted_task(&PlantedTaskConfig::default()).unwrap();
    let mut idx = task.planted_indices.clone();
    idx.extend((0..task.pool.len()).filter(|i| !task.planted_indices.contains(i)).take(8));
    let pool = task.pool.subset(&idx);
    let cfg = TrainConfig::default();
    let model = train_probe(&semantic_project(&task.train, &pool).unwrap(), &task.train.labels, 10, None, &cfg).unwrap();
    let test = semantic_project(&task.test, &pool).unwrap();
    for (c, comp) in task.composition.iter().enumerate() {
        let e = class_importance(&model, &test, &task.test.labels, c, 3).unwrap();
        assert!(
            e.top.iter().any(|r| comp.pool_indices.contains(&idx[r.index])),
            "class {c}: top {:?}",
            e.top
        );
    }
}

#[test]
fn image_probe_rank_matters() {
    let task = gen_planted_task(&PlantedTaskConfig {
        classes: 3,
        planted_attrs: 3,
        ..PlantedTaskConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig::default();
    let narrow = train_image_probe(&task.train, &task.test, 1, &cfg).unwrap();
    let wide = train_image_probe(&task.train, &task.test, 8, &cfg).unwrap();
    assert!(narrow.test_acc < wide.test_acc, "{} vs {}", narrow.test_acc, wide.test_acc);
    assert_eq!(wide, train_image_probe(&task.train, &task.test, 8, &cfg).unwrap());
}

#[test]
fn image_probe_separates_noiseless_classes() {
    let task = gen_planted_task(&PlantedTaskConfig {
        noise_sigma: 0.0,
        ..PlantedTaskConfig::default()
    })
    .unwrap();
    let r = train_image_probe(&task.train, &task.test, 10, &TrainConfig::default()).unwrap();
    assert_eq!(r.test_acc, 1.0);
}

#[test]
fn orthonormal_basis_probe_matches_raw_features() {
    let task = gen_planted_task(&PlantedTaskConfig::default()).unwrap();
    let cfg = TrainConfig::default();
    let raw = train_probe(&raw_scores(&task.train), &task.train.labels, 10, None, &cfg).unwrap();
    let raw_acc = evaluate(&raw, &raw_scores(&task.test), &task.test.labels).unwrap().accuracy;
    let basis = gen_random_pool(task.train.dim(), task.train.dim(), 0, true).unwrap();
    let rot = train_probe(&semantic_project(&task.train, &basis).unwrap(), &task.train.labels, 10, None, &cfg).unwrap();
    let rot_acc = evaluate(&rot, &semantic_project(&task.test, &basis).unwrap(), &task.test.labels)
        .unwrap()
        .accuracy;
    assert!((raw_acc - rot_acc).abs() <= 0.005, "{raw_acc} vs {rot_acc}");
}
