#![allow(dead_code)]

use conceptsel::io::AttributePool;
use conceptsel::optim::stream_rng;
use conceptsel::selector::{Dictionary, Head, Objective, RegKind, TrainConfig};
use conceptsel::tensor::{l2_normalize_rows, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub dict: Dictionary,
    pub head: Head,
    pub batch: Matrix,
    pub labels: Vec<usize>,
    pub pool: AttributePool,
    pub obj: Objective,
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Random small problem with every dimension drawn from its own range.
pub fn instance(seed: u64, d: usize, k: usize, n: usize, classes: usize, m: usize, reg: RegKind) -> Instance {
    let mut rng = stream_rng(seed, 99);
    let pool_rows = l2_normalize_rows(&gaussian(&mut rng, n, d)).unwrap();
    let pool = AttributePool::new(pool_rows, (0..n).map(|i| format!("t{i}")).collect()).unwrap();
    let batch = l2_normalize_rows(&gaussian(&mut rng, m, d)).unwrap();
    let labels = (0..m).map(|_| rng.random_range(0..classes)).collect();
    let dict = Dictionary {
        e: gaussian(&mut rng, k, d),
    };
    let head = Head {
        w: gaussian(&mut rng, classes, k),
        b: (0..classes).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let cfg = TrainConfig {
        k,
        lambda: 0.5,
        reg_kind: reg,
        ..TrainConfig::default()
    };
    let obj = Objective::new(&pool, &cfg).unwrap();
    Instance {
        dict,
        head,
        batch,
        labels,
        pool,
        obj,
    }
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
