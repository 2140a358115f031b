//! Deterministic desk-scale datasets.
//!
//! Three generators mirror the geometry the method relies on: isotropic random
//! "words" (nearly orthogonal in high dimension), a tight cluster of "similar
//! words", and a classification task whose classes are built from a known
//! subset of pool attributes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{AttributePool, ImageSet};
use crate::optim::stream_rng;
use crate::tensor::{dot, l2_normalize_rows, norm, Matrix};

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Each generator draws from its own stream, so a pool and a task built from
// the same seed share no directions. The training streams live in `optim`.
const STREAM_PLANTED: u64 = 2;
const STREAM_RANDOM_POOL: u64 = 3;
const STREAM_SIMILAR_POOL: u64 = 4;

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, d);
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// `n` random orthonormal rows in `R^d` via Gram-Schmidt with one round of
/// re-orthogonalization.
fn random_orthonormal(rng: &mut impl Rng, n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if n > d {
        return Err(Error::TooManyForOrthonormal { n, d });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian_vec(rng, d);
        let start = norm(&v);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        // A draw that almost lies in the current span is redrawn.
        if n > 1e-6 * start {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    Ok(basis)
}

/// Isotropic random unit rows named `rand_<i>`.
pub fn gen_random_pool(n: usize, d: usize, seed: u64, orthonormalize: bool) -> Result<AttributePool> {
    if n == 0 || d == 0 {
        return Err(Error::Config("random pool needs n >= 1 and d >= 1".into()));
    }
    let mut rng = stream_rng(seed, STREAM_RANDOM_POOL);
    let rows = if orthonormalize {
        random_orthonormal(&mut rng, n, d)?
    } else {
        (0..n).map(|_| random_unit(&mut rng, d)).collect()
    };
    let names = (0..n).map(|i| format!("rand_{i}")).collect();
    AttributePool::new(Matrix::from_rows(&rows)?, names)
}

/// One random base direction plus per-row Gaussian perturbations whose
/// expected norm is `spread`.
pub fn gen_similar_pool(n: usize, d: usize, spread: f64, seed: u64) -> Result<AttributePool> {
    if spread.is_nan() || spread <= 0.0 {
        return Err(Error::Config(format!("spread must be positive, got {spread}")));
    }
    if n == 0 || d == 0 {
        return Err(Error::Config("similar pool needs n >= 1 and d >= 1".into()));
    }
    let mut rng = stream_rng(seed, STREAM_SIMILAR_POOL);
    let base = random_unit(&mut rng, d);
    let scale = spread / (d as f64).sqrt();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let g = gaussian_vec(&mut rng, d);
        data.extend(base.iter().zip(&g).map(|(b, e)| b + scale * e));
    }
    let m = l2_normalize_rows(&Matrix::new(n, d, data)?)?;
    let names = (0..n).map(|i| format!("sim_{i}")).collect();
    AttributePool::new(m, names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTaskConfig {
    pub classes: usize,
    pub dim: usize,
    pub planted_attrs: usize,
    pub distractor_attrs: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PlantedTaskConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            planted_attrs: 8,
            distractor_attrs: 192,
            train_per_class: 60,
            test_per_class: 100,
            noise_sigma: 0.15,
            seed: 0,
        }
    }
}

impl PlantedTaskConfig {
    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.planted_attrs == 0 {
            return fail("planted_attrs must be at least 1".into());
        }
        if self.classes < 2 {
            return fail("need at least 2 classes".into());
        }
        if self.dim == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return fail("dim and per-class counts must be positive".into());
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        let p = self.planted_attrs;
        let supports = if p == 1 { 1 } else { p * (p - 1) / 2 };
        if self.classes > supports {
            return fail(format!(
                "{} planted attributes admit only {supports} distinct class prototypes",
                p
            ));
        }
        Ok(())
    }
}

/// Which planted attributes (as pool indices) make up one class prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComposition {
    pub pool_indices: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub train: ImageSet,
    pub test: ImageSet,
    pub pool: AttributePool,
    /// Pool positions of the planted attributes, in planting order.
    pub planted_indices: Vec<usize>,
    pub composition: Vec<ClassComposition>,
}

/// JSON sidecar written next to the planted task manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSidecar {
    pub config: PlantedTaskConfig,
    pub planted_indices: Vec<usize>,
    pub composition: Vec<ClassComposition>,
}

impl PlantedTask {
    pub fn sidecar(&self, config: &PlantedTaskConfig) -> PlantedSidecar {
        PlantedSidecar {
            config: config.clone(),
            planted_indices: self.planted_indices.clone(),
            composition: self.composition.clone(),
        }
    }
}

/// Pairs of planted attributes for each class. The first classes take a
/// random perfect matching so every planted attribute is used; the rest take
/// random unused pairs.
fn class_supports(rng: &mut impl Rng, planted: usize, classes: usize) -> Vec<Vec<usize>> {
    if planted == 1 {
        return vec![vec![0]];
    }
    let mut order: Vec<usize> = (0..planted).collect();
    order.shuffle(rng);
    let mut supports: Vec<Vec<usize>> = Vec::with_capacity(classes);
    for pair in order.chunks(2) {
        if supports.len() == classes {
            break;
        }
        let mut s = if pair.len() == 2 {
            pair.to_vec()
        } else {
            // Odd count: pair the leftover with the first attribute of the matching.
            vec![pair[0], order[0]]
        };
        s.sort_unstable();
        supports.push(s);
    }
    let mut all_pairs: Vec<Vec<usize>> = (0..planted)
        .flat_map(|a| ((a + 1)..planted).map(move |b| vec![a, b]))
        .filter(|p| !supports.contains(p))
        .collect();
    all_pairs.shuffle(rng);
    supports.extend(all_pairs.into_iter().take(classes - supports.len()));
    supports
}

pub fn gen_planted_task(cfg: &PlantedTaskConfig) -> Result<PlantedTask> {
    cfg.check()?;
    let mut rng = stream_rng(cfg.seed, STREAM_PLANTED);
    let d = cfg.dim;

    let planted: Vec<Vec<f64>> = if cfg.planted_attrs <= d {
        random_orthonormal(&mut rng, cfg.planted_attrs, d)?
    } else {
        (0..cfg.planted_attrs).map(|_| random_unit(&mut rng, d)).collect()
    };

    let supports = class_supports(&mut rng, cfg.planted_attrs, cfg.classes);
    let mut prototypes = Vec::with_capacity(cfg.classes);
    let mut weights = Vec::with_capacity(cfg.classes);
    for support in &supports {
        let w: Vec<f64> = support.iter().map(|_| rng.random_range(0.5..1.0)).collect();
        let mut proto = vec![0.0; d];
        for (&k, &wk) in support.iter().zip(&w) {
            proto.iter_mut().zip(&planted[k]).for_each(|(p, a)| *p += wk * a);
        }
        let n = norm(&proto);
        proto.iter_mut().for_each(|p| *p /= n);
        prototypes.push(proto);
        weights.push(w);
    }

    let sample = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<ImageSet> {
        let mut data = Vec::with_capacity(cfg.classes * per_class * d);
        let mut labels = Vec::with_capacity(cfg.classes * per_class);
        for (c, proto) in prototypes.iter().enumerate() {
            for _ in 0..per_class {
                let noise = gaussian_vec(rng, d);
                let mut v: Vec<f64> = proto
                    .iter()
                    .zip(&noise)
                    .map(|(p, e)| p + cfg.noise_sigma * e)
                    .collect();
                let n = norm(&v);
                v.iter_mut().for_each(|x| *x /= n);
                data.extend(v);
                labels.push(c);
            }
        }
        let class_names = (0..cfg.classes).map(|c| format!("class_{c}")).collect();
        ImageSet::new(Matrix::new(labels.len(), d, data)?, labels, class_names)
    };
    let train = sample(cfg.train_per_class, &mut rng)?;
    let test = sample(cfg.test_per_class, &mut rng)?;

    let mut entries: Vec<(String, Vec<f64>, Option<usize>)> = planted
        .into_iter()
        .enumerate()
        .map(|(k, v)| (format!("planted_{k}"), v, Some(k)))
        .collect();
    for i in 0..cfg.distractor_attrs {
        entries.push((format!("distractor_{i}"), random_unit(&mut rng, d), None));
    }
    entries.shuffle(&mut rng);

    let mut planted_indices = vec![0; cfg.planted_attrs];
    let mut names = Vec::with_capacity(entries.len());
    let mut rows = Vec::with_capacity(entries.len());
    for (pos, (name, v, k)) in entries.into_iter().enumerate() {
        if let Some(k) = k {
            planted_indices[k] = pos;
        }
        names.push(name);
        rows.push(v);
    }
    let pool = AttributePool::new(Matrix::from_rows(&rows)?, names)?;

    let composition = supports
        .into_iter()
        .zip(weights)
        .map(|(s, w)| ClassComposition {
            pool_indices: s.into_iter().map(|k| planted_indices[k]).collect(),
            weights: w,
        })
        .collect();

    Ok(PlantedTask {
        train,
        test,
        pool,
        planted_indices,
        composition,
    })
}
