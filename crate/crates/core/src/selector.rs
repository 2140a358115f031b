//! Learning-to-search attribute selection.
//!
//! A dictionary `E` (K x D) and a linear head are trained jointly on the
//! cosine scores between images and the rows of `E`, with cross-entropy plus a
//! regularizer that keeps `E` near the attribute pool. Each trained row is
//! then snapped greedily to its most similar unused pool attribute.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::{validate, AttributePool, ImageSet};
use crate::optim::{self, split_train_val, stream_rng, Trainable, TrainReport, STREAM_INIT};
use crate::projection::cosine_scores;
use crate::stats::{fit_gaussian, mahalanobis_with_grad, GaussianSummary};
use crate::tensor::{argmax, dot, norm, softmax_in_place, Matrix, ZERO_NORM};

/// Probability floor inside the cross-entropy logarithm.
const PROB_FLOOR: f64 = 1e-12;

/// Lambda values tried by the grid search, strongest first.
/// Keeps the probe objective strictly convex so its solution does not depend
/// on the optimizer's coordinate system.
pub const DEFAULT_PROBE_WEIGHT_DECAY: f64 = 1e-4;

pub const LAMBDA_GRID: [f64; 5] = [1.0, 0.1, 0.01, 0.001, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// Mean Mahalanobis distance of the dictionary rows from the pool.
    Mah,
    /// Negated mean cosine similarity between dictionary rows and the pool.
    Cos,
    CeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    PoolSubset,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub lambda: f64,
    pub reg_kind: RegKind,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub init_mode: InitMode,
    /// Standard deviation of the jitter added to pool rows in `PoolSubset` init.
    pub init_jitter: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ridge_scale: f64,
    /// L2 penalty `0.5 * wd * |W|^2` on linear-probe weights. Unused by the selector.
    pub probe_weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            lambda: 0.01,
            reg_kind: RegKind::Mah,
            lr: 0.01,
            max_epochs: 5000,
            batch_size: 4096,
            seed: 0,
            val_fraction: 0.1,
            eval_every: 10,
            patience: 20,
            init_mode: InitMode::PoolSubset,
            init_jitter: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ridge_scale: crate::stats::DEFAULT_RIDGE_SCALE,
            probe_weight_decay: DEFAULT_PROBE_WEIGHT_DECAY,
        }
    }
}

impl TrainConfig {
    pub(crate) fn check(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.probe_weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "probe_weight_decay must be >= 0, got {}",
                self.probe_weight_decay
            )));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub e: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// `classes x k` weights.
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Head {
    pub fn zeros(classes: usize, k: usize) -> Self {
        Self {
            w: Matrix::zeros(classes, k),
            b: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    /// `scores · W^T + b`.
    pub fn logits(&self, scores: &Matrix) -> Result<Matrix> {
        let mut z = scores.matmul_transposed(&self.w)?;
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        }
        Ok(z)
    }
}

/// Chosen pool attributes plus everything needed to reproduce the choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: String,
    pub k: usize,
    pub indices: Vec<usize>,
    pub names: Vec<String>,
    pub seed: Option<u64>,
    pub config: Value,
    pub metrics: Value,
}

impl SelectionResult {
    pub fn new(method: &str, indices: Vec<usize>, pool: &AttributePool, seed: Option<u64>, config: Value) -> Self {
        let names = indices.iter().map(|&i| pool.names[i].clone()).collect();
        Self {
            method: method.to_string(),
            k: indices.len(),
            indices,
            names,
            seed,
            config,
            metrics: Value::Object(Default::default()),
        }
    }
}

/// Regularizer state derived from the pool once per training run.
#[derive(Debug, Clone)]
pub struct Objective {
    pub lambda: f64,
    pub reg_kind: RegKind,
    gaussian: Option<GaussianSummary>,
    /// Sum of the normalized pool rows.
    pool_direction_sum: Vec<f64>,
    pool_size: usize,
}

impl Objective {
    pub fn new(pool: &AttributePool, cfg: &TrainConfig) -> Result<Self> {
        let gaussian = match cfg.reg_kind {
            RegKind::Mah => Some(fit_gaussian(pool, cfg.ridge_scale)?),
            _ => None,
        };
        Ok(Self::with_gaussian(pool, cfg, gaussian))
    }

    /// Uses a precomputed Gaussian summary for the MAH regularizer.
    pub fn with_gaussian(pool: &AttributePool, cfg: &TrainConfig, gaussian: Option<GaussianSummary>) -> Self {
        let mut sum = vec![0.0; pool.dim()];
        for row in pool.embeddings.iter_rows() {
            let n = norm(row);
            sum.iter_mut().zip(row).for_each(|(s, x)| *s += x / n);
        }
        Self {
            lambda: cfg.lambda,
            reg_kind: cfg.reg_kind,
            gaussian,
            pool_direction_sum: sum,
            pool_size: pool.len(),
        }
    }

    /// Regularizer value and its gradient with respect to `E` (unscaled by lambda).
    fn regularizer(&self, e: &Matrix, want_grad: bool) -> Result<(f64, Matrix)> {
        let k = e.rows();
        let mut grad = Matrix::zeros(if want_grad { k } else { 0 }, e.cols());
        let value = match self.reg_kind {
            RegKind::CeOnly => 0.0,
            RegKind::Mah => {
                let g = self
                    .gaussian
                    .as_ref()
                    .ok_or_else(|| Error::Config("MAH regularizer needs a Gaussian summary".into()))?;
                let mut total = 0.0;
                for j in 0..k {
                    let (d, dg) = mahalanobis_with_grad(g, e.row(j))?;
                    total += d;
                    if want_grad {
                        grad.row_mut(j)
                            .iter_mut()
                            .zip(&dg)
                            .for_each(|(o, v)| *o = v / k as f64);
                    }
                }
                total / k as f64
            }
            RegKind::Cos => {
                let scale = 1.0 / (k as f64 * self.pool_size as f64);
                let mut total = 0.0;
                for j in 0..k {
                    let row = e.row(j);
                    let n = norm(row).max(ZERO_NORM);
                    let c = dot(&self.pool_direction_sum, row) / n;
                    total += c;
                    if want_grad {
                        // d/dE of -<t, E>/|E| is -(t - <t, Ê> Ê)/|E|.
                        let out = grad.row_mut(j);
                        for ((o, t), x) in out.iter_mut().zip(&self.pool_direction_sum).zip(row) {
                            *o = -scale * (t - c * x / n) / n;
                        }
                    }
                }
                -scale * total
            }
        };
        Ok((value, grad))
    }
}

/// Output of [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub scores: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
}

pub fn forward(dict: &Dictionary, head: &Head, batch: &Matrix) -> Result<Forward> {
    if head.w.cols() != dict.e.rows() {
        return Err(Error::ShapeMismatch(format!(
            "head expects {} scores but dictionary has {} rows",
            head.w.cols(),
            dict.e.rows()
        )));
    }
    let scores = cosine_scores(batch, &dict.e)?;
    let logits = head.logits(&scores)?;
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        softmax_in_place(probs.row_mut(r));
    }
    Ok(Forward {
        scores,
        logits,
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub reg: f64,
}

pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> f64 {
    let m = labels.len();
    let mut sum = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        sum -= probs.get(i, y).max(PROB_FLOOR).ln();
    }
    sum / m as f64
}

pub fn loss(dict: &Dictionary, head: &Head, batch: &Matrix, labels: &[usize], obj: &Objective) -> Result<LossParts> {
    check_labels(batch, labels, head.classes())?;
    let f = forward(dict, head, batch)?;
    let ce = cross_entropy(&f.probs, labels);
    let (reg, _) = obj.regularizer(&dict.e, false)?;
    Ok(LossParts {
        total: ce + obj.lambda * reg,
        ce,
        reg,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub de: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

/// Analytic gradients of [`loss`] with respect to `E`, `W` and `b`.
pub fn grad(dict: &Dictionary, head: &Head, batch: &Matrix, labels: &[usize], obj: &Objective) -> Result<Gradients> {
    loss_and_grad(dict, head, batch, labels, obj).map(|(_, g)| g)
}

pub fn loss_and_grad(
    dict: &Dictionary,
    head: &Head,
    batch: &Matrix,
    labels: &[usize],
    obj: &Objective,
) -> Result<(LossParts, Gradients)> {
    check_labels(batch, labels, head.classes())?;
    let e = &dict.e;
    let (m, d) = batch.shape();
    let k = e.rows();
    let classes = head.classes();
    let f = forward(dict, head, batch)?;
    let ce = cross_entropy(&f.probs, labels);

    // dL/dz = (p - y) / M
    let mut dz = f.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        dz.row_mut(i)[y] -= 1.0;
    }
    dz.data_mut().iter_mut().for_each(|v| *v /= m as f64);

    let mut db = vec![0.0; classes];
    for row in dz.iter_rows() {
        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    // dW = dz^T · S
    let dw = dz.transpose().matmul(&f.scores)?;
    // dS = dz · W
    let ds = dz.matmul(&head.w)?;

    // ds_ij/dE_j = V_i / (|V_i||E_j|) - s_ij E_j / |E_j|^2
    let e_norms = e.row_norms();
    let v_norms = batch.row_norms();
    let mut de = Matrix::zeros(k, d);
    for j in 0..k {
        let en = e_norms[j].max(ZERO_NORM);
        let mut radial = 0.0;
        let out = de.row_mut(j);
        for i in 0..m {
            let g = ds.get(i, j);
            if g == 0.0 {
                continue;
            }
            let coef = g / (v_norms[i].max(ZERO_NORM) * en);
            out.iter_mut().zip(batch.row(i)).for_each(|(o, v)| *o += coef * v);
            radial += g * f.scores.get(i, j);
        }
        let c = radial / (en * en);
        out.iter_mut().zip(e.row(j)).for_each(|(o, x)| *o -= c * x);
    }

    let (reg, reg_grad) = obj.regularizer(e, obj.lambda != 0.0)?;
    if obj.lambda != 0.0 {
        de.data_mut()
            .iter_mut()
            .zip(reg_grad.data())
            .for_each(|(o, r)| *o += obj.lambda * r);
    }

    Ok((
        LossParts {
            total: ce + obj.lambda * reg,
            ce,
            reg,
        },
        Gradients { de, dw, db },
    ))
}

/// Central-difference gradients of the total loss with step `h`, for
/// checking [`grad`].
pub fn numeric_grad(
    dict: &Dictionary,
    head: &Head,
    batch: &Matrix,
    labels: &[usize],
    obj: &Objective,
    h: f64,
) -> Result<Gradients> {
    let total = |d: &Dictionary, hd: &Head| loss(d, hd, batch, labels, obj).map(|l| l.total);
    let mut de = Matrix::zeros(dict.e.rows(), dict.e.cols());
    let mut probe = dict.clone();
    for i in 0..de.data().len() {
        let x = dict.e.data()[i];
        probe.e.data_mut()[i] = x + h;
        let up = total(&probe, head)?;
        probe.e.data_mut()[i] = x - h;
        let down = total(&probe, head)?;
        probe.e.data_mut()[i] = x;
        de.data_mut()[i] = (up - down) / (2.0 * h);
    }
    let mut dw = Matrix::zeros(head.w.rows(), head.w.cols());
    let mut hp = head.clone();
    for i in 0..dw.data().len() {
        let x = head.w.data()[i];
        hp.w.data_mut()[i] = x + h;
        let up = total(dict, &hp)?;
        hp.w.data_mut()[i] = x - h;
        let down = total(dict, &hp)?;
        hp.w.data_mut()[i] = x;
        dw.data_mut()[i] = (up - down) / (2.0 * h);
    }
    let mut db = vec![0.0; head.b.len()];
    for (i, g) in db.iter_mut().enumerate() {
        let x = head.b[i];
        hp.b[i] = x + h;
        let up = total(dict, &hp)?;
        hp.b[i] = x - h;
        let down = total(dict, &hp)?;
        hp.b[i] = x;
        *g = (up - down) / (2.0 * h);
    }
    Ok(Gradients { de, dw, db })
}

fn check_labels(batch: &Matrix, labels: &[usize], classes: usize) -> Result<()> {
    if labels.len() != batch.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            batch.rows()
        )));
    }
    if let Some(row) = labels.iter().position(|&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            row,
            label: labels[row],
            classes,
        });
    }
    Ok(())
}

pub fn init_dictionary(pool: &AttributePool, cfg: &TrainConfig) -> Result<Dictionary> {
    let mut rng = stream_rng(cfg.seed, STREAM_INIT);
    match cfg.init_mode {
        InitMode::PoolSubset => {
            if cfg.k > pool.len() {
                return Err(Error::KTooLarge {
                    k: cfg.k,
                    available: pool.len(),
                });
            }
            let picked = sample(&mut rng, pool.len(), cfg.k).into_vec();
            let mut e = pool.embeddings.select_rows(&picked);
            if cfg.init_jitter > 0.0 {
                for v in e.data_mut() {
                    *v += cfg.init_jitter * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Ok(Dictionary { e })
        }
        InitMode::Gaussian => {
            let g = fit_gaussian(pool, cfg.ridge_scale)?;
            Ok(Dictionary {
                e: sample_gaussian(&g, cfg.k, &mut rng)?,
            })
        }
    }
}

/// `k` draws from `N(mu, cov + ridge I)` using the stored Cholesky factor.
pub fn sample_gaussian(g: &GaussianSummary, k: usize, rng: &mut impl Rng) -> Result<Matrix> {
    let d = g.dim();
    let mut data = Vec::with_capacity(k * d);
    for _ in 0..k {
        let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for r in 0..d {
            data.push(g.mu[r] + dot(&g.chol.row(r)[..=r], &z[..=r]));
        }
    }
    Matrix::new(k, d, data)
}

/// Dictionary, head and objective bundled for the training loop.
#[derive(Debug, Clone)]
struct DictionaryModel<'a> {
    dict: Dictionary,
    head: Head,
    obj: &'a Objective,
}

impl Trainable for DictionaryModel<'_> {
    fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (parts, g) = loss_and_grad(&self.dict, &self.head, x, labels, self.obj)?;
        Ok((parts.total, vec![g.de.into_data(), g.dw.into_data(), g.db]))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.dict.e.data_mut(),
            self.head.w.data_mut(),
            self.head.b.as_mut_slice(),
        ]
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let f = forward(&self.dict, &self.head, x)?;
        Ok(f.logits.iter_rows().map(argmax).collect())
    }

    fn objective(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        Ok(loss(&self.dict, &self.head, x, labels, self.obj)?.total)
    }
}

/// Trains dictionary and head with early stopping on a held-out split of `images`.
pub fn train(images: &ImageSet, pool: &AttributePool, cfg: &TrainConfig) -> Result<(Dictionary, Head, TrainReport)> {
    let obj = Objective::new(pool, cfg)?;
    train_with_objective(images, pool, cfg, &obj)
}

pub fn train_with_objective(
    images: &ImageSet,
    pool: &AttributePool,
    cfg: &TrainConfig,
    obj: &Objective,
) -> Result<(Dictionary, Head, TrainReport)> {
    cfg.check()?;
    validate(images, pool)?;
    if images.num_classes() < 2 {
        return Err(Error::Config("training needs at least 2 classes".into()));
    }
    if cfg.k == 0 || cfg.k > pool.len() {
        return Err(Error::KTooLarge {
            k: cfg.k,
            available: pool.len(),
        });
    }
    let (tr, va) = split_train_val(images.len(), cfg.val_fraction, cfg.seed);
    let train_set = images.subset(&tr);
    let val_set = images.subset(&va);

    let mut model = DictionaryModel {
        dict: init_dictionary(pool, cfg)?,
        head: Head::zeros(images.num_classes(), cfg.k),
        obj,
    };
    let report = optim::fit(
        &mut model,
        &train_set.embeddings,
        &train_set.labels,
        &val_set.embeddings,
        &val_set.labels,
        cfg,
    )?;
    Ok((model.dict, model.head, report))
}

/// Snaps each dictionary row, in order, to the most similar pool attribute
/// not already taken. Ties go to the lowest pool index.
pub fn greedy_select(dict: &Dictionary, pool: &AttributePool) -> Result<SelectionResult> {
    let indices = greedy_indices(&dict.e, &pool.embeddings)?;
    Ok(SelectionResult::new("learned", indices, pool, None, Value::Null))
}

pub fn greedy_indices(e: &Matrix, pool: &Matrix) -> Result<Vec<usize>> {
    let (k, n) = (e.rows(), pool.rows());
    if k > n {
        return Err(Error::KTooLarge { k, available: n });
    }
    let sims = cosine_scores(e, pool)?;
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let row = sims.row(j);
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| row[i] > row[b]) {
                best = Some(i);
            }
        }
        let i = best.expect("k <= n leaves a free attribute");
        taken[i] = true;
        out.push(i);
    }
    Ok(out)
}

/// Output of a complete learned selection run.
#[derive(Debug, Clone)]
pub struct LearnedSelection {
    pub selection: SelectionResult,
    pub dict: Dictionary,
    pub head: Head,
    pub report: TrainReport,
    /// Stage-1 head applied to the snapped attributes on the validation split.
    pub snapped_val_acc: f64,
}

/// Train, then snap. The result's config is the full training config.
pub fn select_learned(images: &ImageSet, pool: &AttributePool, cfg: &TrainConfig) -> Result<LearnedSelection> {
    let (dict, head, report) = train(images, pool, cfg)?;
    finish_learned(images, pool, cfg, dict, head, report)
}

fn finish_learned(
    images: &ImageSet,
    pool: &AttributePool,
    cfg: &TrainConfig,
    dict: Dictionary,
    head: Head,
    report: TrainReport,
) -> Result<LearnedSelection> {
    let indices = greedy_indices(&dict.e, &pool.embeddings)?;
    let (_, va) = split_train_val(images.len(), cfg.val_fraction, cfg.seed);
    let val = images.subset(&va);
    let scores = cosine_scores(&val.embeddings, &pool.embeddings.select_rows(&indices))?;
    let pred: Vec<usize> = head.logits(&scores)?.iter_rows().map(argmax).collect();
    let snapped_val_acc = optim::accuracy(&pred, &val.labels);

    let mut selection = SelectionResult::new(
        "learned",
        indices,
        pool,
        Some(cfg.seed),
        serde_json::to_value(cfg)?,
    );
    selection.metrics = serde_json::json!({
        "best_epoch": report.best_epoch,
        "dictionary_val_acc": report.best_val_acc,
        "snapped_val_acc": snapped_val_acc,
        "epochs_run": report.epochs_run,
    });
    Ok(LearnedSelection {
        selection,
        dict,
        head,
        report,
        snapped_val_acc,
    })
}

/// Runs every lambda in `grid` and keeps the run whose snapped selection has
/// the best validation accuracy (earlier grid entries win ties).
pub fn select_learned_grid(
    images: &ImageSet,
    pool: &AttributePool,
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<LearnedSelection> {
    let gaussian = match cfg.reg_kind {
        RegKind::Mah => Some(fit_gaussian(pool, cfg.ridge_scale)?),
        _ => None,
    };
    let mut best: Option<LearnedSelection> = None;
    let mut tried = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let run_cfg = TrainConfig { lambda, ..cfg.clone() };
        let obj = Objective::with_gaussian(pool, &run_cfg, gaussian.clone());
        let (dict, head, report) = train_with_objective(images, pool, &run_cfg, &obj)?;
        let run = finish_learned(images, pool, &run_cfg, dict, head, report)?;
        tried.push(serde_json::json!({"lambda": lambda, "snapped_val_acc": run.snapped_val_acc}));
        if best.as_ref().is_none_or(|b| run.snapped_val_acc > b.snapped_val_acc) {
            best = Some(run);
        }
    }
    let mut best = best.ok_or_else(|| Error::Config("empty lambda grid".into()))?;
    if let Value::Object(map) = &mut best.selection.metrics {
        map.insert("lambda_grid".into(), Value::Array(tried));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::rng_from_seed;

    fn pool_of(rows: &[&[f64]]) -> AttributePool {
        let m = Matrix::from_rows(rows).unwrap();
        let names = (0..m.rows()).map(|i| format!("a{i}")).collect();
        AttributePool::new(m, names).unwrap()
    }

    #[test]
    fn forward_single_attribute_example() {
        let dict = Dictionary {
            e: Matrix::from_rows(&[[1.0, 0.0]]).unwrap(),
        };
        let head = Head {
            w: Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
            b: vec![0.0, 0.0],
        };
        let v = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let f = forward(&dict, &head, &v).unwrap();
        assert_eq!(f.scores.data(), &[1.0]);
        assert_eq!(f.logits.data(), &[1.0, -1.0]);
        assert!((f.probs.get(0, 0) - 0.88079708).abs() < 1e-8);
        assert!((f.probs.get(0, 1) - 0.11920292).abs() < 1e-8);

        let scaled = Dictionary {
            e: Matrix::from_rows(&[[5.0, 0.0]]).unwrap(),
        };
        assert_eq!(forward(&scaled, &head, &v).unwrap(), f);
    }

    #[test]
    fn zero_head_is_uniform() {
        let dict = Dictionary {
            e: Matrix::from_rows(&[[0.3, 1.0, -0.2], [1.0, 0.0, 0.5]]).unwrap(),
        };
        let head = Head::zeros(4, 2);
        let v = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]).unwrap();
        let f = forward(&dict, &head, &v).unwrap();
        assert!(f.probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn loss_examples() {
        let pool = pool_of(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let cfg = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let obj = Objective::new(&pool, &cfg).unwrap();
        let dict = Dictionary {
            e: Matrix::from_rows(&[[1.0, 0.0]]).unwrap(),
        };
        let head = Head {
            w: Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
            b: vec![0.0, 0.0],
        };
        let v = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let l = loss(&dict, &head, &v, &[0], &obj).unwrap();
        assert!((l.total - 0.126928011042972).abs() < 1e-12);

        let zero = Head::zeros(3, 1);
        let l = loss(&dict, &zero, &v, &[2], &obj).unwrap();
        assert!((l.ce - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn mah_reg_reduces_to_euclidean() {
        let g = GaussianSummary::new(vec![0.0, 0.0], Matrix::identity(2), 0.0).unwrap();
        let pool = pool_of(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = TrainConfig {
            lambda: 0.1,
            ..TrainConfig::default()
        };
        let obj = Objective::with_gaussian(&pool, &cfg, Some(g));
        let dict = Dictionary {
            e: Matrix::from_rows(&[[3.0, 4.0]]).unwrap(),
        };
        let v = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let l = loss(&dict, &Head::zeros(2, 1), &v, &[0], &obj).unwrap();
        assert!((l.reg - 5.0).abs() < 1e-12);
        assert!((l.total - l.ce - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bias_gradient_at_zero_head() {
        let pool = pool_of(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = TrainConfig {
            reg_kind: RegKind::CeOnly,
            ..TrainConfig::default()
        };
        let obj = Objective::new(&pool, &cfg).unwrap();
        let dict = Dictionary {
            e: Matrix::from_rows(&[[1.0, 1.0]]).unwrap(),
        };
        let v = Matrix::from_rows(&[[0.6, 0.8]]).unwrap();
        let g = grad(&dict, &Head::zeros(2, 1), &v, &[0], &obj).unwrap();
        assert_eq!(g.db, vec![-0.5, 0.5]);
    }

    #[test]
    fn zero_lambda_disables_regularizer_path() {
        let pool = pool_of(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.2, 0.2, 1.0]]);
        let mut rng = rng_from_seed(4);
        let e = Matrix::new(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = Matrix::new(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let dict = Dictionary { e };
        let head = Head { w, b: vec![0.1, -0.1] };
        let v = Matrix::from_rows(&[[0.6, 0.8, 0.0], [0.0, 0.6, 0.8]]).unwrap();
        let base = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let ce_only = TrainConfig {
            reg_kind: RegKind::CeOnly,
            ..base.clone()
        };
        let g_mah = grad(&dict, &head, &v, &[0, 1], &Objective::new(&pool, &base).unwrap()).unwrap();
        let g_ce = grad(&dict, &head, &v, &[0, 1], &Objective::new(&pool, &ce_only).unwrap()).unwrap();
        assert_eq!(g_mah, g_ce);
    }

    #[test]
    fn init_pool_subset_without_jitter_copies_rows() {
        let pool = crate::synthetic::gen_random_pool(20, 6, 1, false).unwrap();
        let cfg = TrainConfig {
            k: 5,
            init_jitter: 0.0,
            ..TrainConfig::default()
        };
        let d = init_dictionary(&pool, &cfg).unwrap();
        for r in d.e.iter_rows() {
            assert!(pool.embeddings.iter_rows().any(|p| p == r));
        }
        assert_eq!(d, init_dictionary(&pool, &cfg).unwrap());
        let too_big = TrainConfig { k: 21, ..cfg };
        assert!(matches!(init_dictionary(&pool, &too_big), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn gaussian_init_matches_pool_mean() {
        // The four-point plus-shaped pool has mean 0 and covariance 0.5 I.
        let pool = pool_of(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let cfg = TrainConfig {
            k: 10_000,
            init_mode: InitMode::Gaussian,
            ..TrainConfig::default()
        };
        let d = init_dictionary(&pool, &cfg).unwrap();
        for c in 0..2 {
            let mean = d.e.column(c).iter().sum::<f64>() / 10_000.0;
            assert!(mean.abs() < 0.05, "column {c} mean {mean}");
        }
    }

    #[test]
    fn greedy_example_from_cosine_table() {
        let pool = pool_of(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let dict = Dictionary {
            e: Matrix::from_rows(&[[0.9, 0.1], [0.8, 0.2]]).unwrap(),
        };
        let sel = greedy_select(&dict, &pool).unwrap();
        assert_eq!(sel.indices, vec![0, 2]);
        assert_eq!(sel.names, vec!["a0", "a2"]);
    }

    #[test]
    fn greedy_exhausts_pool_and_ignores_scale() {
        let pool = crate::synthetic::gen_random_pool(6, 4, 8, false).unwrap();
        let dict = Dictionary {
            e: crate::synthetic::gen_random_pool(6, 4, 9, false).unwrap().embeddings,
        };
        let sel = greedy_select(&dict, &pool).unwrap();
        let mut sorted = sel.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());

        let scaled_rows: Vec<Vec<f64>> = pool
            .embeddings
            .iter_rows()
            .enumerate()
            .map(|(i, r)| r.iter().map(|x| x * (1.0 + i as f64)).collect())
            .collect();
        let scaled = AttributePool::new(Matrix::from_rows(&scaled_rows).unwrap(), pool.names.clone()).unwrap();
        assert_eq!(greedy_select(&dict, &scaled).unwrap().indices, sel.indices);

        let big = Dictionary {
            e: Matrix::zeros(7, 4),
        };
        assert!(matches!(greedy_select(&big, &pool), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        let pool = AttributePool::new(
            Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap(),
            vec!["x".into(), "p".into(), "q".into(), "r".into()],
        )
        .unwrap();
        let dict = Dictionary {
            e: Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap(),
        };
        assert_eq!(greedy_select(&dict, &pool).unwrap().indices, vec![1, 2]);
    }
}
