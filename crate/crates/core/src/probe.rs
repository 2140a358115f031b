//! Linear probes on attribute scores, and the two-layer image-feature reference.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ImageSet;
use crate::optim::{self, split_train_val, stream_rng, Trainable, TrainReport, STREAM_INIT};
use crate::projection::ScoreMatrix;
use crate::selector::{cross_entropy, Head, SelectionResult, TrainConfig};
use crate::tensor::{argmax, softmax_in_place, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub train_acc: f64,
    pub val_acc: f64,
    #[serde(default)]
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// `classes x k`.
    #[serde(rename = "weights")]
    pub w: Matrix,
    #[serde(rename = "bias")]
    pub b: Vec<f64>,
    pub selection: Option<SelectionResult>,
    pub metrics: ProbeMetrics,
    pub config: TrainConfig,
    pub seed: u64,
    pub report: TrainReport,
}

impl ProbeModel {
    pub fn head(&self) -> Head {
        Head {
            w: self.w.clone(),
            b: self.b.clone(),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn width(&self) -> usize {
        self.w.cols()
    }

    pub fn logits(&self, scores: &Matrix) -> Result<Matrix> {
        if scores.cols() != self.width() {
            return Err(Error::ShapeMismatch(format!(
                "probe expects {} scores, got {}",
                self.width(),
                scores.cols()
            )));
        }
        self.head().logits(scores)
    }

    pub fn predict(&self, scores: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(scores)?.iter_rows().map(argmax).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LinearModel {
    head: Head,
    weight_decay: f64,
}

impl LinearModel {
    fn penalty(&self) -> f64 {
        0.5 * self.weight_decay * self.head.w.data().iter().map(|w| w * w).sum::<f64>()
    }
}

fn ce_grads(logits: Matrix, labels: &[usize]) -> (f64, Matrix) {
    let m = labels.len();
    let mut probs = logits;
    for r in 0..probs.rows() {
        softmax_in_place(probs.row_mut(r));
    }
    let loss = cross_entropy(&probs, labels);
    let mut dz = probs;
    for (i, &y) in labels.iter().enumerate() {
        dz.row_mut(i)[y] -= 1.0;
    }
    dz.data_mut().iter_mut().for_each(|v| *v /= m as f64);
    (loss, dz)
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        out.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    out
}

impl Trainable for LinearModel {
    fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, dz) = ce_grads(self.head.logits(x)?, labels);
        let mut dw = dz.transpose().matmul(x)?;
        if self.weight_decay > 0.0 {
            dw.data_mut()
                .iter_mut()
                .zip(self.head.w.data())
                .for_each(|(g, w)| *g += self.weight_decay * w);
        }
        Ok((loss + self.penalty(), vec![dw.into_data(), column_sums(&dz)]))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.head.w.data_mut(), self.head.b.as_mut_slice()]
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.head.logits(x)?.iter_rows().map(argmax).collect())
    }

    fn objective(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let mut p = self.head.logits(x)?;
        for r in 0..p.rows() {
            softmax_in_place(p.row_mut(r));
        }
        Ok(cross_entropy(&p, labels) + self.penalty())
    }
}

fn check_probe_inputs(x: &Matrix, labels: &[usize], classes: usize) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows for {} labels",
            x.rows(),
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(Error::Config("probing needs at least 2 classes".into()));
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

/// Cross-entropy linear probe with the shared Adam / early-stopping contract.
/// `init` warm-starts from a stage-1 head.
pub fn train_probe(
    train_scores: &ScoreMatrix,
    labels: &[usize],
    classes: usize,
    init: Option<&Head>,
    cfg: &TrainConfig,
) -> Result<ProbeModel> {
    cfg.check()?;
    let x = &train_scores.scores;
    check_probe_inputs(x, labels, classes)?;
    let head = match init {
        Some(h) => {
            if h.w.shape() != (classes, x.cols()) || h.b.len() != classes {
                return Err(Error::ShapeMismatch(format!(
                    "warm-start head is {}x{} but the probe needs {classes}x{}",
                    h.w.rows(),
                    h.w.cols(),
                    x.cols()
                )));
            }
            h.clone()
        }
        None => Head::zeros(classes, x.cols()),
    };

    let (tr, va) = split_train_val(labels.len(), cfg.val_fraction, cfg.seed);
    let (tx, vx) = (x.select_rows(&tr), x.select_rows(&va));
    let ty: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
    let vy: Vec<usize> = va.iter().map(|&i| labels[i]).collect();

    let mut model = LinearModel {
        head,
        weight_decay: cfg.probe_weight_decay,
    };
    let report = optim::fit(&mut model, &tx, &ty, &vx, &vy, cfg)?;
    let train_acc = optim::accuracy(&model.predict(&tx)?, &ty);
    let val_acc = optim::accuracy(&model.predict(&vx)?, &vy);
    Ok(ProbeModel {
        w: model.head.w,
        b: model.head.b,
        selection: None,
        metrics: ProbeMetrics {
            train_acc,
            val_acc,
            test_acc: None,
        },
        config: cfg.clone(),
        seed: cfg.seed,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Counts; rows are true classes, columns predictions.
    pub confusion: Matrix,
}

pub fn evaluate(model: &ProbeModel, scores: &ScoreMatrix, labels: &[usize]) -> Result<Evaluation> {
    check_probe_inputs(&scores.scores, labels, model.classes())?;
    let pred = model.predict(&scores.scores)?;
    let mut confusion = Matrix::zeros(model.classes(), model.classes());
    for (&y, &p) in labels.iter().zip(&pred) {
        confusion.set(y, p, confusion.get(y, p) + 1.0);
    }
    Ok(Evaluation {
        accuracy: optim::accuracy(&pred, labels),
        confusion,
    })
}

/// Two stacked linear maps (D -> k -> classes) with no activation between them.
#[derive(Debug, Clone, PartialEq)]
struct TwoLayerLinear {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
    weight_decay: f64,
}

impl TwoLayerLinear {
    fn penalty(&self) -> f64 {
        let sq: f64 = self.w1.data().iter().chain(self.w2.data()).map(|w| w * w).sum();
        0.5 * self.weight_decay * sq
    }

    fn hidden(&self, x: &Matrix) -> Result<Matrix> {
        Head {
            w: self.w1.clone(),
            b: self.b1.clone(),
        }
        .logits(x)
    }

    fn logits_from_hidden(&self, h: &Matrix) -> Result<Matrix> {
        Head {
            w: self.w2.clone(),
            b: self.b2.clone(),
        }
        .logits(h)
    }
}

impl Trainable for TwoLayerLinear {
    fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let h = self.hidden(x)?;
        let (loss, dz) = ce_grads(self.logits_from_hidden(&h)?, labels);
        let mut dw2 = dz.transpose().matmul(&h)?;
        let db2 = column_sums(&dz);
        let dh = dz.matmul(&self.w2)?;
        let mut dw1 = dh.transpose().matmul(x)?;
        let db1 = column_sums(&dh);
        for (g, w) in [(&mut dw1, &self.w1), (&mut dw2, &self.w2)] {
            g.data_mut()
                .iter_mut()
                .zip(w.data())
                .for_each(|(g, w)| *g += self.weight_decay * w);
        }
        Ok((
            loss + self.penalty(),
            vec![dw1.into_data(), db1, dw2.into_data(), db2],
        ))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.data_mut(),
            self.b1.as_mut_slice(),
            self.w2.data_mut(),
            self.b2.as_mut_slice(),
        ]
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let z = self.logits_from_hidden(&self.hidden(x)?)?;
        Ok(z.iter_rows().map(argmax).collect())
    }

    fn objective(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let mut p = self.logits_from_hidden(&self.hidden(x)?)?;
        for r in 0..p.rows() {
            softmax_in_place(p.row_mut(r));
        }
        Ok(cross_entropy(&p, labels) + self.penalty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageProbeResult {
    pub k: usize,
    pub test_acc: f64,
    pub val_acc: f64,
    pub config: TrainConfig,
    pub report: TrainReport,
}

/// Black-box reference: a rank-`k` linear classifier on raw image features.
pub fn train_image_probe(train: &ImageSet, test: &ImageSet, k: usize, cfg: &TrainConfig) -> Result<ImageProbeResult> {
    cfg.check()?;
    if k == 0 {
        return Err(Error::Config("image probe needs k >= 1".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::DimMismatch {
            expected: train.dim(),
            actual: test.dim(),
        });
    }
    let classes = train.num_classes();
    check_probe_inputs(&train.embeddings, &train.labels, classes)?;
    check_probe_inputs(&test.embeddings, &test.labels, classes)?;

    let d = train.dim();
    let mut rng = stream_rng(cfg.seed, STREAM_INIT);
    let scale = 1.0 / (d as f64).sqrt();
    let w1 = Matrix::new(
        k,
        d,
        (0..k * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
    )?;
    let mut model = TwoLayerLinear {
        w1,
        b1: vec![0.0; k],
        w2: Matrix::zeros(classes, k),
        b2: vec![0.0; classes],
        weight_decay: cfg.probe_weight_decay,
    };

    let (tr, va) = split_train_val(train.len(), cfg.val_fraction, cfg.seed);
    let (ts, vs) = (train.subset(&tr), train.subset(&va));
    let report = optim::fit(&mut model, &ts.embeddings, &ts.labels, &vs.embeddings, &vs.labels, cfg)?;
    let val_acc = optim::accuracy(&model.predict(&vs.embeddings)?, &vs.labels);
    let test_acc = optim::accuracy(&model.predict(&test.embeddings)?, &test.labels);
    Ok(ImageProbeResult {
        k,
        test_acc,
        val_acc,
        config: cfg.clone(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 400,
            ..TrainConfig::default()
        }
    }

    fn scores(rows: Vec<Vec<f64>>) -> ScoreMatrix {
        let m = Matrix::from_rows(&rows).unwrap();
        let names = (0..m.cols()).map(|i| format!("a{i}")).collect();
        ScoreMatrix::new(m, names).unwrap()
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let sign = if c == 0 { 0.9 } else { -0.9 };
            rows.push(vec![sign, ((i * 7) % 11) as f64 / 11.0 - 0.5]);
            labels.push(c);
        }
        let s = scores(rows);
        let model = train_probe(&s, &labels, 2, None, &fast_cfg()).unwrap();
        assert_eq!(model.metrics.train_acc, 1.0);
        assert_eq!(evaluate(&model, &s, &labels).unwrap().accuracy, 1.0);
    }

    #[test]
    fn constant_features_give_majority_rate() {
        let rows = vec![vec![0.5, -0.2]; 30];
        let labels: Vec<usize> = (0..30).map(|i| usize::from(i % 3 == 0)).collect();
        let s = scores(rows);
        let model = train_probe(&s, &labels, 2, None, &fast_cfg()).unwrap();
        let eval = evaluate(&model, &s, &labels).unwrap();
        assert!((eval.accuracy - 20.0 / 30.0).abs() < 1e-12);
    }

    fn fixed_model(w: Matrix, b: Vec<f64>) -> ProbeModel {
        ProbeModel {
            w,
            b,
            selection: None,
            metrics: ProbeMetrics {
                train_acc: 0.0,
                val_acc: 0.0,
                test_acc: None,
            },
            config: TrainConfig::default(),
            seed: 0,
            report: TrainReport {
                evals: vec![],
                best_epoch: 0,
                best_val_acc: 0.0,
                epochs_run: 0,
                stop_reason: crate::optim::StopReason::MaxEpochs,
            },
        }
    }

    #[test]
    fn perfect_predictor_has_diagonal_confusion() {
        let model = fixed_model(Matrix::identity(3), vec![0.0; 3]);
        let s = scores(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.9, 0.1],
        ]);
        let e = evaluate(&model, &s, &[0, 1, 2, 1]).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.confusion.data(), &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_predictor_scores_its_class_share() {
        // Zero weights: every logit ties and argmax falls to class 0.
        let model = fixed_model(Matrix::zeros(3, 2), vec![0.0; 3]);
        let s = scores(vec![vec![0.1, 0.2]; 5]);
        let e = evaluate(&model, &s, &[2, 2, 0, 1, 2]).unwrap();
        assert!((e.accuracy - 0.2).abs() < 1e-15);
        let e = evaluate(&model, &s, &[0, 0, 0, 1, 2]).unwrap();
        assert!((e.accuracy - 0.6).abs() < 1e-15);
    }

    #[test]
    fn evaluate_checks_shapes() {
        let model = fixed_model(Matrix::identity(2), vec![0.0; 2]);
        let s = scores(vec![vec![0.1, 0.2, 0.3]]);
        assert!(matches!(evaluate(&model, &s, &[0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn warm_start_shape_is_checked() {
        let s = scores(vec![vec![0.1, 0.2]; 10]);
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let bad = Head::zeros(2, 3);
        assert!(matches!(
            train_probe(&s, &labels, 2, Some(&bad), &fast_cfg()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn evaluation_is_repeatable() {
        let model = fixed_model(
            Matrix::from_rows(&[[0.3, -1.0], [0.7, 0.2]]).unwrap(),
            vec![0.01, -0.02],
        );
        let s = scores(vec![vec![0.1, 0.2], vec![-0.5, 0.4], vec![0.9, -0.9]]);
        let a = evaluate(&model, &s, &[0, 1, 1]).unwrap();
        let b = evaluate(&model, &s, &[0, 1, 1]).unwrap();
        assert_eq!(a, b);
    }
}
