//! Per-attribute importance scores and single-score interventions on a linear probe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::ProbeModel;
use crate::projection::ScoreMatrix;
use crate::tensor::{argmax, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub values: Vec<f64>,
    pub attribute_names: Vec<String>,
    pub class_index: usize,
}

fn check_row(model: &ProbeModel, row: &[f64]) -> Result<()> {
    if row.len() != model.width() {
        return Err(Error::DimMismatch {
            expected: model.width(),
            actual: row.len(),
        });
    }
    Ok(())
}

fn check_class(model: &ProbeModel, class: usize) -> Result<()> {
    if class >= model.classes() {
        return Err(Error::BadClass {
            class,
            classes: model.classes(),
        });
    }
    Ok(())
}

fn names_for(model: &ProbeModel) -> Vec<String> {
    match &model.selection {
        Some(sel) if sel.names.len() == model.width() => sel.names.clone(),
        _ => (0..model.width()).map(|j| format!("attr_{j}")).collect(),
    }
}

/// Element-wise product of class `class`'s weights with one score row.
pub fn importance_scores(model: &ProbeModel, score_row: &[f64], class: usize) -> Result<ImportanceVector> {
    check_class(model, class)?;
    check_row(model, score_row)?;
    let values = model.w.row(class).iter().zip(score_row).map(|(w, a)| w * a).collect();
    Ok(ImportanceVector {
        values,
        attribute_names: names_for(model),
        class_index: class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAttribute {
    pub index: usize,
    pub name: String,
    /// Signed mean importance; the ranking uses its magnitude.
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub class_index: usize,
    pub class_name: Option<String>,
    pub samples: usize,
    pub top: Vec<RankedAttribute>,
}

/// Mean importance over the samples labelled `class`, ranked by absolute value.
pub fn class_importance(
    model: &ProbeModel,
    scores: &ScoreMatrix,
    labels: &[usize],
    class: usize,
    top_n: usize,
) -> Result<ClassExplanation> {
    check_class(model, class)?;
    if scores.width() != model.width() {
        return Err(Error::DimMismatch {
            expected: model.width(),
            actual: scores.width(),
        });
    }
    if labels.len() != scores.image_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows for {} labels",
            scores.image_count(),
            labels.len()
        )));
    }
    let mut mean = vec![0.0; model.width()];
    let mut count = 0usize;
    for (row, _) in scores.scores.iter_rows().zip(labels).filter(|(_, &l)| l == class) {
        let is = importance_scores(model, row, class)?;
        mean.iter_mut().zip(&is.values).for_each(|(m, v)| *m += v);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyClass(class));
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);

    let mut order: Vec<usize> = (0..mean.len()).collect();
    // Stable sort keeps the lower index first among equal magnitudes.
    order.sort_by(|&a, &b| mean[b].abs().total_cmp(&mean[a].abs()));
    let names = if scores.attribute_names.len() == model.width() {
        scores.attribute_names.clone()
    } else {
        names_for(model)
    };
    let top = order
        .into_iter()
        .take(top_n)
        .map(|j| RankedAttribute {
            index: j,
            name: names[j].clone(),
            importance: mean[j],
        })
        .collect();
    Ok(ClassExplanation {
        class_index: class,
        class_name: None,
        samples: count,
        top,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub attribute: usize,
    pub delta: f64,
    pub old_pred: usize,
    pub new_pred: usize,
    pub old_logits: Vec<f64>,
    pub new_logits: Vec<f64>,
    /// `delta` times column `attribute` of the weights.
    pub logit_delta: Vec<f64>,
}

impl Intervention {
    pub fn flipped(&self) -> bool {
        self.old_pred != self.new_pred
    }
}

fn row_logits(model: &ProbeModel, row: &[f64]) -> Result<Vec<f64>> {
    let m = Matrix::new(1, row.len(), row.to_vec())?;
    Ok(model.logits(&m)?.row(0).to_vec())
}

/// Shift one stored score by `delta` and re-read the prediction.
pub fn intervene(model: &ProbeModel, score_row: &[f64], attribute: usize, delta: f64) -> Result<Intervention> {
    check_row(model, score_row)?;
    if attribute >= score_row.len() {
        return Err(Error::BadIndex {
            index: attribute,
            len: score_row.len(),
        });
    }
    let old_logits = row_logits(model, score_row)?;
    let mut shifted = score_row.to_vec();
    shifted[attribute] += delta;
    let new_logits = row_logits(model, &shifted)?;
    let logit_delta = model.w.column(attribute).iter().map(|w| delta * w).collect();
    Ok(Intervention {
        attribute,
        delta,
        old_pred: argmax(&old_logits),
        new_pred: argmax(&new_logits),
        old_logits,
        new_logits,
        logit_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{StopReason, TrainReport};
    use crate::probe::ProbeMetrics;
    use crate::selector::TrainConfig;
    use proptest::prelude::*;

    fn model(w: Vec<Vec<f64>>, b: Vec<f64>) -> ProbeModel {
        ProbeModel {
            w: Matrix::from_rows(&w).unwrap(),
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
                stop_reason: StopReason::MaxEpochs,
            },
        }
    }

    #[test]
    fn importance_is_elementwise() {
        let m = model(vec![vec![2.0, -1.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let is = importance_scores(&m, &[0.5, 0.5], 0).unwrap();
        assert_eq!(is.values, vec![1.0, -0.5]);
        let zero = importance_scores(&m, &[0.0, 0.0], 0).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        assert!(matches!(importance_scores(&m, &[0.5, 0.5], 2), Err(Error::BadClass { .. })));
    }

    #[test]
    fn importance_sums_to_logit() {
        let m = model(
            vec![vec![0.3, -1.7, 2.2], vec![1.1, 0.4, -0.6]],
            vec![0.25, -0.5],
        );
        let row = [0.31, -0.12, 0.77];
        let logits = row_logits(&m, &row).unwrap();
        for c in 0..2 {
            let is = importance_scores(&m, &row, c).unwrap();
            let s: f64 = is.values.iter().sum::<f64>() + m.b[c];
            assert!((s - logits[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_example_flips() {
        let m = model(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        let r = intervene(&m, &[0.49, 0.50], 0, 0.03).unwrap();
        assert_eq!(r.old_pred, 1);
        assert_eq!(r.new_pred, 0);
        assert!(r.flipped());
        assert_eq!(r.logit_delta, vec![0.03, 0.0]);
    }

    #[test]
    fn zero_delta_changes_nothing() {
        let m = model(vec![vec![1.0, -2.0], vec![0.5, 1.0]], vec![0.1, 0.0]);
        let r = intervene(&m, &[0.2, 0.3], 1, 0.0).unwrap();
        assert_eq!(r.old_pred, r.new_pred);
        assert!(r.logit_delta.iter().all(|v| *v == 0.0));
        assert!(matches!(intervene(&m, &[0.2, 0.3], 2, 0.1), Err(Error::BadIndex { .. })));
    }

    fn sm(rows: Vec<Vec<f64>>) -> ScoreMatrix {
        let m = Matrix::from_rows(&rows).unwrap();
        let names = (0..m.cols()).map(|i| format!("a{i}")).collect();
        ScoreMatrix::new(m, names).unwrap()
    }

    #[test]
    fn single_sample_class_matches_importance() {
        let m = model(vec![vec![0.5, -2.0, 1.0], vec![1.0, 1.0, 1.0]], vec![0.0, 0.0]);
        let s = sm(vec![vec![0.2, 0.1, -0.4], vec![0.9, 0.9, 0.9]]);
        let e = class_importance(&m, &s, &[0, 1], 0, 3).unwrap();
        let is = importance_scores(&m, s.scores.row(0), 0).unwrap();
        for r in &e.top {
            assert_eq!(r.importance, is.values[r.index]);
        }
        // IS = (0.1, -0.2, -0.4)
        let order: Vec<usize> = e.top.iter().map(|r| r.index).collect();
        assert_eq!(order, vec![2, 1, 0]);
    }

    #[test]
    fn full_ranking_is_a_permutation_and_ties_keep_index_order() {
        let m = model(vec![vec![1.0, 1.0, 1.0, 1.0], vec![0.0; 4]], vec![0.0, 0.0]);
        let s = sm(vec![vec![0.5, -0.5, 0.5, 0.1]]);
        let e = class_importance(&m, &s, &[0], 0, 4).unwrap();
        let order: Vec<usize> = e.top.iter().map(|r| r.index).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
        assert!(matches!(class_importance(&m, &s, &[0], 1, 4), Err(Error::EmptyClass(1))));
    }

    proptest! {
        #[test]
        fn halves_compose(w in prop::collection::vec(-3.0f64..3.0, 6),
                          row in prop::collection::vec(-1.0f64..1.0, 3),
                          j in 0usize..3, delta in -0.2f64..0.2) {
            let m = model(vec![w[..3].to_vec(), w[3..].to_vec()], vec![0.1, -0.1]);
            let once = intervene(&m, &row, j, delta).unwrap();
            let half = intervene(&m, &row, j, delta / 2.0).unwrap();
            let mut mid = row.clone();
            mid[j] += delta / 2.0;
            let twice = intervene(&m, &mid, j, delta / 2.0).unwrap();
            for c in 0..2 {
                prop_assert!((twice.new_logits[c] - once.new_logits[c]).abs() < 1e-12);
                prop_assert!((half.logit_delta[c] * 2.0 - once.logit_delta[c]).abs() < 1e-12);
            }
        }

        #[test]
        fn flip_happens_past_the_margin(w in prop::collection::vec(-3.0f64..3.0, 4),
                                        row in prop::collection::vec(-1.0f64..1.0, 2),
                                        j in 0usize..2, frac in 0.05f64..0.95) {
            let m = model(vec![w[..2].to_vec(), w[2..].to_vec()], vec![0.0, 0.0]);
            let base = intervene(&m, &row, j, 0.0).unwrap();
            let top = base.old_pred;
            let other = 1 - top;
            let slope = m.w.get(other, j) - m.w.get(top, j);
            prop_assume!(slope.abs() > 1e-3);
            let margin = (base.old_logits[top] - base.old_logits[other]) / slope;
            prop_assume!(margin.abs() > 1e-6);
            // Short of the margin the prediction holds; past it, it flips.
            let short = intervene(&m, &row, j, margin * frac).unwrap();
            prop_assert_eq!(short.new_pred, top);
            let past = intervene(&m, &row, j, margin * (1.0 + frac)).unwrap();
            prop_assert_eq!(past.new_pred, other);
        }
    }
}
