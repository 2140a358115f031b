//! Semantic projection: images expressed as cosine similarities to attributes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{AttributePool, ImageSet};
use crate::tensor::{l2_normalize_rows, Matrix};

/// Image-by-attribute similarity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub scores: Matrix,
    pub attribute_names: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix, attribute_names: Vec<String>) -> Result<Self> {
        if scores.cols() != attribute_names.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} score columns but {} attribute names",
                scores.cols(),
                attribute_names.len()
            )));
        }
        if let Some(pos) = scores.data().iter().position(|v| v.abs() > 1.0) {
            return Err(Error::ShapeMismatch(format!(
                "score in row {} is outside [-1, 1]",
                pos / scores.cols().max(1)
            )));
        }
        Ok(Self {
            scores,
            attribute_names,
        })
    }

    pub fn image_count(&self) -> usize {
        self.scores.rows()
    }

    pub fn width(&self) -> usize {
        self.scores.cols()
    }

    pub fn select_columns(&self, indices: &[usize]) -> ScoreMatrix {
        ScoreMatrix {
            scores: self.scores.select_columns(indices),
            attribute_names: indices
                .iter()
                .map(|&i| self.attribute_names[i].clone())
                .collect(),
        }
    }
}

/// Cosine similarity of every row of `images` against every row of `attrs`.
pub fn cosine_scores(images: &Matrix, attrs: &Matrix) -> Result<Matrix> {
    if images.cols() != attrs.cols() {
        return Err(Error::DimMismatch {
            expected: images.cols(),
            actual: attrs.cols(),
        });
    }
    let v = l2_normalize_rows(images)?;
    let t = l2_normalize_rows(attrs)?;
    let mut s = v.matmul_transposed(&t)?;
    s.data_mut().iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
    Ok(s)
}

pub fn semantic_project(images: &ImageSet, attrs: &AttributePool) -> Result<ScoreMatrix> {
    let scores = cosine_scores(&images.embeddings, &attrs.embeddings)?;
    ScoreMatrix::new(scores, attrs.names.clone())
}

/// Keeps the `k` largest scores of each row as 1 and zeroes the rest.
/// Ties go to the lower column index.
pub fn binarize_top_k(s: &ScoreMatrix, k: usize) -> Result<ScoreMatrix> {
    let cols = s.width();
    if k == 0 || k > cols {
        return Err(Error::BadK { k, cols });
    }
    let mut out = Matrix::zeros(s.image_count(), cols);
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..s.image_count() {
        let row = s.scores.row(r);
        order.clear();
        order.extend(0..cols);
        // Stable sort keeps lower indices first among equal scores.
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let dst = out.row_mut(r);
        for &c in &order[..k] {
            dst[c] = 1.0;
        }
    }
    ScoreMatrix::new(out, s.attribute_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gen_random_pool;
    use crate::tensor::norm;

    fn pool(rows: &[[f64; 2]]) -> AttributePool {
        let m = Matrix::from_rows(rows).unwrap();
        let names = (0..rows.len()).map(|i| format!("a{i}")).collect();
        AttributePool::new(m, names).unwrap()
    }

    fn images(rows: &[[f64; 2]]) -> ImageSet {
        let m = Matrix::from_rows(rows).unwrap();
        ImageSet::new(m, vec![0; rows.len()], vec!["c".into()]).unwrap()
    }

    #[test]
    fn self_projection_of_identity() {
        let s = semantic_project(&images(&[[1.0, 0.0], [0.0, 1.0]]), &pool(&[[1.0, 0.0], [0.0, 1.0]]))
            .unwrap();
        assert_eq!(s.scores, Matrix::identity(2));
    }

    #[test]
    fn hand_dot_products() {
        let s = semantic_project(
            &images(&[[1.0, 0.0]]),
            &pool(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]),
        )
        .unwrap();
        let expected = [1.0, 0.0, 0.6];
        for (a, b) in s.scores.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn positive_rescaling_of_attributes_is_invisible() {
        let imgs = images(&[[0.3, -0.7], [0.9, 0.1]]);
        let base = semantic_project(&imgs, &pool(&[[1.0, 2.0], [-0.5, 0.25]])).unwrap();
        let doubled = semantic_project(&imgs, &pool(&[[2.0, 4.0], [-1.0, 0.5]])).unwrap();
        assert_eq!(base, doubled);
        let odd = semantic_project(&imgs, &pool(&[[3.7, 7.4], [-1.85, 0.925]])).unwrap();
        for (a, b) in base.scores.data().iter().zip(odd.scores.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dim_mismatch() {
        let imgs = ImageSet::new(Matrix::identity(3), vec![0; 3], vec!["c".into()]).unwrap();
        assert!(matches!(
            semantic_project(&imgs, &pool(&[[1.0, 0.0]])),
            Err(Error::DimMismatch { .. })
        ));
    }

    fn scores(rows: &[&[f64]]) -> ScoreMatrix {
        let m = Matrix::from_rows(rows).unwrap();
        let names = (0..m.cols()).map(|i| format!("a{i}")).collect();
        ScoreMatrix::new(m, names).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let b = binarize_top_k(&scores(&[&[0.9, 0.1, 0.5]]), 2).unwrap();
        assert_eq!(b.scores.row(0), &[1.0, 0.0, 1.0]);

        let s = scores(&[&[0.9, 0.1, 0.5], &[-0.2, 0.3, 0.0]]);
        let all = binarize_top_k(&s, 3).unwrap();
        assert!(all.scores.data().iter().all(|&v| v == 1.0));

        let tie = binarize_top_k(&scores(&[&[0.5, 0.5, 0.1]]), 1).unwrap();
        assert_eq!(tie.scores.row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn binarize_rejects_bad_k() {
        let s = scores(&[&[0.9, 0.1]]);
        assert!(matches!(binarize_top_k(&s, 0), Err(Error::BadK { .. })));
        assert!(matches!(binarize_top_k(&s, 3), Err(Error::BadK { .. })));
    }

    #[test]
    fn column_selection_matches_subset_projection() {
        let p = gen_random_pool(12, 6, 3, false).unwrap();
        let imgs = ImageSet::new(
            gen_random_pool(9, 6, 4, false).unwrap().embeddings,
            vec![0; 9],
            vec!["c".into()],
        )
        .unwrap();
        let full = semantic_project(&imgs, &p).unwrap();
        let idx = [7, 2, 11, 0];
        let via_columns = full.select_columns(&idx);
        let via_subset = semantic_project(&imgs, &p.subset(&idx)).unwrap();
        assert_eq!(via_columns, via_subset);
    }

    #[test]
    fn orthonormal_basis_is_an_isometry() {
        let d = 8;
        let basis = gen_random_pool(d, d, 11, true).unwrap();
        let imgs = ImageSet::new(
            gen_random_pool(10, d, 12, false).unwrap().embeddings,
            vec![0; 10],
            vec!["c".into()],
        )
        .unwrap();
        let s = semantic_project(&imgs, &basis).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let di: Vec<f64> = imgs
                    .embeddings
                    .row(i)
                    .iter()
                    .zip(imgs.embeddings.row(j))
                    .map(|(a, b)| a - b)
                    .collect();
                let ds: Vec<f64> = s
                    .scores
                    .row(i)
                    .iter()
                    .zip(s.scores.row(j))
                    .map(|(a, b)| a - b)
                    .collect();
                assert!((norm(&di) - norm(&ds)).abs() < 1e-10);
            }
        }
    }
}
