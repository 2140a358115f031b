//! Embedding manifests: a small JSON document describing a raw payload of
//! row-major little-endian `f32` values stored next to it.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::ScoreMatrix;
use crate::tensor::{l2_normalize_rows, norm, Matrix};

/// Tolerance on row norms for payloads flagged as already normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    ImageEmbeddings,
    AttributeEmbeddings,
    /// Projected scores exported for external analysis.
    ScoreMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: ManifestKind,
    pub dim: usize,
    pub count: usize,
    pub l2_normalized: bool,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

/// Image embeddings with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl ImageSet {
    pub fn new(embeddings: Matrix, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} images",
                labels.len(),
                embeddings.rows()
            )));
        }
        check_labels(&labels, class_names.len())?;
        Ok(Self {
            embeddings,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            embeddings: self.embeddings.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

/// Candidate attribute embeddings and their names.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributePool {
    pub embeddings: Matrix,
    pub names: Vec<String>,
}

impl AttributePool {
    pub fn new(embeddings: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != embeddings.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} names for {} attribute rows",
                names.len(),
                embeddings.rows()
            )));
        }
        check_unique(&names)?;
        if let Some(r) = embeddings.row_norms().iter().position(|&n| n < 1e-30) {
            return Err(Error::ZeroRow(r));
        }
        Ok(Self { embeddings, names })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> AttributePool {
        AttributePool {
            embeddings: self.embeddings.select_rows(indices),
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embeddings {
    Images(ImageSet),
    Attributes(AttributePool),
}

/// Summary of an image set / attribute pool pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub dim: usize,
    pub pool_size: usize,
    pub image_count: usize,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
}

pub fn validate(images: &ImageSet, pool: &AttributePool) -> Result<CompatibilityReport> {
    if images.dim() != pool.dim() {
        return Err(Error::DimMismatch {
            expected: images.dim(),
            actual: pool.dim(),
        });
    }
    Ok(CompatibilityReport {
        dim: images.dim(),
        pool_size: pool.len(),
        image_count: images.len(),
        num_classes: images.num_classes(),
        class_counts: images.class_counts(),
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads a manifest and its payload.
pub fn load(manifest_path: impl AsRef<Path>) -> Result<Embeddings> {
    let path = manifest_path.as_ref();
    let manifest = read_manifest(path)?;
    let matrix = read_payload(path, &manifest)?;
    let matrix = if manifest.l2_normalized {
        for (r, n) in matrix.row_norms().iter().enumerate() {
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(parse_err(
                    path,
                    format!("row {r} has norm {n} but manifest claims l2_normalized"),
                ));
            }
        }
        matrix
    } else {
        info!("normalizing {} rows of {}", matrix.rows(), path.display());
        l2_normalize_rows(&matrix)?
    };

    match manifest.kind {
        ManifestKind::ImageEmbeddings => {
            let class_names = manifest.class_names.unwrap_or_default();
            let labels = manifest
                .labels
                .ok_or_else(|| parse_err(path, "image manifest has no labels".into()))?;
            Ok(Embeddings::Images(ImageSet::new(matrix, labels, class_names)?))
        }
        ManifestKind::AttributeEmbeddings => {
            let names = manifest
                .names
                .ok_or_else(|| parse_err(path, "attribute manifest has no names".into()))?;
            if names.len() != manifest.count {
                return Err(parse_err(
                    path,
                    format!("{} names for count {}", names.len(), manifest.count),
                ));
            }
            Ok(Embeddings::Attributes(AttributePool::new(matrix, names)?))
        }
        ManifestKind::ScoreMatrix => Err(parse_err(
            path,
            "score matrices are loaded with load_scores".into(),
        )),
    }
}

pub fn load_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    match load(path.as_ref())? {
        Embeddings::Images(s) => Ok(s),
        Embeddings::Attributes(_) => Err(parse_err(
            path.as_ref(),
            "expected image_embeddings manifest".into(),
        )),
    }
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<AttributePool> {
    match load(path.as_ref())? {
        Embeddings::Attributes(p) => Ok(p),
        Embeddings::Images(_) => Err(parse_err(
            path.as_ref(),
            "expected attribute_embeddings manifest".into(),
        )),
    }
}

pub fn save_images(set: &ImageSet, manifest_path: impl AsRef<Path>) -> Result<Manifest> {
    if set.is_empty() {
        return Err(Error::ShapeMismatch("image set is empty".into()));
    }
    check_labels(&set.labels, set.num_classes())?;
    let manifest = Manifest {
        kind: ManifestKind::ImageEmbeddings,
        dim: set.dim(),
        count: set.len(),
        l2_normalized: rows_are_unit(&set.embeddings),
        data_file: data_file_name(manifest_path.as_ref()),
        names: None,
        labels: Some(set.labels.clone()),
        class_names: Some(set.class_names.clone()),
    };
    write_pair(manifest_path.as_ref(), &manifest, &set.embeddings)?;
    Ok(manifest)
}

pub fn save_pool(pool: &AttributePool, manifest_path: impl AsRef<Path>) -> Result<Manifest> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    check_unique(&pool.names)?;
    let manifest = Manifest {
        kind: ManifestKind::AttributeEmbeddings,
        dim: pool.dim(),
        count: pool.len(),
        l2_normalized: rows_are_unit(&pool.embeddings),
        data_file: data_file_name(manifest_path.as_ref()),
        names: Some(pool.names.clone()),
        labels: None,
        class_names: None,
    };
    write_pair(manifest_path.as_ref(), &manifest, &pool.embeddings)?;
    Ok(manifest)
}

pub fn save(obj: &Embeddings, manifest_path: impl AsRef<Path>) -> Result<Manifest> {
    match obj {
        Embeddings::Images(s) => save_images(s, manifest_path),
        Embeddings::Attributes(p) => save_pool(p, manifest_path),
    }
}

/// Writes a score matrix. Here `dim` is the number of attribute columns and
/// `count` the number of images.
pub fn save_scores(
    scores: &ScoreMatrix,
    labels: Option<&[usize]>,
    class_names: Option<&[String]>,
    manifest_path: impl AsRef<Path>,
) -> Result<Manifest> {
    let manifest = Manifest {
        kind: ManifestKind::ScoreMatrix,
        dim: scores.scores.cols(),
        count: scores.scores.rows(),
        l2_normalized: false,
        data_file: data_file_name(manifest_path.as_ref()),
        names: Some(scores.attribute_names.clone()),
        labels: labels.map(|l| l.to_vec()),
        class_names: class_names.map(|c| c.to_vec()),
    };
    write_pair(manifest_path.as_ref(), &manifest, &scores.scores)?;
    Ok(manifest)
}

pub fn load_scores(manifest_path: impl AsRef<Path>) -> Result<(ScoreMatrix, Manifest)> {
    let path = manifest_path.as_ref();
    let manifest = read_manifest(path)?;
    if manifest.kind != ManifestKind::ScoreMatrix {
        return Err(parse_err(path, "expected score_matrix manifest".into()));
    }
    let scores = read_payload(path, &manifest)?;
    let names = manifest.names.clone().unwrap_or_default();
    Ok((ScoreMatrix::new(scores, names)?, manifest))
}

pub fn encode_f32_le(m: &Matrix) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(m.data().len() * 4);
    for &v in m.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

fn read_payload(manifest_path: &Path, manifest: &Manifest) -> Result<Matrix> {
    let data_path = resolve(manifest_path, &manifest.data_file);
    let bytes = fs::read(&data_path)?;
    let expected = (manifest.count * manifest.dim * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::new(manifest.count, manifest.dim, data)
}

fn write_pair(manifest_path: &Path, manifest: &Manifest, m: &Matrix) -> Result<()> {
    if let Some(parent) = manifest_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(resolve(manifest_path, &manifest.data_file), encode_f32_le(m))?;
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(manifest_path, text)?;
    Ok(())
}

fn resolve(manifest_path: &Path, relative: &str) -> PathBuf {
    manifest_path
        .parent()
        .map_or_else(|| PathBuf::from(relative), |p| p.join(relative))
}

fn data_file_name(manifest_path: &Path) -> String {
    let stem = manifest_path
        .file_stem()
        .map_or_else(|| "embeddings".to_string(), |s| s.to_string_lossy().into_owned());
    format!("{stem}.f32")
}

fn rows_are_unit(m: &Matrix) -> bool {
    m.iter_rows().all(|r| (norm(r) - 1.0).abs() <= 1e-6)
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= classes) {
        Some(row) => Err(Error::LabelOutOfRange {
            row,
            label: labels[row],
            classes,
        }),
        None => Ok(()),
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateName(n.clone()));
        }
    }
    Ok(())
}

fn parse_err(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message,
    }
}
