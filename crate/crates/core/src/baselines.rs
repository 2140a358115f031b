//! Reference attribute selectors: uniform sampling, k-means, SVD and mean similarity.

use rand::seq::index::sample;
use rand::Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{validate, AttributePool, ImageSet};
use crate::optim::{stream_rng, STREAM_INIT};
use crate::projection::semantic_project;
use crate::selector::SelectionResult;
use crate::tensor::{dot, l2_normalize_rows, norm, Matrix};

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-6;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 20_000;

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 || k > available {
        return Err(Error::KTooLarge { k, available });
    }
    Ok(())
}

/// `k` distinct indices drawn without replacement, reported in ascending order.
pub fn select_uniform(pool: &AttributePool, k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k, pool.len())?;
    let mut indices = sample(&mut stream_rng(seed, STREAM_INIT), pool.len(), k).into_vec();
    indices.sort_unstable();
    Ok(SelectionResult::new(
        "uniform",
        indices,
        pool,
        Some(seed),
        json!({ "k": k, "seed": seed }),
    ))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// k-means++ seeding followed by Lloyd iterations on the normalized pool.
/// Returns the centroids.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = points.rows();
    let mut rng = stream_rng(seed, STREAM_INIT);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut closest: Vec<f64> = points
        .iter_rows()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // Every point coincides with a centroid already; take an unused one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (c, p) in closest.iter_mut().zip(points.iter_rows()) {
            *c = c.min(sq_dist(p, points.row(next)));
        }
    }

    let mut centroids = points.select_rows(&chosen);
    let d = points.cols();
    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        for (a, p) in assignment.iter_mut().zip(points.iter_rows()) {
            *a = nearest_row(&centroids, p);
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points.iter_rows()) {
            counts[a] += 1;
            sums.row_mut(a).iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut max_move: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums.row(c).iter().map(|s| s / counts[c] as f64).collect();
            max_move = max_move.max(sq_dist(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        if max_move < KMEANS_TOL {
            break;
        }
    }
    centroids
}

fn nearest_row(m: &Matrix, p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, r) in m.iter_rows().enumerate() {
        let d = sq_dist(r, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// For each target in order, the best-ranked pool row not yet claimed.
/// `rank(target, row)` is maximized; ties go to the lower row index.
fn claim_in_order(targets: usize, rows: usize, rank: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut taken = vec![false; rows];
    let mut out = Vec::with_capacity(targets);
    for t in 0..targets {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..rows {
            if taken[r] {
                continue;
            }
            let s = rank(t, r);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((r, s));
            }
        }
        let (r, _) = best.expect("targets <= rows");
        taken[r] = true;
        out.push(r);
    }
    out
}

/// Pool rows nearest to k-means centroids; a centroid whose nearest row is
/// already claimed takes its next-nearest unclaimed row.
pub fn select_kmeans(pool: &AttributePool, k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k, pool.len())?;
    let points = l2_normalize_rows(&pool.embeddings)?;
    let centroids = kmeans(&points, k, seed);
    let indices = claim_in_order(k, points.rows(), |c, r| {
        -sq_dist(centroids.row(c), points.row(r))
    });
    Ok(SelectionResult::new(
        "kmeans",
        indices,
        pool,
        Some(seed),
        json!({ "k": k, "seed": seed }),
    ))
}

/// Top-`k` eigenvectors of a symmetric matrix by power iteration with
/// deflation. Returns `(eigenvalues, eigenvectors as rows)`.
pub fn top_eigenvectors(a: &Matrix, k: usize) -> (Vec<f64>, Matrix) {
    let d = a.rows();
    let mut work = a.clone();
    let mut values = Vec::with_capacity(k);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut rng = stream_rng(0, STREAM_INIT);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, &vectors);
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let mut w: Vec<f64> = work.iter_rows().map(|r| dot(r, &v)).collect();
            orthogonalize(&mut w, &vectors);
            let n = norm(&w);
            if n < 1e-300 {
                // Remaining spectrum is zero; any orthogonal direction will do.
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|x| *x /= n);
            let delta = sq_dist(&w, &v).sqrt();
            lambda = n;
            v = w;
            if delta < POWER_TOL {
                break;
            }
        }
        for r in 0..d {
            for c in 0..d {
                let val = work.get(r, c) - lambda * v[r] * v[c];
                work.set(r, c, val);
            }
        }
        values.push(lambda);
        vectors.push(v);
    }
    (values, Matrix::from_rows(&vectors).unwrap_or_else(|_| Matrix::zeros(0, d)))
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Rows best aligned (in absolute cosine) with the top right singular
/// vectors of the uncentered pool matrix.
pub fn select_svd(pool: &AttributePool, k: usize) -> Result<SelectionResult> {
    check_k(k, pool.len().min(pool.dim()))?;
    let t = l2_normalize_rows(&pool.embeddings)?;
    let gram = t.transpose().matmul(&t)?;
    let (_, vectors) = top_eigenvectors(&gram, k);
    // Rows of t are unit, singular vectors are unit: |dot| is |cosine|.
    let indices = claim_in_order(k, t.rows(), |s, r| dot(vectors.row(s), t.row(r)).abs());
    Ok(SelectionResult::new(
        "svd",
        indices,
        pool,
        None,
        json!({ "k": k }),
    ))
}

/// The `k` attributes with the largest mean score over all images.
pub fn select_similarity(images: &ImageSet, pool: &AttributePool, k: usize) -> Result<SelectionResult> {
    validate(images, pool)?;
    check_k(k, pool.len())?;
    let scores = semantic_project(images, pool)?;
    let m = scores.image_count().max(1) as f64;
    let mut means = vec![0.0; pool.len()];
    for row in scores.scores.iter_rows() {
        means.iter_mut().zip(row).for_each(|(a, s)| *a += s);
    }
    means.iter_mut().for_each(|a| *a /= m);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    order.truncate(k);
    let mut sel = SelectionResult::new("similarity", order, pool, None, json!({ "k": k }));
    sel.metrics = json!({ "mean_scores": sel.indices.iter().map(|&i| means[i]).collect::<Vec<_>>() });
    Ok(sel)
}
