//! Two-dimensional PCA overview of a model's training message vectors.

use serde::{Deserialize, Serialize};

use crate::classifier::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub row_id: u64,
    pub class_id: String,
    pub x: f64,
    pub y: f64,
}

/// Principal axes of a centered sparse matrix, computed by block subspace
/// iteration. The covariance matrix is never formed.
struct Pca<'a> {
    rows: Vec<(&'a [u32], &'a [f64])>,
    mean: Vec<f64>,
    dim: usize,
}

impl Pca<'_> {
    /// `C v` with `C = Xcᵀ Xc / n`.
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mean_dot: f64 = self.mean.iter().zip(v).map(|(a, b)| a * b).sum();
        let mut out = vec![0.0; self.dim];
        let mut coeff_sum = 0.0;
        for (idx, vals) in &self.rows {
            let s: f64 = idx.iter().zip(*vals).map(|(&i, x)| x * v[i as usize]).sum::<f64>() - mean_dot;
            for (&i, x) in idx.iter().zip(*vals) {
                out[i as usize] += s * x;
            }
            coeff_sum += s;
        }
        let n = self.rows.len() as f64;
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o = (*o - coeff_sum * m) / n;
        }
        out
    }

    fn project(&self, idx: &[u32], vals: &[f64], axis: &[f64]) -> f64 {
        let raw: f64 = idx.iter().zip(vals).map(|(&i, x)| x * axis[i as usize]).sum();
        raw - self.mean.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt; columns that collapse are dropped.
fn orthonormalize(block: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(block.len());
    for mut v in block.drain(..) {
        for q in &out {
            let p = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    *block = out;
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi.
/// Returns (eigenvalues, eigenvectors as columns of `v`).
#[allow(clippy::needless_range_loop)]
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Top `count` principal axes, ordered by decreasing variance, each with
/// its largest-magnitude loading made positive.
fn principal_axes(pca: &Pca, count: usize) -> Vec<Vec<f64>> {
    let dim = pca.dim;
    let block_size = (count + 4).min(dim);
    // deterministic, well-spread starting block
    let mut block: Vec<Vec<f64>> = (0..block_size)
        .map(|b| {
            (0..dim)
                .map(|i| {
                    let h = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((b as u64 + 1) << 32);
                    ((h >> 11) as f64 / (1u64 << 53) as f64) - 0.5
                })
                .collect()
        })
        .collect();
    orthonormalize(&mut block);
    let mut previous: Vec<f64> = Vec::new();
    for _ in 0..1000 {
        let images: Vec<Vec<f64>> = block.iter().map(|v| pca.apply(v)).collect();
        let ritz: Vec<f64> = block.iter().zip(&images).map(|(v, w)| dot(v, w)).collect();
        let settled = ritz.len() == previous.len()
            && ritz
                .iter()
                .zip(&previous)
                .all(|(a, b)| (a - b).abs() <= 1e-13 * a.abs().max(1e-300));
        previous = ritz;
        let mut next = images;
        orthonormalize(&mut next);
        if next.is_empty() || settled {
            break;
        }
        block = next;
    }
    // Rayleigh-Ritz within the block
    let images: Vec<Vec<f64>> = block.iter().map(|v| pca.apply(v)).collect();
    let small: Vec<Vec<f64>> = block
        .iter()
        .map(|u| images.iter().map(|w| dot(u, w)).collect())
        .collect();
    let (values, vectors) = jacobi_eigen(small);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
        .into_iter()
        .take(count)
        .map(|j| {
            let mut axis = vec![0.0; dim];
            for (coef, v) in vectors.iter().map(|row| row[j]).zip(&block) {
                axis.iter_mut().zip(v).for_each(|(a, x)| *a += coef * x);
            }
            let lead = axis
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(_, &x)| x)
                .unwrap_or(0.0);
            if lead < 0.0 {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
            axis
        })
        .collect()
}

/// One point per training row, in row order. Components missing because the
/// vocabulary is too small or the data has no variance are reported as 0.
pub fn project_2d(model: &Model) -> Result<Vec<ProjectedPoint>> {
    let rows = model.rows();
    if rows.len() < 3 {
        return Err(Error::Evaluation(format!(
            "projection needs at least 3 rows, model has {}",
            rows.len()
        )));
    }
    let dim = model.vectorizer().vocabulary().len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (i, x) in r.features.message.iter() {
            mean[i] += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    let pca = Pca {
        rows: rows
            .iter()
            .map(|r| (r.features.message.indices(), r.features.message.values()))
            .collect(),
        mean,
        dim,
    };
    let axes = if dim == 0 { Vec::new() } else { principal_axes(&pca, 2) };
    Ok(rows
        .iter()
        .map(|r| {
            let (idx, vals) = (r.features.message.indices(), r.features.message.values());
            let coord = |k: usize| axes.get(k).map_or(0.0, |a| pca.project(idx, vals, a));
            ProjectedPoint {
                row_id: r.row_id,
                class_id: r.label.class_id.clone(),
                x: coord(0),
                y: coord(1),
            }
        })
        .collect())
}
