//! Patch embeddings: a PCA embedder fitted on training patches, plus CSV
//! ingestion of embeddings produced by an external model.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Patch;
use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;
const CHUNK: usize = 256;

impl AsRef<[f64]> for Patch {
    fn as_ref(&self) -> &[f64] {
        &self.pixels
    }
}

/// Affine map `e = W (x - mean)` with orthonormal rows in `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
}

impl Embedder {
    pub fn new(mean: Vec<f64>, components: Vec<Vec<f64>>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || components.is_empty() {
            return Err(Error::domain("embedder needs a non-empty mean and at least one component"));
        }
        if components.len() > dim {
            return Err(Error::domain(format!(
                "{} components exceed input dimension {dim}",
                components.len()
            )));
        }
        for row in &components {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
        }
        if mean.iter().chain(components.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("embedder holds non-finite values".into()));
        }
        for i in 0..components.len() {
            for j in 0..=i {
                let d = dot(&components[i], &components[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > ORTHONORMAL_TOL {
                    return Err(Error::domain(format!(
                        "components {i} and {j} are not orthonormal (dot {d})"
                    )));
                }
            }
        }
        Ok(Embedder { mean, components })
    }

    /// The identity map on `dim`-dimensional input.
    pub fn identity(dim: usize) -> Self {
        let components = (0..dim)
            .map(|k| (0..dim).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        Embedder { mean: vec![0.0; dim], components }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.len() });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|w| dot(w, &centered)).collect())
    }

    /// Embeds every row, preserving order.
    pub fn embed_all<P: AsRef<[f64]> + Sync>(&self, rows: &[P]) -> Result<Vec<Vec<f64>>> {
        rows.par_iter().map(|r| self.embed(r.as_ref())).collect()
    }

    /// Maps an embedding back to input space.
    pub fn reconstruct(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.components.len() {
            return Err(Error::DimensionMismatch { expected: self.components.len(), got: e.len() });
        }
        let mut out = self.mean.clone();
        for (w, &c) in self.components.iter().zip(e) {
            for (o, wi) in out.iter_mut().zip(w) {
                *o += c * wi;
            }
        }
        Ok(out)
    }
}

/// A fitted PCA embedder together with the variance along each component.
#[derive(Debug, Clone)]
pub struct PcaFit {
    pub embedder: Embedder,
    pub explained_variance: Vec<f64>,
}

/// Fits the top-`d_e` principal directions of `rows`.
///
/// Each component's first non-negligible coordinate is made positive. When
/// the data span fewer than `d_e` directions, the basis is completed with the
/// canonical unit vectors orthogonal to the span, in index order.
pub fn fit_pca<P: AsRef<[f64]> + Sync>(rows: &[P], d_e: usize) -> Result<PcaFit> {
    if d_e == 0 {
        return Err(Error::domain("embedding size must be at least 1"));
    }
    if rows.len() < d_e + 1 {
        return Err(Error::InsufficientData(format!(
            "PCA with {d_e} components needs at least {} patches, got {}",
            d_e + 1,
            rows.len()
        )));
    }
    let dim = rows[0].as_ref().len();
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.as_ref().len() });
    }
    if d_e > dim {
        return Err(Error::domain(format!("embedding size {d_e} exceeds patch dimension {dim}")));
    }

    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    // Chunked scatter matrices summed in chunk order: identical for any thread count.
    let partials: Vec<DMatrix<f64>> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let x = DMatrix::from_fn(chunk.len(), dim, |i, j| chunk[i].as_ref()[j] - mean[j]);
            x.transpose() * &x
        })
        .collect();
    let mut cov = DMatrix::zeros(dim, dim);
    for p in &partials {
        cov += p;
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(d_e);
    let mut explained = Vec::with_capacity(d_e);
    for &k in order.iter().take(d_e) {
        let lambda = eig.eigenvalues[k];
        if top <= 0.0 || lambda <= RANK_TOL * top {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        normalize(&mut v);
        orient(&mut v);
        components.push(v);
        explained.push(lambda);
    }
    for j in 0..dim {
        if components.len() == d_e {
            break;
        }
        let mut v = vec![0.0; dim];
        v[j] = 1.0;
        for c in &components {
            let d = dot(&v, c);
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        if norm(&v) > 1e-6 {
            normalize(&mut v);
            orient(&mut v);
            components.push(v);
            explained.push(0.0);
        }
    }
    Ok(PcaFit {
        embedder: Embedder::new(mean, components)?,
        explained_variance: explained,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// Flips `v` so that its first coordinate above noise level is positive.
fn orient(v: &mut [f64]) {
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Embeddings keyed by `(image_id, patch_id)`, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    pub vectors: BTreeMap<(usize, usize), Vec<f64>>,
}

impl ExternalEmbeddings {
    /// Per-image embeddings in patch order; patch ids must run `0..k`.
    pub fn by_image(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
        for (&(image, patch), v) in &self.vectors {
            if image >= out.len() {
                if image != out.len() {
                    return Err(Error::format("embeddings", format!("image ids skip to {image}")));
                }
                out.push(Vec::new());
            }
            if patch != out[image].len() {
                return Err(Error::format(
                    "embeddings",
                    format!("image {image} has patch {patch} out of sequence"),
                ));
            }
            out[image].push(v.clone());
        }
        Ok(out)
    }
}

/// Reads `image_id,patch_id,e0,...,e{d-1}` rows.
pub fn load_external_embeddings(path: &Path) -> Result<ExternalEmbeddings> {
    let what = format!("embeddings {}", path.display());
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(&what, e))?;
    let header = reader.headers().map_err(|e| Error::format(&what, e))?.clone();
    if header.len() < 3 || &header[0] != "image_id" || &header[1] != "patch_id" {
        return Err(Error::format(&what, "header must be image_id,patch_id,e0,..."));
    }
    let dim = header.len() - 2;
    let mut vectors = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::format(&what, e))?;
        let line = line + 2;
        if row.len() != dim + 2 {
            return Err(Error::format(
                &what,
                format!("line {line} has {} cells, expected {}", row.len(), dim + 2),
            ));
        }
        let id = |k: usize| {
            row[k]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::format(&what, format!("line {line}: bad id `{}`", &row[k])))
        };
        let key = (id(0)?, id(1)?);
        let v = row
            .iter()
            .skip(2)
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::format(&what, format!("line {line}: bad number `{c}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vectors.insert(key, v).is_some() {
            return Err(Error::format(
                &what,
                format!("duplicate key (image {}, patch {})", key.0, key.1),
            ));
        }
    }
    Ok(ExternalEmbeddings { dim, vectors })
}

/// Writes per-image embeddings in the format read by [`load_external_embeddings`].
pub fn write_external_embeddings(path: &Path, per_image: &[Vec<Vec<f64>>]) -> Result<()> {
    let dim = per_image.iter().flatten().next().map_or(0, |v| v.len());
    if dim == 0 || per_image.iter().flatten().any(|v| v.len() != dim) {
        return Err(Error::domain("embeddings must share one positive dimension"));
    }
    let what = format!("embeddings {}", path.display());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(&what, e))?;
    let mut header = vec!["image_id".to_string(), "patch_id".to_string()];
    header.extend((0..dim).map(|k| format!("e{k}")));
    w.write_record(&header).map_err(|e| Error::format(&what, e))?;
    for (i, patches) in per_image.iter().enumerate() {
        for (j, v) in patches.iter().enumerate() {
            let mut row = vec![i.to_string(), j.to_string()];
            row.extend(v.iter().map(|x| format!("{x:e}")));
            w.write_record(&row).map_err(|e| Error::format(&what, e))?;
        }
    }
    w.flush()?;
    Ok(())
}
