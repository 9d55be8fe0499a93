//! Training pipeline: patches → embeddings → clusters → counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{fit_em_gmm, fit_kmeans, ClusterAlgorithm, ClusterModel};
use crate::concept::{ConceptSchema, ConceptVector};
use crate::dataset::{extract_patches, Dataset, GrayImage, PatchConfig};
use crate::embedding::{fit_pca, Embedder};
use crate::error::{Error, Result};
use crate::freq_model::{apply_rules, fit_counts, probability_model, CountTables, ProbabilityModel};
use crate::inference::{predict, OccupancyVector, Prediction};
use crate::rules::RuleExpr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub patch: PatchConfig,
    pub embed_dim: usize,
    pub clusters: usize,
    pub algorithm: ClusterAlgorithm,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// 28-pixel grid patches, 16-dimensional embeddings, 80 EM clusters.
    fn default() -> Self {
        TrainConfig {
            patch: PatchConfig::square(28),
            embed_dim: 16,
            clusters: 80,
            algorithm: ClusterAlgorithm::Em,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short hex digest of the configuration, used to name report files.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

/// The label-independent part of a trained model.
#[derive(Debug, Clone)]
pub struct Features {
    pub embedder: Embedder,
    pub clusters: ClusterModel,
    /// Cluster index of every training patch, grouped by image.
    pub assignments: Vec<Vec<usize>>,
}

fn patch_rows(images: &[&GrayImage], cfg: &PatchConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, im)| Ok(extract_patches(i, im, cfg)?.into_iter().map(|p| p.pixels).collect()))
        .collect()
}

/// Fits the embedder and the clusters on all patches of `images`.
pub fn fit_features(images: &[&GrayImage], cfg: &TrainConfig) -> Result<Features> {
    if images.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let per_image = patch_rows(images, &cfg.patch)?;
    let rows: Vec<&Vec<f64>> = per_image.iter().flatten().collect();
    let pca = fit_pca(&rows, cfg.embed_dim)?;
    let embedded = pca.embedder.embed_all(&rows)?;
    if embedded.len() < cfg.clusters {
        return Err(Error::InsufficientData(format!(
            "{} clusters requested but only {} patches",
            cfg.clusters,
            embedded.len()
        )));
    }
    let clusters = match cfg.algorithm {
        ClusterAlgorithm::Kmeans => fit_kmeans(&embedded, cfg.clusters, cfg.seed)?.model,
        ClusterAlgorithm::Em => fit_em_gmm(&embedded, cfg.clusters, cfg.seed)?.model,
    };
    let flat = clusters.assign_all(&embedded)?;
    let mut assignments = Vec::with_capacity(per_image.len());
    let mut offset = 0;
    for patches in &per_image {
        assignments.push(flat[offset..offset + patches.len()].to_vec());
        offset += patches.len();
    }
    Ok(Features {
        embedder: pca.embedder,
        clusters,
        assignments,
    })
}

/// Everything inference needs; probabilities are re-derived from the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub schema: ConceptSchema,
    pub patch: PatchConfig,
    pub embedder: Embedder,
    pub clusters: ClusterModel,
    pub counts: CountTables,
    pub rules: Vec<RuleExpr>,
}

impl TrainedModel {
    pub fn from_features(features: &Features, labels: &[ConceptVector], schema: &ConceptSchema, patch: PatchConfig) -> Result<Self> {
        let counts = fit_counts(&features.assignments, labels, features.clusters.n_clusters(), schema)?;
        Ok(TrainedModel {
            schema: schema.clone(),
            patch,
            embedder: features.embedder.clone(),
            clusters: features.clusters.clone(),
            counts,
            rules: Vec::new(),
        })
    }

    /// Priors and conditionals with the stored rules applied.
    pub fn probability_model(&self) -> Result<ProbabilityModel> {
        apply_rules(&probability_model(&self.counts)?, &self.counts, &self.rules)
    }

    /// Priors and conditionals with `rules` applied instead of the stored ones.
    pub fn probability_model_with(&self, rules: &[RuleExpr]) -> Result<ProbabilityModel> {
        apply_rules(&probability_model(&self.counts)?, &self.counts, rules)
    }

    pub fn occupancy(&self, image: &GrayImage) -> Result<OccupancyVector> {
        crate::inference::occupancy(&self.clusters, &self.embedder, image, &self.patch)
    }

    pub fn occupancies(&self, images: &[&GrayImage]) -> Result<Vec<OccupancyVector>> {
        images.par_iter().map(|im| self.occupancy(im)).collect()
    }
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let images: Vec<&GrayImage> = dataset.records.iter().map(|r| &r.image).collect();
    let features = fit_features(&images, cfg)?;
    TrainedModel::from_features(&features, &dataset.labels(), &dataset.schema, cfg.patch)
}

pub fn predict_all(model: &ProbabilityModel, occupancies: &[OccupancyVector], epsilon: f64) -> Result<Vec<Prediction>> {
    occupancies.par_iter().map(|o| predict(model, o, epsilon)).collect()
}
