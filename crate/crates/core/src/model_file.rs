//! Versioned JSON persistence of a trained model.
//!
//! Counts are stored as exact integers and reals as decimal strings with 17
//! significant digits, so a save → load → save cycle is byte-identical.
//! Probabilities are never stored; they are re-derived from the counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterModel;
use crate::concept::{Combination, ConceptSchema};
use crate::dataset::PatchConfig;
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::freq_model::{probability_model, ComboCounts, CountTables};
use crate::pipeline::TrainedModel;
use crate::rules::parse_rule;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    schema: ConceptSchema,
    patch: PatchConfig,
    embedder: EmbedderFile,
    clusters: ClustersFile,
    counts: CountsFile,
    rules: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedderFile {
    mean: Vec<String>,
    components: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ClustersFile {
    Kmeans {
        centers: Vec<Vec<String>>,
    },
    Gmm {
        weights: Vec<String>,
        means: Vec<Vec<String>>,
        variances: Vec<Vec<String>>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsFile {
    n_clusters: usize,
    n_images: u64,
    cluster_totals: Vec<u64>,
    value_cluster: Vec<Vec<Vec<u64>>>,
    combos: Vec<ComboFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComboFile {
    z: Vec<u16>,
    images: u64,
    clusters: Vec<u64>,
}

/// Formats a real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::format("model file", format!("`{s}` is not a finite real")))
}

fn reals(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| format_real(x)).collect()
}

fn matrix(m: &[Vec<f64>]) -> Vec<Vec<String>> {
    m.iter().map(|r| reals(r)).collect()
}

fn parse_reals(v: &[String]) -> Result<Vec<f64>> {
    v.iter().map(|s| parse_real(s)).collect()
}

fn parse_matrix(m: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
    m.iter().map(|r| parse_reals(r)).collect()
}

/// Serializes `model` to the model-file text.
pub fn to_string(model: &TrainedModel) -> String {
    let clusters = match &model.clusters {
        ClusterModel::KMeans { centers } => ClustersFile::Kmeans { centers: matrix(centers) },
        ClusterModel::Gmm { weights, means, variances } => ClustersFile::Gmm {
            weights: reals(weights),
            means: matrix(means),
            variances: matrix(variances),
        },
    };
    let c = &model.counts;
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        schema: model.schema.clone(),
        patch: model.patch,
        embedder: EmbedderFile {
            mean: reals(model.embedder.mean()),
            components: matrix(model.embedder.components()),
        },
        clusters,
        counts: CountsFile {
            n_clusters: c.n_clusters(),
            n_images: c.n_images(),
            cluster_totals: c.cluster_totals().to_vec(),
            value_cluster: c.value_cluster_table().to_vec(),
            combos: c
                .combos()
                .iter()
                .map(|(z, cc)| ComboFile {
                    z: z.0.clone(),
                    images: cc.images,
                    clusters: cc.clusters.clone(),
                })
                .collect(),
        },
        rules: model.rules.iter().map(|r| r.to_text(&model.schema)).collect(),
    };
    serde_json::to_string_pretty(&file).expect("model file serializes") + "\n"
}

/// Parses and validates model-file text.
pub fn from_str(text: &str) -> Result<TrainedModel> {
    let version: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format("model file", e))?;
    match version.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::format("model file", format!("unsupported format_version {v}"))),
        None => return Err(Error::format("model file", "missing format_version")),
    }
    let file: ModelFile = serde_json::from_value(version).map_err(|e| Error::format("model file", e))?;

    let embedder = Embedder::new(parse_reals(&file.embedder.mean)?, parse_matrix(&file.embedder.components)?)?;
    if embedder.input_dim() != file.patch.patch_len() {
        return Err(Error::format(
            "model file",
            format!("embedder expects {} inputs but patches have {}", embedder.input_dim(), file.patch.patch_len()),
        ));
    }
    let clusters = match &file.clusters {
        ClustersFile::Kmeans { centers } => ClusterModel::kmeans(parse_matrix(centers)?)?,
        ClustersFile::Gmm { weights, means, variances } => {
            ClusterModel::gmm(parse_reals(weights)?, parse_matrix(means)?, parse_matrix(variances)?)?
        }
    };
    if clusters.dim() != embedder.output_dim() {
        return Err(Error::format(
            "model file",
            format!("clusters have dimension {} but embeddings {}", clusters.dim(), embedder.output_dim()),
        ));
    }
    if clusters.n_clusters() != file.counts.n_clusters {
        return Err(Error::format("model file", "cluster count differs between clusters and counts"));
    }
    let mut combos = BTreeMap::new();
    for c in file.counts.combos {
        let z = Combination(c.z);
        let dup = combos
            .insert(z.clone(), ComboCounts { images: c.images, clusters: c.clusters })
            .is_some();
        if dup {
            return Err(Error::format("model file", format!("combination {z} listed twice")));
        }
    }
    let counts = CountTables::from_parts(
        file.schema.clone(),
        file.counts.n_clusters,
        file.counts.n_images,
        file.counts.cluster_totals,
        file.counts.value_cluster,
        combos,
    )?;
    probability_model(&counts)?;
    let rules = file
        .rules
        .iter()
        .map(|r| parse_rule(r, &file.schema))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel {
        schema: file.schema,
        patch: file.patch,
        embedder,
        clusters,
        counts,
        rules,
    })
}

/// First 12 hex digits of the SHA-256 of the model-file text.
pub fn digest(model: &TrainedModel) -> String {
    Sha256::digest(to_string(model).as_bytes())
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nodule;
    use crate::rules::parse_rule;

    fn nodule_model() -> TrainedModel {
        TrainedModel {
            schema: nodule::schema(),
            patch: PatchConfig::square(1),
            embedder: Embedder::identity(1),
            clusters: ClusterModel::kmeans(nodule::CLUSTER_PIXELS.iter().map(|&x| vec![x]).collect()).unwrap(),
            counts: nodule::counts(),
            rules: vec![parse_rule("contour=2 -> diagnosis=1", &nodule::schema()).unwrap()],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let model = nodule_model();
        let text = to_string(&model);
        let back = from_str(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn reals_keep_every_bit() {
        for x in [1.0 / 3.0, -2.5e-300, 123456.789, f64::MIN_POSITIVE, 0.1 + 0.2] {
            assert_eq!(parse_real(&format_real(x)).unwrap().to_bits(), x.to_bits());
        }
        assert!(parse_real("NaN").is_err());
    }

    #[test]
    fn rejects_bad_files() {
        let text = to_string(&nodule_model());
        assert!(from_str(&text.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        assert!(from_str(&text.replace("\"n_images\": 10", "\"n_images\": 3")).is_err());
        assert!(from_str("{}").is_err());
        let bad_rule = text.replace("contour=2 -> diagnosis=1", "contour=7");
        assert!(matches!(from_str(&bad_rule), Err(Error::ValueOutOfRange { .. })));
    }
}
