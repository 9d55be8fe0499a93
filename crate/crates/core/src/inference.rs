//! Concept posteriors for a new image from its cluster occupancy.
//!
//! For every concept value the likelihood of the occupancy `(s_1..s_R)` is
//! multinomial in `p(l | r, v)`; Bayes' rule with the prior `p(r, v)` gives
//! the posterior. Everything is computed in log space.

use crate::clustering::ClusterModel;
use crate::concept::ConceptSchema;
use crate::dataset::{extract_patches, GrayImage, PatchConfig};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::freq_model::ProbabilityModel;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Per-cluster counts of an image's patch embeddings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyVector {
    counts: Vec<u64>,
}

impl OccupancyVector {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::domain("occupancy needs at least one cluster"));
        }
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::domain("occupancy must count at least one embedding"));
        }
        Ok(OccupancyVector { counts })
    }

    pub fn from_assignments(assignments: &[usize], n_clusters: usize) -> Result<Self> {
        let mut counts = vec![0; n_clusters];
        for &l in assignments {
            *counts
                .get_mut(l)
                .ok_or_else(|| Error::domain(format!("cluster index {l} outside 0..{n_clusters}")))? += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Patches → embeddings → cluster indices, in row-major patch order.
pub fn assign_patches(
    clusters: &ClusterModel,
    embedder: &Embedder,
    image: &GrayImage,
    cfg: &PatchConfig,
) -> Result<Vec<usize>> {
    extract_patches(0, image, cfg)?
        .iter()
        .map(|p| clusters.assign(&embedder.embed(&p.pixels)?))
        .collect()
}

pub fn occupancy(
    clusters: &ClusterModel,
    embedder: &Embedder,
    image: &GrayImage,
    cfg: &PatchConfig,
) -> Result<OccupancyVector> {
    let a = assign_patches(clusters, embedder, image, cfg)?;
    OccupancyVector::from_assignments(&a, clusters.n_clusters())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `p(r, v | E*)`, indexed `[r][v - 1]`.
    pub posteriors: Vec<Vec<f64>>,
    /// `Σ_l s_l ln max(p(l | r, v), ε)`, without the multinomial coefficient.
    pub log_likelihoods: Vec<Vec<f64>>,
    /// `P{E*}` per concept, multinomial coefficient included.
    pub evidence: Vec<f64>,
}

impl Prediction {
    /// Most probable value per concept; ties go to the smallest value.
    pub fn argmax(&self) -> Vec<u16> {
        self.posteriors
            .iter()
            .map(|p| {
                let mut best = 0;
                for (i, &x) in p.iter().enumerate() {
                    if x > p[best] {
                        best = i;
                    }
                }
                best as u16 + 1
            })
            .collect()
    }
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Posterior concept probabilities. Zero and missing conditionals are
/// replaced by `epsilon`.
pub fn predict(model: &ProbabilityModel, occ: &OccupancyVector, epsilon: f64) -> Result<Prediction> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if occ.counts.len() != model.n_clusters() {
        return Err(Error::DimensionMismatch {
            expected: model.n_clusters(),
            got: occ.counts.len(),
        });
    }
    let schema = model.schema();
    let ln_coef = ln_factorial(occ.total()) - occ.counts.iter().map(|&s| ln_factorial(s)).sum::<f64>();
    let ln_eps = epsilon.ln();
    let mut pred = Prediction {
        posteriors: Vec::with_capacity(schema.len()),
        log_likelihoods: Vec::with_capacity(schema.len()),
        evidence: Vec::with_capacity(schema.len()),
    };
    for r in 0..schema.len() {
        let lls: Vec<f64> = (1..=schema.cardinality(r))
            .map(|v| match model.conditional(r, v) {
                Some(p) => occ
                    .counts
                    .iter()
                    .zip(p)
                    .filter(|(&s, _)| s > 0)
                    .map(|(&s, &p)| s as f64 * if p > epsilon { p.ln() } else { ln_eps })
                    .sum(),
                None => occ.total() as f64 * ln_eps,
            })
            .collect();
        let joint: Vec<f64> = lls
            .iter()
            .zip(model.priors(r))
            .map(|(ll, &p)| if p > 0.0 { ll + p.ln() } else { f64::NEG_INFINITY })
            .collect();
        let lse = log_sum_exp(&joint);
        if !lse.is_finite() {
            return Err(Error::Numeric(format!(
                "every posterior of concept `{}` is zero",
                schema.name(r)
            )));
        }
        pred.posteriors.push(joint.iter().map(|j| (j - lse).exp()).collect());
        pred.evidence.push((lse + ln_coef).exp());
        pred.log_likelihoods.push(lls);
    }
    Ok(pred)
}

/// Values whose posterior reaches the concept's threshold; zero, one or
/// several values may qualify.
pub fn decide(pred: &Prediction, thresholds: &[f64]) -> Result<Vec<Vec<u16>>> {
    if thresholds.len() != pred.posteriors.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.posteriors.len(),
            got: thresholds.len(),
        });
    }
    if let Some(g) = thresholds.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::domain(format!("threshold {g} outside [0, 1]")));
    }
    Ok(pred
        .posteriors
        .iter()
        .zip(thresholds)
        .map(|(p, &g)| {
            p.iter()
                .enumerate()
                .filter(|(_, &x)| x >= g)
                .map(|(i, _)| i as u16 + 1)
                .collect()
        })
        .collect())
}

/// Parses `c0=0.5,contour=0.6`; concepts without an entry get `None`.
pub fn parse_thresholds(spec: &str, schema: &ConceptSchema) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; schema.len()];
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| Error::domain(format!("threshold `{item}` is not NAME=VALUE")))?;
        let r = schema
            .resolve(name.trim())
            .ok_or_else(|| Error::UnknownConcept(name.trim().to_string()))?;
        let g: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::domain(format!("threshold `{value}` is not a number")))?;
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::domain(format!("threshold {g} outside [0, 1]")));
        }
        out[r] = Some(g);
    }
    Ok(out)
}

/// Thresholded values where a threshold is given, the arg-max elsewhere.
pub fn assigned_values(pred: &Prediction, thresholds: &[Option<f64>]) -> Vec<Vec<u16>> {
    let best = pred.argmax();
    pred.posteriors
        .iter()
        .zip(thresholds)
        .zip(best)
        .map(|((p, g), b)| match g {
            Some(g) => p
                .iter()
                .enumerate()
                .filter(|(_, &x)| x >= *g)
                .map(|(i, _)| i as u16 + 1)
                .collect(),
            None => vec![b],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq_model::{apply_rule, probability_model};
    use crate::nodule;
    use crate::rules::parse_rule;
    use std::collections::BTreeMap;

    fn nodule_prediction() -> Prediction {
        let m = probability_model(&nodule::counts()).unwrap();
        let occ = OccupancyVector::new(nodule::TEST_OCCUPANCY.to_vec()).unwrap();
        predict(&m, &occ, DEFAULT_EPSILON).unwrap()
    }

    #[test]
    fn nodule_posteriors_and_evidence() {
        let pred = nodule_prediction();
        let want = [vec![0.032, 0.968], vec![0.630, 0.315, 0.055], vec![0.999, 0.001]];
        for (got, want) in pred.posteriors.iter().zip(&want) {
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() <= 1e-3, "{got:?}");
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (a, b) in pred.evidence.iter().zip([0.087, 0.067, 0.056]) {
            assert!((a - b).abs() <= 1e-3, "{:?}", pred.evidence);
        }
    }

    #[test]
    fn thresholds_select_values() {
        let pred = nodule_prediction();
        assert_eq!(decide(&pred, &[0.5, 0.6, 0.5]).unwrap()[1], vec![1]);
        assert!(decide(&pred, &[0.5, 0.7, 0.5]).unwrap()[1].is_empty());
        assert_eq!(decide(&pred, &[0.0, 0.0, 0.0]).unwrap()[1], vec![1, 2, 3]);
        assert!(decide(&pred, &[0.5, 1.5, 0.5]).is_err());
        let schema = nodule::schema();
        let t = parse_thresholds("contour=0.7, c0=0.5", &schema).unwrap();
        assert_eq!(t, vec![Some(0.5), Some(0.7), None]);
        let assigned = assigned_values(&pred, &t);
        assert_eq!(assigned, vec![vec![2], vec![], vec![1]]);
        assert!(parse_thresholds("size=0.5", &schema).is_err());
    }

    #[test]
    fn uniform_conditionals_return_the_prior() {
        let schema = nodule::schema();
        let priors = vec![vec![0.3, 0.7], vec![0.2, 0.2, 0.6], vec![0.5, 0.5]];
        let cond = schema
            .cardinalities()
            .iter()
            .map(|&n| vec![Some(vec![0.25; 4]); n as usize])
            .collect();
        let m = ProbabilityModel::from_tables(schema, 4, priors.clone(), cond, BTreeMap::new()).unwrap();
        let pred = predict(&m, &OccupancyVector::new(vec![3, 0, 1, 2]).unwrap(), 1e-6).unwrap();
        for (a, b) in pred.posteriors.iter().flatten().zip(priors.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_does_not_reorder_the_nodule_decision() {
        let m = probability_model(&nodule::counts()).unwrap();
        let occ = OccupancyVector::new(nodule::TEST_OCCUPANCY.to_vec()).unwrap();
        let base = predict(&m, &occ, 1e-6).unwrap().argmax();
        for eps in [1e-9, 1e-8, 1e-7, 1e-5, 1e-4] {
            assert_eq!(predict(&m, &occ, eps).unwrap().argmax(), base);
        }
    }

    #[test]
    fn rule_updated_model_drives_prediction() {
        let counts = nodule::counts();
        let m = probability_model(&counts).unwrap();
        let rule = parse_rule("c1=2 -> c0=1", counts.schema()).unwrap();
        let updated = apply_rule(&m, &counts, &rule).unwrap();
        let occ = OccupancyVector::new(nodule::TEST_OCCUPANCY.to_vec()).unwrap();
        let pred = predict(&updated, &occ, 1e-6).unwrap();
        // hand computation from the updated tables
        let c1 = updated.conditional(0, 1).unwrap();
        let c2 = updated.conditional(0, 2).unwrap();
        let a = c1[0].powi(2) * c1[2].powi(2) * updated.prior(0, 1);
        let b = c2[0].powi(2) * c2[2].powi(2) * updated.prior(0, 2);
        assert!((pred.posteriors[0][0] - a / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn impossible_values_are_errors() {
        let schema = ConceptSchema::from_pairs([("t", 2)]).unwrap();
        let m = ProbabilityModel::from_tables(
            schema,
            2,
            vec![vec![1.0, 0.0]],
            vec![vec![Some(vec![1.0, 0.0]), None]],
            BTreeMap::new(),
        )
        .unwrap();
        let pred = predict(&m, &OccupancyVector::new(vec![0, 5]).unwrap(), 1e-6).unwrap();
        assert_eq!(pred.posteriors[0], vec![1.0, 0.0]);
        assert!(predict(&m, &OccupancyVector::new(vec![1, 1, 1]).unwrap(), 1e-6).is_err());
        assert!(predict(&m, &OccupancyVector::new(vec![1, 0]).unwrap(), 0.0).is_err());
        assert!(OccupancyVector::new(vec![0, 0]).is_err());
    }
}
