//! Concept schemas, label vectors and combinatorics over the Cartesian
//! product of concept outcome sets.
//!
//! Concept values are 1-based: concept `r` takes values in `1..=n_r`.
//! Concept 0 is always the classification target.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single named concept with `cardinality` possible values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub cardinality: u16,
}

/// Ordered list of concepts; index 0 is the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct ConceptSchema {
    concepts: Vec<Concept>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    concepts: Vec<Concept>,
}

impl TryFrom<RawSchema> for ConceptSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        ConceptSchema::new(raw.concepts)
    }
}

impl From<ConceptSchema> for RawSchema {
    fn from(schema: ConceptSchema) -> Self {
        RawSchema {
            concepts: schema.concepts,
        }
    }
}

impl ConceptSchema {
    pub fn new(concepts: Vec<Concept>) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::Schema("at least one concept is required".into()));
        }
        for (i, c) in concepts.iter().enumerate() {
            if c.name.is_empty() {
                return Err(Error::Schema(format!("concept {i} has an empty name")));
            }
            if c.cardinality < 2 {
                return Err(Error::Schema(format!(
                    "concept `{}` has cardinality {} (must be at least 2)",
                    c.name, c.cardinality
                )));
            }
            if concepts[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate concept name `{}`", c.name)));
            }
        }
        Ok(ConceptSchema { concepts })
    }

    /// Builds a schema from `(name, cardinality)` pairs.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, u16)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, cardinality)| Concept {
                    name: name.into(),
                    cardinality,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn cardinality(&self, r: usize) -> u16 {
        self.concepts[r].cardinality
    }

    pub fn cardinalities(&self) -> Vec<u16> {
        self.concepts.iter().map(|c| c.cardinality).collect()
    }

    pub fn name(&self, r: usize) -> &str {
        &self.concepts[r].name
    }

    /// Total number of combinations, `Π n_r`. `None` on overflow.
    pub fn combination_count(&self) -> Option<usize> {
        self.concepts
            .iter()
            .try_fold(1usize, |acc, c| acc.checked_mul(c.cardinality as usize))
    }

    /// Resolves a concept by name, falling back to the `c<index>` form.
    pub fn resolve(&self, ident: &str) -> Option<usize> {
        if let Some(i) = self.concepts.iter().position(|c| c.name == ident) {
            return Some(i);
        }
        let digits = ident.strip_prefix('c')?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse::<usize>().ok().filter(|&i| i < self.len())
    }

    pub(crate) fn check_value(&self, r: usize, value: i64) -> Result<u16> {
        let n = self.cardinality(r);
        if value < 1 || value > n as i64 {
            return Err(Error::ValueOutOfRange {
                concept: self.name(r).to_string(),
                value,
                cardinality: n,
            });
        }
        Ok(value as u16)
    }
}

/// Label of one image: one entry per concept, `None` when missing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConceptVector(Vec<Option<u16>>);

impl ConceptVector {
    /// Validates `values` against `schema`.
    pub fn new(schema: &ConceptSchema, values: Vec<Option<u16>>) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.len(),
                got: values.len(),
            });
        }
        for (r, v) in values.iter().enumerate() {
            if let Some(v) = *v {
                schema.check_value(r, v as i64)?;
            }
        }
        Ok(ConceptVector(values))
    }

    /// A fully specified label.
    pub fn full(schema: &ConceptSchema, values: &[u16]) -> Result<Self> {
        Self::new(schema, values.iter().map(|&v| Some(v)).collect())
    }

    pub fn values(&self) -> &[Option<u16>] {
        &self.0
    }

    pub fn get(&self, r: usize) -> Option<u16> {
        self.0[r]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(Option::is_some)
    }

    /// The combination this label denotes, if no entry is missing.
    pub fn as_combination(&self) -> Option<Combination> {
        self.0.iter().copied().collect::<Option<Vec<_>>>().map(Combination)
    }

    pub(crate) fn set(&mut self, r: usize, value: u16) {
        self.0[r] = Some(value);
    }
}

impl From<Combination> for ConceptVector {
    fn from(z: Combination) -> Self {
        ConceptVector(z.0.into_iter().map(Some).collect())
    }
}

/// A fully specified assignment of values to every concept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Combination(pub Vec<u16>);

impl Combination {
    pub fn values(&self) -> &[u16] {
        &self.0
    }

    pub fn get(&self, r: usize) -> u16 {
        self.0[r]
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

/// All combinations in lexicographic order, concept 0 most significant.
pub fn enumerate_combinations(schema: &ConceptSchema) -> Vec<Combination> {
    product(&schema.cardinalities(), None)
}

/// The combinations with concept `r` fixed to `v`.
pub fn restrict_combinations(schema: &ConceptSchema, r: usize, v: u16) -> Result<Vec<Combination>> {
    if r >= schema.len() {
        return Err(Error::domain(format!("concept index {r} out of range")));
    }
    schema.check_value(r, v as i64)?;
    Ok(product(&schema.cardinalities(), Some((r, v))))
}

fn product(cards: &[u16], fixed: Option<(usize, u16)>) -> Vec<Combination> {
    let ranges: Vec<(u16, u16)> = cards
        .iter()
        .enumerate()
        .map(|(r, &n)| match fixed {
            Some((fr, v)) if fr == r => (v, v),
            _ => (1, n),
        })
        .collect();
    let mut current: Vec<u16> = ranges.iter().map(|&(lo, _)| lo).collect();
    let mut out = Vec::new();
    loop {
        out.push(Combination(current.clone()));
        // odometer increment, last concept fastest
        let mut pos = ranges.len();
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if current[pos] < ranges[pos].1 {
                current[pos] += 1;
                break;
            }
            current[pos] = ranges[pos].0;
        }
    }
}

/// Empirical distribution `P{C = z} = N_z / N` over fully labeled images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalJoint {
    counts: BTreeMap<Combination, u64>,
    total: u64,
}

impl EmpiricalJoint {
    pub fn from_counts(counts: BTreeMap<Combination, u64>) -> Result<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::domain("empirical joint over zero images"));
        }
        Ok(EmpiricalJoint { counts, total })
    }

    pub fn prob(&self, z: &Combination) -> f64 {
        self.counts.get(z).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn count(&self, z: &Combination) -> u64 {
        self.counts.get(z).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<Combination, u64> {
        &self.counts
    }

    /// `(z, P{C=z})` for every combination with nonzero mass.
    pub fn iter(&self) -> impl Iterator<Item = (&Combination, f64)> + '_ {
        let total = self.total as f64;
        self.counts.iter().map(move |(z, &c)| (z, c as f64 / total))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Tallies fully specified labels into an empirical joint distribution.
pub fn empirical_joint(labels: &[ConceptVector], schema: &ConceptSchema) -> Result<EmpiricalJoint> {
    if labels.is_empty() {
        return Err(Error::domain("empirical joint of an empty label list"));
    }
    let mut counts = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        if label.len() != schema.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.len(),
                got: label.len(),
            });
        }
        let z = label
            .as_combination()
            .ok_or_else(|| Error::domain(format!("label {i} has missing concept values")))?;
        *counts.entry(z).or_insert(0u64) += 1;
    }
    EmpiricalJoint::from_counts(counts)
}
