//! Frequency counts over clusters and concept values, the probabilities
//! derived from them, and expert-rule updates of priors and conditionals.
//!
//! Notation: `s_l` embeddings fall in cluster `l`; `s_v^(r)(l)` of them come
//! from images with concept `r` equal to `v`; `n(l, z)` of them come from
//! images labeled with the full combination `z`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::concept::{Combination, ConceptSchema, ConceptVector, EmpiricalJoint};
use crate::error::{Error, Result};
use crate::rules::{combine, RuleExpr};

/// Image and per-cluster embedding counts of one full combination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComboCounts {
    pub images: u64,
    pub clusters: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountTables {
    schema: ConceptSchema,
    n_clusters: usize,
    n_images: u64,
    cluster_totals: Vec<u64>,
    value_cluster: Vec<Vec<Vec<u64>>>,
    combos: BTreeMap<Combination, ComboCounts>,
}

impl CountTables {
    /// Assembles tables from raw parts, checking every count identity.
    pub fn from_parts(
        schema: ConceptSchema,
        n_clusters: usize,
        n_images: u64,
        cluster_totals: Vec<u64>,
        value_cluster: Vec<Vec<Vec<u64>>>,
        combos: BTreeMap<Combination, ComboCounts>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::format("count tables", msg));
        if n_clusters == 0 || cluster_totals.len() != n_clusters {
            return bad(format!("{} cluster totals for {n_clusters} clusters", cluster_totals.len()));
        }
        if value_cluster.len() != schema.len() {
            return bad("per-concept tables do not match the schema".into());
        }
        for (r, per_value) in value_cluster.iter().enumerate() {
            if per_value.len() != schema.cardinality(r) as usize || per_value.iter().any(|c| c.len() != n_clusters) {
                return bad(format!("table for concept {r} has the wrong shape"));
            }
            for l in 0..n_clusters {
                if per_value.iter().map(|c| c[l]).sum::<u64>() > cluster_totals[l] {
                    return bad(format!("concept {r} counts exceed cluster {l} total"));
                }
            }
        }
        let mut labeled = 0;
        let mut per_cluster = vec![0u64; n_clusters];
        for (z, c) in &combos {
            if z.0.len() != schema.len()
                || z.0.iter().enumerate().any(|(r, &v)| v == 0 || v > schema.cardinality(r))
            {
                return bad(format!("combination {z} outside the schema"));
            }
            if c.clusters.len() != n_clusters || c.images == 0 {
                return bad(format!("combination {z} has malformed counts"));
            }
            labeled += c.images;
            for (acc, x) in per_cluster.iter_mut().zip(&c.clusters) {
                *acc += x;
            }
        }
        if labeled > n_images || per_cluster.iter().zip(&cluster_totals).any(|(a, b)| a > b) {
            return bad("combination counts exceed totals".into());
        }
        for (r, per_value) in value_cluster.iter().enumerate() {
            for (vi, row) in per_value.iter().enumerate() {
                let mut from_combos = vec![0u64; n_clusters];
                for (z, c) in &combos {
                    if z.0[r] as usize == vi + 1 {
                        from_combos.iter_mut().zip(&c.clusters).for_each(|(a, b)| *a += b);
                    }
                }
                if from_combos.iter().zip(row).any(|(a, b)| a > b) {
                    return bad(format!("combination counts exceed concept {r} value {} counts", vi + 1));
                }
            }
        }
        Ok(CountTables {
            schema,
            n_clusters,
            n_images,
            cluster_totals,
            value_cluster,
            combos,
        })
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// `N`, the number of training images.
    pub fn n_images(&self) -> u64 {
        self.n_images
    }

    /// `S`, the number of training embeddings.
    pub fn total(&self) -> u64 {
        self.cluster_totals.iter().sum()
    }

    /// `s_l` for every cluster.
    pub fn cluster_totals(&self) -> &[u64] {
        &self.cluster_totals
    }

    /// `s_v^(r)(l)` for every cluster.
    pub fn value_cluster(&self, r: usize, v: u16) -> &[u64] {
        &self.value_cluster[r][v as usize - 1]
    }

    pub fn value_cluster_table(&self) -> &[Vec<Vec<u64>>] {
        &self.value_cluster
    }

    /// `s_v^(r)`.
    pub fn value_total(&self, r: usize, v: u16) -> u64 {
        self.value_cluster(r, v).iter().sum()
    }

    /// `S_r`: embeddings from images labeled on concept `r`.
    pub fn concept_total(&self, r: usize) -> u64 {
        self.value_cluster[r].iter().flatten().sum()
    }

    pub fn combos(&self) -> &BTreeMap<Combination, ComboCounts> {
        &self.combos
    }

    pub fn fully_labeled_images(&self) -> u64 {
        self.combos.values().map(|c| c.images).sum()
    }

    /// `P{C = z}` over fully labeled images.
    pub fn joint(&self) -> Result<EmpiricalJoint> {
        EmpiricalJoint::from_counts(self.combos.iter().map(|(z, c)| (z.clone(), c.images)).collect())
    }

    /// `p(l) = s_l / S`.
    pub fn cluster_marginal(&self) -> Vec<f64> {
        let s = self.total() as f64;
        self.cluster_totals.iter().map(|&x| x as f64 / s).collect()
    }

    /// `p(r, v | l)`: share of the cluster's concept-`r`-labeled embeddings
    /// that carry value `v`; `None` for a cluster with no such embeddings.
    pub fn in_cluster_posterior(&self, r: usize, v: u16, l: usize) -> Option<f64> {
        let total: u64 = self.value_cluster[r].iter().map(|c| c[l]).sum();
        (total > 0).then(|| self.value_cluster(r, v)[l] as f64 / total as f64)
    }

    /// Whether an embedding of an image labeled `z` fell into cluster `l`.
    pub fn member(&self, z: &Combination, l: usize) -> bool {
        self.combos.get(z).is_some_and(|c| c.clusters[l] > 0)
    }
}

/// Tallies per-image cluster assignments (0-based) against image labels.
pub fn fit_counts(
    assignments: &[Vec<usize>],
    labels: &[ConceptVector],
    n_clusters: usize,
    schema: &ConceptSchema,
) -> Result<CountTables> {
    if assignments.is_empty() {
        return Err(Error::domain("cannot count an empty dataset"));
    }
    if assignments.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: assignments.len(),
            got: labels.len(),
        });
    }
    if n_clusters == 0 {
        return Err(Error::domain("cluster count must be positive"));
    }
    for (i, (a, label)) in assignments.iter().zip(labels).enumerate() {
        if label.len() != schema.len() {
            return Err(Error::DimensionMismatch { expected: schema.len(), got: label.len() });
        }
        if let Some(&l) = a.iter().find(|&&l| l >= n_clusters) {
            return Err(Error::domain(format!(
                "image {i}: cluster index {l} outside 0..{n_clusters}"
            )));
        }
    }

    // Integer tallies merge exactly, so the reduction order is immaterial.
    let empty = || Tally::new(schema, n_clusters);
    let tally = assignments
        .par_iter()
        .zip(labels.par_iter())
        .fold(empty, |mut t, (a, label)| {
            t.add(a, label, n_clusters);
            t
        })
        .reduce(empty, Tally::merge);

    CountTables::from_parts(
        schema.clone(),
        n_clusters,
        assignments.len() as u64,
        tally.cluster_totals,
        tally.value_cluster,
        tally.combos,
    )
}

struct Tally {
    cluster_totals: Vec<u64>,
    value_cluster: Vec<Vec<Vec<u64>>>,
    combos: BTreeMap<Combination, ComboCounts>,
}

impl Tally {
    fn new(schema: &ConceptSchema, r: usize) -> Self {
        Tally {
            cluster_totals: vec![0; r],
            value_cluster: schema
                .cardinalities()
                .iter()
                .map(|&n| vec![vec![0; r]; n as usize])
                .collect(),
            combos: BTreeMap::new(),
        }
    }

    fn add(&mut self, assignment: &[usize], label: &ConceptVector, r: usize) {
        let mut hist = vec![0u64; r];
        for &l in assignment {
            hist[l] += 1;
        }
        add_into(&mut self.cluster_totals, &hist);
        for (c, value) in label.values().iter().enumerate() {
            if let Some(v) = value {
                add_into(&mut self.value_cluster[c][*v as usize - 1], &hist);
            }
        }
        if let Some(z) = label.as_combination() {
            let entry = self.combos.entry(z).or_insert_with(|| ComboCounts {
                images: 0,
                clusters: vec![0; r],
            });
            entry.images += 1;
            add_into(&mut entry.clusters, &hist);
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        add_into(&mut self.cluster_totals, &other.cluster_totals);
        for (a, b) in self.value_cluster.iter_mut().zip(&other.value_cluster) {
            for (x, y) in a.iter_mut().zip(b) {
                add_into(x, y);
            }
        }
        for (z, c) in other.combos {
            match self.combos.get_mut(&z) {
                Some(e) => {
                    e.images += c.images;
                    add_into(&mut e.clusters, &c.clusters);
                }
                None => {
                    self.combos.insert(z, c);
                }
            }
        }
        self
    }
}

fn add_into(acc: &mut [u64], x: &[u64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Priors `p(r, v)`, conditionals `p(l | r, v)` and the joint `P{C = z}`
/// used by inference. Conditionals of values never seen in training are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityModel {
    schema: ConceptSchema,
    n_clusters: usize,
    priors: Vec<Vec<f64>>,
    conditionals: Vec<Vec<Option<Vec<f64>>>>,
    joint: BTreeMap<Combination, f64>,
    rule: Option<String>,
}

const SUM_TOL: f64 = 1e-9;

impl ProbabilityModel {
    /// Builds a model from explicit tables, checking that every
    /// distribution is normalized.
    pub fn from_tables(
        schema: ConceptSchema,
        n_clusters: usize,
        priors: Vec<Vec<f64>>,
        conditionals: Vec<Vec<Option<Vec<f64>>>>,
        joint: BTreeMap<Combination, f64>,
    ) -> Result<Self> {
        if priors.len() != schema.len() || conditionals.len() != schema.len() {
            return Err(Error::DimensionMismatch { expected: schema.len(), got: priors.len() });
        }
        for r in 0..schema.len() {
            let n = schema.cardinality(r) as usize;
            if priors[r].len() != n || conditionals[r].len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: priors[r].len() });
            }
            check_distribution(&priors[r], || format!("priors of concept {r}"))?;
            for (vi, c) in conditionals[r].iter().enumerate() {
                if let Some(c) = c {
                    if c.len() != n_clusters {
                        return Err(Error::DimensionMismatch { expected: n_clusters, got: c.len() });
                    }
                    check_distribution(c, || format!("conditionals of concept {r} value {}", vi + 1))?;
                }
            }
        }
        if !joint.is_empty() {
            check_distribution(&joint.values().copied().collect::<Vec<_>>(), || "joint".into())?;
        }
        Ok(ProbabilityModel {
            schema,
            n_clusters,
            priors,
            conditionals,
            joint,
            rule: None,
        })
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn priors(&self, r: usize) -> &[f64] {
        &self.priors[r]
    }

    pub fn prior(&self, r: usize, v: u16) -> f64 {
        self.priors[r][v as usize - 1]
    }

    /// `p(· | r, v)` over clusters, or `None` when there was no data.
    pub fn conditional(&self, r: usize, v: u16) -> Option<&[f64]> {
        self.conditionals[r][v as usize - 1].as_deref()
    }

    pub fn joint(&self) -> &BTreeMap<Combination, f64> {
        &self.joint
    }

    /// Text of the rule this model was updated with, if any.
    pub fn rule(&self) -> Option<&str> {
        self.rule.as_deref()
    }
}

fn check_distribution(p: &[f64], what: impl Fn() -> String) -> Result<()> {
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Numeric(format!("{} has entries outside [0, 1]", what())));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::Numeric(format!("{} sums to {s}", what())));
    }
    Ok(())
}

/// Derives probabilities from counts:
/// `p(l|r,v) = s_v^(r)(l) / s_v^(r)`, `p(r,v) = s_v^(r) / S_r`,
/// `P{C=z} = N_z / (fully labeled images)`.
pub fn probability_model(counts: &CountTables) -> Result<ProbabilityModel> {
    let schema = counts.schema().clone();
    let mut priors = Vec::with_capacity(schema.len());
    let mut conditionals = Vec::with_capacity(schema.len());
    for r in 0..schema.len() {
        let s_r = counts.concept_total(r);
        if s_r == 0 {
            return Err(Error::InsufficientData(format!(
                "no training embedding is labeled on concept `{}`",
                schema.name(r)
            )));
        }
        let mut pr = Vec::new();
        let mut cr = Vec::new();
        for v in 1..=schema.cardinality(r) {
            let row = counts.value_cluster(r, v);
            let s_v: u64 = row.iter().sum();
            pr.push(s_v as f64 / s_r as f64);
            cr.push((s_v > 0).then(|| row.iter().map(|&x| x as f64 / s_v as f64).collect()));
        }
        priors.push(pr);
        conditionals.push(cr);
    }
    let joint = if counts.fully_labeled_images() > 0 {
        counts.joint()?.iter().map(|(z, p)| (z.clone(), p)).collect()
    } else {
        BTreeMap::new()
    };
    ProbabilityModel::from_tables(schema, counts.n_clusters(), priors, conditionals, joint)
}

/// Rule-updated priors with the coefficients that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorUpdate {
    pub priors: Vec<Vec<f64>>,
    /// `U_v^(r)`.
    pub coefficients: Vec<Vec<f64>>,
    /// `P{g = 1}` per concept.
    pub normalizers: Vec<f64>,
}

/// Rule-updated conditionals; entries without data stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalUpdate {
    pub conditionals: Vec<Vec<Option<Vec<f64>>>>,
    /// `V_v^(r)(l)`.
    pub coefficients: Vec<Vec<Option<Vec<f64>>>>,
    /// `P{g = 1}` per `(r, v)`.
    pub normalizers: Vec<Vec<Option<f64>>>,
}

fn require_joint(model: &ProbabilityModel) -> Result<()> {
    if model.joint.is_empty() {
        return Err(Error::InsufficientData(
            "rules need at least one fully labeled training image".into(),
        ));
    }
    Ok(())
}

/// `A(r, v) = Σ_{z : z_r = v} π(z) P{C=z}`, then
/// `p'(r, v) = A(r, v) p(r, v) / Σ_u A(r, u) p(r, u)`.
pub fn rule_update_priors(model: &ProbabilityModel, rule: &RuleExpr) -> Result<PriorUpdate> {
    rule.check(&model.schema)?;
    require_joint(model)?;
    let schema = &model.schema;
    let mut mass: Vec<Vec<f64>> = schema.cardinalities().iter().map(|&n| vec![0.0; n as usize]).collect();
    for (z, &p) in &model.joint {
        let w = rule.truth_prob(z) * p;
        for (r, &v) in z.0.iter().enumerate() {
            mass[r][v as usize - 1] += w;
        }
    }
    let mut update = PriorUpdate {
        priors: Vec::new(),
        coefficients: Vec::new(),
        normalizers: Vec::new(),
    };
    for (r, a) in mass.iter().enumerate() {
        let norm: f64 = a.iter().zip(&model.priors[r]).map(|(a, p)| a * p).sum();
        if norm <= 0.0 {
            return Err(Error::RuleInconsistent(format!(
                "P{{g=1}} is 0 for concept `{}`",
                schema.name(r)
            )));
        }
        update.coefficients.push(a.iter().map(|a| a / norm).collect());
        update.priors.push(a.iter().zip(&model.priors[r]).map(|(a, p)| a * p / norm).collect());
        update.normalizers.push(norm);
    }
    Ok(update)
}

/// `B(l) = Σ π(z) P{C=z}` over combinations with `z_r = v` that put at
/// least one embedding into cluster `l`, then
/// `p'(l | r, v) = B(l) p(l | r, v) / Σ_k B(k) p(k | r, v)`.
pub fn rule_update_conditionals(
    model: &ProbabilityModel,
    counts: &CountTables,
    rule: &RuleExpr,
) -> Result<ConditionalUpdate> {
    rule.check(&model.schema)?;
    require_joint(model)?;
    if counts.n_clusters() != model.n_clusters || counts.schema() != &model.schema {
        return Err(Error::domain("count tables do not belong to this model"));
    }
    let schema = &model.schema;
    let big_r = model.n_clusters;
    let mut mass: Vec<Vec<Vec<f64>>> = schema
        .cardinalities()
        .iter()
        .map(|&n| vec![vec![0.0; big_r]; n as usize])
        .collect();
    for (z, &p) in &model.joint {
        let w = rule.truth_prob(z) * p;
        if w == 0.0 {
            continue;
        }
        for l in 0..big_r {
            if counts.member(z, l) {
                for (r, &v) in z.0.iter().enumerate() {
                    mass[r][v as usize - 1][l] += w;
                }
            }
        }
    }
    let mut update = ConditionalUpdate {
        conditionals: Vec::new(),
        coefficients: Vec::new(),
        normalizers: Vec::new(),
    };
    for r in 0..schema.len() {
        let (mut cond_r, mut coef_r, mut norm_r) = (Vec::new(), Vec::new(), Vec::new());
        for (vi, b) in mass[r].iter().enumerate() {
            let Some(p) = &model.conditionals[r][vi] else {
                cond_r.push(None);
                coef_r.push(None);
                norm_r.push(None);
                continue;
            };
            let norm: f64 = b.iter().zip(p).map(|(b, p)| b * p).sum();
            if norm <= 0.0 {
                return Err(Error::RuleInconsistent(format!(
                    "P{{g=1}} is 0 for concept `{}` value {}",
                    schema.name(r),
                    vi + 1
                )));
            }
            cond_r.push(Some(b.iter().zip(p).map(|(b, p)| b * p / norm).collect()));
            coef_r.push(Some(b.iter().map(|b| b / norm).collect()));
            norm_r.push(Some(norm));
        }
        update.conditionals.push(cond_r);
        update.coefficients.push(coef_r);
        update.normalizers.push(norm_r);
    }
    Ok(update)
}

/// Updates both priors and conditionals with `rule`.
pub fn apply_rule(model: &ProbabilityModel, counts: &CountTables, rule: &RuleExpr) -> Result<ProbabilityModel> {
    let priors = rule_update_priors(model, rule)?;
    let conditionals = rule_update_conditionals(model, counts, rule)?;
    Ok(ProbabilityModel {
        priors: priors.priors,
        conditionals: conditionals.conditionals,
        rule: Some(rule.to_text(&model.schema)),
        ..model.clone()
    })
}

/// Combines `rules` into one (see [`combine`]) and applies it; an empty list
/// leaves the model unchanged.
pub fn apply_rules(model: &ProbabilityModel, counts: &CountTables, rules: &[RuleExpr]) -> Result<ProbabilityModel> {
    match combine(rules)? {
        Some(rule) => apply_rule(model, counts, &rule),
        None => Ok(model.clone()),
    }
}

/// Reweights the joint by `π(z)` and renormalizes; the priors and
/// conditionals are left as they are.
pub fn restrict_joint(model: &ProbabilityModel, rule: &RuleExpr) -> Result<ProbabilityModel> {
    rule.check(&model.schema)?;
    require_joint(model)?;
    let weighted: BTreeMap<Combination, f64> = model
        .joint
        .iter()
        .map(|(z, &p)| (z.clone(), rule.truth_prob(z) * p))
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let total: f64 = weighted.values().sum();
    if total <= 0.0 {
        return Err(Error::RuleInconsistent("no training combination satisfies the rule".into()));
    }
    Ok(ProbabilityModel {
        joint: weighted.into_iter().map(|(z, p)| (z, p / total)).collect(),
        ..model.clone()
    })
}
