//! Metrics and experiment drivers: macro F1, posterior histograms, label
//! inversion sweeps and the rule-hierarchy comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{invert_labels, Dataset, GrayImage};
use crate::error::{Error, Result};
use crate::freq_model::{apply_rule, probability_model, ProbabilityModel};
use crate::inference::{OccupancyVector, Prediction};
use crate::pipeline::{fit_features, predict_all, Features, TrainConfig, TrainedModel};
use crate::rules::RuleExpr;

/// Unweighted mean of per-value F1 over the values present in `truth`.
/// A value's F1 is 0 when precision or recall is undefined.
pub fn macro_f1(predicted: &[u16], truth: &[u16], n_values: u16) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::domain("F1 of an empty prediction set"));
    }
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: predicted.len() });
    }
    let n = n_values as usize;
    let mut tp = vec![0u64; n];
    let mut fp = vec![0u64; n];
    let mut fn_ = vec![0u64; n];
    let mut present = vec![false; n];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == 0 || t == 0 || p > n_values || t > n_values {
            return Err(Error::domain(format!("value outside 1..={n_values}")));
        }
        let (p, t) = (p as usize - 1, t as usize - 1);
        present[t] = true;
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..n)
        .filter(|&v| present[v])
        .map(|v| {
            let denom = 2 * tp[v] + fp[v] + fn_[v];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[v] as f64 / denom as f64
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Equal-width bins over `[0, 1]`; 1.0 falls into the last bin.
pub fn probability_histogram(probs: &[f64], bins: usize) -> Result<Vec<u64>> {
    if bins < 2 {
        return Err(Error::domain("a histogram needs at least 2 bins"));
    }
    let mut out = vec![0u64; bins];
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("probability {p} outside [0, 1]")));
        }
        out[((p * bins as f64).floor() as usize).min(bins - 1)] += 1;
    }
    Ok(out)
}

/// Share of `probs` strictly inside `(lo, hi)`.
pub fn fraction_between(probs: &[f64], lo: f64, hi: f64) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().filter(|&&p| p > lo && p < hi).count() as f64 / probs.len() as f64
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",") + "\n";
        for r in &self.rows {
            s += &r.join(",");
            s.push('\n');
        }
        s
    }
}

/// Experiment output: metadata lines plus tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub metadata: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    fn new(name: &str, cfg: &TrainConfig, seed: u64) -> Self {
        ExperimentReport {
            name: name.to_string(),
            config_hash: cfg.hash(),
            seed: Some(seed),
            metadata: vec![
                ("f1_averaging".into(), "macro over values present in the truth".into()),
                ("config".into(), serde_json::to_string(cfg).expect("config serializes")),
                ("config_hash".into(), cfg.hash()),
            ],
            tables: Vec::new(),
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!("# {}\n", self.name);
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k}: {v}");
        }
        for t in &self.tables {
            let _ = writeln!(s, "\n[{}]", t.name);
            let widths: Vec<usize> = (0..t.columns.len())
                .map(|c| t.rows.iter().map(|r| r[c].len()).chain([t.columns[c].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(s, "{}", line(&t.columns));
            for r in &t.rows {
                let _ = writeln!(s, "{}", line(r));
            }
        }
        s
    }

    /// Writes `<name>-<hash>[-s<seed>]-<table>.csv` per table and a text
    /// summary `<name>-<hash>[-s<seed>].txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut stem = format!("{}-{}", self.name, self.config_hash);
        if let Some(seed) = self.seed {
            let _ = write!(stem, "-s{seed}");
        }
        let mut paths = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{stem}-{}.csv", t.name));
            fs::write(&p, t.to_csv())?;
            paths.push(p);
        }
        let p = dir.join(format!("{stem}.txt"));
        fs::write(&p, self.summary())?;
        paths.push(p);
        Ok(paths)
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn images(ds: &Dataset) -> Vec<&GrayImage> {
    ds.records.iter().map(|r| &r.image).collect()
}

fn truth_column(ds: &Dataset, r: usize) -> Result<Vec<u16>> {
    ds.records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            rec.label
                .get(r)
                .ok_or_else(|| Error::domain(format!("test image {i} has no value for concept {r}")))
        })
        .collect()
}

/// Macro F1 of every concept over the instances labeled on it; `None` for
/// concepts without labeled instances.
pub fn concept_f1(predictions: &[Prediction], dataset: &Dataset) -> Result<Vec<Option<f64>>> {
    (0..dataset.schema.len())
        .map(|r| {
            let (p, t): (Vec<u16>, Vec<u16>) = predictions
                .iter()
                .zip(&dataset.records)
                .filter_map(|(pred, rec)| rec.label.get(r).map(|t| (pred.argmax()[r], t)))
                .unzip();
            if t.is_empty() {
                Ok(None)
            } else {
                macro_f1(&p, &t, dataset.schema.cardinality(r)).map(Some)
            }
        })
        .collect()
}

/// Per-concept F1 of a trained model on a labeled dataset.
pub fn evaluate(
    model: &TrainedModel,
    probs: &ProbabilityModel,
    dataset: &Dataset,
    epsilon: f64,
) -> Result<(Vec<Prediction>, ExperimentReport)> {
    if dataset.schema != model.schema {
        return Err(Error::Schema("dataset and model schemas differ".into()));
    }
    let occ = model.occupancies(&images(dataset))?;
    let preds = predict_all(probs, &occ, epsilon)?;
    let f1 = concept_f1(&preds, dataset)?;
    let mut report = ExperimentReport {
        name: "eval".into(),
        config_hash: crate::model_file::digest(model),
        seed: None,
        metadata: vec![
            ("f1_averaging".into(), "macro over values present in the truth".into()),
            ("instances".into(), dataset.len().to_string()),
            ("rule".into(), probs.rule().unwrap_or("none").to_string()),
        ],
        tables: Vec::new(),
    };
    report.tables.push(Table {
        name: "f1".into(),
        columns: vec!["concept".into(), "name".into(), "macro_f1".into()],
        rows: f1
            .iter()
            .enumerate()
            .map(|(r, f)| vec![format!("c{r}"), dataset.schema.name(r).to_string(), f.map_or("NA".into(), fmt)])
            .collect(),
    });
    Ok((preds, report))
}

/// Target F1 for one β and seed, without and with the rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub beta: f64,
    pub seed: u64,
    pub no_rule: f64,
    pub with_rule: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub report: ExperimentReport,
}

/// Parses `start:stop:step` (inclusive, ascending) into a β grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::domain(format!("bad grid `{spec}`"))))
        .collect::<Result<Vec<f64>>>()?;
    let grid = match nums[..] {
        [x] => vec![x],
        [start, stop, step] => {
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(Error::domain(format!("grid `{spec}` must ascend with a positive step")));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect()
        }
        _ => return Err(Error::domain(format!("grid `{spec}` is not start:stop:step"))),
    };
    if grid.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return Err(Error::domain(format!("grid `{spec}` leaves [0, 1]")));
    }
    Ok(grid)
}

fn target_f1(probs: &ProbabilityModel, occ: &[OccupancyVector], truth: &[u16], n_values: u16, eps: f64) -> Result<f64> {
    let preds = predict_all(probs, occ, eps)?;
    let predicted: Vec<u16> = preds.iter().map(|p| p.argmax()[0]).collect();
    macro_f1(&predicted, truth, n_values)
}

fn test_occupancies(features: &Features, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<Vec<OccupancyVector>> {
    let probe = TrainedModel::from_features(features, &train.labels(), &train.schema, cfg.patch)?;
    probe.occupancies(&images(test))
}

/// For every seed and β: invert a β-fraction of the training targets among
/// rule-satisfying instances, rebuild the counts, and score the target on
/// the clean test set without and with the rule.
///
/// The embedder and the clusters never see labels, so they are fitted once
/// per seed and shared by every β.
pub fn sweep_beta(
    train: &Dataset,
    test: &Dataset,
    rule: &RuleExpr,
    betas: &[f64],
    cfg: &TrainConfig,
    seeds: &[u64],
    epsilon: f64,
) -> Result<SweepResult> {
    if betas.is_empty() || seeds.is_empty() {
        return Err(Error::domain("sweep needs at least one β and one seed"));
    }
    if train.schema != test.schema {
        return Err(Error::Schema("train and test schemas differ".into()));
    }
    let truth = truth_column(test, 0)?;
    let n0 = train.schema.cardinality(0);
    let mut cells = Vec::new();
    for &seed in seeds {
        let cfg_s = TrainConfig { seed, ..cfg.clone() };
        let features = fit_features(&images(train), &cfg_s)?;
        let occ = test_occupancies(&features, train, test, &cfg_s)?;
        for &beta in betas {
            let noisy = invert_labels(train, rule, beta, seed)?.dataset;
            let model = TrainedModel::from_features(&features, &noisy.labels(), &noisy.schema, cfg.patch)?;
            let base = probability_model(&model.counts)?;
            let ruled = apply_rule(&base, &model.counts, rule)?;
            cells.push(SweepCell {
                beta,
                seed,
                no_rule: target_f1(&base, &occ, &truth, n0, epsilon)?,
                with_rule: target_f1(&ruled, &occ, &truth, n0, epsilon)?,
            });
        }
    }

    let mut report = ExperimentReport::new("sweep-beta", cfg, seeds[0]);
    report.metadata.extend([
        ("rule".to_string(), rule.to_text(&train.schema)),
        ("seeds".to_string(), format!("{seeds:?}")),
        ("train_instances".to_string(), train.len().to_string()),
        ("test_instances".to_string(), test.len().to_string()),
        ("epsilon".to_string(), format!("{epsilon:e}")),
    ]);
    let mut summary = Table {
        name: "summary".into(),
        columns: ["beta", "f1_no_rule_mean", "f1_no_rule_std", "f1_with_rule_mean", "f1_with_rule_std"]
            .map(String::from)
            .to_vec(),
        rows: Vec::new(),
    };
    for &beta in betas {
        let at: Vec<&SweepCell> = cells.iter().filter(|c| c.beta == beta).collect();
        let (a, sa) = mean_std(&at.iter().map(|c| c.no_rule).collect::<Vec<_>>());
        let (b, sb) = mean_std(&at.iter().map(|c| c.with_rule).collect::<Vec<_>>());
        summary.rows.push(vec![fmt(beta), fmt(a), fmt(sa), fmt(b), fmt(sb)]);
    }
    let per_seed = Table {
        name: "cells".into(),
        columns: ["beta", "seed", "f1_no_rule", "f1_with_rule"].map(String::from).to_vec(),
        rows: cells
            .iter()
            .map(|c| vec![fmt(c.beta), c.seed.to_string(), fmt(c.no_rule), fmt(c.with_rule)])
            .collect(),
    };
    report.tables.push(summary);
    report.tables.push(per_seed);
    Ok(SweepResult { cells, report })
}

/// Target posteriors on the test set under each rule set.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyResult {
    /// `"none"` first, then the rule names in order.
    pub names: Vec<String>,
    /// Posterior of target value `value` per test instance, per rule set.
    pub probabilities: Vec<Vec<f64>>,
    pub histograms: Vec<Vec<u64>>,
    /// Share of posteriors strictly inside (0.4, 0.6).
    pub uncertain: Vec<f64>,
    pub report: ExperimentReport,
}

/// Inverts a `beta` fraction of the training targets at random, trains once,
/// and compares target posteriors with no rule and with each named rule.
#[allow(clippy::too_many_arguments)]
pub fn rule_hierarchy(
    train: &Dataset,
    test: &Dataset,
    rules: &[(String, RuleExpr)],
    beta: f64,
    value: u16,
    cfg: &TrainConfig,
    bins: usize,
    epsilon: f64,
) -> Result<HierarchyResult> {
    if train.schema != test.schema {
        return Err(Error::Schema("train and test schemas differ".into()));
    }
    if value == 0 || value > train.schema.cardinality(0) {
        return Err(Error::domain(format!("target value {value} out of range")));
    }
    let noisy = invert_labels(train, &RuleExpr::tautology(), beta, cfg.seed)?.dataset;
    let features = fit_features(&images(&noisy), cfg)?;
    let model = TrainedModel::from_features(&features, &noisy.labels(), &noisy.schema, cfg.patch)?;
    let occ = model.occupancies(&images(test))?;
    let base = probability_model(&model.counts)?;

    let mut names = vec!["none".to_string()];
    let mut models = vec![base.clone()];
    for (name, rule) in rules {
        names.push(name.clone());
        models.push(apply_rule(&base, &model.counts, rule)?);
    }
    let mut probabilities = Vec::new();
    let mut histograms = Vec::new();
    let mut uncertain = Vec::new();
    for m in &models {
        let preds = predict_all(m, &occ, epsilon)?;
        let p: Vec<f64> = preds.iter().map(|p| p.posteriors[0][value as usize - 1]).collect();
        histograms.push(probability_histogram(&p, bins)?);
        uncertain.push(fraction_between(&p, 0.4, 0.6));
        probabilities.push(p);
    }

    let mut report = ExperimentReport::new("rule-hierarchy", cfg, cfg.seed);
    report.metadata.extend([
        ("inverted_fraction".to_string(), fmt(beta)),
        ("target_value".to_string(), value.to_string()),
        ("train_instances".to_string(), train.len().to_string()),
        ("test_instances".to_string(), test.len().to_string()),
    ]);
    for (name, rule) in rules {
        report.metadata.push((format!("rule_{name}"), rule.to_text(&train.schema)));
    }
    let mut hist = Table {
        name: "histograms".into(),
        columns: vec!["bin_lo".into(), "bin_hi".into()],
        rows: Vec::new(),
    };
    hist.columns.extend(names.iter().cloned());
    for b in 0..bins {
        let mut row = vec![fmt(b as f64 / bins as f64), fmt((b + 1) as f64 / bins as f64)];
        row.extend(histograms.iter().map(|h| h[b].to_string()));
        hist.rows.push(row);
    }
    let frac = Table {
        name: "uncertain".into(),
        columns: vec!["rules".into(), "fraction_in_0.4_0.6".into()],
        rows: names.iter().zip(&uncertain).map(|(n, u)| vec![n.clone(), fmt(*u)]).collect(),
    };
    report.tables.push(hist);
    report.tables.push(frac);
    Ok(HierarchyResult {
        names,
        probabilities,
        histograms,
        uncertain,
        report,
    })
}
