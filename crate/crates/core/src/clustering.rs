//! Hard clustering of embeddings: k-means (k-means++ seeding, Lloyd
//! iterations) and a diagonal Gaussian mixture fitted by EM.
//!
//! Cluster indices are 0-based. Every reduction over points runs over fixed
//! chunks merged in order, so results do not depend on the thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;
pub const EM_MAX_ITER: usize = 200;
/// Convergence threshold on the mean per-point log-likelihood.
pub const EM_TOL: f64 = 1e-6;
pub const VARIANCE_FLOOR: f64 = 1e-6;
const CHUNK: usize = 512;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterAlgorithm {
    Kmeans,
    Em,
}

impl FromStr for ClusterAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterAlgorithm::Kmeans),
            "em" => Ok(ClusterAlgorithm::Em),
            other => Err(Error::domain(format!("unknown clustering algorithm `{other}`"))),
        }
    }
}

impl fmt::Display for ClusterAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterAlgorithm::Kmeans => "kmeans",
            ClusterAlgorithm::Em => "em",
        })
    }
}

/// Fitted clusters with a crisp assignment rule.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterModel {
    KMeans {
        centers: Vec<Vec<f64>>,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    },
}

impl ClusterModel {
    pub fn kmeans(centers: Vec<Vec<f64>>) -> Result<Self> {
        check_rows(&centers, None)?;
        Ok(ClusterModel::KMeans { centers })
    }

    pub fn gmm(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let dim = check_rows(&means, None)?;
        check_rows(&variances, Some(dim))?;
        if weights.len() != means.len() || variances.len() != means.len() {
            return Err(Error::DimensionMismatch { expected: means.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::domain("mixture weights must lie in [0, 1] and sum to 1"));
        }
        if variances.iter().flatten().any(|&v| v < VARIANCE_FLOOR) {
            return Err(Error::domain(format!("variances must be at least {VARIANCE_FLOOR}")));
        }
        Ok(ClusterModel::Gmm { weights, means, variances })
    }

    pub fn algorithm(&self) -> ClusterAlgorithm {
        match self {
            ClusterModel::KMeans { .. } => ClusterAlgorithm::Kmeans,
            ClusterModel::Gmm { .. } => ClusterAlgorithm::Em,
        }
    }

    pub fn n_clusters(&self) -> usize {
        match self {
            ClusterModel::KMeans { centers } => centers.len(),
            ClusterModel::Gmm { means, .. } => means.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ClusterModel::KMeans { centers } => centers[0].len(),
            ClusterModel::Gmm { means, .. } => means[0].len(),
        }
    }

    /// Nearest center, or the component with the largest posterior; ties go
    /// to the smallest index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(match self {
            ClusterModel::KMeans { centers } => nearest(centers, x).0,
            ClusterModel::Gmm { weights, means, variances } => {
                argmax(&log_joint(weights, means, variances, x))
            }
        })
    }

    pub fn assign_all<P: AsRef<[f64]> + Sync>(&self, points: &[P]) -> Result<Vec<usize>> {
        points.par_iter().map(|p| self.assign(p.as_ref())).collect()
    }

    /// Posterior component probabilities; k-means yields a one-hot vector.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let l = self.assign(x)?;
        Ok(match self {
            ClusterModel::KMeans { centers } => {
                (0..centers.len()).map(|k| if k == l { 1.0 } else { 0.0 }).collect()
            }
            ClusterModel::Gmm { weights, means, variances } => {
                let lj = log_joint(weights, means, variances, x);
                let lse = log_sum_exp(&lj);
                lj.iter().map(|v| (v - lse).exp()).collect()
            }
        })
    }
}

fn check_rows(rows: &[Vec<f64>], dim: Option<usize>) -> Result<usize> {
    let d = dim.or_else(|| rows.first().map(|r| r.len())).unwrap_or(0);
    if rows.is_empty() || d == 0 {
        return Err(Error::domain("cluster model needs at least one non-empty cluster"));
    }
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite cluster parameter".into()));
        }
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln w_k + ln N(x | μ_k, diag σ²_k)` for every component.
fn log_joint(weights: &[f64], means: &[Vec<f64>], variances: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(means.iter().zip(variances))
        .map(|(&w, (mu, var))| {
            let mut s = w.ln();
            for ((xi, m), v) in x.iter().zip(mu).zip(var) {
                s -= 0.5 * (LN_2PI + v.ln() + (xi - m) * (xi - m) / v);
            }
            s
        })
        .collect()
}

fn check_points(points: &[Vec<f64>], r: usize) -> Result<usize> {
    if r == 0 {
        return Err(Error::domain("cluster count must be positive"));
    }
    if points.len() < r {
        return Err(Error::InsufficientData(format!(
            "{} clusters requested but only {} embeddings",
            r,
            points.len()
        )));
    }
    check_rows(points, None)
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    /// Objective (sum of squared distances) after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

pub fn fit_kmeans(points: &[Vec<f64>], r: usize, seed: u64) -> Result<KMeansFit> {
    let dim = check_points(points, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(points, r, &mut rng);
    let mut objective = Vec::new();
    let mut iterations = 0;
    loop {
        let (labels, obj) = assign_step(points, &centers);
        objective.push(obj);
        if iterations == KMEANS_MAX_ITER {
            break;
        }
        iterations += 1;
        let mut updated = update_centers(points, &labels, r, dim, &centers);
        reseed_empty(points, &labels, &mut updated);
        let shift = centers
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = updated;
        if shift < KMEANS_TOL {
            let (_, obj) = assign_step(points, &centers);
            objective.push(obj);
            break;
        }
    }
    Ok(KMeansFit {
        model: ClusterModel::KMeans { centers },
        objective,
        iterations,
    })
}

fn kmeans_plus_plus(points: &[Vec<f64>], r: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < r {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        d2.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centers.push(c);
    }
    centers
}

fn assign_step(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<(usize, f64)>, f64) {
    let labels: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(centers, p)).collect();
    let obj = chunked_sum(&labels, |chunk| chunk.iter().map(|l| l.1).sum());
    (labels, obj)
}

fn chunked_sum<T: Sync>(items: &[T], f: impl Fn(&[T]) -> f64 + Sync + Send) -> f64 {
    let partial: Vec<f64> = items.par_chunks(CHUNK).map(f).collect();
    partial.iter().sum()
}

fn update_centers(
    points: &[Vec<f64>],
    labels: &[(usize, f64)],
    r: usize,
    dim: usize,
    old: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; r];
    let mut counts = vec![0usize; r];
    for (p, &(k, _)) in points.iter().zip(labels) {
        counts[k] += 1;
        sums[k].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    sums.into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &c), o)| {
            if c == 0 {
                o.clone()
            } else {
                s.into_iter().map(|x| x / c as f64).collect()
            }
        })
        .collect()
}

/// Moves each empty cluster's center onto the point farthest from its own
/// center, taking points in decreasing distance order.
fn reseed_empty(points: &[Vec<f64>], labels: &[(usize, f64)], centers: &mut [Vec<f64>]) {
    let mut counts = vec![0usize; centers.len()];
    labels.iter().for_each(|&(k, _)| counts[k] += 1);
    let empty: Vec<usize> = (0..centers.len()).filter(|&k| counts[k] == 0).collect();
    if empty.is_empty() {
        return;
    }
    let mut far: Vec<usize> = (0..points.len()).collect();
    far.sort_by(|&a, &b| labels[b].1.total_cmp(&labels[a].1).then(a.cmp(&b)));
    for (k, &i) in empty.into_iter().zip(&far) {
        centers[k] = points[i].clone();
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: ClusterModel,
    /// Mean per-point log-likelihood at each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

/// Diagonal Gaussian mixture, initialized from a k-means run with the same seed.
pub fn fit_em_gmm(points: &[Vec<f64>], r: usize, seed: u64) -> Result<GmmFit> {
    let dim = check_points(points, r)?;
    let n = points.len() as f64;
    let km = fit_kmeans(points, r, seed)?;
    let ClusterModel::KMeans { centers } = km.model else { unreachable!() };

    // Hard k-means partition as the initial responsibilities.
    let mut resp: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| {
            let k = nearest(&centers, p).0;
            (0..r).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    let (mut weights, mut means, mut variances) = m_step(points, &resp, r, dim, None);
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        let (ll, new_resp) = e_step(points, &weights, &means, &variances);
        let ll = ll / n;
        let converged = history.last().is_some_and(|prev| ll - prev < EM_TOL);
        history.push(ll);
        if converged || iterations == EM_MAX_ITER {
            break;
        }
        resp = new_resp;
        let prev = (means, variances);
        (weights, means, variances) = m_step(points, &resp, r, dim, Some(&prev));
        iterations += 1;
    }
    if !history.last().is_some_and(|x| x.is_finite()) {
        return Err(Error::Numeric("EM produced a non-finite log-likelihood".into()));
    }
    Ok(GmmFit {
        model: ClusterModel::gmm(weights, means, variances)?,
        log_likelihood: history,
        iterations,
    })
}

fn e_step(points: &[Vec<f64>], w: &[f64], mu: &[Vec<f64>], var: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let rows: Vec<(f64, Vec<f64>)> = points
        .par_iter()
        .map(|p| {
            let lj = log_joint(w, mu, var, p);
            let lse = log_sum_exp(&lj);
            (lse, lj.iter().map(|v| (v - lse).exp()).collect())
        })
        .collect();
    let ll = chunked_sum(&rows, |chunk| chunk.iter().map(|r| r.0).sum());
    (ll, rows.into_iter().map(|r| r.1).collect())
}

type Params = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>);
type MeansVars = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Weighted maximum-likelihood update; a component with no mass keeps its
/// previous parameters and gets zero weight.
fn m_step(
    points: &[Vec<f64>],
    resp: &[Vec<f64>],
    r: usize,
    dim: usize,
    prev: Option<&MeansVars>,
) -> Params {
    let idx: Vec<usize> = (0..points.len()).collect();
    let partial: Vec<(Vec<f64>, Vec<Vec<f64>>)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut nk = vec![0.0; r];
            let mut sx = vec![vec![0.0; dim]; r];
            for &i in chunk {
                for k in 0..r {
                    let g = resp[i][k];
                    if g == 0.0 {
                        continue;
                    }
                    nk[k] += g;
                    sx[k].iter_mut().zip(&points[i]).for_each(|(s, x)| *s += g * x);
                }
            }
            (nk, sx)
        })
        .collect();
    let mut nk = vec![0.0; r];
    let mut sx = vec![vec![0.0; dim]; r];
    for (pn, ps) in &partial {
        for k in 0..r {
            nk[k] += pn[k];
            sx[k].iter_mut().zip(&ps[k]).for_each(|(a, b)| *a += b);
        }
    }
    let alive: Vec<bool> = nk.iter().map(|&x| x > 1e-12).collect();
    let means: Vec<Vec<f64>> = (0..r)
        .map(|k| match (alive[k], prev) {
            (true, _) => sx[k].iter().map(|s| s / nk[k]).collect(),
            (false, Some(p)) => p.0[k].clone(),
            (false, None) => vec![0.0; dim],
        })
        .collect();

    let partial: Vec<Vec<Vec<f64>>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sq = vec![vec![0.0; dim]; r];
            for &i in chunk {
                for k in 0..r {
                    let g = resp[i][k];
                    if g == 0.0 {
                        continue;
                    }
                    for ((s, x), m) in sq[k].iter_mut().zip(&points[i]).zip(&means[k]) {
                        *s += g * (x - m) * (x - m);
                    }
                }
            }
            sq
        })
        .collect();
    let mut sq = vec![vec![0.0; dim]; r];
    for p in &partial {
        for k in 0..r {
            sq[k].iter_mut().zip(&p[k]).for_each(|(a, b)| *a += b);
        }
    }
    let variances: Vec<Vec<f64>> = (0..r)
        .map(|k| match (alive[k], prev) {
            (true, _) => sq[k].iter().map(|s| (s / nk[k]).max(VARIANCE_FLOOR)).collect(),
            (false, Some(p)) => p.1[k].clone(),
            (false, None) => vec![1.0; dim],
        })
        .collect();
    let total: f64 = nk.iter().sum();
    let weights = nk.iter().map(|x| x / total).collect();
    (weights, means, variances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        centers
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| {
                        c.iter()
                            .map(|x| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                x + spread * z
                            })
                            .collect()
                    })
                    .collect::<Vec<Vec<f64>>>()
            })
            .collect()
    }

    #[test]
    fn kmeans_separates_blobs() {
        let pts = blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 30, 0.5, 1);
        let fit = fit_kmeans(&pts, 3, 4).unwrap();
        let labels = fit.model.assign_all(&pts).unwrap();
        for b in 0..3 {
            let first = labels[b * 30];
            assert!(labels[b * 30..(b + 1) * 30].iter().all(|&l| l == first));
        }
        let mut distinct = vec![labels[0], labels[30], labels[60]];
        distinct.dedup();
        assert_eq!(distinct.len(), 3);
        assert!(fit.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn kmeans_with_one_cluster_per_point() {
        let pts = blobs(&[[0.0, 0.0]], 7, 1.0, 2);
        let fit = fit_kmeans(&pts, 7, 0).unwrap();
        assert!(fit.objective.last().unwrap().abs() < 1e-20);
    }

    #[test]
    fn kmeans_is_deterministic_and_checks_size() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 3.0]], 20, 1.0, 3);
        let a = fit_kmeans(&pts, 4, 11).unwrap();
        let b = fit_kmeans(&pts, 4, 11).unwrap();
        assert_eq!(a.model, b.model);
        assert!(matches!(fit_kmeans(&pts[..3], 4, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn assignment_ties_go_to_the_smallest_index() {
        let m = ClusterModel::kmeans(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(m.assign(&[1.0, 0.0]).unwrap(), 0);
        assert_eq!(m.assign(&[5.0, 5.0]).unwrap(), 2);
        assert!(m.assign(&[1.0]).is_err());
    }

    #[test]
    fn em_separates_unit_variance_blobs() {
        let pts = blobs(&[[0.0, 0.0], [12.0, 12.0]], 50, 1.0, 5);
        let fit = fit_em_gmm(&pts, 2, 0).unwrap();
        let own = fit.model.assign(&pts[0]).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let resp = fit.model.responsibilities(p).unwrap();
            let k = if i < 50 { own } else { 1 - own };
            assert!(resp[k] >= 0.99);
        }
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn em_single_component_is_closed_form() {
        let pts = blobs(&[[1.0, -2.0]], 40, 0.7, 6);
        let fit = fit_em_gmm(&pts, 1, 0).unwrap();
        let ClusterModel::Gmm { weights, means, variances } = &fit.model else { panic!() };
        assert_eq!(weights, &vec![1.0]);
        for j in 0..2 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / 40.0;
            let var = pts.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / 40.0;
            assert!((means[0][j] - mean).abs() < 1e-12);
            assert!((variances[0][j] - var).abs() < 1e-12);
        }
    }

    #[test]
    fn em_floors_variances_on_duplicates() {
        let mut pts = vec![vec![0.5, 0.5]; 20];
        pts.extend(vec![vec![3.0, 1.0]; 20]);
        let fit = fit_em_gmm(&pts, 2, 1).unwrap();
        let ClusterModel::Gmm { variances, weights, .. } = &fit.model else { panic!() };
        assert!(variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = fit_em_gmm(&pts, 2, 1).unwrap();
        assert_eq!(fit.model, again.model);
    }

    #[test]
    fn algorithm_names_parse() {
        assert_eq!("em".parse::<ClusterAlgorithm>().unwrap(), ClusterAlgorithm::Em);
        assert_eq!(ClusterAlgorithm::Kmeans.to_string(), "kmeans");
        assert!("dbscan".parse::<ClusterAlgorithm>().is_err());
    }
}
