//! Exact rational reference implementation and random small instances,
//! shared by the integration tests and the acceptance suite.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use ficbl::concept::{Combination, ConceptSchema, ConceptVector};
use ficbl::rules::{Expr, RuleExpr};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qf(x: f64) -> Q {
    Q::from_float(x).expect("finite")
}

pub fn f(x: &Q) -> f64 {
    x.to_f64().expect("representable")
}

/// A labeled training set of cluster assignments, a rule and a test occupancy.
#[derive(Debug, Clone)]
pub struct Instance {
    pub schema: ConceptSchema,
    pub labels: Vec<ConceptVector>,
    pub assignments: Vec<Vec<usize>>,
    pub n_clusters: usize,
    pub rule: RuleExpr,
    pub occupancy: Vec<u64>,
}

fn random_expr(rng: &mut ChaCha8Rng, cards: &[u16], depth: u32) -> Expr {
    if depth == 0 || rng.random_bool(0.3) {
        let r = rng.random_range(0..cards.len());
        return Expr::literal(r, rng.random_range(1..=cards[r]));
    }
    let a = random_expr(rng, cards, depth - 1);
    match rng.random_range(0..5) {
        0 => Expr::not(a),
        1 => Expr::and(a, random_expr(rng, cards, depth - 1)),
        2 => Expr::or(a, random_expr(rng, cards, depth - 1)),
        3 => Expr::implies(a, random_expr(rng, cards, depth - 1)),
        _ => Expr::iff(a, random_expr(rng, cards, depth - 1)),
    }
}

/// At most 3 concepts, 4 clusters, 6 patches per image and 12 images. Every
/// concept has labeled embeddings and at least one image is fully labeled.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let m = rng.random_range(1..=3);
        let cards: Vec<u16> = (0..m).map(|_| rng.random_range(2..=3)).collect();
        let schema = ConceptSchema::from_pairs(cards.iter().enumerate().map(|(i, &c)| (format!("k{i}"), c))).unwrap();
        let n_clusters = rng.random_range(1..=4);
        let s = rng.random_range(1..=6);
        let n = rng.random_range(1..=12);
        let assignments: Vec<Vec<usize>> =
            (0..n).map(|_| (0..s).map(|_| rng.random_range(0..n_clusters)).collect()).collect();
        let labels: Vec<ConceptVector> = (0..n)
            .map(|_| {
                let v = cards
                    .iter()
                    .map(|&c| (!rng.random_bool(0.15)).then(|| rng.random_range(1..=c)))
                    .collect();
                ConceptVector::new(&schema, v).unwrap()
            })
            .collect();
        let complete = labels.iter().any(|l| l.is_complete());
        let covered = (0..m).all(|r| labels.iter().any(|l| l.get(r).is_some()));
        if !complete || !covered {
            continue;
        }
        let pi = [1.0, 1.0, 0.75, 0.5, 0.25][rng.random_range(0..5)];
        let rule = RuleExpr::with_pi(random_expr(&mut rng, &cards, 2), pi).unwrap();
        let total = rng.random_range(1..=6);
        let mut occupancy = vec![0u64; n_clusters];
        for _ in 0..total {
            occupancy[rng.random_range(0..n_clusters)] += 1;
        }
        return Instance {
            schema,
            labels,
            assignments,
            n_clusters,
            rule,
            occupancy,
        };
    }
}

/// Priors and conditionals as exact rationals; `None` marks a value without
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct Exact {
    pub priors: Vec<Vec<Q>>,
    pub conditionals: Vec<Vec<Option<Vec<Q>>>>,
}

pub struct ExactData {
    /// `s[r][v-1][l]`
    pub s: Vec<Vec<Vec<u64>>>,
    pub joint: BTreeMap<Vec<u16>, Q>,
    pub members: BTreeSet<(Vec<u16>, usize)>,
}

pub fn tally(schema: &ConceptSchema, labels: &[ConceptVector], assignments: &[Vec<usize>], n_clusters: usize) -> ExactData {
    let mut s: Vec<Vec<Vec<u64>>> =
        schema.cardinalities().iter().map(|&c| vec![vec![0; n_clusters]; c as usize]).collect();
    let mut combos: BTreeMap<Vec<u16>, i64> = BTreeMap::new();
    let mut members = BTreeSet::new();
    for (label, a) in labels.iter().zip(assignments) {
        for &l in a {
            for r in 0..schema.len() {
                if let Some(v) = label.get(r) {
                    s[r][v as usize - 1][l] += 1;
                }
            }
        }
        if label.is_complete() {
            let z: Vec<u16> = label.values().iter().map(|v| v.unwrap()).collect();
            *combos.entry(z.clone()).or_default() += 1;
            for &l in a {
                members.insert((z.clone(), l));
            }
        }
    }
    let n: i64 = combos.values().sum();
    let joint = combos.into_iter().map(|(z, c)| (z, q(c, n))).collect();
    ExactData { s, joint, members }
}

pub fn exact_model(d: &ExactData) -> Exact {
    let mut priors = Vec::new();
    let mut conditionals = Vec::new();
    for table in &d.s {
        let s_r: u64 = table.iter().flatten().sum();
        priors.push(table.iter().map(|row| q(row.iter().sum::<u64>() as i64, s_r as i64)).collect());
        conditionals.push(
            table
                .iter()
                .map(|row| {
                    let s_v: u64 = row.iter().sum();
                    (s_v > 0).then(|| row.iter().map(|&x| q(x as i64, s_v as i64)).collect())
                })
                .collect(),
        );
    }
    Exact { priors, conditionals }
}

fn pi_of(rule: &RuleExpr, z: &[u16]) -> Q {
    let pi = qf(rule.pi);
    if rule.expr.eval(z) {
        pi
    } else {
        Q::one() - pi
    }
}

/// Rule update of priors and conditionals by direct summation over the
/// training combinations; `None` when a normalizer vanishes.
pub fn exact_rule_update(model: &Exact, d: &ExactData, rule: &RuleExpr) -> Option<Exact> {
    let mut priors = Vec::new();
    let mut conditionals = Vec::new();
    for (r, pr) in model.priors.iter().enumerate() {
        let a: Vec<Q> = (0..pr.len())
            .map(|vi| {
                d.joint
                    .iter()
                    .filter(|(z, _)| z[r] as usize == vi + 1)
                    .fold(Q::zero(), |acc, (z, p)| acc + pi_of(rule, z) * p)
            })
            .collect();
        let norm = a.iter().zip(pr).fold(Q::zero(), |acc, (a, p)| acc + a * p);
        if !norm.is_positive() {
            return None;
        }
        priors.push(a.iter().zip(pr).map(|(a, p)| a * p / &norm).collect());

        let mut cr = Vec::new();
        for (vi, cond) in model.conditionals[r].iter().enumerate() {
            let Some(cond) = cond else {
                cr.push(None);
                continue;
            };
            let b: Vec<Q> = (0..cond.len())
                .map(|l| {
                    d.joint
                        .iter()
                        .filter(|(z, _)| z[r] as usize == vi + 1 && d.members.contains(&((*z).clone(), l)))
                        .fold(Q::zero(), |acc, (z, p)| acc + pi_of(rule, z) * p)
                })
                .collect();
            let norm = b.iter().zip(cond).fold(Q::zero(), |acc, (b, p)| acc + b * p);
            if !norm.is_positive() {
                return None;
            }
            cr.push(Some(b.iter().zip(cond).map(|(b, p)| b * p / &norm).collect()));
        }
        conditionals.push(cr);
    }
    Some(Exact { priors, conditionals })
}

fn factorial(n: u64) -> BigInt {
    (2..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Posteriors and evidence per concept by the multinomial likelihood, with
/// conditionals at or below `eps` (and missing ones) replaced by `eps`.
pub fn exact_predict(model: &Exact, occ: &[u64], eps: f64) -> (Vec<Vec<Q>>, Vec<Q>) {
    let eps = qf(eps);
    let total: u64 = occ.iter().sum();
    let coef = Q::from_integer(factorial(total))
        / Q::from_integer(occ.iter().fold(BigInt::one(), |acc, &k| acc * factorial(k)));
    let mut posteriors = Vec::new();
    let mut evidence = Vec::new();
    for (pr, conds) in model.priors.iter().zip(&model.conditionals) {
        let joint: Vec<Q> = pr
            .iter()
            .zip(conds)
            .map(|(p, c)| {
                let like = match c {
                    Some(c) => occ.iter().zip(c).fold(Q::one(), |acc, (&k, x)| {
                        let x = if *x > eps { x.clone() } else { eps.clone() };
                        acc * num_traits::pow(x, k as usize)
                    }),
                    None => num_traits::pow(eps.clone(), total as usize),
                };
                p * like
            })
            .collect();
        let z = joint.iter().fold(Q::zero(), |acc, x| acc + x);
        posteriors.push(joint.iter().map(|j| j / &z).collect());
        evidence.push(&coef * z);
    }
    (posteriors, evidence)
}

pub fn combination(z: &[u16]) -> Combination {
    Combination(z.to_vec())
}
