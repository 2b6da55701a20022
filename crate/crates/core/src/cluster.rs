//! TF-IDF vectors and seeded k-means for grouping exclusion constraints.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("need at least {k} sentences for {k} clusters, got {n}")]
    TooFewSentences { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("vectorizer returned {got} vectors for {expected} inputs")]
    VectorCount { expected: usize, got: usize },
    #[error("vectorizer returned vectors of unequal dimension")]
    RaggedVectors,
    #[error("vectorizer failed: {0}")]
    Provider(String),
}

/// Common English function words dropped before weighting.
pub const STOPLIST: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with", "from", "as", "is",
    "are", "was", "were", "be", "been", "it", "its", "this", "that", "these", "those", "you", "your", "i", "we",
    "they", "he", "she", "them", "any", "all", "so", "than", "then", "there", "their", "will", "can", "into", "about",
    "just", "such",
];

pub fn content_terms(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).filter(|w| !STOPLIST.contains(&w.as_str())).collect()
}

/// Turns a batch of strings into equal-length vectors of equal dimension.
pub trait Vectorizer<F: Scalar> {
    fn vectorize(&self, docs: &[String]) -> Result<Vec<Vec<F>>, ClusterError>;
}

/// Smoothed TF-IDF (`idf = ln((1+n)/(1+df)) + 1`), l2-normalised, over a sorted vocabulary.
#[derive(Debug, Clone, Default)]
pub struct TfIdf;

#[derive(Debug, Clone)]
pub struct TfIdfModel<F> {
    pub vocabulary: Vec<String>,
    pub vectors: Vec<Vec<F>>,
}

impl TfIdf {
    pub fn fit<F: Scalar>(&self, docs: &[String]) -> TfIdfModel<F> {
        let tokenized: Vec<Vec<String>> = docs.iter().map(|d| content_terms(d)).collect();
        let vocabulary: Vec<String> =
            tokenized.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut df = vec![0usize; vocabulary.len()];
        for doc in &tokenized {
            for t in doc.iter().collect::<BTreeSet<_>>() {
                df[index[t.as_str()]] += 1;
            }
        }
        let n = F::from_usize(docs.len()).unwrap();
        let idf: Vec<F> =
            df.iter().map(|&d| ((F::one() + n) / (F::one() + F::from_usize(d).unwrap())).ln() + F::one()).collect();
        let vectors = tokenized
            .iter()
            .map(|doc| {
                let mut v = vec![F::zero(); vocabulary.len()];
                for t in doc {
                    v[index[t.as_str()]] = v[index[t.as_str()]] + F::one();
                }
                for (x, w) in v.iter_mut().zip(&idf) {
                    *x = *x * *w;
                }
                normalize(&mut v);
                v
            })
            .collect();
        TfIdfModel { vocabulary, vectors }
    }
}

impl<F: Scalar> Vectorizer<F> for TfIdf {
    fn vectorize(&self, docs: &[String]) -> Result<Vec<Vec<F>>, ClusterError> {
        Ok(self.fit(docs).vectors)
    }
}

fn normalize<F: Scalar>(v: &mut [F]) {
    let norm = v.iter().fold(F::zero(), |acc, x| acc + *x * *x).sqrt();
    if norm > F::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Independent k-means++ starts; the lowest-inertia run is kept.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { k: 5, seed: 0, max_iter: 100, tol: 1e-6, restarts: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<F> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<F>>,
    pub inertia: F,
    pub iterations: usize,
}

fn nearest<F: Scalar>(p: &[F], centroids: &[Vec<F>]) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding; stops early when every remaining point coincides with a centroid.
fn init_plus_plus<F: Scalar>(points: &[Vec<F>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<F>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1.to_f64().unwrap()).collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = d2.iter().rposition(|d| *d > 0.0).unwrap();
        for (i, d) in d2.iter().enumerate() {
            if *d > 0.0 && target < *d {
                chosen = i;
                break;
            }
            target -= d;
        }
        centroids.push(points[chosen].clone());
    }
    centroids
}

fn lloyd<F: Scalar>(points: &[Vec<F>], mut centroids: Vec<Vec<F>>, params: &KMeansParams) -> KMeansFit<F> {
    let dim = points[0].len();
    let tol = F::lit(params.tol);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assignments;
        assignments = next;

        let mut sums = vec![vec![F::zero(); dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s = *s + *x;
            }
        }
        let mut shift = F::zero();
        for (c, (sum, &n)) in centroids.iter_mut().zip(sums.into_iter().zip(&counts)) {
            if n == 0 {
                continue;
            }
            let n = F::from_usize(n).unwrap();
            let moved: Vec<F> = sum.into_iter().map(|s| s / n).collect();
            shift = shift.max(sq_dist(c, &moved));
            *c = moved;
        }
        if !changed || shift <= tol {
            break;
        }
    }
    let assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let inertia = points.iter().zip(&assignments).fold(F::zero(), |acc, (p, &a)| acc + sq_dist(p, &centroids[a]));
    KMeansFit { assignments, centroids, inertia, iterations }
}

/// Seeded k-means (Euclidean, k-means++ init). Deterministic for fixed inputs and params.
pub fn kmeans<F: Scalar>(points: &[Vec<F>], params: &KMeansParams) -> Result<KMeansFit<F>, ClusterError> {
    if params.k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if points.len() < params.k {
        return Err(ClusterError::TooFewSentences { n: points.len(), k: params.k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<KMeansFit<F>> = None;
    for _ in 0..params.restarts.max(1) {
        let init = init_plus_plus(points, params.k, &mut rng);
        let fit = lloyd(points, init, params);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    let mut fit = best.unwrap();
    relabel_by_first_appearance(&mut fit);
    Ok(fit)
}

fn relabel_by_first_appearance<F: Scalar>(fit: &mut KMeansFit<F>) {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for &a in &fit.assignments {
        let next = map.len();
        map.entry(a).or_insert(next);
    }
    let mut centroids = vec![Vec::new(); map.len()];
    for (&old, &new) in &map {
        centroids[new] = fit.centroids[old].clone();
    }
    fit.centroids = centroids;
    for a in fit.assignments.iter_mut() {
        *a = map[a];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClusterWarning {
    /// Fewer distinct clusters than requested.
    DegenerateClusters { requested: usize, effective: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusionClusters {
    pub assignments: Vec<usize>,
    pub centroid_terms: Vec<Vec<String>>,
    pub effective_clusters: usize,
    pub warnings: Vec<ClusterWarning>,
}

pub fn cluster_exclusions(sentences: &[String], k: usize, seed: u64) -> Result<ExclusionClusters, ClusterError> {
    cluster_exclusions_with::<f64, _>(sentences, &TfIdf, &KMeansParams { k, seed, ..KMeansParams::default() })
}

pub fn cluster_exclusions_with<F: Scalar, V: Vectorizer<F>>(
    sentences: &[String],
    vectorizer: &V,
    params: &KMeansParams,
) -> Result<ExclusionClusters, ClusterError> {
    if params.k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if sentences.len() < params.k {
        return Err(ClusterError::TooFewSentences { n: sentences.len(), k: params.k });
    }
    let vectors = vectorizer.vectorize(sentences)?;
    if vectors.len() != sentences.len() {
        return Err(ClusterError::VectorCount { expected: sentences.len(), got: vectors.len() });
    }
    if vectors.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(ClusterError::RaggedVectors);
    }
    let fit = kmeans(&vectors, params)?;
    let effective = fit.centroids.len();
    let warnings = if effective < params.k {
        vec![ClusterWarning::DegenerateClusters { requested: params.k, effective }]
    } else {
        vec![]
    };
    Ok(ExclusionClusters {
        centroid_terms: top_terms(sentences, &fit.assignments, effective, 5),
        assignments: fit.assignments,
        effective_clusters: effective,
        warnings,
    })
}

/// Highest mean TF-IDF terms per cluster, ties broken lexicographically.
fn top_terms(sentences: &[String], assignments: &[usize], clusters: usize, n: usize) -> Vec<Vec<String>> {
    let model: TfIdfModel<f64> = TfIdf.fit(sentences);
    (0..clusters)
        .map(|c| {
            let mut mean = vec![0.0; model.vocabulary.len()];
            for (v, _) in model.vectors.iter().zip(assignments).filter(|(_, a)| **a == c) {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            let mut ranked: Vec<(usize, f64)> = mean.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| model.vocabulary[a.0].cmp(&model.vocabulary[b.0])));
            ranked.into_iter().take(n).map(|(i, _)| model.vocabulary[i].clone()).collect()
        })
        .collect()
}

/// Fraction of items whose cluster's majority label equals their own label.
pub fn purity<L: Ord + Clone>(assignments: &[usize], labels: &[L]) -> f64 {
    if assignments.is_empty() {
        return 0.0;
    }
    let mut per_cluster: BTreeMap<usize, BTreeMap<L, usize>> = BTreeMap::new();
    for (a, l) in assignments.iter().zip(labels) {
        *per_cluster.entry(*a).or_default().entry(l.clone()).or_default() += 1;
    }
    let majority: usize = per_cluster.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / assignments.len() as f64
}
