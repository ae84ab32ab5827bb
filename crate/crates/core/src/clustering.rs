//! k-means over standardized market-condition features.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{FeatureVector, Standardizer, Timestamp};

pub const MAX_ITERATIONS: usize = 100;
pub const DEFAULT_K: usize = 8;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{n} feature vectors cannot form {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("feature dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all points identical; cannot form {0} clusters")]
    DegenerateData(usize),
    #[error("model file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// k × d, in standardized feature space.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<Timestamp, usize>,
    pub standardizer: Standardizer,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPick {
    pub cluster: usize,
    pub members: Vec<Timestamp>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid; ties go to the lowest id.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Remaining points coincide with chosen centers.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn inertia(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

fn update_centroids(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points.first().map_or(0, Vec::len);
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (c, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
        if count > 0 {
            centroids[c] = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
}

/// Give every empty cluster the point farthest from its own centroid.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[labels[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = donor else {
            return;
        };
        labels[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

/// Centroids, per-point labels and per-iteration inertia.
pub type KMeansFit = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>);

/// Raw k-means on already-standardized points. Returns centroids, labels
/// and the within-cluster sum of squares after every iteration.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit, ClusterError> {
    if k == 0 {
        return Err(ClusterError::InvalidK);
    }
    if points.len() < k {
        return Err(ClusterError::TooFewPoints { n: points.len(), k });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(ClusterError::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    if k > 1 && points.iter().all(|p| p == &points[0]) {
        return Err(ClusterError::DegenerateData(k));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(points, &mut next, &mut centroids);
        if next == labels {
            break;
        }
        labels = next;
        update_centroids(points, &labels, &mut centroids);
        trace.push(inertia(points, &labels, &centroids));
    }
    Ok((centroids, labels, trace))
}

/// Fit k-means on z-scored feature vectors with seeded k-means++ starts.
pub fn fit_clusters(
    features: &[FeatureVector],
    k: usize,
    seed: u64,
) -> Result<ClusterModel, ClusterError> {
    let raw: Vec<Vec<f64>> = features.iter().map(FeatureVector::numeric).collect();
    let anchors: Vec<Timestamp> = features.iter().map(|f| f.anchor).collect();
    fit_rows(&anchors, &raw, k, seed)
}

/// Same as [`fit_clusters`] for pre-encoded numeric rows.
pub fn fit_rows(
    anchors: &[Timestamp],
    raw: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<ClusterModel, ClusterError> {
    if let Some(first) = raw.first() {
        if let Some(r) = raw.iter().find(|r| r.len() != first.len()) {
            return Err(ClusterError::DimensionMismatch {
                expected: first.len(),
                found: r.len(),
            });
        }
    }
    let standardizer = Standardizer::fit(raw);
    let points: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.transform(r)).collect();
    let (centroids, labels, trace) = kmeans(&points, k, seed)?;
    Ok(ClusterModel {
        k,
        centroids,
        assignments: anchors.iter().copied().zip(labels).collect(),
        standardizer,
        iterations: trace.len(),
    })
}

impl ClusterModel {
    pub fn members(&self, cluster: usize) -> Vec<Timestamp> {
        self.assignments
            .iter()
            .filter(|(_, c)| **c == cluster)
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| ClusterError::Io(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| ClusterError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClusterError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ClusterError::Io(e.to_string()))
    }

    /// Nearest centroid to an already-encoded numeric row.
    pub fn pick_row(&self, raw: &[f64]) -> Result<ClusterPick, ClusterError> {
        if raw.len() != self.standardizer.input_dim() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.standardizer.input_dim(),
                found: raw.len(),
            });
        }
        let z = self.standardizer.transform(raw);
        let (cluster, _) = nearest(&z, &self.centroids);
        Ok(ClusterPick {
            cluster,
            members: self.members(cluster),
        })
    }
}

/// Cluster whose centroid is closest to `current`; ties go to the lowest id.
pub fn pick_cluster(
    model: &ClusterModel,
    current: &FeatureVector,
) -> Result<ClusterPick, ClusterError> {
    model.pick_row(&current.numeric())
}
