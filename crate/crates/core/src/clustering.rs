//! K-means (Lloyd + k-means++) with silhouette-driven choice of k.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectorspace::squared_distance;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("points have inconsistent dimensions")]
    DimensionMismatch,
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("labels and points differ in length")]
    LabelMismatch,
    #[error("cluster index {index} out of range (k = {k})")]
    BadClusterIndex { index: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Converged once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Sum of squared euclidean distances to the assigned centroid.
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for l in &self.labels {
            sizes[*l] += 1;
        }
        sizes
    }
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize, ClusterError> {
    let first = points.first().ok_or(ClusterError::EmptyInput)?;
    let dim = first.as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(ClusterError::DimensionMismatch);
    }
    Ok(dim)
}

pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> Result<Clustering, ClusterError> {
    kmeans_with(points, k, seed, KMeansParams::default())
}

pub fn kmeans_with<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    seed: u64,
    params: KMeansParams,
) -> Result<Clustering, ClusterError> {
    let dim = check_points(points)?;
    let n = points.len();
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > n {
        return Err(ClusterError::KTooLarge { k, n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut iterations_run = 0;
    let mut last_inertia = f64::INFINITY;

    for iter in 1..=params.max_iter.max(1) {
        iterations_run = iter;
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest_centroid(p.as_ref(), &centroids).0;
        }
        let mut updated = means(points, &labels, k, dim);
        repair_empty(points, &mut labels, &mut updated, dim);

        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;

        let inertia = inertia_of(points, &labels, &centroids);
        debug_assert!(
            inertia <= last_inertia + 1e-9 * last_inertia.abs().max(1.0),
            "inertia increased: {last_inertia} -> {inertia}"
        );
        last_inertia = inertia;

        if shift < params.tol {
            break;
        }
    }

    let inertia = inertia_of(points, &labels, &centroids);
    Ok(Clustering {
        k,
        centroids,
        labels,
        inertia,
        seed,
        iterations_run,
    })
}

fn plus_plus_init<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            // all remaining points coincide with a centroid
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        let c = points[pick].as_ref().to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Index of the closest centroid (lowest index on ties) and its squared distance.
fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn means<P: AsRef<[f64]>>(points: &[P], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, l) in points.iter().zip(labels) {
        counts[*l] += 1;
        for (s, x) in sums[*l].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for (s, c) in sums.iter_mut().zip(&counts) {
        if *c > 0 {
            for v in s.iter_mut() {
                *v /= *c as f64;
            }
        }
    }
    // empty clusters keep a zero vector until repaired; mark them with NaN
    for (s, c) in sums.iter_mut().zip(&counts) {
        if *c == 0 {
            s.iter_mut().for_each(|v| *v = f64::NAN);
        }
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty<P: AsRef<[f64]>>(points: &[P], labels: &mut [usize], centroids: &mut [Vec<f64>], dim: usize) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for l in labels.iter() {
            counts[*l] += 1;
        }
        let Some(empty) = counts.iter().position(|c| *c == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = squared_distance(p.as_ref(), &centroids[labels[i]]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (idx, _) = far.expect("k <= n guarantees a donor cluster");
        let donor = labels[idx];
        labels[idx] = empty;
        centroids[empty] = points[idx].as_ref().to_vec();
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for (p, l) in points.iter().zip(labels.iter()) {
            if *l == donor {
                count += 1;
                for (s, x) in sum.iter_mut().zip(p.as_ref()) {
                    *s += x;
                }
            }
        }
        for s in &mut sum {
            *s /= count as f64;
        }
        centroids[donor] = sum;
    }
}

pub fn inertia_of<P: AsRef<[f64]>>(points: &[P], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, l)| squared_distance(p.as_ref(), &centroids[*l]))
        .sum()
}

/// Condensed symmetric matrix of euclidean distances.
struct Pairwise {
    n: usize,
    upper: Vec<f64>,
}

impl Pairwise {
    fn new<P: AsRef<[f64]>>(points: &[P]) -> Self {
        let n = points.len();
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(squared_distance(points[i].as_ref(), points[j].as_ref()).sqrt());
            }
        }
        Pairwise { n, upper }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // offset of row a in the condensed layout
        let row = a * self.n - a * (a + 1) / 2;
        self.upper[row + (b - a - 1)]
    }
}

/// Mean silhouette with euclidean distance. Points in singleton clusters
/// score 0.
pub fn silhouette<P: AsRef<[f64]>>(points: &[P], labels: &[usize]) -> Result<f64, ClusterError> {
    check_points(points)?;
    if labels.len() != points.len() {
        return Err(ClusterError::LabelMismatch);
    }
    silhouette_from(&Pairwise::new(points), labels)
}

fn silhouette_from(dist: &Pairwise, labels: &[usize]) -> Result<f64, ClusterError> {
    // compact arbitrary labels to 0..c
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(*l).or_insert(next);
    }
    let c = ids.len();
    if c < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let compact: Vec<usize> = labels.iter().map(|l| ids[l]).collect();
    let mut sizes = vec![0usize; c];
    for l in &compact {
        sizes[*l] += 1;
    }

    let n = labels.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; c];
    for i in 0..n {
        let own = compact[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[compact[j]] += dist.get(i, j);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..c)
            .filter(|cl| *cl != own)
            .map(|cl| sums[cl] / sizes[cl] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub candidate_ks: Vec<usize>,
    pub silhouette_scores: Vec<f64>,
    pub inertias: Vec<f64>,
    pub chosen_k: usize,
    /// Knee of the inertia curve, when at least three candidates exist.
    pub elbow_k: Option<usize>,
}

impl KSelectionReport {
    pub fn degenerate() -> Self {
        KSelectionReport {
            candidate_ks: Vec::new(),
            silhouette_scores: Vec::new(),
            inertias: Vec::new(),
            chosen_k: 1,
            elbow_k: None,
        }
    }

    pub fn elbow_disagrees(&self) -> bool {
        self.elbow_k.is_some_and(|e| e != self.chosen_k)
    }
}

/// Picks k by maximum silhouette over `k_range` clipped to `[2, n]`,
/// smallest k on ties. Each candidate is clustered with seed `seed + k`.
pub fn select_k<P: AsRef<[f64]>>(
    points: &[P],
    k_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<KSelectionReport, ClusterError> {
    select_and_cluster(points, k_range, seed, KMeansParams::default()).map(|(r, _)| r)
}

/// Like [`select_k`], also returning the clustering for the chosen k.
pub fn select_and_cluster<P: AsRef<[f64]>>(
    points: &[P],
    k_range: RangeInclusive<usize>,
    seed: u64,
    params: KMeansParams,
) -> Result<(KSelectionReport, Clustering), ClusterError> {
    check_points(points)?;
    let n = points.len();
    let lo = (*k_range.start()).max(2);
    let hi = (*k_range.end()).min(n);
    if n < 2 || lo > hi {
        let single = kmeans_with(points, 1, seed.wrapping_add(1), params)?;
        return Ok((KSelectionReport::degenerate(), single));
    }

    let dist = Pairwise::new(points);
    let mut report = KSelectionReport::degenerate();
    let mut best: Option<(f64, Clustering)> = None;
    for k in lo..=hi {
        let clustering = kmeans_with(points, k, seed.wrapping_add(k as u64), params)?;
        let score = silhouette_from(&dist, &clustering.labels)?;
        report.candidate_ks.push(k);
        report.silhouette_scores.push(score);
        report.inertias.push(clustering.inertia);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, clustering));
        }
    }
    let (_, chosen) = best.expect("at least one candidate");
    report.chosen_k = chosen.k;
    report.elbow_k = elbow(&report.candidate_ks, &report.inertias);
    if report.elbow_disagrees() {
        tracing::info!(
            silhouette_k = report.chosen_k,
            elbow_k = report.elbow_k,
            "elbow and silhouette disagree; using silhouette"
        );
    }
    Ok((report, chosen))
}

/// Candidate farthest from the chord joining the first and last points of
/// the normalized inertia curve.
fn elbow(ks: &[usize], inertias: &[f64]) -> Option<usize> {
    if ks.len() < 3 {
        return None;
    }
    let (k0, k1) = (ks[0] as f64, ks[ks.len() - 1] as f64);
    let y_max = inertias.iter().cloned().fold(f64::MIN, f64::max);
    let y_min = inertias.iter().cloned().fold(f64::MAX, f64::min);
    if y_max <= y_min {
        return None;
    }
    let norm = |k: usize, y: f64| ((k as f64 - k0) / (k1 - k0), (y - y_min) / (y_max - y_min));
    let (x_a, y_a) = norm(ks[0], inertias[0]);
    let (x_b, y_b) = norm(ks[ks.len() - 1], inertias[ks.len() - 1]);
    let mut best = (ks[0], f64::MIN);
    for (k, y) in ks.iter().zip(inertias) {
        let (x, y) = norm(*k, *y);
        let d = ((y_b - y_a) * x - (x_b - x_a) * y + x_b * y_a - y_b * x_a).abs();
        if d > best.1 {
            best = (*k, d);
        }
    }
    Some(best.0)
}

/// Members of `cluster` ordered by distance to its centroid (index on ties),
/// truncated to `m`.
pub fn nearest_to_centroid<P: AsRef<[f64]>>(
    clustering: &Clustering,
    points: &[P],
    cluster: usize,
    m: usize,
) -> Result<Vec<usize>, ClusterError> {
    if cluster >= clustering.k {
        return Err(ClusterError::BadClusterIndex {
            index: cluster,
            k: clustering.k,
        });
    }
    if points.len() != clustering.labels.len() {
        return Err(ClusterError::LabelMismatch);
    }
    let centroid = &clustering.centroids[cluster];
    let mut members: Vec<(f64, usize)> = clustering
        .members(cluster)
        .into_iter()
        .map(|i| (squared_distance(points[i].as_ref(), centroid), i))
        .collect();
    members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(members.into_iter().take(m).map(|(_, i)| i).collect())
}
