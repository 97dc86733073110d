//! Query-sample selection.
//!
//! Selectors pick the next query sample from the unlabeled pool; the query
//! line is then built through it. Uncertainty for a linear model is the
//! geometric distance to the current boundary estimate.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm};
use crate::model::{Label, LinearBoundary};
use crate::rng::Rng;

pub const DEFAULT_BATCH: usize = 5;
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QueryStrategy {
    Uncertainty,
    /// Uncertainty weighted by `density^beta`.
    UncertaintyDense { beta: f64 },
    /// Batches of `batch` cluster representatives drawn from the
    /// `10 · batch` most uncertain pool members.
    ClusterCentroid { batch: usize },
    Random,
}

impl fmt::Display for QueryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryStrategy::Uncertainty => f.write_str("uncertainty"),
            QueryStrategy::UncertaintyDense { beta } if *beta == 1.0 => f.write_str("uncertainty-dense"),
            QueryStrategy::UncertaintyDense { beta } => write!(f, "uncertainty-dense:{beta}"),
            QueryStrategy::ClusterCentroid { batch } => write!(f, "cluster{batch}"),
            QueryStrategy::Random => f.write_str("random"),
        }
    }
}

impl FromStr for QueryStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown strategy {s:?} (expected uncertainty | uncertainty-dense | cluster5 | random)"));
        match s {
            "uncertainty" => Ok(QueryStrategy::Uncertainty),
            "uncertainty-dense" => Ok(QueryStrategy::UncertaintyDense { beta: 1.0 }),
            "random" => Ok(QueryStrategy::Random),
            _ => {
                if let Some(beta) = s.strip_prefix("uncertainty-dense:") {
                    let beta: f64 = beta.parse().map_err(|_| bad())?;
                    if beta.is_finite() && beta >= 0.0 {
                        return Ok(QueryStrategy::UncertaintyDense { beta });
                    }
                } else if let Some(k) = s.strip_prefix("cluster") {
                    let batch: usize = k.parse().map_err(|_| bad())?;
                    if batch >= 1 {
                        return Ok(QueryStrategy::ClusterCentroid { batch });
                    }
                }
                Err(bad())
            }
        }
    }
}

impl TryFrom<String> for QueryStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<QueryStrategy> for String {
    fn from(s: QueryStrategy) -> String {
        s.to_string()
    }
}

/// Index of the pool member closest to the boundary; ties go to the lowest
/// index.
pub fn select_uncertainty<P: AsRef<[f64]>>(pool: &[P], boundary: &LinearBoundary) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::PoolExhausted);
    }
    if norm(&boundary.w) == 0.0 {
        return Err(Error::DegenerateBoundary);
    }
    let mut best = (0, f64::INFINITY);
    for (i, z) in pool.iter().enumerate() {
        let d = boundary.distance(z.as_ref())?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

/// Mean cosine similarity of each member to the whole pool (itself
/// included). Zero vectors contribute similarity 0.
pub fn pool_density<P: AsRef<[f64]>>(pool: &[P]) -> Vec<f64> {
    let dim = pool.first().map_or(0, |p| p.as_ref().len());
    let unit: Vec<Vec<f64>> = pool
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let n = norm(p);
            if n > 0.0 {
                p.iter().map(|x| x / n).collect()
            } else {
                vec![0.0; dim]
            }
        })
        .collect();
    // mean_j cos(z_i, z_j) = û_i · mean_j û_j
    let mut mean = vec![0.0; dim];
    for u in &unit {
        for (m, x) in mean.iter_mut().zip(u) {
            *m += x;
        }
    }
    let n = pool.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    unit.iter().map(|u| dot(u, &mean)).collect()
}

/// `1 / (1 + distance)`, zero for a degenerate boundary.
fn closeness(boundary: &LinearBoundary, z: &[f64]) -> Result<f64> {
    Ok(1.0 / (1.0 + boundary.distance(z)?))
}

/// Sign-preserving power, so negative mean similarity stays ordered.
fn signed_pow(x: f64, beta: f64) -> f64 {
    x.signum() * x.abs().powf(beta)
}

pub fn uncertainty_dense_scores<P: AsRef<[f64]>>(pool: &[P], boundary: &LinearBoundary, beta: f64) -> Result<Vec<f64>> {
    let density = pool_density(pool);
    pool.iter()
        .zip(density)
        .map(|(z, d)| Ok(closeness(boundary, z.as_ref())? * signed_pow(d, beta)))
        .collect()
}

/// Argmax of `uncertainty · density^beta`; ties go to the lowest index.
pub fn select_uncertainty_dense<P: AsRef<[f64]>>(pool: &[P], boundary: &LinearBoundary, beta: f64) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::PoolExhausted);
    }
    let scores = uncertainty_dense_scores(pool, boundary, beta)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_random(pool_len: usize, rng: &mut Rng) -> Result<usize> {
    if pool_len == 0 {
        return Err(Error::PoolExhausted);
    }
    Ok(rng.below(pool_len))
}

/// Runs k-means on the `candidates` most uncertain members and returns one
/// distinct representative (nearest member) per center.
pub fn select_cluster_centroids<P: AsRef<[f64]>>(
    pool: &[P],
    boundary: &LinearBoundary,
    batch: usize,
    candidates: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if pool.len() < batch {
        return Err(Error::PoolTooSmall { pool: pool.len(), batch });
    }
    let mut order: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, z)| Ok((boundary.distance(z.as_ref())?, i)))
        .collect::<Result<_>>()?;
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = candidates.clamp(batch, pool.len());
    let cand: Vec<usize> = order[..m].iter().map(|(_, i)| *i).collect();
    let points: Vec<&[f64]> = cand.iter().map(|&i| pool[i].as_ref()).collect();

    let centers = kmeans(&points, batch, KMEANS_MAX_ITER, rng);

    let mut taken = vec![false; points.len()];
    let mut chosen = Vec::with_capacity(batch);
    for c in &centers {
        let mut ranked: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist_sq(p, c), i)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (_, pick) = *ranked
            .iter()
            .find(|(_, i)| !taken[*i])
            .expect("batch ≤ candidates leaves a free member");
        taken[pick] = true;
        chosen.push(cand[pick]);
    }
    Ok(chosen)
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters keep their
/// previous center.
pub fn kmeans(points: &[&[f64]], k: usize, max_iter: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    assert!(k >= 1 && points.len() >= k, "kmeans needs at least k points");
    let dim = points[0].len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut used = vec![false; points.len()];
    let first = rng.below(points.len());
    used[first] = true;
    centers.push(points[first].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave target ≥ acc; take the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).expect("total > 0"))
        } else {
            let free: Vec<usize> = (0..points.len()).filter(|i| !used[*i]).collect();
            free[rng.below(free.len())]
        };
        used[pick] = true;
        centers.push(points[pick].to_vec());
        let c = centers.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist_sq(p, c));
        }
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = dist_sq(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    centers
}

/// Stateful selector over a shrinking pool. Works in dataset ids so batch
/// selections survive pool removals.
#[derive(Debug, Clone)]
pub struct Selector {
    strategy: QueryStrategy,
    rng: Rng,
    queue: VecDeque<usize>,
}

impl Selector {
    pub fn new(strategy: QueryStrategy, rng: Rng) -> Self {
        Self {
            strategy,
            rng,
            queue: VecDeque::new(),
        }
    }

    pub fn strategy(&self) -> QueryStrategy {
        self.strategy
    }

    /// Picks the next dataset id from `pool` (ids into `data`).
    pub fn next(&mut self, pool: &[usize], data: &[(Vec<f64>, Label)], boundary: &LinearBoundary) -> Result<usize> {
        if pool.is_empty() {
            return Err(Error::PoolExhausted);
        }
        let points: Vec<&[f64]> = pool.iter().map(|&i| data[i].0.as_slice()).collect();
        let pos = match self.strategy {
            QueryStrategy::Uncertainty => select_uncertainty(&points, boundary)?,
            QueryStrategy::UncertaintyDense { beta } => select_uncertainty_dense(&points, boundary, beta)?,
            QueryStrategy::Random => select_random(points.len(), &mut self.rng)?,
            QueryStrategy::ClusterCentroid { batch } => {
                while let Some(id) = self.queue.pop_front() {
                    if pool.contains(&id) {
                        return Ok(id);
                    }
                }
                let batch = batch.min(pool.len());
                let picks = select_cluster_centroids(&points, boundary, batch, 10 * batch, &mut self.rng)?;
                self.queue.extend(picks.iter().map(|&p| pool[p]));
                return Ok(self.queue.pop_front().expect("batch ≥ 1"));
            }
        };
        Ok(pool[pos])
    }
}
