//! Local Outlier Factor in novelty mode: the reference set is fitted once and
//! queries are scored against it without joining it.
//!
//! Neighborhoods contain exactly `k` points; equal distances are ordered by
//! point index.

use crate::error::{Error, Result};
use crate::gpc::Standardizer;
use crate::par::{self, Execution};

/// Floor for mean reachability distances so duplicated points keep a finite
/// density.
const MIN_REACH: f64 = f64::MIN_POSITIVE;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// The `k` nearest points to `q` as `(distance, index)`, skipping `skip`.
fn nearest(points: &[Vec<f64>], q: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> =
        points.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(i, p)| (dist(p, q), i)).collect();
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, by_key);
        all.truncate(k);
    }
    all.sort_by(by_key);
    all
}

/// Fitted reference set with precomputed k-distances and local
/// reachability densities.
#[derive(Debug, Clone)]
pub struct LofModel {
    points: Vec<Vec<f64>>,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
    degenerate: bool,
}

impl LofModel {
    /// `k` is capped at `points.len() - 1`.
    pub fn fit(points: Vec<Vec<f64>>, k: usize, exec: Execution) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter { name: "k", reason: "must be >= 1".into() });
        }
        if points.len() < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: points.len() });
        }
        let k = k.min(points.len() - 1);
        let degenerate = points.iter().all(|p| p == &points[0]);
        let neighbors: Vec<Vec<(f64, usize)>> = par::map_indexed(exec, points.len(), |i| nearest(&points, &points[i], k, Some(i)));
        let k_distance: Vec<f64> = neighbors.iter().map(|n| n[k - 1].0).collect();
        let lrd = neighbors
            .iter()
            .map(|n| {
                let reach: f64 = n.iter().map(|(d, o)| d.max(k_distance[*o])).sum::<f64>() / k as f64;
                1.0 / reach.max(MIN_REACH)
            })
            .collect();
        Ok(Self { points, k, k_distance, lrd, degenerate })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// LOF of `q` relative to the reference set; 1 for a degenerate set.
    pub fn score(&self, q: &[f64]) -> f64 {
        if self.degenerate {
            return 1.0;
        }
        let n = nearest(&self.points, q, self.k, None);
        let reach: f64 = n.iter().map(|(d, o)| d.max(self.k_distance[*o])).sum::<f64>() / self.k as f64;
        let lrd_q = 1.0 / reach.max(MIN_REACH);
        // Divide before summing: duplicated points carry densities near f64::MAX.
        let mean_lrd: f64 = n.iter().map(|(_, o)| self.lrd[*o] / self.k as f64).sum();
        mean_lrd / lrd_q
    }
}

/// LOF on standardized coordinates: fits the per-dimension map on `points`.
#[derive(Debug, Clone)]
pub struct StandardizedLof {
    standardizer: Standardizer,
    model: LofModel,
}

impl StandardizedLof {
    pub fn fit(points: &[&[f64]], k: usize, exec: Execution) -> Result<Self> {
        let standardizer = Standardizer::fit(points)?;
        let z = points.iter().map(|p| standardizer.apply(p)).collect();
        Ok(Self { model: LofModel::fit(z, k, exec)?, standardizer })
    }

    pub fn score(&self, q: &[f64]) -> f64 {
        self.model.score(&self.standardizer.apply(q))
    }

    pub fn k(&self) -> usize {
        self.model.k()
    }
}

/// One-shot LOF score of `query` against `points` on standardized
/// coordinates.
pub fn lof(points: &[&[f64]], query: &[f64], k: usize) -> Result<f64> {
    Ok(StandardizedLof::fit(points, k, Execution::Sequential)?.score(query))
}
