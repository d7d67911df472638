//! Standardisation over the training window and correlation-based filtering.

use std::collections::BinaryHeap;

use thiserror::Error;

use crate::features::{retain_mask, ColumnKind};

/// Below this a standard deviation is treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;
pub const S1_THRESHOLD: f64 = 0.8;
pub const S2_THRESHOLD: f64 = 0.95;
/// Held-out days needed by the LASSO cross-validation.
pub const LASSO_CV_DAYS: usize = 14;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("target has zero variance over the training window")]
    DegenerateTarget,
    #[error("need at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("{exempt} exempt columns cannot be brought below the cap {cap}")]
    CapUnreachable { exempt: usize, cap: usize },
}

pub type Result<T, E = ScalingError> = std::result::Result<T, E>;

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedTarget {
    pub values: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

impl StandardizedTarget {
    pub fn unscale(&self, z: f64) -> f64 {
        self.mu + self.sigma * z
    }
}

pub fn standardize_target(values: &[f64]) -> Result<StandardizedTarget> {
    if values.len() < 2 {
        return Err(ScalingError::TooFewRows {
            needed: 2,
            found: values.len(),
        });
    }
    let (mu, sigma) = mean_std(values);
    if !(sigma >= SIGMA_FLOOR) {
        return Err(ScalingError::DegenerateTarget);
    }
    Ok(StandardizedTarget {
        values: values.iter().map(|v| (v - mu) / sigma).collect(),
        mu,
        sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    ZeroVariance,
    Correlation,
    DimensionCap,
}

/// Standardised columns over the training days plus the forecast day (last row).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub columns: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dropped: Vec<(String, DropReason)>,
}

impl FeatureMatrix {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Row-major copy; the last row belongs to the forecast day.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|i| self.columns.iter().map(|c| c[i]).collect())
            .collect()
    }

    pub fn count_dropped(&self, reason: DropReason) -> usize {
        self.dropped.iter().filter(|(_, r)| *r == reason).count()
    }

    fn retain(&mut self, keep: &[bool], reason: DropReason) {
        for (j, &k) in keep.iter().enumerate() {
            if !k {
                self.dropped.push((self.names[j].clone(), reason));
            }
        }
        retain_mask(&mut self.names, keep);
        retain_mask(&mut self.kinds, keep);
        retain_mask(&mut self.columns, keep);
        retain_mask(&mut self.mu, keep);
        retain_mask(&mut self.sigma, keep);
    }

    /// Pearson correlation of two standardised columns.
    pub fn correlation(&self, a: usize, b: usize) -> f64 {
        pearson(&self.columns[a], &self.columns[b])
    }

    /// Non-exempt column pairs `(i, j)`, `i < j`, with |rho| above `min_abs` if given.
    fn pairs(&self, min_abs: Option<f64>) -> Vec<RankedPair> {
        let candidates: Vec<usize> = (0..self.n_cols())
            .filter(|&j| self.kinds[j] != ColumnKind::Exogenous)
            .collect();
        let norms: Vec<f64> = self.columns.iter().map(|c| dot(c, c).sqrt()).collect();
        let mut pairs = Vec::new();
        for (a, &i) in candidates.iter().enumerate() {
            for &j in &candidates[a + 1..] {
                let r = (dot(&self.columns[i], &self.columns[j]) / (norms[i] * norms[j])).abs();
                if min_abs.is_none_or(|t| r > t) {
                    pairs.push(RankedPair { r, i, j });
                }
            }
        }
        pairs
    }
}

/// Orders pairs by descending |rho|, then by ascending `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RankedPair {
    r: f64,
    i: usize,
    j: usize,
}

impl Eq for RankedPair {}

impl Ord for RankedPair {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.r
            .total_cmp(&other.r)
            .then((other.i, other.j).cmp(&(self.i, self.j)))
    }
}

impl PartialOrd for RankedPair {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_std(a);
    let (mb, _) = mean_std(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Standardises each column over all rows; zero-variance columns are dropped.
pub fn standardize_features(
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    columns: Vec<Vec<f64>>,
) -> Result<FeatureMatrix> {
    let n_rows = columns.first().map_or(0, Vec::len);
    if n_rows < 3 {
        return Err(ScalingError::TooFewRows {
            needed: 3,
            found: n_rows,
        });
    }
    let mut m = FeatureMatrix {
        mu: Vec::with_capacity(columns.len()),
        sigma: Vec::with_capacity(columns.len()),
        names,
        kinds,
        columns,
        dropped: Vec::new(),
    };
    let mut keep = Vec::with_capacity(m.columns.len());
    for col in &mut m.columns {
        let (mu, sigma) = mean_std(col);
        let constant = col.iter().all(|&v| v == col[0]);
        if constant || !(sigma >= SIGMA_FLOOR) {
            keep.push(false);
        } else {
            keep.push(true);
            col.iter_mut().for_each(|v| *v = (*v - mu) / sigma);
        }
        m.mu.push(mu);
        m.sigma.push(sigma);
    }
    m.retain(&keep, DropReason::ZeroVariance);
    Ok(m)
}

/// Drops the later member of every pair whose |rho| exceeds the threshold,
/// processing pairs from the most correlated down. Exogenous columns are exempt.
pub fn correlation_filter(mut m: FeatureMatrix, threshold: f64) -> FeatureMatrix {
    let mut keep = vec![true; m.n_cols()];
    let mut pairs = m.pairs(Some(threshold));
    pairs.sort_by(|a, b| b.cmp(a));
    for RankedPair { i, j, .. } in pairs {
        if keep[i] && keep[j] {
            keep[j] = false;
        }
    }
    m.retain(&keep, DropReason::Correlation);
    m
}

/// Removes columns from the most correlated pairs until fewer than `cap` remain.
pub fn lasso_dimension_filter(mut m: FeatureMatrix, cap: usize) -> Result<FeatureMatrix> {
    let exempt = m.kinds.iter().filter(|k| **k == ColumnKind::Exogenous).count();
    if exempt >= cap {
        return Err(ScalingError::CapUnreachable { exempt, cap });
    }
    if m.n_cols() < cap {
        return Ok(m);
    }
    let mut keep = vec![true; m.n_cols()];
    let mut alive = m.n_cols();
    // Only the leading pairs are consumed, so a heap beats a full sort.
    let mut heap = BinaryHeap::from(m.pairs(None));
    while let Some(RankedPair { i, j, .. }) = heap.pop() {
        if alive < cap {
            break;
        }
        if keep[i] && keep[j] {
            keep[j] = false;
            alive -= 1;
        }
    }
    // A single non-exempt survivor has no partner left to pair with.
    if alive >= cap {
        if let Some(j) = (0..keep.len())
            .rev()
            .find(|&j| keep[j] && m.kinds[j] != ColumnKind::Exogenous)
        {
            keep[j] = false;
        }
    }
    m.retain(&keep, DropReason::DimensionCap);
    Ok(m)
}
