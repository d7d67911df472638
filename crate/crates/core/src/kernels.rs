//! Laplace kernels, the naive-forecast corrected kernel and quantile-based widths.

use std::f64::consts::{LN_2, SQRT_2};

use libm::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("empty input")]
    EmptyInput,
    #[error("probability {0} outside (0, 1)")]
    OutOfDomain(f64),
    #[error("distances are degenerate (reference quantile is zero)")]
    DegenerateDistances,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

/// Quantile with linear interpolation between order statistics at rank `(n - 1) p + 1`.
pub fn empirical_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(KernelError::EmptyInput);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(KernelError::OutOfDomain(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    match sorted.get(lo + 1) {
        Some(&hi) if frac > 0.0 => sorted[lo] + frac * (hi - sorted[lo]),
        _ => sorted[lo],
    }
}

/// Standard normal quantile: Acklam's rational approximation refined by one Halley step.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(KernelError::OutOfDomain(p));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    // Evaluate the residual on the side where erfc is not close to 2.
    let e = if x < 0.0 {
        0.5 * erfc(-x / SQRT_2) - p
    } else {
        (1.0 - p) - 0.5 * erfc(x / SQRT_2)
    };
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// `l = ln 2 / median(distances)`.
pub fn laplace_width(distances: &[f64]) -> Result<f64> {
    let median = empirical_quantile(distances, 0.5)?;
    if !(median > 0.0) {
        return Err(KernelError::DegenerateDistances);
    }
    Ok(LN_2 / median)
}

/// `g = z_0.75^2 / (2 q(0.75)^2)` over squared naive-forecast distances.
pub fn gaussian_width(squared_distances: &[f64]) -> Result<f64> {
    let q = empirical_quantile(squared_distances, 0.75)?;
    if !(q > 0.0) {
        return Err(KernelError::DegenerateDistances);
    }
    let z = inverse_normal_cdf(0.75)?;
    Ok(z * z / (2.0 * q * q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Laplace (L2) times a Gaussian kernel on the standardised naive forecast.
    Corrected,
    LaplaceL2,
    LaplaceL1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub laplace_width: f64,
    /// Unused unless the kind is `Corrected`.
    pub gaussian_width: f64,
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

impl KernelKind {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelKind::LaplaceL1 => l1_distance(a, b),
            _ => l2_distance(a, b),
        }
    }
}

/// Distances over all unordered pairs `t < t'`.
pub fn pairwise_distances(kind: KernelKind, rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            out.push(kind.distance(a, b));
        }
    }
    out
}

pub fn pairwise_squared_differences(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * values.len().saturating_sub(1) / 2);
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            out.push((a - b) * (a - b));
        }
    }
    out
}

impl KernelSpec {
    /// Derives the widths from the training rows and training naive forecasts.
    pub fn fit(kind: KernelKind, rows: &[Vec<f64>], naive: &[f64]) -> Result<Self> {
        let laplace_width = laplace_width(&pairwise_distances(kind, rows))?;
        let gaussian_width = match kind {
            KernelKind::Corrected => gaussian_width(&pairwise_squared_differences(naive))?,
            _ => 0.0,
        };
        Ok(Self {
            kind,
            laplace_width,
            gaussian_width,
        })
    }

    fn at_distance(&self, dist: f64, naive_a: f64, naive_b: f64) -> f64 {
        let base = (-self.laplace_width * dist).exp();
        match self.kind {
            KernelKind::Corrected => base * (-self.gaussian_width * (naive_a - naive_b).powi(2)).exp(),
            _ => base,
        }
    }
}

pub fn kernel_value(spec: &KernelSpec, a: &[f64], b: &[f64], naive_a: f64, naive_b: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(KernelError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(spec.at_distance(spec.kind.distance(a, b), naive_a, naive_b))
}

/// Dense row-major kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = f(i, i);
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self {
            n_rows: n,
            n_cols: n,
            data,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

pub fn kernel_matrix(spec: &KernelSpec, rows: &[Vec<f64>], naive: &[f64]) -> Result<KernelMatrix> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(KernelError::DimensionMismatch(dim, r.len()));
    }
    Ok(KernelMatrix::from_fn(rows.len(), |i, j| {
        if i == j {
            1.0
        } else {
            spec.at_distance(spec.kind.distance(&rows[i], &rows[j]), naive[i], naive[j])
        }
    }))
}

/// Kernel values between every training row and one query row.
pub fn cross_kernel(
    spec: &KernelSpec,
    rows: &[Vec<f64>],
    naive: &[f64],
    query: &[f64],
    query_naive: f64,
) -> Result<Vec<f64>> {
    rows.iter()
        .zip(naive)
        .map(|(r, &n)| kernel_value(spec, r, query, n, query_naive))
        .collect()
}
