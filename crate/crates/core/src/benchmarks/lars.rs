//! LASSO solution path by least angle regression with the lasso modification,
//! and the expanding-window cross-validation used to pick the penalty.
//!
//! The objective is `1/2 |y - X b|^2 + lambda |b|_1` without intercept; the
//! inputs are standardised upstream.

use thiserror::Error;

use crate::scaling::LASSO_CV_DAYS;

#[derive(Debug, Error, PartialEq)]
pub enum LarsError {
    #[error("need at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("columns have inconsistent lengths")]
    Shape,
}

pub type Result<T, E = LarsError> = std::result::Result<T, E>;

/// Piecewise-linear coefficient path, one entry per breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LarsPath {
    /// Strictly decreasing penalties.
    pub lambdas: Vec<f64>,
    pub coefs: Vec<Vec<f64>>,
    /// Set when an active set became numerically collinear and the path was cut short.
    pub truncated: bool,
}

impl LarsPath {
    pub fn n_features(&self) -> usize {
        self.coefs.first().map_or(0, Vec::len)
    }

    /// Coefficients at `lambda`, linear between breakpoints and constant beyond the ends.
    pub fn coef_at(&self, lambda: f64) -> Vec<f64> {
        let last = self.lambdas.len() - 1;
        if lambda >= self.lambdas[0] {
            return self.coefs[0].clone();
        }
        if lambda <= self.lambdas[last] {
            return self.coefs[last].clone();
        }
        let k = self.lambdas.partition_point(|&l| l > lambda);
        // lambdas[k - 1] > lambda >= lambdas[k]
        let (l0, l1) = (self.lambdas[k - 1], self.lambdas[k]);
        let w = (l0 - lambda) / (l0 - l1);
        self.coefs[k - 1]
            .iter()
            .zip(&self.coefs[k])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Lower-triangular Cholesky factor of the active Gram matrix, grown one column at a time.
struct Cholesky {
    l: Vec<Vec<f64>>,
}

impl Cholesky {
    fn new() -> Self {
        Self { l: Vec::new() }
    }

    /// Appends a variable given its Gram row against the active set and its squared norm.
    fn push(&mut self, cross: &[f64], norm2: f64) -> bool {
        let z = self.forward(cross);
        let d2 = norm2 - z.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 1e-10 * norm2.max(1e-300)) {
            return false;
        }
        let mut row = z;
        row.push(d2.sqrt());
        self.l.push(row);
        true
    }

    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(b.len());
        for (i, row) in self.l.iter().enumerate() {
            let s: f64 = (0..i).map(|k| row[k] * z[k]).sum();
            z.push((b[i] - s) / row[i]);
        }
        z
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let z = self.forward(b);
        let n = z.len();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| self.l[k][i] * x[k]).sum();
            x[i] = (z[i] - s) / self.l[i][i];
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn factor(columns: &[Vec<f64>], active: &[usize]) -> Option<Cholesky> {
    let mut chol = Cholesky::new();
    for (k, &j) in active.iter().enumerate() {
        let cross: Vec<f64> = active[..k].iter().map(|&i| dot(&columns[i], &columns[j])).collect();
        if !chol.push(&cross, dot(&columns[j], &columns[j])) {
            return None;
        }
    }
    Some(chol)
}

enum Event {
    Enter(usize),
    Drop(usize),
    End,
}

pub fn lars_path(columns: &[Vec<f64>], y: &[f64]) -> Result<LarsPath> {
    let n = y.len();
    if n < 2 {
        return Err(LarsError::TooFewRows { needed: 2, found: n });
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(LarsError::Shape);
    }
    let p = columns.len();
    let mut beta = vec![0.0; p];
    let mut corr: Vec<f64> = columns.iter().map(|c| dot(c, y)).collect();
    let mut lambda = corr.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut path = LarsPath {
        lambdas: vec![lambda],
        coefs: vec![beta.clone()],
        truncated: false,
    };
    if p == 0 || lambda <= 0.0 {
        return Ok(path);
    }
    let scale = lambda;
    let first = (0..p).find(|&j| corr[j].abs() == lambda).expect("argmax exists");
    let mut active = vec![first];
    let mut is_active = vec![false; p];
    is_active[first] = true;
    let mut chol = factor(columns, &active).expect("single nonzero column factors");
    let mut just_dropped: Option<usize> = None;
    let max_steps = 50 * (p + n);
    for _ in 0..max_steps {
        let signs: Vec<f64> = active.iter().map(|&j| corr[j].signum()).collect();
        let w = chol.solve(&signs);
        let mut u = vec![0.0; n];
        for (k, &j) in active.iter().enumerate() {
            for (ui, xi) in u.iter_mut().zip(&columns[j]) {
                *ui += w[k] * xi;
            }
        }
        let a: Vec<f64> = columns.iter().map(|c| dot(c, &u)).collect();
        let mut gamma = lambda;
        let mut event = Event::End;
        let saturated = active.len() >= n;
        for j in 0..p {
            if is_active[j] || saturated {
                continue;
            }
            // A variable that just left sits at |corr| = lambda on its old side; it may
            // only come back through the other side.
            let floor = if Some(j) == just_dropped {
                1e-9 * scale
            } else {
                -1e-10 * scale
            };
            for (num, den) in [(lambda - corr[j], 1.0 - a[j]), (lambda + corr[j], 1.0 + a[j])] {
                if den > 1e-12 && num >= floor {
                    let g = num.max(0.0) / den;
                    if g < gamma {
                        gamma = g;
                        event = Event::Enter(j);
                    }
                }
            }
        }
        for (k, &j) in active.iter().enumerate() {
            if beta[j] != 0.0 && w[k] != 0.0 {
                let g = -beta[j] / w[k];
                if g > 0.0 && g < gamma {
                    gamma = g;
                    event = Event::Drop(j);
                }
            }
        }
        for (k, &j) in active.iter().enumerate() {
            beta[j] += gamma * w[k];
        }
        for (c, aj) in corr.iter_mut().zip(&a) {
            *c -= gamma * aj;
        }
        lambda -= gamma;
        just_dropped = None;
        match event {
            Event::End => lambda = 0.0,
            Event::Drop(j) => {
                beta[j] = 0.0;
                active.retain(|&i| i != j);
                is_active[j] = false;
                just_dropped = Some(j);
                chol = factor(columns, &active).expect("subset of a factorable set");
            }
            Event::Enter(j) => {
                let cross: Vec<f64> = active.iter().map(|&i| dot(&columns[i], &columns[j])).collect();
                if chol.push(&cross, dot(&columns[j], &columns[j])) {
                    active.push(j);
                    is_active[j] = true;
                } else {
                    log::debug!("LARS: column {j} is collinear with the active set; truncating path");
                    path.truncated = true;
                }
            }
        }
        lambda = lambda.max(0.0);
        if lambda < *path.lambdas.last().expect("nonempty") {
            path.lambdas.push(lambda);
            path.coefs.push(beta.clone());
        } else {
            *path.coefs.last_mut().expect("nonempty") = beta.clone();
        }
        if path.truncated || lambda <= 1e-12 * scale || active.is_empty() {
            break;
        }
    }
    Ok(path)
}

pub fn predict_linear(coef: &[f64], row: &[f64]) -> f64 {
    dot(coef, row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    /// Chosen penalty per training row (`lambda / n`).
    pub alpha: f64,
    pub coef: Vec<f64>,
    pub cv_mse: f64,
    pub truncated: bool,
}

/// Expanding-window cross-validation over the last 14 rows, then a refit on all rows.
pub fn lasso_cv_train(columns: &[Vec<f64>], y: &[f64]) -> Result<LassoFit> {
    let n = y.len();
    let needed = LASSO_CV_DAYS + 1;
    if n < needed {
        return Err(LarsError::TooFewRows { needed, found: n });
    }
    let mut folds = Vec::with_capacity(LASSO_CV_DAYS);
    for k in 1..=LASSO_CV_DAYS {
        let n_train = n - LASSO_CV_DAYS + k - 1;
        let cols: Vec<Vec<f64>> = columns.iter().map(|c| c[..n_train].to_vec()).collect();
        let path = lars_path(&cols, &y[..n_train])?;
        let val_row: Vec<f64> = columns.iter().map(|c| c[n_train]).collect();
        folds.push((n_train, path, val_row, y[n_train]));
    }
    let mut grid: Vec<f64> = folds
        .iter()
        .flat_map(|(nt, path, _, _)| path.lambdas.iter().map(move |l| l / *nt as f64))
        .collect();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    let mut best = (f64::INFINITY, grid[0]);
    for &alpha in &grid {
        let mse = folds
            .iter()
            .map(|(nt, path, row, target)| {
                let coef = path.coef_at(alpha * *nt as f64);
                (target - predict_linear(&coef, row)).powi(2)
            })
            .sum::<f64>()
            / folds.len() as f64;
        if mse < best.0 {
            best = (mse, alpha);
        }
    }
    let full = lars_path(columns, y)?;
    Ok(LassoFit {
        alpha: best.1,
        coef: full.coef_at(best.1 * n as f64),
        cv_mse: best.0,
        truncated: full.truncated || folds.iter().any(|f| f.1.truncated),
    })
}
