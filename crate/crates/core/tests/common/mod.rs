//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use csvr::kernels::KernelMatrix;
use csvr::market_data::{wall_clock, TransactionRecord};
use csvr::preprocessing::TrajectoryStore;
use csvr::study::{build_store, Model, StudyConfig};
use csvr::synth::{generate_dataset, SynthConfig, SynthDataset};

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

// ---------------------------------------------------------------------------
// epsilon-SVR dual by accelerated proximal gradient.

/// Oracle solution of `min 1/2 b'Kb + eps|b|_1 - y'b` subject to `sum b = 0`, `|b| <= C`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub beta: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
}

fn matvec(k: &KernelMatrix, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| k.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn largest_eigenvalue(k: &KernelMatrix) -> f64 {
    let n = k.n_rows;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = matvec(k, &v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Prox of `s*eps|b|_1` plus the box and the zero-sum constraint, by bisection on the multiplier.
fn prox(v: &[f64], shrink: f64, c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let z = x - mu;
                let soft = z.signum() * (z.abs() - shrink).max(0.0);
                soft.clamp(-c, c)
            })
            .collect()
    };
    let (mut lo, mut hi) = (
        v.iter().cloned().fold(f64::INFINITY, f64::min) - shrink - c - 1.0,
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + shrink + c + 1.0,
    );
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if at(mid).iter().sum::<f64>() > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

pub fn qp_objective(k: &KernelMatrix, y: &[f64], beta: &[f64], eps: f64) -> f64 {
    let kb = matvec(k, beta);
    0.5 * beta.iter().zip(&kb).map(|(a, b)| a * b).sum::<f64>() + eps * beta.iter().map(|b| b.abs()).sum::<f64>()
        - y.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
}

pub fn svr_oracle(k: &KernelMatrix, y: &[f64], c: f64, eps: f64) -> QpSolution {
    let n = y.len();
    let step = 1.0 / largest_eigenvalue(k);
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut best = f64::INFINITY;
    for iter in 0..200_000 {
        // The iterate only has to reveal which coefficients are zero, free or at
        // the bound; the exact solution then comes from a linear solve.
        if iter % 50 == 49 {
            for tiny in [1e-3, 1e-5, 1e-7, 1e-9] {
                if let Some(exact) = polish(k, y, &x, c, eps, tiny * c) {
                    return exact;
                }
            }
        }
        let g: Vec<f64> = matvec(k, &z).iter().zip(y).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let next = prox(&v, step * eps, c);
        let obj = qp_objective(k, y, &next, eps);
        if obj > best {
            // Adaptive restart keeps the momentum from overshooting.
            z = x.clone();
            t = 1.0;
            continue;
        }
        best = obj;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        x = next;
        t = t_next;
    }
    QpSolution {
        objective: qp_objective(k, y, &x, eps),
        bias: oracle_bias(k, y, &x, c, eps),
        beta: x,
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Zero,
    Upper,
    Lower,
    Free(f64),
}

/// Exact solution for the pattern suggested by `approx`, if it satisfies the KKT conditions.
fn polish(k: &KernelMatrix, y: &[f64], approx: &[f64], c: f64, eps: f64, tiny: f64) -> Option<QpSolution> {
    let n = y.len();
    let states: Vec<State> = approx
        .iter()
        .map(|&b| {
            if b.abs() <= tiny {
                State::Zero
            } else if b >= c - tiny {
                State::Upper
            } else if b <= -c + tiny {
                State::Lower
            } else {
                State::Free(b.signum())
            }
        })
        .collect();
    let mut beta: Vec<f64> = states
        .iter()
        .map(|s| match s {
            State::Upper => c,
            State::Lower => -c,
            _ => 0.0,
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| matches!(states[i], State::Free(_))).collect();
    let mut bias = None;
    if !free.is_empty() {
        // Unknowns: free coefficients, then the bias.
        let m = free.len();
        let mut a = vec![vec![0.0; m + 1]; m + 1];
        let mut rhs = vec![0.0; m + 1];
        for (r, &i) in free.iter().enumerate() {
            let State::Free(sign) = states[i] else { unreachable!() };
            for (cidx, &j) in free.iter().enumerate() {
                a[r][cidx] = k.get(i, j);
            }
            a[r][m] = 1.0;
            let fixed: f64 = (0..n)
                .filter(|j| !free.contains(j))
                .map(|j| k.get(i, j) * beta[j])
                .sum();
            rhs[r] = y[i] - sign * eps - fixed;
        }
        for cidx in 0..m {
            a[m][cidx] = 1.0;
        }
        rhs[m] = -beta.iter().sum::<f64>();
        let x = solve_dense(a, rhs)?;
        for (cidx, &i) in free.iter().enumerate() {
            beta[i] = x[cidx];
        }
        bias = Some(x[m]);
    }
    if beta.iter().sum::<f64>().abs() > 1e-9 {
        return None;
    }
    let kb = matvec(k, &beta);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let r = y[i] - kb[i];
        match states[i] {
            State::Zero => {
                lo = lo.max(r - eps);
                hi = hi.min(r + eps);
            }
            State::Upper => hi = hi.min(r - eps),
            State::Lower => lo = lo.max(r + eps),
            State::Free(sign) => {
                if beta[i] * sign <= 0.0 || beta[i].abs() >= c {
                    return None;
                }
            }
        }
    }
    let tol = 1e-9;
    let bias = match bias {
        Some(b) if b >= lo - tol && b <= hi + tol => b,
        None if lo <= hi + tol => 0.5 * (lo + hi),
        _ => return None,
    };
    Some(QpSolution {
        objective: qp_objective(k, y, &beta, eps),
        beta,
        bias,
    })
}

/// Offset from the KKT conditions: mean over free coefficients, else the
/// midpoint of the feasible interval.
fn oracle_bias(k: &KernelMatrix, y: &[f64], beta: &[f64], c: f64, eps: f64) -> f64 {
    let kb = matvec(k, beta);
    let tiny = 1e-7 * c;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut free = Vec::new();
    for i in 0..y.len() {
        let r = y[i] - kb[i];
        let b = beta[i];
        if b.abs() <= tiny {
            lo = lo.max(r - eps);
            hi = hi.min(r + eps);
        } else if b >= c - tiny {
            hi = hi.min(r - eps);
        } else if b <= -c + tiny {
            lo = lo.max(r + eps);
        } else if b > 0.0 {
            free.push(r - eps);
        } else {
            free.push(r + eps);
        }
    }
    if free.is_empty() {
        0.5 * (lo + hi)
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    }
}

// ---------------------------------------------------------------------------
// LASSO by cyclic coordinate descent.

/// Minimises `1/2 |y - X b|^2 + lambda |b|_1` until no coordinate moves more than `tol`.
pub fn lasso_cd(columns: &[Vec<f64>], y: &[f64], lambda: f64, tol: f64) -> Vec<f64> {
    let p = columns.len();
    let mut b = vec![0.0; p];
    let mut r = y.to_vec();
    let norms: Vec<f64> = columns.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    for _ in 0..10_000_000 {
        let mut delta = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let rho: f64 = columns[j].iter().zip(&r).map(|(x, ri)| x * ri).sum::<f64>() + norms[j] * b[j];
            let new = rho.signum() * (rho.abs() - lambda).max(0.0) / norms[j];
            let d = new - b[j];
            if d != 0.0 {
                for (ri, x) in r.iter_mut().zip(&columns[j]) {
                    *ri -= d * x;
                }
                b[j] = new;
                delta = delta.max(d.abs());
            }
        }
        if delta < tol {
            break;
        }
    }
    b
}

// ---------------------------------------------------------------------------
// Study fixtures.

pub fn synth(seed: u64, n_days: usize, rho: f64) -> SynthDataset {
    generate_dataset(&SynthConfig {
        seed,
        n_days,
        rho,
        ..SynthConfig::default()
    })
}

/// A one-cell study over `train_days` days of history before a single forecast day.
pub fn one_cell_config(
    start: NaiveDate,
    train_days: i64,
    quarter: u8,
    lead: i64,
    horizon: i64,
    models: &[Model],
) -> StudyConfig {
    let day = start + Duration::days(train_days);
    let mut cfg = StudyConfig::new(start, day, day);
    cfg.deliveries = BTreeSet::from([quarter]);
    cfg.lead_times = vec![lead];
    cfg.horizons = vec![horizon];
    cfg.models = models.iter().copied().collect();
    cfg.seed = 3;
    cfg
}

pub fn store_for(cfg: &StudyConfig, data: &SynthDataset) -> TrajectoryStore {
    build_store(cfg, &data.transactions, data.exogenous.clone()).unwrap()
}

/// Drops every trade executed after grid minute `last` of `day`.
pub fn truncate_after(trades: &[TransactionRecord], day: NaiveDate, last: i64) -> Vec<TransactionRecord> {
    let cutoff = wall_clock(day, last + 1);
    trades.iter().filter(|t| t.trade_time < cutoff).cloned().collect()
}
