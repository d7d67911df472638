//! epsilon-SVR trained in the dual on a precomputed kernel matrix.
//!
//! The solver is SMO on the 2N-variable form used by LIBSVM: variable `t < N`
//! carries label +1 and linear term `eps - y_t`, variable `t + N` carries
//! label -1 and linear term `eps + y_t`. Pairs are chosen with second-order
//! working-set selection; shrinking is not used.

use thiserror::Error;

use crate::kernels::{cross_kernel, KernelError, KernelMatrix, KernelSpec};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// Dual solution: `f(x) = sum_t beta_t K(x_t, x) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrSolution {
    pub beta: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvrSolution {
    /// Prediction from the kernel values between the training rows and a query.
    pub fn predict_from_kernel(&self, k: &[f64]) -> f64 {
        self.beta.iter().zip(k).map(|(b, k)| b * k).sum::<f64>() + self.bias
    }

    pub fn support_vectors(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&t| self.beta[t] != 0.0).collect()
    }
}

#[derive(Debug, Error)]
pub enum SvrError {
    #[error("solver stopped after {} iterations without reaching the tolerance", .0.iterations)]
    MaxIterExceeded(SvrSolution),
    #[error("kernel matrix is constant; only the bias is identifiable")]
    DegenerateKernel(SvrSolution),
    #[error("kernel is {rows}x{cols} but there are {targets} targets")]
    ShapeMismatch { rows: usize, cols: usize, targets: usize },
    #[error("need at least two training rows")]
    TooFewRows,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl SvrError {
    /// The best available solution, if the error carries one.
    pub fn solution(&self) -> Option<&SvrSolution> {
        match self {
            SvrError::MaxIterExceeded(s) | SvrError::DegenerateKernel(s) => Some(s),
            _ => None,
        }
    }
}

pub type Result<T, E = SvrError> = std::result::Result<T, E>;

struct Solver<'a> {
    k: &'a KernelMatrix,
    n: usize,
    c: f64,
    p: Vec<f64>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(k: &'a KernelMatrix, y: &[f64], cfg: &SvrConfig) -> Self {
        let n = y.len();
        let mut p = Vec::with_capacity(2 * n);
        p.extend(y.iter().map(|v| cfg.epsilon - v));
        p.extend(y.iter().map(|v| cfg.epsilon + v));
        Self {
            k,
            n,
            c: cfg.c,
            grad: p.clone(),
            p,
            alpha: vec![0.0; 2 * n],
        }
    }

    fn label(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    /// Entry of the signed 2N x 2N matrix.
    fn q(&self, s: usize, t: usize) -> f64 {
        self.label(s) * self.label(t) * self.k.get(s % self.n, t % self.n)
    }

    fn qd(&self, t: usize) -> f64 {
        self.k.get(t % self.n, t % self.n)
    }

    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    fn objective(&self) -> f64 {
        self.alpha
            .iter()
            .zip(self.grad.iter().zip(&self.p))
            .map(|(a, (g, p))| a * (g + p))
            .sum::<f64>()
            / 2.0
    }

    /// Returns the working pair and the current optimality gap, or `None` when optimal.
    fn select(&self, tol: f64) -> (Option<(usize, usize)>, f64) {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..2 * self.n {
            if self.label(t) > 0.0 {
                if !self.at_upper(t) && -self.grad[t] >= gmax {
                    gmax = -self.grad[t];
                    gmax_idx = Some(t);
                }
            } else if !self.at_lower(t) && self.grad[t] >= gmax {
                gmax = self.grad[t];
                gmax_idx = Some(t);
            }
        }
        let Some(i) = gmax_idx else {
            return (None, 0.0);
        };
        let yi = self.label(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = None;
        let mut obj_min = f64::INFINITY;
        for j in 0..2 * self.n {
            let (eligible, grad_diff, score) = if self.label(j) > 0.0 {
                (!self.at_lower(j), gmax + self.grad[j], self.grad[j])
            } else {
                (!self.at_upper(j), gmax - self.grad[j], -self.grad[j])
            };
            if !eligible {
                continue;
            }
            gmax2 = gmax2.max(score);
            if grad_diff > 0.0 {
                let quad = self.qd(i) + self.qd(j) - 2.0 * yi * self.q(i, j) * self.label(j);
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    best = Some(j);
                }
            }
        }
        let gap = gmax + gmax2;
        match best {
            Some(j) if gap >= tol => (Some((i, j)), gap),
            _ => (None, gap),
        }
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let old_i = self.alpha[i];
        let old_j = self.alpha[j];
        let qij = self.q(i, j);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.label(i) != self.label(j) {
            let quad = self.qd(i) + self.qd(j) + 2.0 * qij;
            let delta = (-self.grad[i] - self.grad[j]) / if quad > 0.0 { quad } else { TAU };
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = self.qd(i) + self.qd(j) - 2.0 * qij;
            let delta = (self.grad[i] - self.grad[j]) / if quad > 0.0 { quad } else { TAU };
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let di = ai - old_i;
        let dj = aj - old_j;
        for t in 0..2 * self.n {
            self.grad[t] += self.q(i, t) * di + self.q(j, t) * dj;
        }
    }

    /// LIBSVM's offset: mean of `y G` over free variables, else the midpoint of the feasible interval.
    fn rho(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum_free = 0.0;
        let mut n_free = 0usize;
        for t in 0..2 * self.n {
            let y = self.label(t);
            let yg = y * self.grad[t];
            if self.at_upper(t) {
                if y < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(t) {
                if y > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }

    fn solution(&self, iterations: usize, converged: bool) -> SvrSolution {
        SvrSolution {
            beta: (0..self.n).map(|t| self.alpha[t] - self.alpha[t + self.n]).collect(),
            bias: -self.rho(),
            iterations,
            converged,
        }
    }
}

fn check_shape(k: &KernelMatrix, y: &[f64]) -> Result<()> {
    if k.n_rows != y.len() || k.n_cols != y.len() {
        return Err(SvrError::ShapeMismatch {
            rows: k.n_rows,
            cols: k.n_cols,
            targets: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(SvrError::TooFewRows);
    }
    Ok(())
}

fn solve(k: &KernelMatrix, y: &[f64], cfg: &SvrConfig, mut trace: Option<&mut Vec<f64>>) -> Result<SvrSolution> {
    check_shape(k, y)?;
    if k.data.iter().all(|&v| v == 1.0) {
        return Err(SvrError::DegenerateKernel(SvrSolution {
            beta: vec![0.0; y.len()],
            bias: y.iter().sum::<f64>() / y.len() as f64,
            iterations: 0,
            converged: false,
        }));
    }
    let mut solver = Solver::new(k, y, cfg);
    if let Some(t) = trace.as_deref_mut() {
        t.push(solver.objective());
    }
    let mut iter = 0;
    while iter < cfg.max_iter {
        let (pair, _) = solver.select(cfg.tol);
        let Some((i, j)) = pair else {
            return Ok(solver.solution(iter, true));
        };
        solver.update(i, j);
        iter += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(solver.objective());
        }
    }
    if solver.select(cfg.tol).0.is_none() {
        return Ok(solver.solution(iter, true));
    }
    Err(SvrError::MaxIterExceeded(solver.solution(iter, false)))
}

pub fn train_svr(k: &KernelMatrix, y: &[f64], cfg: &SvrConfig) -> Result<SvrSolution> {
    solve(k, y, cfg, None)
}

/// Like [`train_svr`], also returning the dual objective after every pair update.
pub fn train_svr_traced(k: &KernelMatrix, y: &[f64], cfg: &SvrConfig) -> (Result<SvrSolution>, Vec<f64>) {
    let mut trace = Vec::new();
    let r = solve(k, y, cfg, Some(&mut trace));
    (r, trace)
}

/// Dual objective in coefficient form: `1/2 b'Kb + eps |b|_1 - y'b`.
pub fn dual_objective(k: &KernelMatrix, y: &[f64], beta: &[f64], epsilon: f64) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        let row = k.row(i);
        quad += beta[i] * (0..n).map(|j| row[j] * beta[j]).sum::<f64>();
    }
    0.5 * quad + epsilon * beta.iter().map(|b| b.abs()).sum::<f64>()
        - y.iter().zip(beta).map(|(y, b)| y * b).sum::<f64>()
}

/// A trained model together with the kernel and training data needed for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub solution: SvrSolution,
    pub kernel: KernelSpec,
    pub rows: Vec<Vec<f64>>,
    pub naive: Vec<f64>,
}

pub fn predict_svr(model: &SvrModel, query: &[f64], query_naive: f64) -> Result<f64> {
    let k = cross_kernel(&model.kernel, &model.rows, &model.naive, query, query_naive)?;
    Ok(model.solution.predict_from_kernel(&k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Largest violation over all conditions.
    pub max_violation: f64,
    /// Maximal violating pair gap of the dual.
    pub pair_gap: f64,
    /// Per training row, violation of complementary slackness given the bias.
    pub row_violations: Vec<f64>,
    pub equality_residual: f64,
    pub box_violation: f64,
}

pub fn kkt_report(sol: &SvrSolution, k: &KernelMatrix, y: &[f64], cfg: &SvrConfig) -> KktReport {
    let n = y.len();
    let f: Vec<f64> = (0..n).map(|i| sol.predict_from_kernel(k.row(i))).collect();
    let c = cfg.c;
    let mut row_violations = Vec::with_capacity(n);
    // With residual r = y - f: beta = 0 needs |r| <= eps, 0 < beta < C needs r = eps,
    // beta = C needs r >= eps, and symmetrically for negative beta.
    for i in 0..n {
        let r = y[i] - f[i];
        let b = sol.beta[i];
        let v = if b == 0.0 {
            (r.abs() - cfg.epsilon).max(0.0)
        } else if b > 0.0 && b < c {
            (r - cfg.epsilon).abs()
        } else if b >= c {
            (cfg.epsilon - r).max(0.0)
        } else if b > -c {
            (r + cfg.epsilon).abs()
        } else {
            (r + cfg.epsilon).max(0.0)
        };
        row_violations.push(v);
    }
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::NEG_INFINITY;
    for i in 0..n {
        let g: f64 = (0..n).map(|j| k.get(i, j) * sol.beta[j]).sum();
        let (ap, am) = (sol.beta[i].max(0.0), (-sol.beta[i]).max(0.0));
        // Gradients of the +1 and -1 copies.
        let gp = g + cfg.epsilon - y[i];
        let gm = -g + cfg.epsilon + y[i];
        if ap < c {
            up = up.max(-gp);
        }
        if am > 0.0 {
            up = up.max(gm);
        }
        if ap > 0.0 {
            low = low.max(gp);
        }
        if am < c {
            low = low.max(-gm);
        }
    }
    let pair_gap = (up + low).max(0.0);
    let equality_residual = sol.beta.iter().sum::<f64>().abs();
    let box_violation = sol.beta.iter().map(|b| (b.abs() - c).max(0.0)).fold(0.0, f64::max);
    let max_violation = row_violations
        .iter()
        .copied()
        .fold(pair_gap.max(equality_residual).max(box_violation), f64::max);
    KktReport {
        max_violation,
        pair_gap,
        row_violations,
        equality_residual,
        box_violation,
    }
}
