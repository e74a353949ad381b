//! Kernel SVM trained by sequential minimal optimization, with one-vs-one
//! multi-class decomposition.
//!
//! Each binary machine solves the C-SVC dual
//! `min 1/2 a'Qa - e'a  s.t.  y'a = 0, 0 <= a_t <= C`
//! with `Q_ij = y_i y_j k(x_i, x_j)`. The working pair is the maximal
//! violating pair (ties resolved towards the lower index) and iteration stops
//! once the KKT gap falls below the tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, sq_dist, Matrix};

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 100_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c_reg: f64,
    /// `None` selects `1 / (p * Var(F))` over the training entries.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c_reg: 1.0,
            gamma: None,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Binary C-SVC for classes `positive` (decision > 0) and `negative`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub positive: usize,
    pub negative: usize,
    pub support_vectors: Matrix,
    /// Dual variables of the support vectors, each in `[0, C]`.
    pub alphas: Vec<f64>,
    /// `+1` / `-1` target of each support vector.
    pub targets: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sum_t a_t y_t` over all training points (zero at dual feasibility).
    pub dual_residual: f64,
}

impl BinaryMachine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        let s: f64 = self
            .support_vectors
            .iter_rows()
            .zip(self.alphas.iter().zip(&self.targets))
            .map(|(sv, (a, y))| a * y * kernel.eval(sv, x))
            .sum();
        s + self.bias
    }

    /// `w = sum a_t y_t x_t`; meaningful for the linear kernel only.
    pub fn linear_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.support_vectors.cols()];
        for (sv, (a, y)) in self.support_vectors.iter_rows().zip(self.alphas.iter().zip(&self.targets)) {
            for (wj, v) in w.iter_mut().zip(sv) {
                *wj += a * y * v;
            }
        }
        w
    }
}

/// Solves one binary problem on the given rows (`y` = +1/-1).
pub fn train_binary(
    x: &Matrix,
    rows: &[usize],
    y: &[f64],
    kernel: Kernel,
    params: &SvmParams,
    positive: usize,
    negative: usize,
) -> BinaryMachine {
    let n = rows.len();
    let has_pos = y.iter().any(|&v| v > 0.0);
    let has_neg = y.iter().any(|&v| v < 0.0);
    if !(has_pos && has_neg) {
        // one side lacks training data: always answer the side that has it
        let bias = if has_pos { 1.0 } else if has_neg { -1.0 } else { 0.0 };
        return BinaryMachine {
            positive,
            negative,
            support_vectors: Matrix::zeros(0, x.cols()),
            alphas: vec![],
            targets: vec![],
            bias,
            iterations: 0,
            converged: true,
            dual_residual: 0.0,
        };
    }

    let c = params.c_reg;
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        let xi = x.row(rows[i]);
        for j in i..n {
            let v = y[i] * y[j] * kernel.eval(xi, x.row(rows[j]));
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    let qd: Vec<f64> = (0..n).map(|i| q[i * n + i]).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        // maximal violating pair
        let (mut i_up, mut g_max) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j_low, mut g_min) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if in_up && v > g_max {
                g_max = v;
                i_up = t;
            }
            if in_low && v < g_min {
                g_min = v;
                j_low = t;
            }
        }
        if i_up == usize::MAX || j_low == usize::MAX || g_max - g_min < params.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_up, j_low);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q[i * n + j];
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (da_i, da_j) = (alpha[i] - old_i, alpha[j] - old_j);
        let (qi, qj) = (&q[i * n..(i + 1) * n], &q[j * n..(j + 1) * n]);
        for t in 0..n {
            grad[t] += qi[t] * da_i + qj[t] * da_j;
        }
    }
    if !converged {
        log::warn!(
            "SMO ({positive} vs {negative}) stopped after {iterations} iterations without reaching tolerance {}",
            params.tolerance
        );
    }

    // bias from free variables, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    BinaryMachine {
        positive,
        negative,
        support_vectors: x.select_rows(&sv.iter().map(|&t| rows[t]).collect::<Vec<_>>()),
        alphas: sv.iter().map(|&t| alpha[t]).collect(),
        targets: sv.iter().map(|&t| y[t]).collect(),
        bias: -rho,
        iterations,
        converged,
        dual_residual: alpha.iter().zip(y).map(|(a, y)| a * y).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub machines: Vec<BinaryMachine>,
    pub kernel: Kernel,
    pub c_reg: f64,
    pub num_classes: usize,
    pub num_features: usize,
}

/// Per-observation one-vs-one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmScore {
    pub votes: Vec<u32>,
    /// Sum of decision values oriented towards each class.
    pub margins: Vec<f64>,
}

impl SvmScore {
    /// `votes + (1 + m / (1 + |m|)) / 2`: integer part ranks by votes, the
    /// fractional part (in `[0, 1)`) by summed margin.
    pub fn combined(&self) -> Vec<f64> {
        self.votes
            .iter()
            .zip(&self.margins)
            .map(|(&v, &m)| v as f64 + (0.5 * (1.0 + m / (1.0 + m.abs()))).min(1.0 - 1e-9))
            .collect()
    }

    /// Most votes, then largest summed margin, then lowest class id.
    pub fn winner(&self) -> usize {
        let mut best = 0;
        for c in 1..self.votes.len() {
            let better = self.votes[c] > self.votes[best]
                || (self.votes[c] == self.votes[best] && self.margins[c] > self.margins[best]);
            if better {
                best = c;
            }
        }
        best
    }
}

/// Default RBF width: `1 / (p * Var)` with `Var` the population variance of
/// all training entries (`1 / p` for constant data).
pub fn default_gamma(x: &Matrix) -> f64 {
    let p = x.cols().max(1) as f64;
    let (_, sd) = crate::dataset::mean_std(x.as_slice().iter().copied());
    let var = sd * sd;
    if var > 1e-24 {
        1.0 / (p * var)
    } else {
        1.0 / p
    }
}

pub fn train_svm_rbf(x: &Matrix, y: &[usize], num_classes: usize, params: &SvmParams) -> Result<SvmModel> {
    let gamma = params.gamma.unwrap_or_else(|| default_gamma(x));
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    train_svm(x, y, num_classes, Kernel::Rbf { gamma }, params)
}

pub fn train_svm(x: &Matrix, y: &[usize], num_classes: usize, kernel: Kernel, params: &SvmParams) -> Result<SvmModel> {
    if x.rows() != y.len() {
        return Err(Error::dim(x.rows(), y.len()));
    }
    if num_classes < 2 {
        return Err(Error::Validation("SVM needs at least 2 classes".into()));
    }
    if !(params.c_reg > 0.0) {
        return Err(Error::Config(format!("C must be positive, got {}", params.c_reg)));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Validation(format!("label {bad} >= class count {num_classes}")));
    }
    let pairs: Vec<(usize, usize)> = (0..num_classes)
        .flat_map(|a| (a + 1..num_classes).map(move |b| (a, b)))
        .collect();
    let machines = pairs
        .par_iter()
        .map(|&(a, b)| {
            let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == a || y[i] == b).collect();
            let t: Vec<f64> = rows.iter().map(|&i| if y[i] == a { 1.0 } else { -1.0 }).collect();
            train_binary(x, &rows, &t, kernel, params, a, b)
        })
        .collect();
    Ok(SvmModel {
        machines,
        kernel,
        c_reg: params.c_reg,
        num_classes,
        num_features: x.cols(),
    })
}

impl SvmModel {
    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    pub fn score_row(&self, x: &[f64]) -> SvmScore {
        let mut votes = vec![0u32; self.num_classes];
        let mut margins = vec![0.0; self.num_classes];
        for m in &self.machines {
            let f = m.decision(&self.kernel, x);
            if f > 0.0 {
                votes[m.positive] += 1;
            } else {
                votes[m.negative] += 1;
            }
            margins[m.positive] += f;
            margins[m.negative] -= f;
        }
        SvmScore { votes, margins }
    }

    pub fn score(&self, x: &Matrix) -> Result<Vec<SvmScore>> {
        if x.cols() != self.num_features {
            return Err(Error::dim(self.num_features, x.cols()));
        }
        Ok(x.iter_rows().map(|r| self.score_row(r)).collect())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.score(x)?.iter().map(SvmScore::winner).collect())
    }
}
