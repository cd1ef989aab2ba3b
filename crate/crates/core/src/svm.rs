//! SMO over precomputed Gram matrices.
//!
//! The solver handles the general box-and-equality constrained quadratic
//!
//! ```text
//! min_a  0.5 a^T Q a + p^T a    s.t.  y^T a = const,  0 <= a_i <= C
//! ```
//!
//! with `Q_ij = y_i y_j K_ij`, updating two variables per step. The working
//! pair is the maximal violating pair. Both the C-SVM dual and the enclosing
//! ball problem used by width learning are instances of it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlideError};
use crate::exec::Exec;

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;

/// A quadratic subproblem handed to [`solve_qp`].
pub(crate) struct QpProblem<'a> {
    pub kernel: &'a DMatrix<f64>,
    pub linear: Vec<f64>,
    pub y: Vec<f64>,
    pub c: f64,
    pub alpha0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub alpha: Vec<f64>,
    pub grad: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Value of `0.5 a^T Q a + p^T a` after each step, when recorded.
    pub trace: Option<Vec<f64>>,
    pub saw_nonpsd_pair: bool,
}

impl QpSolution {
    pub fn objective(&self, linear: &[f64]) -> f64 {
        objective_from_grad(&self.alpha, &self.grad, linear)
    }
}

fn objective_from_grad(alpha: &[f64], grad: &[f64], linear: &[f64]) -> f64 {
    // grad = Q a + p, so 0.5 a^T Q a + p^T a = 0.5 a^T (grad + p)
    0.5 * alpha.iter().zip(grad).zip(linear).map(|((a, g), p)| a * (g + p)).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub record_trace: bool,
}

impl QpOptions {
    pub fn new(tol: f64, n: usize) -> Self {
        QpOptions { tol, max_iter: (1000 * n).max(100_000), record_trace: false }
    }
}

pub(crate) fn solve_qp(prob: &QpProblem, opts: QpOptions) -> Result<QpSolution> {
    let k = prob.kernel;
    let n = prob.y.len();
    let y = &prob.y;
    let c = prob.c;
    let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];

    let mut alpha = prob.alpha0.clone();
    let mut grad = prob.linear.clone();
    for (j, &aj) in alpha.iter().enumerate() {
        if aj != 0.0 {
            for (i, g) in grad.iter_mut().enumerate() {
                *g += q(i, j) * aj;
            }
        }
    }

    let mut trace = opts.record_trace.then(|| vec![objective_from_grad(&alpha, &grad, &prob.linear)]);
    let mut saw_nonpsd_pair = false;
    let mut iterations = 0;
    loop {
        // maximal violating pair
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(SlideError::NonConvergence { iterations, violation: gmax - gmin });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
                saw_nonpsd_pair = true;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = old_i - old_j;
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
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
                saw_nonpsd_pair = true;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = old_i + old_j;
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
        let (di, dj) = (ai - old_i, aj - old_j);
        alpha[i] = ai;
        alpha[j] = aj;
        for (t, g) in grad.iter_mut().enumerate() {
            // one rounding for the pair keeps the update symmetric in (i, j)
            *g += q(t, i) * di + q(t, j) * dj;
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(objective_from_grad(&alpha, &grad, &prob.linear));
        }
    }

    let rho = compute_rho(&alpha, &grad, y, c);
    Ok(QpSolution { alpha, grad, rho, iterations, trace, saw_nonpsd_pair })
}

fn compute_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    for t in 0..alpha.len() {
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
            free_sum += yg;
        }
    }
    if n_free > 0 {
        free_sum / n_free as f64
    } else {
        0.5 * (ub + lb)
    }
}

fn check_gram(gram: &DMatrix<f64>, n: usize) -> Result<()> {
    if gram.shape() != (n, n) {
        return Err(SlideError::Shape(format!(
            "gram matrix is {}x{}, expected {n}x{n}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let scale = gram.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        if !gram[(i, i)].is_finite() || gram[(i, i)] < -1e-8 * scale {
            log::warn!("gram matrix has a negative or non-finite diagonal entry at {i}");
        }
        for j in 0..i {
            if (gram[(i, j)] - gram[(j, i)]).abs() > 1e-8 * scale {
                return Err(SlideError::InvalidParameter(format!("gram matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// A trained two-class machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    /// Dual coefficients, one per training sample.
    pub alphas: Vec<f64>,
    /// `+1` / `-1` per training sample.
    pub y: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub sv_indices: Vec<usize>,
    /// `(negative class, positive class)` when trained from class ids.
    pub label_map: Option<(i64, i64)>,
}

/// Trains a C-SVM on `±1` labels.
pub fn smo_train(gram: &DMatrix<f64>, labels: &[f64], c: f64, tol: f64) -> Result<BinarySvm> {
    Ok(smo_train_inner(gram, labels, c, tol, false)?.0)
}

/// As [`smo_train`], also returning the dual objective (maximization form)
/// after every step.
pub fn smo_train_traced(
    gram: &DMatrix<f64>,
    labels: &[f64],
    c: f64,
    tol: f64,
) -> Result<(BinarySvm, Vec<f64>)> {
    smo_train_inner(gram, labels, c, tol, true)
}

fn validate_binary(labels: &[f64]) -> Result<()> {
    if let Some(v) = labels.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SlideError::UnsupportedLabels(format!("expected +1/-1 labels, found {v}")));
    }
    if !labels.contains(&1.0) {
        return Err(SlideError::SingleClass(-1));
    }
    if !labels.contains(&-1.0) {
        return Err(SlideError::SingleClass(1));
    }
    Ok(())
}

pub(crate) fn smo_train_inner(
    gram: &DMatrix<f64>,
    labels: &[f64],
    c: f64,
    tol: f64,
    record: bool,
) -> Result<(BinarySvm, Vec<f64>)> {
    let n = labels.len();
    validate_binary(labels)?;
    check_gram(gram, n)?;
    if c.is_nan() || c <= 0.0 {
        return Err(SlideError::InvalidParameter(format!("C must be positive, got {c}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(SlideError::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let prob = QpProblem { kernel: gram, linear: vec![-1.0; n], y: labels.to_vec(), c, alpha0: vec![0.0; n] };
    let mut opts = QpOptions::new(tol, n);
    opts.record_trace = record;
    let sol = solve_qp(&prob, opts)?;
    log::debug!("smo finished after {} iterations", sol.iterations);
    if sol.saw_nonpsd_pair {
        log::warn!("gram matrix is not positive semidefinite; proceeding");
    }
    let trace = sol.trace.clone().unwrap_or_default().into_iter().map(|f| -f).collect();
    let sv_indices = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok((
        BinarySvm { alphas: sol.alpha, y: labels.to_vec(), bias: -sol.rho, c, sv_indices, label_map: None },
        trace,
    ))
}

impl BinarySvm {
    /// Trains on two integer class ids; the larger id becomes `+1`.
    pub fn fit_classes(gram: &DMatrix<f64>, labels: &[i64], c: f64, tol: f64) -> Result<BinarySvm> {
        let classes = distinct_sorted(labels);
        match classes.len() {
            0 => return Err(SlideError::EmptyDataset("no labels".into())),
            1 => return Err(SlideError::SingleClass(classes[0])),
            2 => {}
            k => return Err(SlideError::UnsupportedLabels(format!("{k} classes; a binary machine needs exactly 2"))),
        }
        let y: Vec<f64> = labels.iter().map(|&l| if l == classes[1] { 1.0 } else { -1.0 }).collect();
        let mut m = smo_train(gram, &y, c, tol)?;
        m.label_map = Some((classes[0], classes[1]));
        Ok(m)
    }

    pub fn n_train(&self) -> usize {
        self.alphas.len()
    }

    /// Dual objective `sum a - 0.5 sum a_i a_j y_i y_j K_ij`.
    pub fn dual_objective(&self, gram: &DMatrix<f64>) -> f64 {
        let n = self.alphas.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += self.alphas[i] * self.alphas[j] * self.y[i] * self.y[j] * gram[(i, j)];
            }
        }
        self.alphas.iter().sum::<f64>() - 0.5 * quad
    }

    /// `sum_i a_i y_i k_i + b`.
    pub fn decision(&self, k_row: &[f64]) -> Result<f64> {
        if k_row.len() != self.alphas.len() {
            return Err(SlideError::Shape(format!(
                "kernel row has {} entries, model has {} training samples",
                k_row.len(),
                self.alphas.len()
            )));
        }
        Ok(self.decision_unchecked(k_row))
    }

    fn decision_unchecked(&self, k_row: &[f64]) -> f64 {
        let s: f64 = self.sv_indices.iter().map(|&i| self.alphas[i] * self.y[i] * k_row[i]).sum();
        s + self.bias
    }

    pub fn predict_class(&self, k_row: &[f64]) -> Result<i64> {
        let (neg, pos) = self.label_map.unwrap_or((-1, 1));
        Ok(if self.decision(k_row)? > 0.0 { pos } else { neg })
    }

    /// Largest KKT residual over the training set.
    pub fn kkt_violation(&self, gram: &DMatrix<f64>) -> f64 {
        let n = self.alphas.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| gram[(i, j)]).collect();
            let margin = self.y[i] * self.decision_unchecked(&row);
            let a = self.alphas[i];
            let v = if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= self.c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Copy restricted to the given training samples (which must include
    /// every support vector), re-indexed to that order.
    pub fn restrict(&self, keep: &[usize]) -> BinarySvm {
        let alphas: Vec<f64> = keep.iter().map(|&i| self.alphas[i]).collect();
        let y: Vec<f64> = keep.iter().map(|&i| self.y[i]).collect();
        let sv_indices = (0..keep.len()).filter(|&k| alphas[k] > 0.0).collect();
        BinarySvm { alphas, y, bias: self.bias, c: self.c, sv_indices, label_map: self.label_map }
    }
}

pub fn decision(model: &BinarySvm, k_row: &[f64]) -> Result<f64> {
    model.decision(k_row)
}

pub(crate) fn distinct_sorted(labels: &[i64]) -> Vec<i64> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// One machine per class, each trained class-vs-rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrModel {
    pub machines: Vec<BinarySvm>,
    pub classes: Vec<i64>,
}

pub fn train_ovr(gram: &DMatrix<f64>, labels: &[i64], c: f64, tol: f64, exec: Exec) -> Result<OvrModel> {
    let classes = distinct_sorted(labels);
    match classes.len() {
        0 => return Err(SlideError::EmptyDataset("no labels".into())),
        1 => return Err(SlideError::SingleClass(classes[0])),
        _ => {}
    }
    let machines = exec.try_map(classes.len(), |k| -> Result<BinarySvm> {
        let y: Vec<f64> = labels.iter().map(|&l| if l == classes[k] { 1.0 } else { -1.0 }).collect();
        let mut m = smo_train(gram, &y, c, tol)?;
        m.label_map = Some((i64::MIN, classes[k]));
        Ok(m)
    })?;
    Ok(OvrModel { machines, classes })
}

impl OvrModel {
    pub fn n_train(&self) -> usize {
        self.machines[0].n_train()
    }

    /// Decision scores, one row per test sample and one column per class.
    pub fn scores(&self, k_rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n_train = self.n_train();
        if k_rows.ncols() != n_train {
            return Err(SlideError::Shape(format!(
                "kernel rows have {} columns, model has {n_train} training samples",
                k_rows.ncols()
            )));
        }
        let mut out = DMatrix::zeros(k_rows.nrows(), self.classes.len());
        let mut row = vec![0.0; n_train];
        for r in 0..k_rows.nrows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = k_rows[(r, j)];
            }
            for (k, m) in self.machines.iter().enumerate() {
                out[(r, k)] = m.decision_unchecked(&row);
            }
        }
        Ok(out)
    }

    /// Highest score wins; ties go to the lowest class id.
    pub fn predict(&self, k_rows: &DMatrix<f64>) -> Result<Vec<i64>> {
        let scores = self.scores(k_rows)?;
        Ok((0..scores.nrows())
            .map(|r| {
                let mut best = 0;
                for k in 1..self.classes.len() {
                    if scores[(r, k)] > scores[(r, best)] {
                        best = k;
                    }
                }
                self.classes[best]
            })
            .collect())
    }

    /// Training samples that are a support vector of at least one machine.
    pub fn support_union(&self) -> Vec<usize> {
        let n = self.n_train();
        (0..n).filter(|&i| self.machines.iter().any(|m| m.alphas[i] > 0.0)).collect()
    }

    pub fn restrict(&self, keep: &[usize]) -> OvrModel {
        OvrModel { machines: self.machines.iter().map(|m| m.restrict(keep)).collect(), classes: self.classes.clone() }
    }
}

pub fn predict_ovr(model: &OvrModel, k_rows: &DMatrix<f64>) -> Result<Vec<i64>> {
    model.predict(k_rows)
}
