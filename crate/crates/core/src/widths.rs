//! Gradient-based learning of the per-layer kernel widths.
//!
//! The objective is the radius-margin product `R^2 ||w||^2` of an L2-soft-margin
//! SVM, which is a hard-margin SVM on the modified kernel `K + I/C`:
//!
//! * `||w||^2` is twice the optimal dual value, and by the envelope theorem
//!   `d||w||^2 = -sum_ij a_i a_j y_i y_j dK_ij`.
//! * `R^2` is the squared radius of the smallest ball enclosing the mapped
//!   points, `max_b sum_i b_i K_ii - b^T K b` over the simplex, with
//!   `dR^2 = sum_i b_i dK_ii - b^T dK b`.
//!
//! Widths are optimized in log space with backtracking, so they stay positive.

use nalgebra::DMatrix;

use crate::error::{Result, SlideError};
use crate::exec::Exec;
use crate::kernel::{KernelParams, PairwiseDistances};
use crate::stack::LayerOutputs;
use crate::svm::{distinct_sorted, solve_qp, QpOptions, QpProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthLearningConfig {
    /// Soft-margin constant of the L2-SVM inside the criterion.
    pub c: f64,
    pub initial_step: f64,
    pub max_halvings: usize,
    pub max_iter: usize,
    /// Stop once the relative criterion decrease falls below this.
    pub tol: f64,
    /// KKT tolerance of the inner QP solves.
    pub solver_tol: f64,
}

impl Default for WidthLearningConfig {
    fn default() -> Self {
        WidthLearningConfig { c: 1.0, initial_step: 0.1, max_halvings: 20, max_iter: 50, tol: 1e-4, solver_tol: 1e-8 }
    }
}

/// Value of the criterion and the pieces it was built from.
#[derive(Debug, Clone)]
pub struct RadiusMargin {
    pub value: f64,
    pub radius2: f64,
    pub margin2: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gram: DMatrix<f64>,
}

/// Maps two class ids onto -1 / +1 (smaller id is -1).
pub fn binary_targets(labels: &[i64]) -> Result<Vec<f64>> {
    let classes = distinct_sorted(labels);
    match classes.len() {
        0 => Err(SlideError::EmptyDataset("no labels".into())),
        1 => Err(SlideError::SingleClass(classes[0])),
        2 => Ok(labels.iter().map(|&l| if l == classes[1] { 1.0 } else { -1.0 }).collect()),
        k => Err(SlideError::UnsupportedLabels(format!(
            "kernel width learning is binary only; got {k} classes (use cross-validation for multiclass data)"
        ))),
    }
}

/// Evaluates `R^2 ||w||^2` for the given widths.
pub fn radius_margin(
    dists: &PairwiseDistances,
    y: &[f64],
    params: &KernelParams,
    cfg: &WidthLearningConfig,
) -> Result<RadiusMargin> {
    let n = dists.n_samples();
    if y.len() != n {
        return Err(SlideError::Shape(format!("{} labels for {n} samples", y.len())));
    }
    let mut k = dists.gram(params)?;
    let ridge = 1.0 / cfg.c;
    for i in 0..n {
        k[(i, i)] += ridge;
    }

    let svm = solve_qp(
        &QpProblem { kernel: &k, linear: vec![-1.0; n], y: y.to_vec(), c: f64::INFINITY, alpha0: vec![0.0; n] },
        QpOptions::new(cfg.solver_tol, n),
    )?;
    // dual value sum(a) - 0.5 a^T H a = -objective, and ||w||^2 = 2 * dual value
    let margin2 = -2.0 * svm.objective(&vec![-1.0; n]);

    let diag: Vec<f64> = (0..n).map(|i| -k[(i, i)]).collect();
    let ball = {
        let mut k2 = k.clone();
        k2 *= 2.0;
        solve_qp(
            &QpProblem { kernel: &k2, linear: diag.clone(), y: vec![1.0; n], c: 1.0, alpha0: vec![1.0 / n as f64; n] },
            QpOptions::new(cfg.solver_tol, n),
        )?
    };
    let radius2 = -ball.objective(&diag);

    Ok(RadiusMargin {
        value: radius2 * margin2,
        radius2,
        margin2,
        alpha: svm.alpha,
        beta: ball.alpha,
        gram: k,
    })
}

/// Gradient of the criterion with respect to `log sigma_t`.
pub fn radius_margin_log_gradient(
    dists: &PairwiseDistances,
    y: &[f64],
    params: &KernelParams,
    rm: &RadiusMargin,
) -> Vec<f64> {
    let n = dists.n_samples();
    let g = params.sigma * params.sigma;
    let ridge_free = |i: usize, j: usize| if i == j { 1.0 } else { rm.gram[(i, j)] };
    params
        .sigmas
        .iter()
        .zip(&dists.layers)
        .map(|(s, d2)| {
            // dK_ij / dlog(sigma_t) = K_ij * 2 d2_ij / (sigma^2 sigma_t^2); the ridge and
            // the unit diagonal do not depend on the widths.
            let scale = 2.0 / (g * s * s);
            let mut dmargin = 0.0;
            let mut dradius = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dk = ridge_free(i, j) * d2[(i, j)] * scale;
                    dmargin -= rm.alpha[i] * rm.alpha[j] * y[i] * y[j] * dk;
                    dradius -= rm.beta[i] * rm.beta[j] * dk;
                }
            }
            rm.radius2 * dmargin + rm.margin2 * dradius
        })
        .collect()
}

/// Central differences of the criterion in `log sigma_t`, retraining at each
/// probe. Used to cross-check [`radius_margin_log_gradient`].
pub fn radius_margin_log_gradient_fd(
    dists: &PairwiseDistances,
    y: &[f64],
    params: &KernelParams,
    cfg: &WidthLearningConfig,
    h: f64,
) -> Result<Vec<f64>> {
    (0..params.n_layers())
        .map(|t| {
            let probe = |sign: f64| -> Result<f64> {
                let mut p = params.clone();
                p.sigmas[t] *= (sign * h).exp();
                Ok(radius_margin(dists, y, &p, cfg)?.value)
            };
            Ok((probe(1.0)? - probe(-1.0)?) / (2.0 * h))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Stationary,
    Converged,
    StepUnderflow,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub criterion: f64,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthLearning {
    pub params: KernelParams,
    pub criterion: f64,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
}

/// Descends `R^2 ||w||^2` over the per-layer widths. Only accepted steps
/// enter the trace, so its criterion column never increases.
pub fn learn_widths(
    reps: &LayerOutputs,
    labels: &[i64],
    params0: &KernelParams,
    cfg: &WidthLearningConfig,
    exec: Exec,
) -> Result<WidthLearning> {
    if labels.len() != reps.n_samples() {
        return Err(SlideError::Shape(format!("{} labels for {} samples", labels.len(), reps.n_samples())));
    }
    let y = binary_targets(labels)?;
    let dists = PairwiseDistances::compute(reps, exec);
    learn_widths_from_distances(&dists, &y, params0, cfg)
}

pub fn learn_widths_from_distances(
    dists: &PairwiseDistances,
    y: &[f64],
    params0: &KernelParams,
    cfg: &WidthLearningConfig,
) -> Result<WidthLearning> {
    if params0.n_layers() != dists.n_layers() {
        return Err(SlideError::Shape(format!(
            "{} kernel widths for {} layers",
            params0.n_layers(),
            dists.n_layers()
        )));
    }
    let mut params = params0.clone();
    let mut current = radius_margin(dists, y, &params, cfg)?;
    let mut trace = vec![TraceRow { iteration: 0, criterion: current.value, sigmas: params.sigmas.clone() }];

    let mut stop = StopReason::MaxIterations;
    for iteration in 1..=cfg.max_iter {
        let grad = radius_margin_log_gradient(dists, y, &params, &current);
        // relative gradient: d log T / d log sigma
        let dir: Vec<f64> = grad.iter().map(|g| g / current.value).collect();
        if dir.iter().all(|g| g.abs() < 1e-12) {
            stop = StopReason::Stationary;
            break;
        }
        let mut step = cfg.initial_step;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let sigmas = params.sigmas.iter().zip(&dir).map(|(s, g)| s * (-step * g).exp()).collect();
            let cand = KernelParams::with_global(params.sigma, sigmas)?;
            let rm = radius_margin(dists, y, &cand, cfg)?;
            if rm.value < current.value {
                accepted = Some((cand, rm));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, rm)) = accepted else {
            stop = StopReason::StepUnderflow;
            break;
        };
        let improvement = (current.value - rm.value) / current.value;
        params = cand;
        current = rm;
        trace.push(TraceRow { iteration, criterion: current.value, sigmas: params.sigmas.clone() });
        if improvement < cfg.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(WidthLearning { params, criterion: current.value, trace, stop })
}
