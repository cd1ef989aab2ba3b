//! End-to-end workflows shared by the CLI and the integration tests.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::corruption::RNG_ALGORITHM;
use crate::cv::{cross_validate_widths, scaled_grid, CvResult};
use crate::denoise::DataMatrix;
use crate::error::{Result, SlideError};
use crate::exec::Exec;
use crate::kernel::{gram, median_widths, self_gram, KernelParams};
use crate::model_file::{Provenance, SlideModel, StoredSvm};
use crate::stack::{train_stack, LayerOutputs, StackConfig};
use crate::svm::{distinct_sorted, train_ovr, DEFAULT_TOL};
use crate::widths::{learn_widths, WidthLearning, WidthLearningConfig};

/// Multipliers applied to the median-heuristic widths in grid mode.
pub const DEFAULT_WIDTH_FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_C_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

pub fn train_features(x: &DataMatrix, cfg: &StackConfig, seed: u64) -> Result<(SlideModel, LayerOutputs)> {
    let (stack, outputs) = train_stack(x, cfg)?;
    let mut params = BTreeMap::new();
    params.insert("p".into(), cfg.p.to_string());
    params.insert("t".into(), cfg.t.to_string());
    params.insert("layers".into(), cfg.layers.to_string());
    params.insert("eps".into(), cfg.eps.to_string());
    let provenance = Provenance {
        seed,
        rng: RNG_ALGORITHM.into(),
        created_by: format!("slide {}", env!("CARGO_PKG_VERSION")),
        params,
    };
    Ok((SlideModel { stack, kernel: None, svm: None, provenance }, outputs))
}

#[derive(Debug, Clone, PartialEq)]
pub enum WidthMode {
    Median,
    Grid { factors: Vec<f64>, c_grid: Vec<f64>, folds: usize },
    Learn(WidthLearningConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub c: f64,
    pub tol: f64,
    pub widths: WidthMode,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { c: 1.0, tol: DEFAULT_TOL, widths: WidthMode::Median, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: KernelParams,
    pub c: f64,
    pub n_support: usize,
    pub cv: Option<CvResult>,
    pub learning: Option<WidthLearning>,
}

/// Chooses kernel widths, trains the one-vs-rest SVM and attaches both to
/// `model`. The SVM keeps only its support vectors, as raw inputs.
pub fn fit_svm(
    model: &mut SlideModel,
    x: &DataMatrix,
    labels: &[i64],
    opts: &FitOptions,
    exec: Exec,
) -> Result<FitReport> {
    if labels.len() != x.n() {
        return Err(SlideError::Shape(format!("{} labels for {} samples", labels.len(), x.n())));
    }
    let reps = model.stack.forward(x.as_matrix())?;
    let base = median_widths(&reps, opts.seed);
    let n_classes = distinct_sorted(labels).len();

    let (params, c, cv, learning) = match &opts.widths {
        WidthMode::Median => (base, opts.c, None, None),
        WidthMode::Grid { factors, c_grid, folds } => {
            let grid = scaled_grid(&base, factors)?;
            let r = cross_validate_widths(&reps, labels, &grid, c_grid, *folds, opts.seed, opts.tol, exec)?;
            (r.params.clone(), r.c, Some(r), None)
        }
        WidthMode::Learn(cfg) => {
            if n_classes > 2 {
                return Err(SlideError::UnsupportedLabels(format!(
                    "kernel width learning supports binary problems only and was not applied to multi-class data; \
                     got {n_classes} classes, use --widths grid or median"
                )));
            }
            let out = learn_widths(&reps, labels, &base, cfg, exec)?;
            (out.params.clone(), opts.c, None, Some(out))
        }
    };

    let k = self_gram(&reps, &params, exec)?;
    let ovr = train_ovr(&k, labels, c, opts.tol, exec)?;
    let keep = ovr.support_union();
    let stored = StoredSvm {
        model: ovr.restrict(&keep),
        support_inputs: x.as_matrix().select_columns(&keep),
        c,
        tol: opts.tol,
    };
    model.kernel = Some(params.clone());
    model.svm = Some(stored);
    model.provenance.seed = opts.seed;
    model.provenance.params.insert("c".into(), c.to_string());
    model.provenance.params.insert("widths".into(), format!("{:?}", params.sigmas));
    Ok(FitReport { params, c, n_support: keep.len(), cv, learning })
}

/// Per-class decision scores (`n x classes`).
pub fn decision_scores(model: &SlideModel, x: &DMatrix<f64>, exec: Exec) -> Result<DMatrix<f64>> {
    let (kernel, svm) = match (&model.kernel, &model.svm) {
        (Some(k), Some(s)) => (k, s),
        _ => return Err(SlideError::InvalidParameter("model has no trained SVM; run fit-svm first".into())),
    };
    let test = model.stack.forward(x)?;
    let support = model.stack.forward(&svm.support_inputs)?;
    let k = gram(&test, &support, kernel, exec)?;
    svm.model.scores(&k)
}

pub fn predict(model: &SlideModel, x: &DMatrix<f64>, exec: Exec) -> Result<Vec<i64>> {
    let (kernel, svm) = match (&model.kernel, &model.svm) {
        (Some(k), Some(s)) => (k, s),
        _ => return Err(SlideError::InvalidParameter("model has no trained SVM; run fit-svm first".into())),
    };
    let test = model.stack.forward(x)?;
    let support = model.stack.forward(&svm.support_inputs)?;
    let k = gram(&test, &support, kernel, exec)?;
    svm.model.predict(&k)
}
