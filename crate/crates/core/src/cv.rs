//! Stratified k-fold grid search over kernel widths and `C`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SlideError};
use crate::exec::Exec;
use crate::kernel::{KernelParams, PairwiseDistances};
use crate::stack::LayerOutputs;
use crate::svm::{distinct_sorted, train_ovr};

/// Fold index per sample. Each class is shuffled with the seeded generator and
/// dealt round-robin, continuing the deal across classes.
pub fn stratified_folds(labels: &[i64], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(SlideError::InvalidParameter(format!("need at least 2 folds, got {folds}")));
    }
    if folds > labels.len() {
        return Err(SlideError::InvalidParameter(format!("{folds} folds for {} samples", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in distinct_sorted(labels) {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub width_index: usize,
    pub c: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub params: KernelParams,
    pub c: f64,
    pub mean_accuracy: f64,
    pub table: Vec<GridPoint>,
}

fn log_width(p: &KernelParams) -> f64 {
    p.sigmas.iter().map(|s| s.ln()).sum::<f64>() + p.sigma.ln()
}

/// Picks the grid point with the best mean validation accuracy. Ties go to
/// the larger widths (summed log-width), then the smaller `C`.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_widths(
    reps: &LayerOutputs,
    labels: &[i64],
    width_grid: &[KernelParams],
    c_grid: &[f64],
    folds: usize,
    seed: u64,
    tol: f64,
    exec: Exec,
) -> Result<CvResult> {
    if labels.len() != reps.n_samples() {
        return Err(SlideError::Shape(format!("{} labels for {} samples", labels.len(), reps.n_samples())));
    }
    let dists = PairwiseDistances::compute(reps, exec);
    cross_validate_distances(&dists, labels, width_grid, c_grid, folds, seed, tol, exec)
}

#[allow(clippy::too_many_arguments)]
pub fn cross_validate_distances(
    dists: &PairwiseDistances,
    labels: &[i64],
    width_grid: &[KernelParams],
    c_grid: &[f64],
    folds: usize,
    seed: u64,
    tol: f64,
    exec: Exec,
) -> Result<CvResult> {
    if width_grid.is_empty() || c_grid.is_empty() {
        return Err(SlideError::InvalidParameter("width and C grids must be non-empty".into()));
    }
    let assignment = stratified_folds(labels, folds, seed)?;
    let classes = distinct_sorted(labels);
    if classes.len() < 2 {
        return Err(SlideError::SingleClass(classes[0]));
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != f).collect();
            let valid: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
            (train, valid)
        })
        .collect();
    for (f, (train, _)) in splits.iter().enumerate() {
        for &class in &classes {
            if !train.iter().any(|&i| labels[i] == class) {
                return Err(SlideError::ClassAbsentFromFold { class, fold: f });
            }
        }
    }

    let n_points = width_grid.len() * c_grid.len();
    let jobs = n_points * folds;
    let fold_acc = exec.try_map(jobs, |job| -> Result<f64> {
        let (point, f) = (job / folds, job % folds);
        let (w, c) = (point / c_grid.len(), point % c_grid.len());
        let (train, valid) = &splits[f];
        let params = &width_grid[w];
        let k_train = dists.gram_block(params, train, train)?;
        let train_labels: Vec<i64> = train.iter().map(|&i| labels[i]).collect();
        let model = train_ovr(&k_train, &train_labels, c_grid[c], tol, Exec::Sequential)?;
        let k_valid = dists.gram_block(params, valid, train)?;
        let pred = model.predict(&k_valid)?;
        let correct = pred.iter().zip(valid).filter(|(p, &i)| **p == labels[i]).count();
        Ok(correct as f64 / valid.len() as f64)
    })?;

    let table: Vec<GridPoint> = (0..n_points)
        .map(|point| {
            let acc = fold_acc[point * folds..(point + 1) * folds].iter().sum::<f64>() / folds as f64;
            GridPoint { width_index: point / c_grid.len(), c: c_grid[point % c_grid.len()], mean_accuracy: acc }
        })
        .collect();

    let mut best = 0;
    for k in 1..table.len() {
        let (a, b) = (&table[k], &table[best]);
        let better = a.mean_accuracy > b.mean_accuracy
            || (a.mean_accuracy == b.mean_accuracy
                && (log_width(&width_grid[a.width_index]) > log_width(&width_grid[b.width_index])
                    || (log_width(&width_grid[a.width_index]) == log_width(&width_grid[b.width_index]) && a.c < b.c)));
        if better {
            best = k;
        }
    }
    let chosen = &table[best];
    Ok(CvResult {
        params: width_grid[chosen.width_index].clone(),
        c: chosen.c,
        mean_accuracy: chosen.mean_accuracy,
        table,
    })
}

/// `base` with every layer width multiplied by each factor in turn.
pub fn scaled_grid(base: &KernelParams, factors: &[f64]) -> Result<Vec<KernelParams>> {
    factors
        .iter()
        .map(|f| KernelParams::with_global(base.sigma, base.sigmas.iter().map(|s| s * f).collect()))
        .collect()
}
