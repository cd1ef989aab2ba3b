//! Composite multi-layer RBF kernel.
//!
//! ```text
//! k(x_i, x_j) = exp( -(1/sigma^2) * sum_t ||h^t_i - h^t_j||^2 / sigma_t^2 )
//! ```
//!
//! One width per representation layer, plus a global width that stays at 1
//! unless overridden. With a single layer this is the ordinary Gaussian kernel.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlideError};
use crate::exec::Exec;
use crate::stack::LayerOutputs;

/// Subsample size used by the median heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma: f64,
    pub sigmas: Vec<f64>,
}

impl KernelParams {
    /// Per-layer widths with the global width fixed at 1.
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        Self::with_global(1.0, sigmas)
    }

    pub fn with_global(sigma: f64, sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(SlideError::InvalidParameter("at least one layer width is required".into()));
        }
        for (t, &s) in std::iter::once(&sigma).chain(sigmas.iter()).enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                let name = if t == 0 { "sigma".to_string() } else { format!("sigma_{}", t - 1) };
                return Err(SlideError::InvalidParameter(format!("{name} must be positive and finite, got {s}")));
            }
        }
        Ok(KernelParams { sigma, sigmas })
    }

    pub fn n_layers(&self) -> usize {
        self.sigmas.len()
    }

    /// `1 / (sigma^2 sigma_t^2)` for every layer.
    fn inverse_scales(&self) -> Vec<f64> {
        let g = self.sigma * self.sigma;
        self.sigmas.iter().map(|s| 1.0 / (g * s * s)).collect()
    }
}

/// Per-layer squared distances between two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDistances(pub Vec<f64>);

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn layer_sq_distances(reps_i: &[&[f64]], reps_j: &[&[f64]]) -> Result<LayerDistances> {
    if reps_i.len() != reps_j.len() {
        return Err(SlideError::Shape(format!("{} layers vs {} layers", reps_i.len(), reps_j.len())));
    }
    let mut out = Vec::with_capacity(reps_i.len());
    for (t, (a, b)) in reps_i.iter().zip(reps_j).enumerate() {
        if a.len() != b.len() {
            return Err(SlideError::Shape(format!("layer {t}: dimension {} vs {}", a.len(), b.len())));
        }
        out.push(sq_dist(a, b));
    }
    Ok(LayerDistances(out))
}

fn check_layers(n: usize, params: &KernelParams) -> Result<()> {
    if n != params.n_layers() {
        return Err(SlideError::Shape(format!("{n} layers but {} kernel widths", params.n_layers())));
    }
    Ok(())
}

#[inline]
fn kernel_value(d2: impl Iterator<Item = f64>, inv: &[f64]) -> f64 {
    let e: f64 = d2.zip(inv).map(|(d, w)| d * w).sum();
    (-e).exp()
}

pub fn composite_kernel(dists: &LayerDistances, params: &KernelParams) -> Result<f64> {
    check_layers(dists.0.len(), params)?;
    Ok(kernel_value(dists.0.iter().copied(), &params.inverse_scales()))
}

/// `dk/dsigma_t = k * 2 d2_t / (sigma^2 sigma_t^3)`.
pub fn kernel_width_gradient(dists: &LayerDistances, params: &KernelParams) -> Result<Vec<f64>> {
    let k = composite_kernel(dists, params)?;
    let g = params.sigma * params.sigma;
    Ok(dists.0.iter().zip(&params.sigmas).map(|(d2, s)| k * 2.0 * d2 / (g * s * s * s)).collect())
}

fn column(m: &DMatrix<f64>, i: usize) -> &[f64] {
    let d = m.nrows();
    &m.as_slice()[i * d..(i + 1) * d]
}

fn check_pair(a: &LayerOutputs, b: &LayerOutputs) -> Result<()> {
    if a.n_layers() != b.n_layers() {
        return Err(SlideError::Shape(format!("{} layers vs {} layers", a.n_layers(), b.n_layers())));
    }
    for (t, (x, y)) in a.reps.iter().zip(&b.reps).enumerate() {
        if x.nrows() != y.nrows() {
            return Err(SlideError::Shape(format!("layer {t}: dimension {} vs {}", x.nrows(), y.nrows())));
        }
    }
    Ok(())
}

/// Cross Gram matrix `G_ij = k(a_i, b_j)`, assembled row by row.
pub fn gram(a: &LayerOutputs, b: &LayerOutputs, params: &KernelParams, exec: Exec) -> Result<DMatrix<f64>> {
    check_pair(a, b)?;
    check_layers(a.n_layers(), params)?;
    let inv = params.inverse_scales();
    let (na, nb) = (a.n_samples(), b.n_samples());
    let rows = exec.map(na, |i| {
        (0..nb)
            .map(|j| {
                let d2 = a.reps.iter().zip(&b.reps).map(|(ra, rb)| sq_dist(column(ra, i), column(rb, j)));
                kernel_value(d2, &inv)
            })
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(na, nb, |i, j| rows[i][j]))
}

/// Symmetric Gram matrix of a set with itself; unit diagonal.
pub fn self_gram(a: &LayerOutputs, params: &KernelParams, exec: Exec) -> Result<DMatrix<f64>> {
    let dists = PairwiseDistances::compute(a, exec);
    dists.gram(params)
}

/// Per-layer `n x n` squared distance matrices of one sample set. Computing
/// these once lets many width settings share the pairwise work.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDistances {
    pub layers: Vec<DMatrix<f64>>,
}

impl PairwiseDistances {
    pub fn compute(reps: &LayerOutputs, exec: Exec) -> Self {
        let n = reps.n_samples();
        let layers = reps
            .reps
            .iter()
            .map(|h| {
                let rows = exec.map(n, |i| (i..n).map(|j| sq_dist(column(h, i), column(h, j))).collect::<Vec<_>>());
                let mut m = DMatrix::zeros(n, n);
                for (i, row) in rows.into_iter().enumerate() {
                    for (off, v) in row.into_iter().enumerate() {
                        m[(i, i + off)] = v;
                        m[(i + off, i)] = v;
                    }
                }
                m
            })
            .collect();
        PairwiseDistances { layers }
    }

    pub fn n_samples(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn gram(&self, params: &KernelParams) -> Result<DMatrix<f64>> {
        check_layers(self.n_layers(), params)?;
        let inv = params.inverse_scales();
        let n = self.n_samples();
        Ok(DMatrix::from_fn(n, n, |i, j| kernel_value(self.layers.iter().map(|m| m[(i, j)]), &inv)))
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> PairwiseDistances {
        PairwiseDistances {
            layers: self.layers.iter().map(|m| m.select_rows(rows).select_columns(cols)).collect(),
        }
    }

    /// Gram matrix between `rows` and `cols` of the stored set.
    pub fn gram_block(&self, params: &KernelParams, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        check_layers(self.n_layers(), params)?;
        let inv = params.inverse_scales();
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            kernel_value(self.layers.iter().map(|m| m[(rows[i], cols[j])]), &inv)
        }))
    }
}

/// Median-heuristic widths: per layer, the median pairwise Euclidean distance
/// over a seeded subsample of at most [`MEDIAN_SUBSAMPLE`] points. A layer
/// whose median is zero gets width 1.
pub fn median_widths(reps: &LayerOutputs, seed: u64) -> KernelParams {
    median_widths_capped(reps, MEDIAN_SUBSAMPLE, seed)
}

pub fn median_widths_capped(reps: &LayerOutputs, cap: usize, seed: u64) -> KernelParams {
    let n = reps.n_samples();
    let idx: Vec<usize> = if n > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, cap).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let sigmas = reps
        .reps
        .iter()
        .map(|h| {
            let mut dists = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    dists.push(sq_dist(column(h, i), column(h, j)).sqrt());
                }
            }
            match median(&mut dists) {
                Some(m) if m > 0.0 && m.is_finite() => m,
                _ => 1.0,
            }
        })
        .collect();
    KernelParams { sigma: 1.0, sigmas }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
