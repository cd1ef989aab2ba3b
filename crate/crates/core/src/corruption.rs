//! Explicit finite-`m` corruption: the sampled counterpart of [`crate::denoise`].
//!
//! Every corrupted copy `j` draws its mask from its own ChaCha8 stream
//! (`seed_from_u64(seed)`, stream `j`), so a copy's mask does not depend on how
//! copies are scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoise::{
    augment, mirror_upper, solve_denoiser, solve_lide, validate_eps, validate_survival, DataMatrix,
    DenoiseLayer,
};
use crate::error::{Result, SlideError};
use crate::exec::Exec;

/// Identifier written into run reports so masks can be replayed elsewhere.
pub const RNG_ALGORITHM: &str = "chacha8-seed_from_u64-stream_per_copy";

/// Copies accumulated per work unit. Fixed so results do not depend on threads.
const COPY_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    pub p: f64,
    pub m: usize,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn new(p: f64, m: usize, seed: u64) -> Result<Self> {
        validate_survival(p)?;
        if m == 0 {
            return Err(SlideError::InvalidParameter("number of copies m must be at least 1".into()));
        }
        Ok(CorruptionConfig { p, m, seed })
    }
}

fn copy_rng(seed: u64, copy: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(copy);
    rng
}

fn check_bias_row(x_aug: &DMatrix<f64>) -> Result<()> {
    let last = x_aug.nrows().checked_sub(1).ok_or_else(|| SlideError::Shape("empty matrix".into()))?;
    if x_aug.row(last).iter().any(|&v| v != 1.0) {
        return Err(SlideError::InvalidParameter("last row of an augmented matrix must be all ones".into()));
    }
    Ok(())
}

/// Zeroes each non-bias entry independently with probability `1 - p`.
pub fn corrupt(x_aug: &DMatrix<f64>, p: f64, seed: u64) -> Result<DMatrix<f64>> {
    corrupt_copy(x_aug, p, seed, 0)
}

/// The `copy`-th corrupted version of `x_aug` under `seed`.
pub fn corrupt_copy(x_aug: &DMatrix<f64>, p: f64, seed: u64, copy: u64) -> Result<DMatrix<f64>> {
    validate_survival(p)?;
    check_bias_row(x_aug)?;
    let d = x_aug.nrows() - 1;
    let mut out = x_aug.clone();
    let mut rng = copy_rng(seed, copy);
    for i in 0..out.ncols() {
        for r in 0..d {
            if !keep(&mut rng, p) {
                out[(r, i)] = 0.0;
            }
        }
    }
    Ok(out)
}

#[inline]
fn keep(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Sum over a block of copies of `x~ x~^T` (upper triangle) and of `x~`.
struct BlockSums {
    q_upper: DMatrix<f64>,
    corrupted_sum: DMatrix<f64>,
}

fn accumulate_block(x_aug: &DMatrix<f64>, p: f64, seed: u64, copies: std::ops::Range<usize>) -> BlockSums {
    let (k, n) = x_aug.shape();
    let d = k - 1;
    let mut q_upper = DMatrix::zeros(k, k);
    let mut corrupted_sum = DMatrix::zeros(k, n);
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    for j in copies {
        let mut rng = copy_rng(seed, j as u64);
        for i in 0..n {
            kept.clear();
            for r in 0..d {
                if keep(&mut rng, p) {
                    kept.push(r);
                }
            }
            kept.push(d);
            let col = x_aug.column(i);
            for (bi, &b) in kept.iter().enumerate() {
                let xb = col[b];
                corrupted_sum[(b, i)] += xb;
                for &a in &kept[..=bi] {
                    q_upper[(a, b)] += col[a] * xb;
                }
            }
        }
    }
    BlockSums { q_upper, corrupted_sum }
}

/// `Q = (1/m) X~ X~^T` and `P = (1/m) X_bar X~^T`, streamed copy by copy.
pub fn empirical_moments(x: &DataMatrix, cfg: &CorruptionConfig, exec: Exec) -> (DMatrix<f64>, DMatrix<f64>) {
    let x_aug = augment(x);
    let k = x_aug.nrows();
    let n_blocks = cfg.m.div_ceil(COPY_BLOCK);
    let blocks = exec.map(n_blocks, |b| {
        let start = b * COPY_BLOCK;
        let end = (start + COPY_BLOCK).min(cfg.m);
        accumulate_block(&x_aug, cfg.p, cfg.seed, start..end)
    });
    let mut q = DMatrix::zeros(k, k);
    let mut c = DMatrix::zeros(k, x_aug.ncols());
    for block in blocks {
        q += block.q_upper;
        c += block.corrupted_sum;
    }
    mirror_upper(&mut q);
    let m = cfg.m as f64;
    q /= m;
    // P is linear in the corrupted data: sum_j X X~_j^T = X (sum_j X~_j)^T.
    let p = (&x_aug * c.transpose()) / m;
    (q, p)
}

/// Finite-`m` least-squares denoiser `W = P (Q + eps I)^-1`.
pub fn solve_finite_m(x: &DataMatrix, cfg: &CorruptionConfig, eps: f64, exec: Exec) -> Result<DenoiseLayer> {
    validate_eps(eps)?;
    let (q, p) = empirical_moments(x, cfg, exec);
    let w = solve_denoiser(&q, p.rows(0, x.d()).into_owned(), eps)?;
    Ok(DenoiseLayer { w, p: cfg.p, eps, t: 0.0 })
}

/// One row of a finite-`m` versus closed-form convergence report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub m: usize,
    pub seed: u64,
    /// `||W_m - W_inf||_F`
    pub frobenius_error: f64,
    /// `||W_m - W_inf||_F / ||W_inf||_F`
    pub relative_error: f64,
}

/// Solves the finite problem for every `(m, seed)` pair and measures its
/// distance to the closed form.
pub fn convergence_report(
    x: &DataMatrix,
    p: f64,
    m_list: &[usize],
    seeds: &[u64],
    eps: f64,
    exec: Exec,
) -> Result<Vec<ConvergenceRow>> {
    let limit = solve_lide(x, p, eps)?;
    let limit_norm = limit.w.norm();
    let mut rows = Vec::with_capacity(m_list.len() * seeds.len());
    for &m in m_list {
        for &seed in seeds {
            let cfg = CorruptionConfig::new(p, m, seed)?;
            let layer = solve_finite_m(x, &cfg, eps, exec)?;
            let err = (&layer.w - &limit.w).norm();
            rows.push(ConvergenceRow {
                m,
                seed,
                frobenius_error: err,
                relative_error: if limit_norm > 0.0 { err / limit_norm } else { err },
            });
        }
    }
    Ok(rows)
}
