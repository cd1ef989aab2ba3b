//! Closed-form marginalized linear denoiser.
//!
//! Given uncorrupted data `X` (features as rows, samples as columns) and a
//! feature survival probability `p`, the denoiser is the affine map that
//! minimizes the squared reconstruction error of `X` from its corrupted
//! versions, in the limit of infinitely many corruptions:
//!
//! ```text
//! W = E[P] (E[Q] + eps I)^-1
//! ```
//!
//! Both expectations are functions of the scatter matrix `S = X_aug X_aug^T`
//! of the bias-augmented data, so no corruption is ever sampled.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlideError};

/// Default ridge added to `E[Q]` before solving.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Column-oriented data: `d` features by `n` samples, every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(SlideError::InvalidParameter("feature count d must be at least 1".into()));
        }
        if data.ncols() == 0 {
            return Err(SlideError::EmptyDataset("no samples".into()));
        }
        check_finite(&data)?;
        Ok(DataMatrix(data))
    }

    /// Builds a matrix from samples given as rows (the on-disk orientation).
    pub fn from_sample_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(SlideError::EmptyDataset("no samples".into()));
        }
        let d = rows[0].len();
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(SlideError::Shape(format!(
                "sample {i} has {} features, expected {d}",
                rows[i].len()
            )));
        }
        Self::new(DMatrix::from_fn(d, n, |r, c| rows[c][r]))
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Keeps the listed samples, in the given order.
    pub fn select_samples(&self, idx: &[usize]) -> Result<Self> {
        Self::new(self.0.select_columns(idx))
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(SlideError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Appends a constant row of ones.
pub fn augment(x: &DataMatrix) -> DMatrix<f64> {
    augment_matrix(x.as_matrix())
}

pub(crate) fn augment_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, n) = x.shape();
    DMatrix::from_fn(d + 1, n, |r, c| if r < d { x[(r, c)] } else { 1.0 })
}

/// Per-feature survival probabilities `[p, .., p, 1]`; the bias never drops out.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalVector {
    q: DVector<f64>,
    p: f64,
}

impl SurvivalVector {
    pub fn new(d: usize, p: f64) -> Result<Self> {
        validate_survival(p)?;
        if d == 0 {
            return Err(SlideError::InvalidParameter("feature count d must be at least 1".into()));
        }
        let q = DVector::from_fn(d + 1, |i, _| if i < d { p } else { 1.0 });
        Ok(SurvivalVector { q, p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

pub fn survival_vector(d: usize, p: f64) -> Result<SurvivalVector> {
    SurvivalVector::new(d, p)
}

pub(crate) fn validate_survival(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SlideError::InvalidParameter(format!(
            "survival probability p must lie in (0, 1], got {p}"
        )));
    }
    Ok(())
}

pub(crate) fn validate_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(SlideError::InvalidParameter(format!("eps must be finite and >= 0, got {eps}")));
    }
    Ok(())
}

/// `S = X_aug X_aug^T`, accumulated sample by sample. Exactly symmetric.
pub fn scatter(x_aug: &DMatrix<f64>) -> DMatrix<f64> {
    let k = x_aug.nrows();
    let mut s = DMatrix::zeros(k, k);
    for col in x_aug.column_iter() {
        for b in 0..k {
            let xb = col[b];
            for a in 0..=b {
                s[(a, b)] += col[a] * xb;
            }
        }
    }
    mirror_upper(&mut s);
    s
}

pub(crate) fn mirror_upper(s: &mut DMatrix<f64>) {
    let k = s.nrows();
    for b in 0..k {
        for a in (b + 1)..k {
            s[(a, b)] = s[(b, a)];
        }
    }
}

/// Expected second moments of the corrupted data.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    /// `E[Q]`: `S_ab q_a q_b` off the diagonal, `S_aa q_a` on it.
    pub eq: DMatrix<f64>,
    /// `E[P]`: `S_ab q_b`.
    pub ep: DMatrix<f64>,
    pub scatter: DMatrix<f64>,
}

pub fn expected_moments(s: &DMatrix<f64>, q: &SurvivalVector) -> Result<MomentPair> {
    let k = q.len();
    if s.shape() != (k, k) {
        return Err(SlideError::Shape(format!(
            "scatter matrix is {}x{}, survival vector has length {k}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = s.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for b in 0..k {
        for a in 0..b {
            if (s[(a, b)] - s[(b, a)]).abs() > 1e-12 * scale {
                return Err(SlideError::InvalidParameter(format!(
                    "scatter matrix is not symmetric at ({a}, {b})"
                )));
            }
        }
    }
    let q = q.q();
    let eq = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            s[(a, a)] * q[a]
        } else {
            s[(a, b)] * q[a] * q[b]
        }
    });
    let ep = DMatrix::from_fn(k, k, |a, b| s[(a, b)] * q[b]);
    Ok(MomentPair { eq, ep, scatter: s.clone() })
}

/// One trained denoising map `d x (d+1)`; the last column is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseLayer {
    pub w: DMatrix<f64>,
    pub p: f64,
    pub eps: f64,
    /// Threshold applied to this layer's input when it is part of a stack.
    pub t: f64,
}

impl DenoiseLayer {
    pub fn from_weights(w: DMatrix<f64>, p: f64, eps: f64, t: f64) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() != w.nrows() + 1 {
            return Err(SlideError::Shape(format!(
                "layer weights must be d x (d+1), got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        check_finite(&w)?;
        Ok(DenoiseLayer { w, p, eps, t })
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }
}

/// Solves `W (A) = rhs` for `W` where `A = moment + eps I` is symmetric and
/// `rhs` holds the first `d` rows of the cross moment.
pub(crate) fn solve_denoiser(q: &DMatrix<f64>, p_rows: DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    let k = q.nrows();
    let mut a = q.clone();
    for i in 0..k {
        a[(i, i)] += eps;
    }
    // A is symmetric, so W A = R  <=>  A W^T = R^T.
    let rhs = p_rows.transpose();
    let wt = solve_symmetric(a, rhs).ok_or(SlideError::Singular { layer: None })?;
    let w = wt.transpose();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(SlideError::Singular { layer: None });
    }
    Ok(w)
}

/// Cholesky first; pivoted LU if the matrix is not numerically SPD.
fn solve_symmetric(a: DMatrix<f64>, rhs: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = a.nrows();
    let floor = f64::EPSILON * k as f64;
    if let Some(chol) = a.clone().cholesky() {
        let l = chol.l_dirty();
        let diag = (0..k).map(|i| l[(i, i)] * l[(i, i)]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > 0.0 && lo / hi > floor {
            return Some(chol.solve(&rhs));
        }
    }
    let lu = a.lu();
    let u = lu.u();
    let (lo, hi) = (0..k)
        .map(|i| u[(i, i)].abs())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(hi > 0.0 && lo / hi > floor) {
        return None;
    }
    lu.solve(&rhs)
}

/// Trains a single denoising layer in closed form. Deterministic.
pub fn solve_lide(x: &DataMatrix, p: f64, eps: f64) -> Result<DenoiseLayer> {
    validate_eps(eps)?;
    let q = SurvivalVector::new(x.d(), p)?;
    let s = scatter(&augment(x));
    let moments = expected_moments(&s, &q)?;
    let d = x.d();
    let p_rows = moments.ep.rows(0, d).into_owned();
    let w = solve_denoiser(&moments.eq, p_rows, eps)?;
    Ok(DenoiseLayer { w, p, eps, t: 0.0 })
}

/// `W * [x; 1]`. Accepts either raw `d x n` input or an already augmented
/// `(d+1) x n` matrix.
pub fn denoise_transform(layer: &DenoiseLayer, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = layer.d();
    let augmented = match x.nrows() {
        r if r == d => false,
        r if r == d + 1 => true,
        r => {
            return Err(SlideError::Shape(format!(
                "input has {r} rows, layer expects {d} or {}",
                d + 1
            )))
        }
    };
    let w = &layer.w;
    let n = x.ncols();
    let mut out = DMatrix::zeros(d, n);
    for i in 0..n {
        let col = x.column(i);
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += w[(r, c)] * col[c];
            }
            let bias = if augmented { w[(r, d)] * col[d] } else { w[(r, d)] };
            out[(r, i)] = acc + bias;
        }
    }
    Ok(out)
}
