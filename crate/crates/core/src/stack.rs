//! Greedy layer-wise stacking of closed-form denoisers.
//!
//! `h^0 = x` and `h^k = W^k T(h^{k-1})`, where `T` binarizes each entry
//! against a threshold and re-appends the bias row. Layer `k+1` is fitted
//! on the raw `h^k` while earlier layers stay fixed.

use nalgebra::DMatrix;

use crate::denoise::{denoise_transform, solve_lide, validate_eps, validate_survival, DataMatrix, DenoiseLayer};
use crate::error::{Result, SlideError};

/// `[h > t; 1]` elementwise, with strict comparison.
pub fn threshold(h: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let (d, n) = h.shape();
    DMatrix::from_fn(d + 1, n, |r, c| {
        if r == d || h[(r, c)] > t {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackConfig {
    pub p: f64,
    pub t: f64,
    pub layers: usize,
    pub eps: f64,
    /// Fit each layer on the thresholded representation instead of the raw one.
    pub fit_on_thresholded: bool,
}

impl StackConfig {
    pub fn new(p: f64, t: f64, layers: usize, eps: f64) -> Self {
        StackConfig { p, t, layers, eps, fit_on_thresholded: false }
    }

    fn validate(&self) -> Result<()> {
        validate_survival(self.p)?;
        validate_eps(self.eps)?;
        if self.layers == 0 {
            return Err(SlideError::InvalidParameter("layer count must be at least 1".into()));
        }
        if self.t.is_nan() {
            return Err(SlideError::InvalidParameter("threshold must not be NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackModel {
    pub layers: Vec<DenoiseLayer>,
    pub t: f64,
    pub p: f64,
    pub eps: f64,
    pub d: usize,
    pub fit_on_thresholded: bool,
}

/// Representations `h^0..h^l`, each `d x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutputs {
    pub reps: Vec<DMatrix<f64>>,
}

impl LayerOutputs {
    pub fn new(reps: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = reps.first().ok_or_else(|| SlideError::Shape("no representations".into()))?;
        let n = first.ncols();
        if let Some(k) = reps.iter().position(|r| r.ncols() != n) {
            return Err(SlideError::Shape(format!("layer {k} has {} samples, expected {n}", reps[k].ncols())));
        }
        Ok(LayerOutputs { reps })
    }

    pub fn n_layers(&self) -> usize {
        self.reps.len()
    }

    pub fn n_samples(&self) -> usize {
        self.reps[0].ncols()
    }

    pub fn select_samples(&self, idx: &[usize]) -> LayerOutputs {
        LayerOutputs { reps: self.reps.iter().map(|r| r.select_columns(idx)).collect() }
    }

    /// Keeps only layers `0..=k`.
    pub fn truncate(&self, k: usize) -> LayerOutputs {
        LayerOutputs { reps: self.reps[..=k.min(self.reps.len() - 1)].to_vec() }
    }
}

fn fit_layer(h: &DMatrix<f64>, cfg_p: f64, eps: f64, t: f64, on_thresholded: bool, index: usize) -> Result<DenoiseLayer> {
    let input = if on_thresholded {
        let th = threshold(h, t);
        th.rows(0, h.nrows()).into_owned()
    } else {
        h.clone()
    };
    let data = DataMatrix::new(input)?;
    let mut layer = solve_lide(&data, cfg_p, eps).map_err(|e| match e {
        SlideError::Singular { .. } => SlideError::Singular { layer: Some(index) },
        other => other,
    })?;
    layer.t = t;
    Ok(layer)
}

/// Trains `cfg.layers` layers greedily and returns the cached representations.
pub fn train_stack(x: &DataMatrix, cfg: &StackConfig) -> Result<(StackModel, LayerOutputs)> {
    cfg.validate()?;
    let model = StackModel {
        layers: Vec::new(),
        t: cfg.t,
        p: cfg.p,
        eps: cfg.eps,
        d: x.d(),
        fit_on_thresholded: cfg.fit_on_thresholded,
    };
    let outputs = LayerOutputs { reps: vec![x.as_matrix().clone()] };
    model.extend(outputs, cfg.layers)
}

impl StackModel {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Adds `extra` layers on top of an existing stack. `outputs` must be the
    /// representations this model produced on the training data.
    pub fn extend(mut self, mut outputs: LayerOutputs, extra: usize) -> Result<(StackModel, LayerOutputs)> {
        if outputs.n_layers() != self.layers.len() + 1 {
            return Err(SlideError::Shape(format!(
                "expected {} cached representations, got {}",
                self.layers.len() + 1,
                outputs.n_layers()
            )));
        }
        for _ in 0..extra {
            let index = self.layers.len() + 1;
            let h = outputs.reps.last().expect("non-empty");
            let layer = fit_layer(h, self.p, self.eps, self.t, self.fit_on_thresholded, index)?;
            let next = denoise_transform(&layer, &threshold(h, self.t))?;
            self.layers.push(layer);
            outputs.reps.push(next);
        }
        Ok((self, outputs))
    }

    /// Replays the stack on new data. No randomness.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<LayerOutputs> {
        if x.nrows() != self.d {
            return Err(SlideError::Shape(format!("input has {} features, model expects {}", x.nrows(), self.d)));
        }
        if x.ncols() == 0 {
            return Err(SlideError::EmptyDataset("no samples to transform".into()));
        }
        let mut reps = Vec::with_capacity(self.layers.len() + 1);
        reps.push(x.clone());
        for layer in &self.layers {
            let h = reps.last().expect("non-empty");
            let next = denoise_transform(layer, &threshold(h, self.t))?;
            reps.push(next);
        }
        Ok(LayerOutputs { reps })
    }
}

pub fn forward(model: &StackModel, x: &DMatrix<f64>) -> Result<LayerOutputs> {
    model.forward(x)
}
