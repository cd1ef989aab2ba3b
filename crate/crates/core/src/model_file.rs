//! Versioned JSON model files.
//!
//! Scalars are plain JSON numbers (written shortest-round-trip). Matrices are
//! stored row-major with each value as the 16-digit hex of its IEEE-754 bits,
//! so every float survives a save/load cycle exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::denoise::DenoiseLayer;
use crate::error::{Result, SlideError};
use crate::io::write_atomic;
use crate::kernel::KernelParams;
use crate::stack::StackModel;
use crate::svm::{BinarySvm, OvrModel};

pub const FORMAT_VERSION: u32 = 1;

/// Everything a trained pipeline needs at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideModel {
    pub stack: StackModel,
    pub kernel: Option<KernelParams>,
    pub svm: Option<StoredSvm>,
    pub provenance: Provenance,
}

/// A one-vs-rest model whose training set has been cut down to the support
/// vectors, kept as raw inputs (`d x n_sv`).
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSvm {
    pub model: OvrModel,
    pub support_inputs: DMatrix<f64>,
    pub c: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub rng: String,
    pub created_by: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StackRecord {
    d: usize,
    p: f64,
    t: f64,
    eps: f64,
    fit_on_thresholded: bool,
    layers: Vec<MatrixRecord>,
}

#[derive(Serialize, Deserialize)]
struct MachineRecord {
    class: i64,
    bias: String,
    alphas: Vec<String>,
    y: Vec<i8>,
}

#[derive(Serialize, Deserialize)]
struct SvmRecord {
    c: f64,
    tol: f64,
    classes: Vec<i64>,
    support_inputs: MatrixRecord,
    machines: Vec<MachineRecord>,
}

#[derive(Serialize, Deserialize)]
struct FileV1 {
    format_version: u32,
    stack: StackRecord,
    kernel: Option<KernelParams>,
    svm: Option<SvmRecord>,
    provenance: Provenance,
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    if s.len() != 16 {
        return Err(SlideError::ModelTruncated(format!("bad float encoding {s:?}")));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| SlideError::ModelTruncated(format!("bad float encoding {s:?}")))
}

fn encode_matrix(m: &DMatrix<f64>) -> MatrixRecord {
    let mut values = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            values.push(hex(m[(r, c)]));
        }
    }
    MatrixRecord { rows: m.nrows(), cols: m.ncols(), values }
}

fn decode_matrix(rec: &MatrixRecord, what: &str) -> Result<DMatrix<f64>> {
    if rec.rows.checked_mul(rec.cols) != Some(rec.values.len()) {
        return Err(SlideError::ModelShape(format!(
            "{what}: {}x{} but {} values",
            rec.rows,
            rec.cols,
            rec.values.len()
        )));
    }
    let vals: Vec<f64> = rec.values.iter().map(|s| unhex(s)).collect::<Result<_>>()?;
    Ok(DMatrix::from_row_slice(rec.rows, rec.cols, &vals))
}

impl SlideModel {
    pub fn to_json(&self) -> String {
        let stack = StackRecord {
            d: self.stack.d,
            p: self.stack.p,
            t: self.stack.t,
            eps: self.stack.eps,
            fit_on_thresholded: self.stack.fit_on_thresholded,
            layers: self.stack.layers.iter().map(|l| encode_matrix(&l.w)).collect(),
        };
        let svm = self.svm.as_ref().map(|s| SvmRecord {
            c: s.c,
            tol: s.tol,
            classes: s.model.classes.clone(),
            support_inputs: encode_matrix(&s.support_inputs),
            machines: s
                .model
                .machines
                .iter()
                .zip(&s.model.classes)
                .map(|(m, &class)| MachineRecord {
                    class,
                    bias: hex(m.bias),
                    alphas: m.alphas.iter().map(|&a| hex(a)).collect(),
                    y: m.y.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect(),
                })
                .collect(),
        });
        let file = FileV1 {
            format_version: FORMAT_VERSION,
            stack,
            kernel: self.kernel.clone(),
            svm,
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<SlideModel> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SlideError::ModelTruncated(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SlideError::ModelTruncated("missing format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(SlideError::ModelVersion { found: version.min(u32::MAX as u64) as u32, expected: FORMAT_VERSION });
        }
        let file: FileV1 = serde_json::from_value(value).map_err(|e| SlideError::ModelTruncated(e.to_string()))?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SlideModel> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn save_model(model: &SlideModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SlideModel> {
    SlideModel::load(path)
}

impl FileV1 {
    fn into_model(self) -> Result<SlideModel> {
        let s = self.stack;
        if s.d == 0 || s.layers.is_empty() {
            return Err(SlideError::ModelShape("stack needs d >= 1 and at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(s.layers.len());
        for (k, rec) in s.layers.iter().enumerate() {
            let w = decode_matrix(rec, &format!("layer {}", k + 1))?;
            if w.shape() != (s.d, s.d + 1) {
                return Err(SlideError::ModelShape(format!(
                    "layer {} is {}x{}, expected {}x{}",
                    k + 1,
                    w.nrows(),
                    w.ncols(),
                    s.d,
                    s.d + 1
                )));
            }
            layers.push(DenoiseLayer::from_weights(w, s.p, s.eps, s.t).map_err(|e| SlideError::ModelShape(e.to_string()))?);
        }
        let stack = StackModel { layers, t: s.t, p: s.p, eps: s.eps, d: s.d, fit_on_thresholded: s.fit_on_thresholded };

        if let Some(k) = &self.kernel {
            if k.sigmas.len() != stack.layers.len() + 1 {
                return Err(SlideError::ModelShape(format!(
                    "{} kernel widths for {} representations",
                    k.sigmas.len(),
                    stack.layers.len() + 1
                )));
            }
            KernelParams::with_global(k.sigma, k.sigmas.clone()).map_err(|e| SlideError::ModelShape(e.to_string()))?;
        }

        let svm = match self.svm {
            None => None,
            Some(rec) => {
                if self.kernel.is_none() {
                    return Err(SlideError::ModelShape("svm present without kernel parameters".into()));
                }
                let support_inputs = decode_matrix(&rec.support_inputs, "support inputs")?;
                if support_inputs.nrows() != stack.d {
                    return Err(SlideError::ModelShape(format!(
                        "support inputs have {} features, stack has {}",
                        support_inputs.nrows(),
                        stack.d
                    )));
                }
                let ns = support_inputs.ncols();
                if rec.machines.len() != rec.classes.len() || rec.classes.len() < 2 {
                    return Err(SlideError::ModelShape("need one machine per class and at least two classes".into()));
                }
                let mut machines = Vec::with_capacity(rec.machines.len());
                for (m, &class) in rec.machines.iter().zip(&rec.classes) {
                    if m.class != class || m.alphas.len() != ns || m.y.len() != ns {
                        return Err(SlideError::ModelShape(format!("machine for class {} is inconsistent", m.class)));
                    }
                    let alphas: Vec<f64> = m.alphas.iter().map(|s| unhex(s)).collect::<Result<_>>()?;
                    let sv_indices = (0..ns).filter(|&i| alphas[i] > 0.0).collect();
                    machines.push(BinarySvm {
                        alphas,
                        y: m.y.iter().map(|&v| if v > 0 { 1.0 } else { -1.0 }).collect(),
                        bias: unhex(&m.bias)?,
                        c: rec.c,
                        sv_indices,
                        label_map: Some((i64::MIN, class)),
                    });
                }
                Some(StoredSvm { model: OvrModel { machines, classes: rec.classes }, support_inputs, c: rec.c, tol: rec.tol })
            }
        };
        Ok(SlideModel { stack, kernel: self.kernel, svm, provenance: self.provenance })
    }
}
