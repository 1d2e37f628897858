// SPDX-License-Identifier: Apache-2.0

//! Quantized MLP inference on top of the VMM pipeline.
//!
//! Signed weights run as two unsigned planes: output channel `o` of a layer
//! becomes VMM channels `o` (positive part) and `out_dim + o` (negative part),
//! subtracted after readout. Hidden activations are rectified, scaled and
//! clamped back to input codes.
//!
//! A layer narrower than the rows it engages can be replicated into the idle
//! rows. The MAC grows by the copy count while the absolute timing noise of
//! the chain does not, and the estimate is divided back down after readout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ArchParams;
use crate::mapper::{ideal_vmm, pass_full_scale, run_vmm, tile, MapperError, RunOptions, VmmJob};
use crate::variation::DeviceInstance;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Mapper(#[from] MapperError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `weights[out][in]`, signed.
    pub weights: Vec<Vec<i64>>,
    pub weight_scale: f64,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel {
    pub name: String,
    /// Raw feature value mapped to the top input code.
    pub input_max: f64,
    /// Real value of one input code on the normalized feature axis.
    pub input_scale: f64,
    pub layers: Vec<MlpLayer>,
}

impl MlpModel {
    pub fn from_json(text: &str) -> Result<Self, MlpError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self, arch: &ArchParams) -> Result<(), MlpError> {
        let bad = |s: String| Err(MlpError::Model(s));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if !(self.input_max > 0.0 && self.input_scale > 0.0) {
            return bad("input_max and input_scale must be > 0".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return bad(format!("layer {i} has a zero dimension ({}x{})", l.in_dim, l.out_dim));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return bad(format!("layer {i} expects {} inputs, previous layer gives {}", l.in_dim, self.layers[i - 1].out_dim));
            }
            if l.weights.len() != l.out_dim || l.weights.iter().any(|r| r.len() != l.in_dim) {
                return bad(format!("layer {i} weight matrix is not {}x{}", l.out_dim, l.in_dim));
            }
            if l.bias.len() != l.out_dim {
                return bad(format!("layer {i} bias has {} entries, expected {}", l.bias.len(), l.out_dim));
            }
            let max = arch.max_weight() as i64;
            if l.weights.iter().flatten().any(|w| w.abs() > max) {
                return bad(format!("layer {i} weight magnitude exceeds {max}"));
            }
            if l.weight_scale.is_nan() || l.weight_scale <= 0.0 {
                return bad(format!("layer {i} weight_scale must be > 0"));
            }
        }
        Ok(())
    }

    /// Quantizes raw features to input codes.
    pub fn input_codes(&self, features: &[f64], arch: &ArchParams) -> Vec<u32> {
        let top = arch.max_input() as f64;
        features
            .iter()
            .map(|&x| ((x / self.input_max).clamp(0.0, 1.0) * top).round() as u32)
            .collect()
    }

    /// Differential job for `layer` on input codes `x`.
    pub fn layer_job(&self, layer: usize, x: &[u32]) -> VmmJob {
        let l = &self.layers[layer];
        let c = 2 * l.out_dim;
        let mut weights = vec![0u32; l.in_dim * c];
        for (o, row) in l.weights.iter().enumerate() {
            for (k, &w) in row.iter().enumerate() {
                let col = if w >= 0 { o } else { l.out_dim + o };
                weights[k * c + col] = w.unsigned_abs() as u32;
            }
        }
        VmmJob::new(x.to_vec(), weights, c).expect("validated dimensions")
    }

    /// Copies of `layer` that fit in the rows its vertical passes engage.
    pub fn replication(&self, layer: usize, arch: &ArchParams) -> usize {
        let k = self.layers[layer].in_dim;
        let rows = k.min(arch.rows_per_core()).div_ceil(arch.rows_per_macro) * arch.rows_per_macro;
        (rows / k).max(1)
    }

    /// `layer_job` with inputs and weight rows repeated `copies` times.
    pub fn replicated_job(&self, layer: usize, x: &[u32], copies: usize) -> VmmJob {
        let base = self.layer_job(layer, x);
        if copies <= 1 {
            return base;
        }
        VmmJob::new(base.inputs.repeat(copies), base.weights.repeat(copies), base.c).expect("validated dimensions")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Header row, feature columns, label in the last column.
pub fn load_dataset_csv(text: &str) -> Result<Dataset, MlpError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| MlpError::Dataset(format!("line {line}: {s:?}: {e}")))
        };
        let n = rec.len();
        if n < 2 {
            return Err(MlpError::Dataset(format!("line {line}: need features and a label")));
        }
        features.push(rec.iter().take(n - 1).map(parse).collect::<Result<Vec<_>, _>>()?);
        let label = parse(&rec[n - 1])?;
        if label < 0.0 || label.fract() != 0.0 {
            return Err(MlpError::Dataset(format!("line {line}: label {label} is not a class index")));
        }
        labels.push(label as usize);
    }
    Ok(Dataset { features, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferMode {
    IdealDigital,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCalibration {
    /// Real value of one activation code after each hidden layer.
    pub activation_scales: Vec<f64>,
    /// TDC range fraction per layer, for a single copy of the layer.
    pub tdc_ranges: Vec<f64>,
}

impl MlpCalibration {
    /// Range for a layer run with `copies` replicas.
    pub fn range_for(&self, layer: usize, copies: usize) -> f64 {
        (self.tdc_ranges[layer] * copies as f64).min(1.0)
    }
}

/// Headroom over the largest calibration MAC when setting a layer's TDC range.
pub const RANGE_MARGIN: f64 = 1.25;

/// Max-abs calibration on `data`, run in ideal-digital mode.
pub fn calibrate_mlp(model: &MlpModel, data: &Dataset, arch: &ArchParams) -> Result<MlpCalibration, MlpError> {
    model.validate(arch)?;
    let top = arch.max_input() as f64;
    let mut xs: Vec<Vec<u32>> = data.features.iter().map(|f| model.input_codes(f, arch)).collect();
    let mut in_scale = model.input_scale;
    let mut mac_max = Vec::new();
    let mut scales = Vec::new();
    for layer in 0..model.layers.len() {
        let macs: Vec<Vec<f64>> = xs.iter().map(|x| as_f64(&ideal_vmm(&model.layer_job(layer, x)))).collect();
        mac_max.push(macs.iter().flatten().copied().fold(0.0, f64::max));
        if layer + 1 == model.layers.len() {
            break;
        }
        let ys: Vec<Vec<f64>> = macs.iter().map(|m| layer_real(model, layer, m, in_scale)).collect();
        let peak = ys.iter().flatten().copied().fold(0.0, f64::max);
        let scale = if peak > 0.0 { peak / top } else { 1.0 / top };
        xs = ys.iter().map(|y| requantize(y, scale, arch)).collect();
        scales.push(scale);
        in_scale = scale;
    }
    let tdc_ranges = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let fs = pass_full_scale(arch, l.in_dim.min(arch.rows_per_core()).div_ceil(arch.rows_per_macro)) as f64;
            (mac_max[i] * RANGE_MARGIN / fs).clamp(1.0 / arch.max_tdc_code() as f64, 1.0)
        })
        .collect();
    Ok(MlpCalibration {
        activation_scales: scales,
        tdc_ranges,
    })
}

/// Real pre-activations from differential MACs.
fn layer_real(model: &MlpModel, layer: usize, macs: &[f64], in_scale: f64) -> Vec<f64> {
    let l = &model.layers[layer];
    (0..l.out_dim)
        .map(|o| (macs[o] - macs[l.out_dim + o]) * in_scale * l.weight_scale + l.bias[o])
        .collect()
}

fn as_f64(xs: &[u64]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64).collect()
}

fn requantize(y: &[f64], scale: f64, arch: &ArchParams) -> Vec<u32> {
    let top = arch.max_input() as f64;
    y.iter().map(|&v| (v.max(0.0) / scale).round().min(top) as u32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InferOptions {
    pub tdc_bypass: bool,
    /// Use the calibrated per-layer TDC ranges instead of the full range.
    pub use_tdc_ranges: bool,
    /// Replicate narrow layers into idle rows.
    pub row_replication: bool,
}

impl InferOptions {
    /// Calibrated ranges with row replication.
    pub fn calibrated() -> Self {
        Self {
            tdc_bypass: false,
            use_tdc_ranges: true,
            row_replication: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResult {
    pub mode: InferMode,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Class scores of one sample.
pub fn forward(
    model: &MlpModel,
    features: &[f64],
    mode: InferMode,
    inst: &DeviceInstance,
    cal: &MlpCalibration,
    opts: &InferOptions,
    sample: u64,
) -> Result<Vec<f64>, MlpError> {
    let arch = inst.arch();
    let n = model.layers.len();
    let mut x = model.input_codes(features, arch);
    let mut in_scale = model.input_scale;
    for layer in 0..n {
        let macs = match mode {
            InferMode::IdealDigital => as_f64(&ideal_vmm(&model.layer_job(layer, &x))),
            InferMode::Simulated => {
                let copies = if opts.row_replication { model.replication(layer, arch) } else { 1 };
                let job = model.replicated_job(layer, &x, copies);
                let run = RunOptions {
                    tdc_bypass: opts.tdc_bypass,
                    tdc_range: if opts.use_tdc_ranges { cal.range_for(layer, copies) } else { 1.0 },
                    conversion: sample * n as u64 + layer as u64,
                    ..RunOptions::default()
                };
                let r = run_vmm(&job, &tile(&job, arch), inst, &run)?;
                r.mac_estimates.iter().map(|&m| m as f64 / copies as f64).collect()
            }
        };
        let y = layer_real(model, layer, &macs, in_scale);
        if layer + 1 == n {
            return Ok(y);
        }
        x = requantize(&y, cal.activation_scales[layer], arch);
        in_scale = cal.activation_scales[layer];
    }
    unreachable!("model has at least one layer")
}

fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}

pub fn infer_mlp(
    model: &MlpModel,
    data: &Dataset,
    mode: InferMode,
    inst: &DeviceInstance,
    cal: &MlpCalibration,
    opts: &InferOptions,
) -> Result<InferResult, MlpError> {
    model.validate(inst.arch())?;
    let predictions = data
        .features
        .par_iter()
        .enumerate()
        .map(|(i, f)| forward(model, f, mode, inst, cal, opts, i as u64).map(|y| argmax(&y)))
        .collect::<Result<Vec<_>, _>>()?;
    let correct = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    let total = data.len();
    Ok(InferResult {
        mode,
        correct,
        total,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        predictions,
    })
}
