// SPDX-License-Identifier: Apache-2.0

//! Maps VMM jobs onto the macro/core hierarchy and runs them end to end.
//!
//! Input channel `k` of vertical pass `p` lands on macro row
//! `(k - p*rows_per_core) % M` of vertical macro `(k - p*rows_per_core) / M`;
//! output channel `c` of horizontal pass `q` lands on compute block
//! `(c - q*outputs_per_core) % cbs` of horizontal macro
//! `(c - q*outputs_per_core) / cbs`. Vertical passes are added digitally.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ArchParams;
use crate::datapath::{cb_output_from_codes, input_convert, run_macro_phases, DatapathError, WeightPlane};
use crate::time_domain::{convert_column, TdcParams, TimeChainResult, TimeError, VtcParams};
use crate::variation::{ChainId, DeviceInstance};

#[derive(Debug, Error)]
pub enum MapperError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("plan covers {plan_k}x{plan_c}, job is {job_k}x{job_c}")]
    PlanMismatch {
        plan_k: usize,
        plan_c: usize,
        job_k: usize,
        job_c: usize,
    },
    #[error("tdc range must be in (0, 1] (got {0})")]
    BadRange(f64),
    #[error(transparent)]
    Datapath(#[from] DatapathError),
    #[error(transparent)]
    Time(#[from] TimeError),
}

/// `inputs[k]`, `weights[k * c_dim + c]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmmJob {
    pub k: usize,
    pub c: usize,
    pub inputs: Vec<u32>,
    pub weights: Vec<u32>,
}

impl VmmJob {
    pub fn new(inputs: Vec<u32>, weights: Vec<u32>, c: usize) -> Result<Self, MapperError> {
        let k = inputs.len();
        if k == 0 || c == 0 {
            return Err(MapperError::InvalidJob(format!("dimensions must be >= 1 (K={k}, C={c})")));
        }
        if weights.len() != k * c {
            return Err(MapperError::InvalidJob(format!(
                "weight matrix has {} entries, expected {k}x{c}",
                weights.len()
            )));
        }
        Ok(Self { k, c, inputs, weights })
    }

    pub fn weight(&self, k: usize, c: usize) -> u32 {
        self.weights[k * self.c + c]
    }

    pub fn validate(&self, arch: &ArchParams) -> Result<(), MapperError> {
        if self.k == 0 || self.c == 0 || self.inputs.len() != self.k || self.weights.len() != self.k * self.c {
            return Err(MapperError::InvalidJob("inconsistent dimensions".into()));
        }
        if let Some((i, x)) = self.inputs.iter().enumerate().find(|(_, &x)| x as u64 > arch.max_input()) {
            return Err(MapperError::InvalidJob(format!(
                "input {i} = {x} exceeds {}-bit range",
                arch.n_in_bits
            )));
        }
        if let Some((i, w)) = self.weights.iter().enumerate().find(|(_, &w)| w as u64 > arch.max_weight()) {
            return Err(MapperError::InvalidJob(format!(
                "weight ({}, {}) = {w} exceeds {}-bit range",
                i / self.c,
                i % self.c,
                arch.n_w_bits
            )));
        }
        Ok(())
    }
}

/// Exact integer MACs.
pub fn ideal_vmm(job: &VmmJob) -> Vec<u64> {
    let mut out = vec![0u64; job.c];
    for (k, &x) in job.inputs.iter().enumerate() {
        if x == 0 {
            continue;
        }
        let row = &job.weights[k * job.c..(k + 1) * job.c];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += x as u64 * w as u64;
        }
    }
    out
}

/// One macro's share of a pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroTile {
    pub v: usize,
    pub h: usize,
    /// Job input channels on rows `0..rows.len()`.
    pub rows: Range<usize>,
    /// Job output channels on compute blocks `0..channels.len()`.
    pub channels: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pass {
    pub vertical: usize,
    pub horizontal: usize,
    pub rows: Range<usize>,
    pub channels: Range<usize>,
    pub engaged_v: usize,
    pub engaged_h: usize,
    pub context: usize,
    pub tiles: Vec<MacroTile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub k: usize,
    pub c: usize,
    pub vertical_passes: usize,
    pub horizontal_passes: usize,
    /// Vertical-major.
    pub passes: Vec<Pass>,
}

impl MappingPlan {
    pub fn pass(&self, vertical: usize, horizontal: usize) -> &Pass {
        &self.passes[vertical * self.horizontal_passes + horizontal]
    }
}

pub fn tile(job: &VmmJob, arch: &ArchParams) -> MappingPlan {
    tile_dims(job.k, job.c, arch)
}

pub fn tile_dims(k: usize, c: usize, arch: &ArchParams) -> MappingPlan {
    let m = arch.rows_per_macro;
    let cbs = arch.cbs_per_macro;
    let rows_core = arch.rows_per_core();
    let outs_core = arch.outputs_per_core();
    let vertical_passes = k.div_ceil(rows_core);
    let horizontal_passes = c.div_ceil(outs_core);
    let mut passes = Vec::with_capacity(vertical_passes * horizontal_passes);
    for p in 0..vertical_passes {
        let rows = p * rows_core..((p + 1) * rows_core).min(k);
        let engaged_v = rows.len().div_ceil(m);
        for q in 0..horizontal_passes {
            let channels = q * outs_core..((q + 1) * outs_core).min(c);
            let engaged_h = channels.len().div_ceil(cbs);
            let mut tiles = Vec::with_capacity(engaged_v * engaged_h);
            for v in 0..engaged_v {
                let r = rows.start + v * m..(rows.start + (v + 1) * m).min(rows.end);
                for h in 0..engaged_h {
                    let ch = channels.start + h * cbs..(channels.start + (h + 1) * cbs).min(channels.end);
                    tiles.push(MacroTile {
                        v,
                        h,
                        rows: r.clone(),
                        channels: ch,
                    });
                }
            }
            passes.push(Pass {
                vertical: p,
                horizontal: q,
                rows: rows.clone(),
                channels,
                engaged_v,
                engaged_h,
                context: (p * horizontal_passes + q) % arch.weight_contexts,
                tiles,
            });
        }
    }
    MappingPlan {
        k,
        c,
        vertical_passes,
        horizontal_passes,
        passes,
    }
}

/// Largest MAC one pass with `engaged_v` stacked macros can represent.
pub fn pass_full_scale(arch: &ArchParams, engaged_v: usize) -> u64 {
    engaged_v as u64 * arch.rows_per_macro as u64 * arch.max_input() * arch.max_weight()
}

/// `round(code * full_scale * range / max_code)`.
pub fn code_to_mac(code: u32, engaged_v: usize, arch: &ArchParams, range: f64) -> u64 {
    let fs = pass_full_scale(arch, engaged_v) as f64 * range;
    (code as f64 * fs / arch.max_tdc_code() as f64).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Executor {
    #[default]
    ClosedForm,
    /// Phases I-V on the charge engine.
    Engine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub executor: Executor,
    /// Read the chain interval at infinite resolution instead of through the TDC.
    pub tdc_bypass: bool,
    /// Fraction of the ideal full-scale interval mapped onto the TDC range.
    pub tdc_range: f64,
    /// Conversion index of this job; selects the jitter realization.
    pub conversion: u64,
    /// Keep per-channel chain timings in the result.
    pub keep_chains: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            executor: Executor::ClosedForm,
            tdc_bypass: false,
            tdc_range: 1.0,
            conversion: 0,
            keep_chains: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub full_scale: u64,
    pub max_abs_error: f64,
    /// Fractions of `full_scale`.
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

impl ErrorStats {
    pub fn compute(estimates: &[f64], ideal: &[u64], full_scale: u64) -> Self {
        let errs: Vec<f64> = estimates.iter().zip(ideal).map(|(&e, &i)| (e - i as f64).abs()).collect();
        let max_abs_error = errs.iter().copied().fold(0.0, f64::max);
        let fs = full_scale.max(1) as f64;
        Self {
            full_scale,
            max_abs_error,
            max_rel_error: max_abs_error / fs,
            mean_rel_error: errs.iter().sum::<f64>() / errs.len().max(1) as f64 / fs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmmResult {
    /// `codes[vertical_pass][c]`.
    pub codes: Vec<Vec<u32>>,
    pub mac_estimates: Vec<u64>,
    /// Unquantized estimate from the chain interval, summed over vertical passes.
    pub analog_estimates: Vec<f64>,
    pub ideal_macs: Vec<u64>,
    pub stats: ErrorStats,
    /// `chains[vertical_pass][c]`, filled when requested.
    pub chains: Vec<Vec<TimeChainResult>>,
    pub plan: MappingPlan,
}

fn pad_codes(job: &VmmJob, rows: &Range<usize>, m: usize) -> Vec<u32> {
    let mut codes = vec![0u32; m];
    codes[..rows.len()].copy_from_slice(&job.inputs[rows.clone()]);
    codes
}

/// Per-tile compute-block voltages, indexed like `pass.tiles`.
fn tile_voltages(
    job: &VmmJob,
    pass: &Pass,
    inst: &DeviceInstance,
    arch: &ArchParams,
    executor: Executor,
) -> Result<Vec<Vec<f64>>, MapperError> {
    let m = arch.rows_per_macro;
    pass.tiles
        .par_iter()
        .map(|t| {
            let caps = inst.macro_caps(t.v, t.h);
            let codes = pad_codes(job, &t.rows, m);
            match executor {
                Executor::ClosedForm => {
                    let rows = input_convert(&codes, arch, &caps)?;
                    Ok(t.channels
                        .clone()
                        .enumerate()
                        .map(|(b, c)| {
                            let w: Vec<u32> = t.rows.clone().map(|k| job.weight(k, c)).collect();
                            cb_output_from_codes(&rows, &w, b, &caps)
                        })
                        .collect())
                }
                Executor::Engine => {
                    let per_cb: Vec<Vec<u32>> =
                        t.channels.clone().map(|c| t.rows.clone().map(|k| job.weight(k, c)).collect()).collect();
                    let plane = WeightPlane::from_cb_weights(arch, &per_cb, pass.context)?;
                    let out = run_macro_phases(&codes, &plane, arch, &caps, false)?;
                    Ok(out.cb_voltages[..t.channels.len()].to_vec())
                }
            }
        })
        .collect()
}

pub fn run_vmm(
    job: &VmmJob,
    plan: &MappingPlan,
    inst: &DeviceInstance,
    opts: &RunOptions,
) -> Result<VmmResult, MapperError> {
    let arch = inst.arch();
    job.validate(arch)?;
    if plan.k != job.k || plan.c != job.c {
        return Err(MapperError::PlanMismatch {
            plan_k: plan.k,
            plan_c: plan.c,
            job_k: job.k,
            job_c: job.c,
        });
    }
    if !(opts.tdc_range > 0.0 && opts.tdc_range <= 1.0) {
        return Err(MapperError::BadRange(opts.tdc_range));
    }
    let vtc = VtcParams::from_arch(arch);
    let vdd = arch.vdd_volts;
    let cbs = arch.cbs_per_macro;
    let n_passes = plan.passes.len() as u64;

    let mut codes = vec![vec![0u32; job.c]; plan.vertical_passes];
    let mut estimates = vec![0u64; job.c];
    let mut analog = vec![0.0f64; job.c];
    let mut chains = if opts.keep_chains {
        vec![Vec::with_capacity(job.c); plan.vertical_passes]
    } else {
        Vec::new()
    };

    for (pi, pass) in plan.passes.iter().enumerate() {
        let volts = tile_voltages(job, pass, inst, arch, opts.executor)?;
        let stages = pass.engaged_v;
        let tdc = TdcParams::for_chain(arch, stages, opts.tdc_range);
        let fs = pass_full_scale(arch, stages) as f64;
        let ideal_span = vtc.gain_ps_per_v * stages as f64 * vdd;
        let conversion = opts.conversion * n_passes + pi as u64;

        let results: Vec<TimeChainResult> = pass
            .channels
            .clone()
            .into_par_iter()
            .map(|c| {
                let local = c - pass.channels.start;
                let (h, b) = (local / cbs, local % cbs);
                let stage_v: Vec<f64> = (0..stages).map(|v| volts[v * pass.engaged_h + h][b]).collect();
                let signal = inst.stage_draws(ChainId::Signal(h * cbs + b), stages, conversion);
                let reference = inst.stage_draws(ChainId::Reference(h), stages, conversion);
                convert_column(&stage_v, vdd, &vtc, &signal, &reference, &tdc)
            })
            .collect::<Result<_, _>>()?;

        for (r, c) in results.into_iter().zip(pass.channels.clone()) {
            let a = r.interval_ps() / ideal_span * fs;
            analog[c] += a;
            estimates[c] += if opts.tdc_bypass {
                a.round().max(0.0) as u64
            } else {
                code_to_mac(r.code, stages, arch, opts.tdc_range)
            };
            codes[pass.vertical][c] = r.code;
            if opts.keep_chains {
                chains[pass.vertical].push(r);
            }
        }
    }

    let ideal_macs = ideal_vmm(job);
    let full_scale = plan
        .passes
        .iter()
        .filter(|p| p.horizontal == 0)
        .map(|p| pass_full_scale(arch, p.engaged_v))
        .sum();
    let est_f: Vec<f64> = if opts.tdc_bypass {
        analog.clone()
    } else {
        estimates.iter().map(|&e| e as f64).collect()
    };
    Ok(VmmResult {
        codes,
        stats: ErrorStats::compute(&est_f, &ideal_macs, full_scale),
        mac_estimates: estimates,
        analog_estimates: analog,
        ideal_macs,
        chains,
        plan: plan.clone(),
    })
}
