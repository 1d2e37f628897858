// SPDX-License-Identifier: Apache-2.0

//! Architecture, variation and cost parameters.
//!
//! Every field carries its physical unit in its name (`vdd_volts`,
//! `c_unit_ff`, `energy_fj`, ...) so that the JSON config documents and the
//! Rust structs share one unambiguous vocabulary. [`default_aidac`] returns
//! the reference configuration: a 28 nm core of 8x8 macros, each holding a
//! 128x256 array of 2 fF charge cells, with 8-bit inputs and weights.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config validation failed: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("cost entry `{0}` is missing")]
    MissingCost(CostRole),
    #[error("cost entry `{role}` gives both `{a}` and `{b}`")]
    AmbiguousUnit {
        role: CostRole,
        a: &'static str,
        b: &'static str,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// One failed invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Largest supported input/weight bit width.
pub const MAX_BITS: u32 = 16;

/// Architecture hierarchy: cell, macro and core dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchParams {
    pub n_in_bits: u32,
    pub n_w_bits: u32,
    pub rows_per_macro: usize,
    /// Compute columns; the per-macro reference column is extra.
    pub cols_per_macro: usize,
    pub cb_width: usize,
    pub cbs_per_macro: usize,
    pub macros_v: usize,
    pub macros_h: usize,
    pub vdd_volts: f64,
    pub c_unit_ff: f64,
    pub analog_clock_mhz: f64,
    pub digital_clock_mhz: f64,
    pub weight_contexts: usize,
    /// Fraction of cells active per operation, in [0, 1].
    pub sparsity: f64,
    pub vtc_gain_ps_per_v: f64,
    pub vtc_offset_ps: f64,
    pub tdc_bits: u32,
}

impl Default for ArchParams {
    fn default() -> Self {
        Self {
            n_in_bits: 8,
            n_w_bits: 8,
            rows_per_macro: 128,
            cols_per_macro: 256,
            cb_width: 8,
            cbs_per_macro: 32,
            macros_v: 8,
            macros_h: 8,
            vdd_volts: 0.9,
            c_unit_ff: 2.0,
            analog_clock_mhz: 50.0,
            digital_clock_mhz: 1000.0,
            weight_contexts: 8,
            sparsity: 0.5,
            vtc_gain_ps_per_v: 1000.0,
            vtc_offset_ps: 50.0,
            tdc_bits: 8,
        }
    }
}

impl ArchParams {
    /// Largest input code, 2^n_in - 1.
    pub fn max_input(&self) -> u64 {
        (1u64 << self.n_in_bits) - 1
    }

    pub fn max_weight(&self) -> u64 {
        (1u64 << self.n_w_bits) - 1
    }

    pub fn max_tdc_code(&self) -> u64 {
        (1u64 << self.tdc_bits) - 1
    }

    /// Input channels one core pass can absorb.
    pub fn rows_per_core(&self) -> usize {
        self.macros_v * self.rows_per_macro
    }

    /// Output channels one core pass can produce.
    pub fn outputs_per_core(&self) -> usize {
        self.macros_h * self.cbs_per_macro
    }

    pub fn macros_per_core(&self) -> usize {
        self.macros_v * self.macros_h
    }

    /// Voltage of one input LSB, vdd / 2^n_in.
    pub fn lsb_volts(&self) -> f64 {
        self.vdd_volts / (1u64 << self.n_in_bits) as f64
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: &'static str, rule: String| out.push(Violation { field, rule });

        let counts: [(&'static str, usize); 9] = [
            ("rows_per_macro", self.rows_per_macro),
            ("cols_per_macro", self.cols_per_macro),
            ("cb_width", self.cb_width),
            ("cbs_per_macro", self.cbs_per_macro),
            ("macros_v", self.macros_v),
            ("macros_h", self.macros_h),
            ("weight_contexts", self.weight_contexts),
            ("n_in_bits", self.n_in_bits as usize),
            ("n_w_bits", self.n_w_bits as usize),
        ];
        for (field, v) in counts {
            if v < 1 {
                bad(field, "must be >= 1".into());
            }
        }
        for (field, bits) in [
            ("n_in_bits", self.n_in_bits),
            ("n_w_bits", self.n_w_bits),
            ("tdc_bits", self.tdc_bits),
        ] {
            if bits > MAX_BITS {
                bad(field, format!("{bits} bits exceeds the supported {MAX_BITS}"));
            }
        }
        if self.tdc_bits < 1 {
            bad("tdc_bits", "must be >= 1".into());
        }
        if self.n_w_bits >= 1 && self.cb_width != self.n_w_bits as usize {
            bad(
                "cb_width",
                format!("must equal n_w_bits ({} != {})", self.cb_width, self.n_w_bits),
            );
        }
        if self.cbs_per_macro * self.cb_width > self.cols_per_macro {
            bad(
                "cbs_per_macro",
                format!(
                    "cbs_per_macro x cb_width = {} exceeds cols_per_macro = {}",
                    self.cbs_per_macro * self.cb_width,
                    self.cols_per_macro
                ),
            );
        }
        if (1..=MAX_BITS).contains(&self.n_w_bits) {
            let group = 1usize << (self.n_w_bits - 1);
            if group > self.rows_per_macro {
                bad(
                    "rows_per_macro",
                    format!(
                        "largest weight group 2^(n_w-1) = {group} exceeds rows_per_macro = {}",
                        self.rows_per_macro
                    ),
                );
            }
        }
        if (1..=MAX_BITS).contains(&self.n_in_bits) {
            let units = (1usize << self.n_in_bits) - 1;
            if units > self.cols_per_macro {
                bad(
                    "cols_per_macro",
                    format!(
                        "input conversion needs 2^n_in - 1 = {units} cells per row, only {} columns",
                        self.cols_per_macro
                    ),
                );
            }
        }
        let positive: [(&'static str, f64); 5] = [
            ("vdd_volts", self.vdd_volts),
            ("c_unit_ff", self.c_unit_ff),
            ("analog_clock_mhz", self.analog_clock_mhz),
            ("digital_clock_mhz", self.digital_clock_mhz),
            ("vtc_gain_ps_per_v", self.vtc_gain_ps_per_v),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bad(field, format!("must be finite and > 0 (got {v})"));
            }
        }
        if !(self.vtc_offset_ps.is_finite() && self.vtc_offset_ps >= 0.0) {
            bad("vtc_offset_ps", "must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            bad("sparsity", format!("must lie in [0, 1] (got {})", self.sparsity));
        }
        out
    }
}

/// Monte Carlo mismatch magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationParams {
    /// Relative sigma of each unit capacitor.
    pub sigma_cap: f64,
    /// Relative sigma of each VTC stage gain.
    pub sigma_vtc_gain: f64,
    pub sigma_vtc_jitter_ps: f64,
    pub seed: u64,
}

/// Unit-capacitor mismatch that reproduces a 2.25 mV 3-sigma spread of the
/// mid-code input conversion (see `variation::calibrate_sigma_cap`).
pub const CALIBRATED_SIGMA_CAP: f64 = 0.027_187_5;
/// VTC gain and jitter spreads giving a 0.10 % 3-sigma full-scale chain error.
pub const CALIBRATED_SIGMA_VTC_GAIN: f64 = 6.625e-4;
pub const CALIBRATED_SIGMA_VTC_JITTER_PS: f64 = 0.421_612_418;
pub const DEFAULT_SEED: u64 = 1;

impl Default for VariationParams {
    fn default() -> Self {
        Self {
            sigma_cap: CALIBRATED_SIGMA_CAP,
            sigma_vtc_gain: CALIBRATED_SIGMA_VTC_GAIN,
            sigma_vtc_jitter_ps: CALIBRATED_SIGMA_VTC_JITTER_PS,
            seed: DEFAULT_SEED,
        }
    }
}

impl VariationParams {
    /// All spreads zero: the simulator collapses to the closed forms.
    pub fn ideal() -> Self {
        Self {
            sigma_cap: 0.0,
            sigma_vtc_gain: 0.0,
            sigma_vtc_jitter_ps: 0.0,
            seed: DEFAULT_SEED,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.sigma_cap == 0.0 && self.sigma_vtc_gain == 0.0 && self.sigma_vtc_jitter_ps == 0.0
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (field, v) in [
            ("sigma_cap", self.sigma_cap),
            ("sigma_vtc_gain", self.sigma_vtc_gain),
            ("sigma_vtc_jitter_ps", self.sigma_vtc_jitter_ps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(Violation {
                    field,
                    rule: format!("must be finite and >= 0 (got {v})"),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostRole {
    MccAct,
    RowDriver,
    TimeAcc,
    Tdc,
    IoBuffer256b,
    MacroTotal,
    CoreTotal,
}

impl CostRole {
    pub const ALL: [CostRole; 7] = [
        CostRole::MccAct,
        CostRole::RowDriver,
        CostRole::TimeAcc,
        CostRole::Tdc,
        CostRole::IoBuffer256b,
        CostRole::MacroTotal,
        CostRole::CoreTotal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostRole::MccAct => "mcc_act",
            CostRole::RowDriver => "row_driver",
            CostRole::TimeAcc => "time_acc",
            CostRole::Tdc => "tdc",
            CostRole::IoBuffer256b => "io_buffer_256b",
            CostRole::MacroTotal => "macro_total",
            CostRole::CoreTotal => "core_total",
        }
    }
}

impl fmt::Display for CostRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalized cost of one component: fJ, ps and um^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEntry {
    pub energy_fj: f64,
    pub latency_ps: f64,
    pub area_um2: f64,
}

impl CostEntry {
    pub const fn new(energy_fj: f64, latency_ps: f64, area_um2: f64) -> Self {
        Self {
            energy_fj,
            latency_ps,
            area_um2,
        }
    }

    pub fn energy_pj(&self) -> f64 {
        fj_to_pj(self.energy_fj)
    }

    pub fn latency_ns(&self) -> f64 {
        ps_to_ns(self.latency_ps)
    }
}

pub fn pj_to_fj(pj: f64) -> f64 {
    pj * 1e3
}

pub fn fj_to_pj(fj: f64) -> f64 {
    fj / 1e3
}

pub fn ns_to_ps(ns: f64) -> f64 {
    ns * 1e3
}

pub fn ps_to_ns(ps: f64) -> f64 {
    ps / 1e3
}

pub fn mm2_to_um2(mm2: f64) -> f64 {
    mm2 * 1e6
}

pub fn um2_to_mm2(um2: f64) -> f64 {
    um2 / 1e6
}

/// Entry as written in a config document; either unit of each pair may be used.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostEntryDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    energy_fj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy_pj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency_ps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latency_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    area_um2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    area_mm2: Option<f64>,
}

fn pick(
    role: CostRole,
    base: f64,
    (a, va): (&'static str, Option<f64>),
    (b, vb): (&'static str, Option<f64>),
    convert_b: fn(f64) -> f64,
) -> Result<f64, ConfigError> {
    match (va, vb) {
        (Some(_), Some(_)) => Err(ConfigError::AmbiguousUnit { role, a, b }),
        (Some(x), None) => Ok(x),
        (None, Some(y)) => Ok(convert_b(y)),
        (None, None) => Ok(base),
    }
}

impl CostEntryDoc {
    fn merge_into(&self, role: CostRole, base: CostEntry) -> Result<CostEntry, ConfigError> {
        Ok(CostEntry {
            energy_fj: pick(
                role,
                base.energy_fj,
                ("energy_fj", self.energy_fj),
                ("energy_pj", self.energy_pj),
                pj_to_fj,
            )?,
            latency_ps: pick(
                role,
                base.latency_ps,
                ("latency_ps", self.latency_ps),
                ("latency_ns", self.latency_ns),
                ns_to_ps,
            )?,
            area_um2: pick(
                role,
                base.area_um2,
                ("area_um2", self.area_um2),
                ("area_mm2", self.area_mm2),
                mm2_to_um2,
            )?,
        })
    }
}

/// Per-component energy, latency and area.
///
/// `mcc_act` is the per-cell energy at `mcc_reference_activation` (the table
/// quotes it at 50 % activation); the cost model scales it linearly with the
/// configured sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    entries: BTreeMap<CostRole, CostEntry>,
    pub mcc_reference_activation: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        let entries = [
            (CostRole::MccAct, CostEntry::new(0.81, 0.0, 0.8)),
            (CostRole::RowDriver, CostEntry::new(9.36, 30.0, 0.18)),
            (CostRole::TimeAcc, CostEntry::new(58.5, 113.0, 5.3)),
            (
                CostRole::Tdc,
                CostEntry::new(pj_to_fj(7.7), ns_to_ps(0.9), 6865.0),
            ),
            (
                CostRole::IoBuffer256b,
                CostEntry::new(pj_to_fj(2.9), ns_to_ps(0.112), 4656.0),
            ),
            (
                CostRole::MacroTotal,
                CostEntry::new(pj_to_fj(29.6), ns_to_ps(13.0), 262_193.0),
            ),
            (
                CostRole::CoreTotal,
                CostEntry::new(pj_to_fj(4235.0), ns_to_ps(20.0), mm2_to_um2(18.5)),
            ),
        ];
        Self {
            entries: entries.into_iter().collect(),
            mcc_reference_activation: 0.5,
        }
    }
}

impl CostTable {
    /// A table with no entries; every lookup fails until entries are set.
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
            mcc_reference_activation: 0.5,
        }
    }

    pub fn get(&self, role: CostRole) -> Result<CostEntry, ConfigError> {
        self.entries
            .get(&role)
            .copied()
            .ok_or(ConfigError::MissingCost(role))
    }

    pub fn set(&mut self, role: CostRole, entry: CostEntry) {
        self.entries.insert(role, entry);
    }

    pub fn remove(&mut self, role: CostRole) -> Option<CostEntry> {
        self.entries.remove(&role)
    }

    pub fn entries(&self) -> impl Iterator<Item = (CostRole, CostEntry)> + '_ {
        self.entries.iter().map(|(r, e)| (*r, *e))
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for role in CostRole::ALL {
            match self.entries.get(&role) {
                None => out.push(Violation {
                    field: role.name(),
                    rule: "cost entry missing".into(),
                }),
                Some(e) => {
                    for (what, v) in [
                        ("energy", e.energy_fj),
                        ("latency", e.latency_ps),
                        ("area", e.area_um2),
                    ] {
                        if !(v.is_finite() && v >= 0.0) {
                            out.push(Violation {
                                field: role.name(),
                                rule: format!("{what} must be finite and >= 0 (got {v})"),
                            });
                        }
                    }
                }
            }
        }
        let a = self.mcc_reference_activation;
        if !(a.is_finite() && a > 0.0 && a <= 1.0) {
            out.push(Violation {
                field: "mcc_reference_activation",
                rule: format!("must lie in (0, 1] (got {a})"),
            });
        }
        out
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CostDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mcc_reference_activation: Option<f64>,
    #[serde(flatten)]
    entries: BTreeMap<CostRole, CostEntryDoc>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(default)]
    arch: serde_json::Value,
    #[serde(default)]
    variation: serde_json::Value,
    #[serde(default)]
    cost: Option<CostDoc>,
}

/// The three parameter sets that make up a configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub arch: ArchParams,
    pub variation: VariationParams,
    pub cost: CostTable,
}

/// The reference configuration.
pub fn default_aidac() -> Config {
    Config::default()
}

fn section<T: for<'de> Deserialize<'de> + Default>(v: serde_json::Value) -> Result<T, ConfigError> {
    if v.is_null() {
        Ok(T::default())
    } else {
        Ok(serde_json::from_value(v)?)
    }
}

impl Config {
    /// Parses a JSON document; absent fields keep their default values.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: ConfigDoc = if text.trim().is_empty() {
            ConfigDoc::default()
        } else {
            serde_json::from_str(text)?
        };
        let arch: ArchParams = section(doc.arch)?;
        let variation: VariationParams = section(doc.variation)?;
        let mut cost = CostTable::default();
        if let Some(c) = doc.cost {
            if let Some(a) = c.mcc_reference_activation {
                cost.mcc_reference_activation = a;
            }
            for (role, e) in c.entries {
                let base = cost.get(role)?;
                cost.set(role, e.merge_into(role, base)?);
            }
        }
        let cfg = Config {
            arch,
            variation,
            cost,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = self.arch.validate();
        v.extend(self.variation.validate());
        v.extend(self.cost.validate());
        v
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Serializes with normalized units (fJ, ps, um^2).
    pub fn to_json(&self) -> String {
        let cost = CostDoc {
            mcc_reference_activation: Some(self.cost.mcc_reference_activation),
            entries: self
                .cost
                .entries()
                .map(|(role, e)| {
                    (
                        role,
                        CostEntryDoc {
                            energy_fj: Some(e.energy_fj),
                            latency_ps: Some(e.latency_ps),
                            area_um2: Some(e.area_um2),
                            ..Default::default()
                        },
                    )
                })
                .collect(),
        };
        let doc = ConfigDoc {
            arch: serde_json::to_value(&self.arch).expect("arch serializes"),
            variation: serde_json::to_value(&self.variation).expect("variation serializes"),
            cost: Some(cost),
        };
        serde_json::to_string_pretty(&doc).expect("config serializes")
    }
}

/// Loads a configuration document (see [`Config::from_json`]).
pub fn load_config(source: &str) -> Result<Config, ConfigError> {
    Config::from_json(source)
}
