// SPDX-License-Identifier: Apache-2.0

//! One charge-domain macro.
//!
//! The macro is an `rows x (cols + 1)` array of unit capacitors; the extra
//! column is the all-zero reference column. Two execution routes exist and
//! must agree:
//!
//! * closed forms ([`input_convert`], [`multiply_1bit`], [`column_accumulate`],
//!   [`cb_weighting`]), evaluated with the per-cell capacitances of a
//!   [`MacroCaps`] so they stay exact under mismatch;
//! * [`run_macro_phases`], which plays phases I-V as switch events on a
//!   [`CapState`].
//!
//! Row layout: input bit `k` owns the `2^k` cells in columns
//! `[2^k - 1, 2^(k+1) - 1)`, so conversion uses the first `2^n_in - 1`
//! columns. Remaining compute columns ("fill" columns) are driven to the
//! settled row voltage by the row driver after conversion. Compute block
//! `b` owns columns `b*n_w .. (b+1)*n_w`; weight bit `j` (significance 2^j)
//! lives in column `b*n_w + j` and contributes its first `2^j` rows to the
//! block output.

use std::ops::Range;

use thiserror::Error;

use crate::charge::{CapState, ChargeError, IslandView, NodeId, Split, SwitchEvent};
use crate::config::ArchParams;

#[derive(Debug, Error)]
pub enum DatapathError {
    #[error("input code {code} on row {row} exceeds {max}")]
    CodeOutOfRange { row: usize, code: u32, max: u64 },
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("weight bit ({row}, {col}) is {value}, not 0 or 1")]
    BitValue { row: usize, col: usize, value: u8 },
    #[error("weight context {context} out of range (macro has {available})")]
    ContextOutOfRange { context: usize, available: usize },
    #[error("weight context {0} has no stored plane")]
    ContextEmpty(usize),
    #[error("no weight context selected")]
    NoActiveContext,
    #[error(transparent)]
    Charge(#[from] ChargeError),
}

pub const PHASE_INPUT: &str = "I:input";
pub const PHASE_CONVERT: &str = "II:convert";
pub const PHASE_MULTIPLY: &str = "III:multiply";
pub const PHASE_ACCUMULATE: &str = "IV:accumulate";
pub const PHASE_WEIGHT: &str = "V:weight";

/// Placement of conversion groups, compute blocks and the reference column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroLayout {
    pub rows: usize,
    pub cols: usize,
    pub n_in: u32,
    pub n_w: u32,
    pub cbs: usize,
    /// Column range of each input-bit group; identical for every row.
    pub row_groups: Vec<Range<usize>>,
    /// Compute columns outside the conversion groups.
    pub fill_columns: Range<usize>,
    pub reference_column: usize,
}

impl MacroLayout {
    pub fn new(arch: &ArchParams) -> Self {
        let row_groups = (0..arch.n_in_bits)
            .map(|k| ((1usize << k) - 1)..((1usize << (k + 1)) - 1))
            .collect();
        let units = (1usize << arch.n_in_bits) - 1;
        Self {
            rows: arch.rows_per_macro,
            cols: arch.cols_per_macro,
            n_in: arch.n_in_bits,
            n_w: arch.n_w_bits,
            cbs: arch.cbs_per_macro,
            row_groups,
            fill_columns: units..arch.cols_per_macro,
            reference_column: arch.cols_per_macro,
        }
    }

    /// Physical columns including the reference column.
    pub fn width(&self) -> usize {
        self.cols + 1
    }

    pub fn node(&self, row: usize, col: usize) -> NodeId {
        row * self.width() + col
    }

    pub fn cb_column(&self, cb: usize, bit: u32) -> usize {
        cb * self.n_w as usize + bit as usize
    }

    /// Rows of a CB column that feed the block output for weight bit `bit`.
    pub fn output_rows(&self, bit: u32) -> Range<usize> {
        0..(1usize << bit)
    }

    /// Cell counts of the output-side groups within one CB: 1, 2, ..., 2^(n_w-1).
    pub fn cb_group_sizes(&self) -> Vec<usize> {
        (0..self.n_w).map(|j| 1usize << j).collect()
    }
}

/// Capacitance of every cell in one macro, with the group totals the
/// closed forms need.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroCaps {
    layout: MacroLayout,
    caps: Vec<f64>,
    row_groups: Vec<f64>,
    col_totals: Vec<f64>,
    cb_out: Vec<f64>,
}

impl MacroCaps {
    pub fn ideal(arch: &ArchParams) -> Self {
        let layout = MacroLayout::new(arch);
        let caps = vec![arch.c_unit_ff; layout.rows * layout.width()];
        Self::from_caps(layout, caps)
    }

    /// `caps` is row-major over `rows x (cols + 1)` cells, in fF.
    pub fn from_caps(layout: MacroLayout, caps: Vec<f64>) -> Self {
        assert_eq!(caps.len(), layout.rows * layout.width(), "capacitance matrix shape");
        let w = layout.width();
        let mut row_groups = Vec::with_capacity(layout.rows * layout.row_groups.len());
        for r in 0..layout.rows {
            let row = &caps[r * w..(r + 1) * w];
            for g in &layout.row_groups {
                row_groups.push(row[g.clone()].iter().sum());
            }
        }
        let col_totals = (0..w)
            .map(|c| (0..layout.rows).map(|r| caps[r * w + c]).sum())
            .collect();
        let mut cb_out = Vec::with_capacity(layout.cbs * layout.n_w as usize);
        for b in 0..layout.cbs {
            for j in 0..layout.n_w {
                let col = layout.cb_column(b, j);
                cb_out.push(layout.output_rows(j).map(|r| caps[r * w + col]).sum());
            }
        }
        Self {
            layout,
            caps,
            row_groups,
            col_totals,
            cb_out,
        }
    }

    pub fn layout(&self) -> &MacroLayout {
        &self.layout
    }

    pub fn cap(&self, row: usize, col: usize) -> f64 {
        self.caps[row * self.layout.width() + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.caps
    }

    /// Total capacitance of each conversion group of `row`, LSB first.
    pub fn group_caps(&self, row: usize) -> &[f64] {
        let n = self.layout.row_groups.len();
        &self.row_groups[row * n..(row + 1) * n]
    }

    pub fn column_total(&self, col: usize) -> f64 {
        self.col_totals[col]
    }

    /// Output-side group capacitances of compute block `cb`, LSB first.
    pub fn cb_output_caps(&self, cb: usize) -> &[f64] {
        let n = self.layout.n_w as usize;
        &self.cb_out[cb * n..(cb + 1) * n]
    }
}

/// Charge-shares conversion groups driven by the bits of `code`.
pub fn convert_row(code: u32, group_caps: &[f64], vdd: f64) -> f64 {
    let (mut charge, mut cap) = (0.0, 0.0);
    for (k, &c) in group_caps.iter().enumerate() {
        if code >> k & 1 == 1 {
            charge += c * vdd;
        }
        cap += c;
    }
    charge / cap
}

/// Row voltages after phases I-II.
pub fn input_convert(codes: &[u32], arch: &ArchParams, caps: &MacroCaps) -> Result<Vec<f64>, DatapathError> {
    let layout = caps.layout();
    check_codes(codes, layout.rows, arch.max_input())?;
    Ok(codes
        .iter()
        .enumerate()
        .map(|(r, &c)| convert_row(c, caps.group_caps(r), arch.vdd_volts))
        .collect())
}

fn check_codes(codes: &[u32], rows: usize, max: u64) -> Result<(), DatapathError> {
    if codes.len() != rows {
        return Err(DatapathError::Shape {
            what: "input codes",
            expected: rows,
            got: codes.len(),
        });
    }
    if let Some((row, &code)) = codes.iter().enumerate().find(|(_, &c)| c as u64 > max) {
        return Err(DatapathError::CodeOutOfRange { row, code, max });
    }
    Ok(())
}

/// Single-bit weights of one macro context, `rows x cols` compute cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightPlane {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    pub context: usize,
}

impl WeightPlane {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>, context: usize) -> Result<Self, DatapathError> {
        if bits.len() != rows * cols {
            return Err(DatapathError::Shape {
                what: "weight plane cells",
                expected: rows * cols,
                got: bits.len(),
            });
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(DatapathError::BitValue {
                row: i / cols,
                col: i % cols,
                value: bits[i],
            });
        }
        Ok(Self {
            rows,
            cols,
            bits,
            context,
        })
    }

    pub fn zeros(rows: usize, cols: usize, context: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![0; rows * cols],
            context,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, context: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut p = Self::zeros(rows, cols, context);
        for r in 0..rows {
            for c in 0..cols {
                p.set(r, c, f(r, c));
            }
        }
        p
    }

    /// Spreads multibit weight codes over compute blocks: `weights[cb][row]`
    /// is the code of block `cb` at `row`, bit `j` landing in column
    /// `cb * n_w + j`. Missing rows and blocks hold zeros.
    pub fn from_cb_weights(arch: &ArchParams, weights: &[Vec<u32>], context: usize) -> Result<Self, DatapathError> {
        let layout = MacroLayout::new(arch);
        if weights.len() > layout.cbs {
            return Err(DatapathError::Shape {
                what: "compute blocks",
                expected: layout.cbs,
                got: weights.len(),
            });
        }
        let mut p = Self::zeros(layout.rows, layout.cols, context);
        for (cb, col_weights) in weights.iter().enumerate() {
            if col_weights.len() > layout.rows {
                return Err(DatapathError::Shape {
                    what: "weight rows",
                    expected: layout.rows,
                    got: col_weights.len(),
                });
            }
            for (r, &w) in col_weights.iter().enumerate() {
                for j in 0..layout.n_w {
                    p.set(r, layout.cb_column(cb, j), w >> j & 1 == 1);
                }
            }
        }
        Ok(p)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, bit: bool) {
        self.bits[row * self.cols + col] = bit as u8;
    }
}

/// Cell voltages after the single-bit multiply, `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVoltages {
    pub rows: usize,
    pub cols: usize,
    pub volts: Vec<f64>,
}

impl CellVoltages {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.volts[row * self.cols + col]
    }
}

/// Keeps a cell's row voltage where the weight bit is 1, grounds it otherwise.
pub fn multiply_1bit(row_voltages: &[f64], plane: &WeightPlane) -> Result<CellVoltages, DatapathError> {
    if row_voltages.len() != plane.rows {
        return Err(DatapathError::Shape {
            what: "row voltages",
            expected: plane.rows,
            got: row_voltages.len(),
        });
    }
    let mut volts = Vec::with_capacity(plane.rows * plane.cols);
    for (r, &v) in row_voltages.iter().enumerate() {
        volts.extend((0..plane.cols).map(|c| if plane.get(r, c) { v } else { 0.0 }));
    }
    Ok(CellVoltages {
        rows: plane.rows,
        cols: plane.cols,
        volts,
    })
}

/// Column charge sharing: the capacitance-weighted mean of each column.
/// Grounded cells still load the column.
pub fn column_accumulate(cells: &CellVoltages, caps: &MacroCaps) -> Result<Vec<f64>, DatapathError> {
    let layout = caps.layout();
    if cells.rows != layout.rows || cells.cols != layout.cols {
        return Err(DatapathError::Shape {
            what: "cell matrix",
            expected: layout.rows * layout.cols,
            got: cells.rows * cells.cols,
        });
    }
    Ok((0..cells.cols)
        .map(|c| {
            let charge: f64 = (0..cells.rows).map(|r| caps.cap(r, c) * cells.get(r, c)).sum();
            charge / caps.column_total(c)
        })
        .collect())
}

/// Merges the output-side groups of one compute block.
///
/// With ideal caps the group sizes are 1, 2, ..., 2^(n_w-1) units, giving
/// `sum(2^j * V_j) / (2^n_w - 1)` with `j` counted from 0 at the LSB.
pub fn cb_weighting(column_voltages: &[f64], output_caps: &[f64]) -> Result<f64, DatapathError> {
    if column_voltages.len() != output_caps.len() || column_voltages.is_empty() {
        return Err(DatapathError::Shape {
            what: "compute block columns",
            expected: output_caps.len(),
            got: column_voltages.len(),
        });
    }
    let (mut charge, mut cap) = (0.0, 0.0);
    for (&v, &c) in column_voltages.iter().zip(output_caps) {
        charge += c * v;
        cap += c;
    }
    Ok(charge / cap)
}

/// Closed-form composition of conversion, multiply, accumulation and
/// weighting; one voltage per compute block.
pub fn closed_form_outputs(
    codes: &[u32],
    plane: &WeightPlane,
    arch: &ArchParams,
    caps: &MacroCaps,
) -> Result<Vec<f64>, DatapathError> {
    let layout = caps.layout();
    let rows = input_convert(codes, arch, caps)?;
    let cells = multiply_1bit(&rows, plane)?;
    let cols = column_accumulate(&cells, caps)?;
    (0..layout.cbs)
        .map(|b| {
            let start = layout.cb_column(b, 0);
            cb_weighting(&cols[start..start + layout.n_w as usize], caps.cb_output_caps(b))
        })
        .collect()
}

/// Closed-form output of one compute block taken straight from the weight
/// codes of its rows (`weights[r]`; rows past the slice hold zero).
pub fn cb_output_from_codes(row_voltages: &[f64], weights: &[u32], cb: usize, caps: &MacroCaps) -> f64 {
    let layout = caps.layout();
    let mut charge = 0.0;
    let mut cap = 0.0;
    for (j, &c_out) in caps.cb_output_caps(cb).iter().enumerate() {
        let col = layout.cb_column(cb, j as u32);
        let mut q = 0.0;
        for (r, (&v, &w)) in row_voltages.iter().zip(weights).enumerate() {
            if w >> j & 1 == 1 {
                q += caps.cap(r, col) * v;
            }
        }
        charge += c_out * (q / caps.column_total(col));
        cap += c_out;
    }
    charge / cap
}

/// Island voltages at the end of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSnapshot {
    pub phase: &'static str,
    pub islands: Vec<IslandView>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroOutputs {
    pub cb_voltages: Vec<f64>,
    pub reference_voltage: f64,
    /// Empty unless tracing was requested.
    pub phase_trace: Vec<PhaseSnapshot>,
}

/// Executes phases I-V on the charge engine.
pub fn run_macro_phases(
    codes: &[u32],
    plane: &WeightPlane,
    arch: &ArchParams,
    caps: &MacroCaps,
    trace: bool,
) -> Result<MacroOutputs, DatapathError> {
    let layout = caps.layout();
    check_codes(codes, layout.rows, arch.max_input())?;
    if plane.rows != layout.rows || plane.cols != layout.cols {
        return Err(DatapathError::Shape {
            what: "weight plane",
            expected: layout.rows * layout.cols,
            got: plane.rows * plane.cols,
        });
    }
    let vdd = arch.vdd_volts;
    let mut state = CapState::new(caps.as_slice().to_vec())?;
    let mut snapshots = Vec::new();
    let mut snap = |state: &CapState, phase: &'static str| {
        if trace {
            snapshots.push(PhaseSnapshot {
                phase,
                islands: state.islands(),
            });
        }
    };

    // I: tri-state drivers charge each input-line group to its bit.
    let mut ev = Vec::new();
    for (r, &code) in codes.iter().enumerate() {
        for (k, g) in layout.row_groups.iter().enumerate() {
            let nodes: Vec<NodeId> = g.clone().map(|c| layout.node(r, c)).collect();
            let head = nodes[0];
            ev.push(SwitchEvent::connect(PHASE_INPUT, nodes));
            let v = if code >> k & 1 == 1 { vdd } else { 0.0 };
            ev.push(SwitchEvent::drive(PHASE_INPUT, head, v));
        }
    }
    state.run_schedule(&ev)?;
    snap(&state, PHASE_INPUT);

    // II: S2 closes, groups share charge; fill cells follow the row line.
    ev.clear();
    for r in 0..layout.rows {
        let heads = layout.row_groups.iter().map(|g| layout.node(r, g.start)).collect();
        ev.push(SwitchEvent::connect(PHASE_CONVERT, heads));
    }
    state.run_schedule(&ev)?;
    if !layout.fill_columns.is_empty() {
        ev.clear();
        for r in 0..layout.rows {
            let v = state.voltage(layout.node(r, 0))?;
            for c in layout.fill_columns.clone() {
                ev.push(SwitchEvent::drive(PHASE_CONVERT, layout.node(r, c), v));
            }
        }
        state.run_schedule(&ev)?;
    }
    snap(&state, PHASE_CONVERT);

    // III: rows released; cells storing 0 discharge.
    ev.clear();
    for r in 0..layout.rows {
        ev.push(SwitchEvent::disconnect(PHASE_MULTIPLY, layout.node(r, 0), Split::Singletons));
    }
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            if !plane.get(r, c) {
                ev.push(SwitchEvent::discharge(PHASE_MULTIPLY, layout.node(r, c)));
            }
        }
        ev.push(SwitchEvent::discharge(PHASE_MULTIPLY, layout.node(r, layout.reference_column)));
    }
    state.run_schedule(&ev)?;
    snap(&state, PHASE_MULTIPLY);

    // IV: S0 closes, each column shares charge.
    ev.clear();
    for c in 0..layout.width() {
        let nodes = (0..layout.rows).map(|r| layout.node(r, c)).collect();
        ev.push(SwitchEvent::connect(PHASE_ACCUMULATE, nodes));
    }
    state.run_schedule(&ev)?;
    snap(&state, PHASE_ACCUMULATE);

    // V: S3 splits off the output-side groups, then S4 merges them per block.
    ev.clear();
    for b in 0..layout.cbs {
        for j in 0..layout.n_w {
            let col = layout.cb_column(b, j);
            let out = layout.output_rows(j);
            if out.end < layout.rows {
                let parts = vec![
                    out.clone().map(|r| layout.node(r, col)).collect(),
                    (out.end..layout.rows).map(|r| layout.node(r, col)).collect(),
                ];
                ev.push(SwitchEvent::disconnect(PHASE_WEIGHT, layout.node(0, col), Split::Parts(parts)));
            }
        }
    }
    for b in 0..layout.cbs {
        let heads = (0..layout.n_w).map(|j| layout.node(0, layout.cb_column(b, j))).collect();
        ev.push(SwitchEvent::connect(PHASE_WEIGHT, heads));
    }
    state.run_schedule(&ev)?;
    snap(&state, PHASE_WEIGHT);

    let cb_voltages = (0..layout.cbs)
        .map(|b| state.voltage(layout.node(0, layout.cb_column(b, 0))))
        .collect::<Result<_, _>>()?;
    let reference_voltage = state.voltage(layout.node(0, layout.reference_column))?;
    Ok(MacroOutputs {
        cb_voltages,
        reference_voltage,
        phase_trace: snapshots,
    })
}

/// A macro with its multi-context weight storage.
#[derive(Debug, Clone)]
pub struct CdMacro {
    arch: ArchParams,
    planes: Vec<Option<WeightPlane>>,
    active: Option<usize>,
}

impl CdMacro {
    pub fn new(arch: &ArchParams) -> Self {
        Self {
            arch: arch.clone(),
            planes: vec![None; arch.weight_contexts],
            active: None,
        }
    }

    /// Stores `plane` in the context slot it names.
    pub fn store_weights(&mut self, plane: WeightPlane) -> Result<(), DatapathError> {
        let available = self.planes.len();
        if plane.context >= available {
            return Err(DatapathError::ContextOutOfRange {
                context: plane.context,
                available,
            });
        }
        if plane.rows != self.arch.rows_per_macro || plane.cols != self.arch.cols_per_macro {
            return Err(DatapathError::Shape {
                what: "weight plane",
                expected: self.arch.rows_per_macro * self.arch.cols_per_macro,
                got: plane.rows * plane.cols,
            });
        }
        let ctx = plane.context;
        self.planes[ctx] = Some(plane);
        Ok(())
    }

    pub fn select_context(&mut self, context: usize) -> Result<(), DatapathError> {
        match self.planes.get(context) {
            None => Err(DatapathError::ContextOutOfRange {
                context,
                available: self.planes.len(),
            }),
            Some(None) => Err(DatapathError::ContextEmpty(context)),
            Some(Some(_)) => {
                self.active = Some(context);
                Ok(())
            }
        }
    }

    pub fn active_plane(&self) -> Result<&WeightPlane, DatapathError> {
        let ctx = self.active.ok_or(DatapathError::NoActiveContext)?;
        self.planes[ctx].as_ref().ok_or(DatapathError::ContextEmpty(ctx))
    }

    pub fn run(&self, codes: &[u32], caps: &MacroCaps, trace: bool) -> Result<MacroOutputs, DatapathError> {
        run_macro_phases(codes, self.active_plane()?, &self.arch, caps, trace)
    }

    pub fn run_closed_form(&self, codes: &[u32], caps: &MacroCaps) -> Result<Vec<f64>, DatapathError> {
        closed_form_outputs(codes, self.active_plane()?, &self.arch, caps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: u32, rows: usize, cols: usize, cbs: usize) -> ArchParams {
        ArchParams {
            n_in_bits: n,
            n_w_bits: n,
            cb_width: n as usize,
            rows_per_macro: rows,
            cols_per_macro: cols,
            cbs_per_macro: cbs,
            macros_v: 1,
            macros_h: 1,
            ..Default::default()
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    /// Charge-engine oracle for one row: groups of 1, 2, ..., 2^(n-1) units
    /// driven by the bits of `code`, then merged.
    fn engine_convert(code: u32, n: u32, c: f64, vdd: f64) -> f64 {
        let units = (1usize << n) - 1;
        let mut s = CapState::new(vec![c; units]).unwrap();
        let mut heads = Vec::new();
        for k in 0..n {
            let g: Vec<_> = ((1usize << k) - 1..(1usize << (k + 1)) - 1).collect();
            heads.push(g[0]);
            s.connect(&g).unwrap();
            s.drive(g[0], if code >> k & 1 == 1 { vdd } else { 0.0 }).unwrap();
        }
        s.connect(&heads).unwrap()
    }

    #[test]
    fn layout_groups() {
        let l = MacroLayout::new(&ArchParams::default());
        assert_eq!(l.row_groups.len(), 8);
        assert_eq!(l.row_groups[0], 0..1);
        assert_eq!(l.row_groups[7], 127..255);
        assert_eq!(l.row_groups.iter().map(|g| g.len()).sum::<usize>(), 255);
        assert_eq!(l.fill_columns, 255..256);
        assert_eq!(l.reference_column, 256);
        assert_eq!(l.cb_group_sizes(), vec![1, 2, 4, 8, 16, 32, 64, 128]);
    }

    #[test]
    fn input_convert_examples() {
        let arch = ArchParams::default();
        let caps = MacroCaps::ideal(&arch);
        let mut codes = vec![0u32; 128];
        codes[1] = 255;
        codes[2] = 128;
        let v = input_convert(&codes, &arch, &caps).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(rel(v[1], 0.9) <= 1e-15);
        let oracle = engine_convert(128, 8, 2.0, 0.9);
        assert!(rel(oracle, 128.0 / 255.0 * 0.9) <= 1e-12);
        assert!(rel(v[2], oracle) <= 1e-12);
        assert!((v[2] - 0.451_764_705_882_352_9).abs() < 1e-12);

        codes[3] = 256;
        assert!(matches!(
            input_convert(&codes, &arch, &caps),
            Err(DatapathError::CodeOutOfRange { row: 3, code: 256, .. })
        ));
        assert!(matches!(
            input_convert(&codes[..5], &arch, &caps),
            Err(DatapathError::Shape { .. })
        ));
    }

    #[test]
    fn multiply_examples() {
        let plane = WeightPlane::new(2, 1, vec![1, 0], 0).unwrap();
        let cells = multiply_1bit(&[0.9, 0.3], &plane).unwrap();
        assert_eq!(cells.volts, vec![0.9, 0.0]);
        let ones = WeightPlane::from_fn(2, 3, 0, |_, _| true);
        assert_eq!(multiply_1bit(&[0.2, 0.4], &ones).unwrap().volts, vec![0.2, 0.2, 0.2, 0.4, 0.4, 0.4]);
        let zeros = WeightPlane::zeros(2, 3, 0);
        assert!(multiply_1bit(&[0.2, 0.4], &zeros).unwrap().volts.iter().all(|&v| v == 0.0));
        assert!(WeightPlane::new(1, 2, vec![0, 2], 0).is_err());
    }

    #[test]
    fn column_accumulate_examples() {
        // M = 2: (0.9 + 0) / 2
        let arch = toy(1, 2, 1, 1);
        let caps = MacroCaps::ideal(&arch);
        let cells = CellVoltages { rows: 2, cols: 1, volts: vec![0.9, 0.0] };
        assert!(rel(column_accumulate(&cells, &caps).unwrap()[0], 0.45) <= 1e-15);

        // M = 4: 2 x 0.9 / 4
        let arch = toy(1, 4, 1, 1);
        let caps = MacroCaps::ideal(&arch);
        let cells = CellVoltages { rows: 4, cols: 1, volts: vec![0.9, 0.9, 0.0, 0.0] };
        assert!(rel(column_accumulate(&cells, &caps).unwrap()[0], 0.45) <= 1e-15);
        let cells = CellVoltages { rows: 4, cols: 1, volts: vec![0.37; 4] };
        assert!(rel(column_accumulate(&cells, &caps).unwrap()[0], 0.37) <= 1e-15);
    }

    #[test]
    fn cb_weighting_examples() {
        assert_eq!(cb_weighting(&[0.42], &[2.0]).unwrap(), 0.42);
        assert!(rel(cb_weighting(&[0.6; 8], &[1., 2., 4., 8., 16., 32., 64., 128.]).unwrap(), 0.6) < 1e-15);
        // Charge-engine merge of groups sized 1 and 2 at 0.3 V and 0.6 V.
        let mut s = CapState::new(vec![2.0; 3]).unwrap();
        s.drive(0, 0.3).unwrap();
        s.connect(&[1, 2]).unwrap();
        s.drive(1, 0.6).unwrap();
        let oracle = s.connect(&[0, 1]).unwrap();
        assert!(rel(oracle, 0.5) <= 1e-15);
        assert!(rel(cb_weighting(&[0.3, 0.6], &[2.0, 4.0]).unwrap(), oracle) <= 1e-15);
        assert!(cb_weighting(&[0.3], &[2.0, 4.0]).is_err());
    }

    #[test]
    fn engine_matches_closed_form_on_toy() {
        let arch = toy(2, 4, 4, 1);
        let caps = MacroCaps::ideal(&arch);
        let plane = WeightPlane::from_cb_weights(&arch, &[vec![3, 3, 3, 3]], 0).unwrap();
        let out = run_macro_phases(&[3, 3, 3, 3], &plane, &arch, &caps, true).unwrap();
        assert!(rel(out.cb_voltages[0], 0.9) <= 1e-12);
        assert_eq!(out.reference_voltage, 0.0);
        assert_eq!(out.phase_trace.len(), 5);
        let zero = run_macro_phases(&[0; 4], &plane, &arch, &caps, false).unwrap();
        assert_eq!(zero.cb_voltages, vec![0.0]);
        assert!(zero.phase_trace.is_empty());
    }

    /// 2-bit, M = 3 macro composed by hand.
    #[test]
    fn toy_schedule_matches_hand_composition() {
        let arch = ArchParams {
            rows_per_macro: 3,
            ..toy(2, 3, 3, 1)
        };
        let caps = MacroCaps::ideal(&arch);
        let codes = [1u32, 2, 3];
        let w = [2u32, 3, 1];
        let plane = WeightPlane::from_cb_weights(&arch, &[w.to_vec()], 0).unwrap();
        let out = run_macro_phases(&codes, &plane, &arch, &caps, false).unwrap();
        let vin: Vec<f64> = codes.iter().map(|&c| c as f64 / 3.0 * 0.9).collect();
        let col = |j: u32| (0..3).map(|i| if w[i] >> j & 1 == 1 { vin[i] } else { 0.0 }).sum::<f64>() / 3.0;
        let expected = (col(0) + 2.0 * col(1)) / 3.0;
        assert!(rel(out.cb_voltages[0], expected) <= 1e-12);
    }

    #[test]
    fn full_macro_scale_identity() {
        let arch = ArchParams::default();
        let caps = MacroCaps::ideal(&arch);
        let mut x = 12345u64;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((x >> 33) & 0xff) as u32
        };
        let codes: Vec<u32> = (0..128).map(|_| next()).collect();
        let weights: Vec<Vec<u32>> = (0..32).map(|_| (0..128).map(|_| next()).collect()).collect();
        let plane = WeightPlane::from_cb_weights(&arch, &weights, 0).unwrap();
        let engine = run_macro_phases(&codes, &plane, &arch, &caps, false).unwrap();
        let closed = closed_form_outputs(&codes, &plane, &arch, &caps).unwrap();
        let rows = input_convert(&codes, &arch, &caps).unwrap();
        for b in 0..32 {
            assert!(rel(engine.cb_voltages[b], closed[b]) <= 1e-12);
            assert!(rel(cb_output_from_codes(&rows, &weights[b], b, &caps), closed[b]) <= 1e-12);
            let mac: u64 = (0..128).map(|i| codes[i] as u64 * weights[b][i] as u64).sum();
            let scaled = closed[b] * 255.0 * 255.0 * 128.0 / 0.9;
            assert!(rel(scaled, mac as f64) <= 1e-9, "cb {b}: {scaled} vs {mac}");
        }
    }

    #[test]
    fn contexts() {
        let arch = toy(2, 4, 4, 1);
        let caps = MacroCaps::ideal(&arch);
        let mut m = CdMacro::new(&arch);
        assert!(matches!(m.select_context(0), Err(DatapathError::ContextEmpty(0))));
        assert!(matches!(m.select_context(8), Err(DatapathError::ContextOutOfRange { .. })));
        assert!(matches!(m.run(&[0; 4], &caps, false), Err(DatapathError::NoActiveContext)));
        let bad = WeightPlane::zeros(4, 4, 9);
        assert!(m.store_weights(bad).is_err());

        let planes: Vec<_> = (0..8)
            .map(|ctx| {
                let w: Vec<u32> = (0..4).map(|r| ((r + ctx) % 4) as u32).collect();
                (w.clone(), WeightPlane::from_cb_weights(&arch, &[w], ctx).unwrap())
            })
            .collect();
        for (_, p) in &planes {
            m.store_weights(p.clone()).unwrap();
        }
        let codes = [3u32, 1, 2, 0];
        for (ctx, (w, _)) in planes.iter().enumerate() {
            m.select_context(ctx).unwrap();
            let v = m.run(&codes, &caps, false).unwrap().cb_voltages[0];
            let mac: u32 = codes.iter().zip(w).map(|(a, b)| a * b).sum();
            let expected = mac as f64 * 0.9 / (3.0 * 3.0 * 4.0);
            assert!(rel(v, expected) <= 1e-12, "ctx {ctx}");
            assert!(rel(m.run_closed_form(&codes, &caps).unwrap()[0], expected) <= 1e-12);
        }
    }

    #[test]
    fn mismatched_caps_routes_agree() {
        let arch = toy(3, 8, 8, 2);
        let layout = MacroLayout::new(&arch);
        let caps: Vec<f64> = (0..layout.rows * layout.width())
            .map(|i| 2.0 * (1.0 + 0.05 * ((i * 7919 % 97) as f64 / 97.0 - 0.5)))
            .collect();
        let caps = MacroCaps::from_caps(layout, caps);
        let codes = [7u32, 0, 3, 5, 1, 6, 2, 4];
        let weights = vec![vec![1u32, 7, 3, 0, 5, 2, 6, 4], vec![7; 8]];
        let plane = WeightPlane::from_cb_weights(&arch, &weights, 0).unwrap();
        let engine = run_macro_phases(&codes, &plane, &arch, &caps, true).unwrap();
        let closed = closed_form_outputs(&codes, &plane, &arch, &caps).unwrap();
        let rows = input_convert(&codes, &arch, &caps).unwrap();
        for b in 0..2 {
            assert!(rel(engine.cb_voltages[b], closed[b]) <= 1e-12);
            assert!(rel(cb_output_from_codes(&rows, &weights[b], b, &caps), closed[b]) <= 1e-12);
        }
        for s in &engine.phase_trace {
            assert!(s.islands.iter().all(|i| (0.0..=0.9 + 1e-12).contains(&i.voltage)), "{}", s.phase);
        }
    }

    proptest! {
        #[test]
        fn toy_engine_equals_closed_form(codes in prop::collection::vec(0u32..4, 4),
                                         w in prop::collection::vec(0u32..4, 4)) {
            let arch = toy(2, 4, 4, 1);
            let caps = MacroCaps::ideal(&arch);
            let plane = WeightPlane::from_cb_weights(&arch, &[w], 0).unwrap();
            let e = run_macro_phases(&codes, &plane, &arch, &caps, false).unwrap();
            let c = closed_form_outputs(&codes, &plane, &arch, &caps).unwrap();
            prop_assert!(rel(e.cb_voltages[0], c[0]) <= 1e-12);
        }

        #[test]
        fn superposition_and_monotonicity(a in prop::collection::vec(0u32..8, 16),
                                          b in prop::collection::vec(0u32..8, 16),
                                          w in prop::collection::vec(0u32..16, 16),
                                          row in 0usize..16) {
            let arch = toy(4, 16, 16, 1);
            let caps = MacroCaps::ideal(&arch);
            let plane = WeightPlane::from_cb_weights(&arch, &[w], 0).unwrap();
            let out = |codes: &[u32]| closed_form_outputs(codes, &plane, &arch, &caps).unwrap()[0];
            let sum: Vec<u32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (va, vb, vs) = (out(&a), out(&b), out(&sum));
            prop_assert!((vs - (va + vb)).abs() <= 1e-12 * vs.max(1e-12));
            let mut up = a.clone();
            up[row] += 1;
            prop_assert!(out(&up) >= va);
        }
    }
}
