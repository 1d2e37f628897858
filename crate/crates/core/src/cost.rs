// SPDX-License-Identifier: Apache-2.0

//! Energy, latency and area rollups, throughput and efficiency.
//!
//! Per pass the counts are taken from the plan geometry:
//!
//! | component        | count                                         |
//! |------------------|-----------------------------------------------|
//! | MCC activations  | engaged macros x rows x cols (sparsity-scaled) |
//! | row drivers      | engaged macros x rows                          |
//! | time accumulators| engaged macros x compute blocks                |
//! | TDCs             | output channels of the pass                    |
//! | buffer accesses  | 256-bit words read (inputs) and written (codes)|

use serde::{Deserialize, Serialize};

use crate::config::{ArchParams, ConfigError, CostEntry, CostRole, CostTable};
use crate::mapper::{tile_dims, MappingPlan, Pass};

const BUFFER_WORD_BITS: usize = 256;
/// Phases I-V share the macro latency equally; I and II are input conversion.
const MACRO_PHASES: [&str; 5] = ["phase_i", "phase_ii", "phase_iii", "phase_iv", "phase_v"];
const CONVERSION_PHASE_SHARE: f64 = 2.0 / 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rollup {
    /// Fine-grained entries plus a declared residual up to the core total.
    #[default]
    Component,
    /// Per-macro aggregate energy instead of MCC, driver and accumulator entries.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CostOptions {
    pub rollup: Rollup,
    /// Count phase I-II MCC events as conversion instead of compute.
    pub input_conversion_as_conversion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEnergy {
    pub component: String,
    pub count: f64,
    pub unit_energy_fj: f64,
    pub energy_fj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySection {
    pub rollup: Rollup,
    pub components: Vec<ComponentEnergy>,
    pub component_sum_fj: f64,
    /// Added to the total in component mode only.
    pub residual_fj: f64,
    pub total_fj: f64,
    /// Core-total entry times the number of passes.
    pub reference_total_fj: f64,
    /// `reference_total - total`.
    pub gap_fj: f64,
}

impl EnergySection {
    pub fn component(&self, name: &str) -> Option<&ComponentEnergy> {
        self.components.iter().find(|c| c.component == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PassCounts {
    macros: f64,
    cells: f64,
    row_drivers: f64,
    time_accs: f64,
    tdcs: f64,
    buffer_reads: f64,
    buffer_writes: f64,
}

fn pass_counts(pass: &Pass, arch: &ArchParams) -> PassCounts {
    let macros = pass.tiles.len() as f64;
    let m = arch.rows_per_macro as f64;
    PassCounts {
        macros,
        cells: macros * m * arch.cols_per_macro as f64,
        row_drivers: macros * m,
        time_accs: macros * arch.cbs_per_macro as f64,
        tdcs: pass.channels.len() as f64,
        buffer_reads: (pass.rows.len() * arch.n_in_bits as usize).div_ceil(BUFFER_WORD_BITS) as f64,
        buffer_writes: (pass.channels.len() * arch.tdc_bits as usize).div_ceil(BUFFER_WORD_BITS) as f64,
    }
}

fn mcc_scale(arch: &ArchParams, table: &CostTable) -> f64 {
    arch.sparsity / table.mcc_reference_activation
}

fn fine_sum(plan: &MappingPlan, arch: &ArchParams, table: &CostTable, sparsity: f64) -> Result<f64, ConfigError> {
    let (mcc, rd, ta, tdc, buf) = (
        table.get(CostRole::MccAct)?,
        table.get(CostRole::RowDriver)?,
        table.get(CostRole::TimeAcc)?,
        table.get(CostRole::Tdc)?,
        table.get(CostRole::IoBuffer256b)?,
    );
    let s = sparsity / table.mcc_reference_activation;
    Ok(plan
        .passes
        .iter()
        .map(|p| {
            let n = pass_counts(p, arch);
            n.cells * s * mcc.energy_fj
                + n.row_drivers * rd.energy_fj
                + n.time_accs * ta.energy_fj
                + n.tdcs * tdc.energy_fj
                + (n.buffer_reads + n.buffer_writes) * buf.energy_fj
        })
        .sum())
}

/// Residual per engaged macro: the core total minus the component sum of a
/// full-core pass at the reference activation, spread over the core's macros.
pub fn residual_per_macro_fj(arch: &ArchParams, table: &CostTable) -> Result<f64, ConfigError> {
    let full = tile_dims(arch.rows_per_core(), arch.outputs_per_core(), arch);
    let sum = fine_sum(&full, arch, table, table.mcc_reference_activation)?;
    let core = table.get(CostRole::CoreTotal)?;
    Ok((core.energy_fj - sum) / arch.macros_per_core() as f64)
}

pub fn energy_rollup(
    plan: &MappingPlan,
    arch: &ArchParams,
    table: &CostTable,
    opts: &CostOptions,
) -> Result<EnergySection, ConfigError> {
    let tdc = table.get(CostRole::Tdc)?;
    let buf = table.get(CostRole::IoBuffer256b)?;
    let core = table.get(CostRole::CoreTotal)?;
    let mut totals = PassCounts {
        macros: 0.0,
        cells: 0.0,
        row_drivers: 0.0,
        time_accs: 0.0,
        tdcs: 0.0,
        buffer_reads: 0.0,
        buffer_writes: 0.0,
    };
    for p in &plan.passes {
        let n = pass_counts(p, arch);
        totals.macros += n.macros;
        totals.cells += n.cells;
        totals.row_drivers += n.row_drivers;
        totals.time_accs += n.time_accs;
        totals.tdcs += n.tdcs;
        totals.buffer_reads += n.buffer_reads;
        totals.buffer_writes += n.buffer_writes;
    }
    let line = |component: &str, count: f64, unit: f64| ComponentEnergy {
        component: component.into(),
        count,
        unit_energy_fj: unit,
        energy_fj: count * unit,
    };
    let mut components = Vec::new();
    match opts.rollup {
        Rollup::Component => {
            let mcc = table.get(CostRole::MccAct)?;
            components.push(line("mcc_act", totals.cells, mcc.energy_fj * mcc_scale(arch, table)));
            components.push(line("row_driver", totals.row_drivers, table.get(CostRole::RowDriver)?.energy_fj));
            components.push(line("time_acc", totals.time_accs, table.get(CostRole::TimeAcc)?.energy_fj));
        }
        Rollup::Macro => {
            components.push(line("macro_total", totals.macros, table.get(CostRole::MacroTotal)?.energy_fj));
        }
    }
    components.push(line("tdc", totals.tdcs, tdc.energy_fj));
    components.push(line("io_buffer_read", totals.buffer_reads, buf.energy_fj));
    components.push(line("io_buffer_write", totals.buffer_writes, buf.energy_fj));
    let component_sum_fj: f64 = components.iter().map(|c| c.energy_fj).sum();
    let residual_fj = match opts.rollup {
        Rollup::Component => totals.macros * residual_per_macro_fj(arch, table)?,
        Rollup::Macro => 0.0,
    };
    let total_fj = component_sum_fj + residual_fj;
    let reference_total_fj = plan.passes.len() as f64 * core.energy_fj;
    Ok(EnergySection {
        rollup: opts.rollup,
        components,
        component_sum_fj,
        residual_fj,
        total_fj,
        reference_total_fj,
        gap_fj: reference_total_fj - total_fj,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineSegment {
    pub pass: usize,
    pub phase: String,
    pub start_ps: f64,
    pub end_ps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySection {
    pub timeline: Vec<TimelineSegment>,
    pub total_ps: f64,
}

/// Passes run back to back; within a pass: input fetch, row broadcast,
/// phases I-V, chain, TDC, output write.
pub fn latency_schedule(plan: &MappingPlan, arch: &ArchParams, table: &CostTable) -> Result<LatencySection, ConfigError> {
    let buf = table.get(CostRole::IoBuffer256b)?.latency_ps;
    let rd = table.get(CostRole::RowDriver)?.latency_ps;
    let ta = table.get(CostRole::TimeAcc)?.latency_ps;
    let tdc = table.get(CostRole::Tdc)?.latency_ps;
    let macro_ps = table.get(CostRole::MacroTotal)?.latency_ps;
    let mut timeline = Vec::new();
    let mut t = 0.0;
    for (i, p) in plan.passes.iter().enumerate() {
        let n = pass_counts(p, arch);
        let mut push = |phase: &str, dur: f64| {
            timeline.push(TimelineSegment {
                pass: i,
                phase: phase.into(),
                start_ps: t,
                end_ps: t + dur,
            });
            t += dur;
        };
        push("input_fetch", n.buffer_reads * buf);
        push("row_broadcast", p.engaged_h as f64 * rd);
        for ph in MACRO_PHASES {
            push(ph, macro_ps / MACRO_PHASES.len() as f64);
        }
        push("phase_vi_chain", p.engaged_v as f64 * ta);
        push("phase_vi_tdc", tdc);
        push("output_write", n.buffer_writes * buf);
    }
    Ok(LatencySection { timeline, total_ps: t })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub ops: f64,
    pub energy_fj: f64,
    pub latency_ps: f64,
    pub tops: f64,
    pub tops_per_watt: f64,
}

/// `ops / latency` and `ops / energy`, in TOPS and TOPS/W. Zero when either
/// denominator or `ops` is zero.
pub fn performance(ops: f64, energy_fj: f64, latency_ps: f64) -> Performance {
    let per = |den: f64| if ops > 0.0 && den > 0.0 { ops / den * 1e-12 } else { 0.0 };
    Performance {
        ops,
        energy_fj,
        latency_ps,
        tops: per(latency_ps * 1e-12),
        tops_per_watt: per(energy_fj * 1e-15),
    }
}

/// Two operations per multiply-accumulate.
pub fn ops_count(k: usize, c: usize) -> f64 {
    2.0 * k as f64 * c as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub interconnect: f64,
    pub conversion: f64,
    pub compute: f64,
    pub communication: f64,
}

/// Fractions of the component sum (the residual is not binned).
pub fn breakdown(energy: &EnergySection, opts: &CostOptions) -> Breakdown {
    let e = |name: &str| energy.component(name).map_or(0.0, |c| c.energy_fj);
    let mcc = e("mcc_act");
    let (conv_mcc, compute) = if opts.input_conversion_as_conversion {
        (mcc * CONVERSION_PHASE_SHARE, mcc * (1.0 - CONVERSION_PHASE_SHARE))
    } else {
        (0.0, mcc)
    };
    // Macro mode has no finer split of the aggregate; it counts as compute.
    let compute = compute + e("macro_total");
    let interconnect = e("row_driver") + e("time_acc");
    let conversion = e("tdc") + conv_mcc;
    let communication = e("io_buffer_read") + e("io_buffer_write");
    let sum = interconnect + conversion + compute + communication;
    if sum <= 0.0 {
        return Breakdown {
            interconnect: 0.0,
            conversion: 0.0,
            compute: 0.0,
            communication: 0.0,
        };
    }
    Breakdown {
        interconnect: interconnect / sum,
        conversion: conversion / sum,
        compute: compute / sum,
        communication: communication / sum,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentArea {
    pub component: String,
    pub count: f64,
    pub unit_area_um2: f64,
    pub area_um2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSection {
    pub components: Vec<ComponentArea>,
    pub total_um2: f64,
    pub reference_total_um2: f64,
    /// Cell, driver and accumulator area inside one macro, for comparison with its aggregate.
    pub macro_fine_um2: f64,
}

/// One core: macros, one TDC per output column, one I/O buffer.
pub fn area_rollup(arch: &ArchParams, table: &CostTable) -> Result<AreaSection, ConfigError> {
    let line = |component: &str, count: f64, e: CostEntry| ComponentArea {
        component: component.into(),
        count,
        unit_area_um2: e.area_um2,
        area_um2: count * e.area_um2,
    };
    let components = vec![
        line("macro_total", arch.macros_per_core() as f64, table.get(CostRole::MacroTotal)?),
        line("tdc", arch.outputs_per_core() as f64, table.get(CostRole::Tdc)?),
        line("io_buffer", 1.0, table.get(CostRole::IoBuffer256b)?),
    ];
    let m = arch.rows_per_macro as f64;
    let macro_fine_um2 = m * arch.cols_per_macro as f64 * table.get(CostRole::MccAct)?.area_um2
        + m * table.get(CostRole::RowDriver)?.area_um2
        + arch.cbs_per_macro as f64 * table.get(CostRole::TimeAcc)?.area_um2;
    Ok(AreaSection {
        total_um2: components.iter().map(|c| c.area_um2).sum(),
        components,
        reference_total_um2: table.get(CostRole::CoreTotal)?.area_um2,
        macro_fine_um2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSection {
    /// From the core-total energy and latency entries.
    pub reference_totals: Performance,
    /// From this report's energy and latency rollups.
    pub rollup: Performance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub k: usize,
    pub c: usize,
    pub passes: usize,
    pub sparsity: f64,
    pub energy: EnergySection,
    pub latency: LatencySection,
    pub area: AreaSection,
    pub performance: PerformanceSection,
    pub breakdown: Breakdown,
}

pub fn cost_report(
    plan: &MappingPlan,
    arch: &ArchParams,
    table: &CostTable,
    opts: &CostOptions,
) -> Result<CostReport, ConfigError> {
    let energy = energy_rollup(plan, arch, table, opts)?;
    let latency = latency_schedule(plan, arch, table)?;
    let core = table.get(CostRole::CoreTotal)?;
    let ops = ops_count(plan.k, plan.c);
    let n = plan.passes.len() as f64;
    Ok(CostReport {
        k: plan.k,
        c: plan.c,
        passes: plan.passes.len(),
        sparsity: arch.sparsity,
        breakdown: breakdown(&energy, opts),
        performance: PerformanceSection {
            reference_totals: performance(ops, n * core.energy_fj, n * core.latency_ps),
            rollup: performance(ops, energy.total_fj, latency.total_ps),
        },
        area: area_rollup(arch, table)?,
        energy,
        latency,
    })
}
