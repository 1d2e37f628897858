// SPDX-License-Identifier: Apache-2.0

//! Voltage-to-time chain and TDC readout.
//!
//! Each engaged vertical macro contributes one VTC stage per compute-block
//! column; stages fire head to tail so the stop edge arrives after the sum
//! of stage delays. A parallel chain fed by the reference column supplies
//! the start edge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ArchParams, CostEntry, CostRole, CostTable};

/// Slack allowed on stage voltages for floating-point rounding of charge sharing.
const VOLTAGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TimeError {
    #[error("stage {stage} voltage {volts} V outside [0, {vdd}] V")]
    VoltageOutOfRange { stage: usize, volts: f64, vdd: f64 },
    #[error("chain expects {expected} stages, got {got}")]
    StageCount { expected: usize, got: usize },
    #[error("stage draws cover {got} stages, chain has {expected}")]
    DrawCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtcParams {
    pub t_offset_ps: f64,
    pub gain_ps_per_v: f64,
}

impl VtcParams {
    pub fn from_arch(arch: &ArchParams) -> Self {
        Self {
            t_offset_ps: arch.vtc_offset_ps,
            gain_ps_per_v: arch.vtc_gain_ps_per_v,
        }
    }
}

/// Device realization of one VTC stage for one conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageDraw {
    /// Multiplies the nominal gain (1 + epsilon).
    pub gain_factor: f64,
    /// Added to the nominal insertion delay.
    pub offset_ps: f64,
    pub jitter_ps: f64,
}

impl StageDraw {
    pub const IDEAL: StageDraw = StageDraw {
        gain_factor: 1.0,
        offset_ps: 0.0,
        jitter_ps: 0.0,
    };
}

impl Default for StageDraw {
    fn default() -> Self {
        Self::IDEAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdcParams {
    pub t_lsb_ps: f64,
    pub n_bits: u32,
    pub latency_ns: f64,
    pub energy_pj: f64,
}

impl TdcParams {
    /// Full scale spans `range` times the largest ideal interval of a chain
    /// with `stages` engaged stages: `gain * stages * vdd * range`.
    pub fn for_chain(arch: &ArchParams, stages: usize, range: f64) -> Self {
        let max = arch.max_tdc_code() as f64;
        let entry = CostTable::default().get(CostRole::Tdc).expect("default table has a TDC entry");
        Self {
            t_lsb_ps: arch.vtc_gain_ps_per_v * stages as f64 * arch.vdd_volts * range / max,
            n_bits: arch.tdc_bits,
            latency_ns: 0.0,
            energy_pj: 0.0,
        }
        .with_cost(&entry)
    }

    pub fn with_cost(mut self, entry: &CostEntry) -> Self {
        self.latency_ns = entry.latency_ns();
        self.energy_pj = entry.energy_pj();
        self
    }

    pub fn max_code(&self) -> u32 {
        ((1u64 << self.n_bits) - 1) as u32
    }
}

pub fn vtc_delay(volts: f64, vdd: f64, vtc: &VtcParams, draw: &StageDraw) -> Result<f64, TimeError> {
    check_voltage(0, volts, vdd)?;
    Ok(vtc.gain_ps_per_v * draw.gain_factor * volts + vtc.t_offset_ps + draw.offset_ps + draw.jitter_ps)
}

fn check_voltage(stage: usize, volts: f64, vdd: f64) -> Result<(), TimeError> {
    if !(volts >= -VOLTAGE_SLACK && volts <= vdd + VOLTAGE_SLACK) {
        return Err(TimeError::VoltageOutOfRange { stage, volts, vdd });
    }
    Ok(())
}

/// Stage delays of one chain, in firing order, and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTiming {
    pub delays_ps: Vec<f64>,
    pub total_ps: f64,
}

pub fn chain_accumulate(
    voltages: &[f64],
    stages: usize,
    vdd: f64,
    vtc: &VtcParams,
    draws: &[StageDraw],
) -> Result<ChainTiming, TimeError> {
    if voltages.len() != stages {
        return Err(TimeError::StageCount {
            expected: stages,
            got: voltages.len(),
        });
    }
    if draws.len() != stages {
        return Err(TimeError::DrawCount {
            expected: stages,
            got: draws.len(),
        });
    }
    let mut delays_ps = Vec::with_capacity(stages);
    for (s, (&v, d)) in voltages.iter().zip(draws).enumerate() {
        check_voltage(s, v, vdd)?;
        delays_ps.push(vtc.gain_ps_per_v * d.gain_factor * v + vtc.t_offset_ps + d.offset_ps + d.jitter_ps);
    }
    let total_ps = delays_ps.iter().sum();
    Ok(ChainTiming { delays_ps, total_ps })
}

/// Start edge: the reference column sits at 0 V in every stage.
pub fn reference_time(stages: usize, vdd: f64, vtc: &VtcParams, draws: &[StageDraw]) -> Result<ChainTiming, TimeError> {
    chain_accumulate(&vec![0.0; stages], stages, vdd, vtc, draws)
}

/// `clamp(round((t_stop - t_start) / t_lsb), 0, 2^n - 1)`, rounding half away from zero.
pub fn tdc_quantize(t_stop_ps: f64, t_start_ps: f64, tdc: &TdcParams) -> u32 {
    let x = ((t_stop_ps - t_start_ps) / tdc.t_lsb_ps).round();
    x.clamp(0.0, tdc.max_code() as f64) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeChainResult {
    pub t_stop_ps: f64,
    pub t_start_ps: f64,
    pub stage_delays_ps: Vec<f64>,
    pub code: u32,
}

impl TimeChainResult {
    pub fn interval_ps(&self) -> f64 {
        self.t_stop_ps - self.t_start_ps
    }
}

/// Signal chain, reference chain and TDC for one compute-block column.
pub fn convert_column(
    voltages: &[f64],
    vdd: f64,
    vtc: &VtcParams,
    signal_draws: &[StageDraw],
    reference_draws: &[StageDraw],
    tdc: &TdcParams,
) -> Result<TimeChainResult, TimeError> {
    let stages = voltages.len();
    let stop = chain_accumulate(voltages, stages, vdd, vtc, signal_draws)?;
    let start = reference_time(stages, vdd, vtc, reference_draws)?;
    Ok(TimeChainResult {
        code: tdc_quantize(stop.total_ps, start.total_ps, tdc),
        t_stop_ps: stop.total_ps,
        t_start_ps: start.total_ps,
        stage_delays_ps: stop.delays_ps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const VTC: VtcParams = VtcParams {
        t_offset_ps: 50.0,
        gain_ps_per_v: 1000.0,
    };

    fn ideal(n: usize) -> Vec<StageDraw> {
        vec![StageDraw::IDEAL; n]
    }

    #[test]
    fn stage_delay_examples() {
        assert_eq!(vtc_delay(0.0, 0.9, &VTC, &StageDraw::IDEAL).unwrap(), 50.0);
        assert!((vtc_delay(0.9, 0.9, &VTC, &StageDraw::IDEAL).unwrap() - 950.0).abs() < 1e-9);
        let d = StageDraw {
            gain_factor: 1.01,
            offset_ps: 0.0,
            jitter_ps: -2.0,
        };
        assert!((vtc_delay(0.5, 0.9, &VTC, &d).unwrap() - (505.0 + 50.0 - 2.0)).abs() < 1e-9);
        assert!(matches!(
            vtc_delay(0.95, 0.9, &VTC, &StageDraw::IDEAL),
            Err(TimeError::VoltageOutOfRange { .. })
        ));
        assert!(vtc_delay(-0.1, 0.9, &VTC, &StageDraw::IDEAL).is_err());
        assert!(vtc_delay(f64::NAN, 0.9, &VTC, &StageDraw::IDEAL).is_err());
    }

    #[test]
    fn chain_examples() {
        let t = chain_accumulate(&[0.0; 8], 8, 0.9, &VTC, &ideal(8)).unwrap();
        assert_eq!(t.total_ps, 400.0);
        let one = chain_accumulate(&[0.3], 1, 0.9, &VTC, &ideal(1)).unwrap();
        assert_eq!(one.total_ps, vtc_delay(0.3, 0.9, &VTC, &StageDraw::IDEAL).unwrap());
        let t = chain_accumulate(&[0.45; 8], 8, 0.9, &VTC, &ideal(8)).unwrap();
        assert!((t.total_ps - 4000.0).abs() < 1e-9);
        let two = chain_accumulate(&[0.7, 0.0], 2, 0.9, &VTC, &ideal(2)).unwrap();
        assert!((two.total_ps - (vtc_delay(0.7, 0.9, &VTC, &StageDraw::IDEAL).unwrap() + 50.0)).abs() < 1e-12);
        assert!(matches!(
            chain_accumulate(&[0.0; 7], 8, 0.9, &VTC, &ideal(8)),
            Err(TimeError::StageCount { expected: 8, got: 7 })
        ));
        assert!(chain_accumulate(&[0.0; 2], 2, 0.9, &VTC, &ideal(3)).is_err());
        assert!(chain_accumulate(&[0.0, 1.0], 2, 0.9, &VTC, &ideal(2)).is_err());
    }

    #[test]
    fn reference_and_offsets() {
        assert_eq!(reference_time(8, 0.9, &VTC, &ideal(8)).unwrap().total_ps, 400.0);
        let draws: Vec<StageDraw> = (0..8)
            .map(|i| StageDraw {
                offset_ps: i as f64 * 3.7 - 11.0,
                ..StageDraw::IDEAL
            })
            .collect();
        let arch = ArchParams::default();
        let tdc = TdcParams::for_chain(&arch, 8, 1.0);
        let r = convert_column(&[0.0; 8], 0.9, &VTC, &draws, &draws, &tdc).unwrap();
        assert_eq!(r.code, 0);
    }

    #[test]
    fn quantizer_examples() {
        let arch = ArchParams::default();
        let tdc = TdcParams::for_chain(&arch, 8, 1.0);
        assert!((tdc.t_lsb_ps - 7200.0 / 255.0).abs() < 1e-12);
        assert_eq!(tdc_quantize(1234.0, 1234.0, &tdc), 0);
        assert_eq!(tdc_quantize(255.0 * tdc.t_lsb_ps, 0.0, &tdc), 255);
        assert_eq!(tdc_quantize(256.7 * tdc.t_lsb_ps, 0.0, &tdc), 255);
        assert_eq!(tdc_quantize(0.0, 5.0 * tdc.t_lsb_ps, &tdc), 0);
        let unit = TdcParams { t_lsb_ps: 1.0, ..tdc };
        assert_eq!(tdc_quantize(2.5, 0.0, &unit), 3);
        assert_eq!(tdc_quantize(2.4999, 0.0, &unit), 2);
        assert_eq!(tdc_quantize(-0.5, 0.0, &unit), 0);
    }

    #[test]
    fn full_scale_chain_hits_top_code() {
        let arch = ArchParams::default();
        let tdc = TdcParams::for_chain(&arch, 8, 1.0);
        let r = convert_column(&[0.9; 8], 0.9, &VTC, &ideal(8), &ideal(8), &tdc).unwrap();
        assert_eq!(r.code, 255);
        assert!((r.interval_ps() - 7200.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn additivity(a in prop::collection::vec(0.0f64..0.9, 1..6), b in prop::collection::vec(0.0f64..0.9, 1..6)) {
            let ta = chain_accumulate(&a, a.len(), 0.9, &VTC, &ideal(a.len())).unwrap();
            let tb = chain_accumulate(&b, b.len(), 0.9, &VTC, &ideal(b.len())).unwrap();
            let ab: Vec<f64> = a.iter().chain(&b).copied().collect();
            let t = chain_accumulate(&ab, ab.len(), 0.9, &VTC, &ideal(ab.len())).unwrap();
            let parts: Vec<f64> = ta.delays_ps.iter().chain(&tb.delays_ps).copied().collect();
            prop_assert_eq!(&t.delays_ps, &parts);
            prop_assert!((t.total_ps - (ta.total_ps + tb.total_ps)).abs() <= 1e-9);
        }

        #[test]
        fn monotone_code(v in prop::collection::vec(0.0f64..0.85, 8), stage in 0usize..8, dv in 0.0f64..0.05) {
            let arch = ArchParams::default();
            let tdc = TdcParams::for_chain(&arch, 8, 1.0);
            let base = convert_column(&v, 0.9, &VTC, &ideal(8), &ideal(8), &tdc).unwrap();
            let mut up = v.clone();
            up[stage] += dv;
            let r = convert_column(&up, 0.9, &VTC, &ideal(8), &ideal(8), &tdc).unwrap();
            prop_assert!(r.t_stop_ps >= base.t_stop_ps);
            prop_assert!(r.code >= base.code);
        }

        #[test]
        fn offset_cancellation(offset in 0.0f64..500.0, stages in 1usize..9) {
            let vtc = VtcParams { t_offset_ps: offset, gain_ps_per_v: 1000.0 };
            let arch = ArchParams::default();
            let tdc = TdcParams::for_chain(&arch, stages, 1.0);
            let z = vec![0.0; stages];
            prop_assert_eq!(convert_column(&z, 0.9, &vtc, &ideal(stages), &ideal(stages), &tdc).unwrap().code, 0);
        }

        #[test]
        fn gain_invariance(gain in 10.0f64..10000.0, v in prop::collection::vec(0.0f64..0.9, 8)) {
            let arch = ArchParams::default();
            let scaled = ArchParams { vtc_gain_ps_per_v: gain, ..arch.clone() };
            let vtc = VtcParams::from_arch(&scaled);
            let a = convert_column(&v, 0.9, &VTC, &ideal(8), &ideal(8), &TdcParams::for_chain(&arch, 8, 1.0)).unwrap();
            let b = convert_column(&v, 0.9, &vtc, &ideal(8), &ideal(8), &TdcParams::for_chain(&scaled, 8, 1.0)).unwrap();
            let (fa, fb) = (a.interval_ps() / 7200.0 * 255.0, b.interval_ps() / (gain * 7.2) * 255.0);
            // Codes agree unless the interval sits on a rounding boundary.
            if (fa.fract() - 0.5).abs() > 1e-6 {
                prop_assert_eq!(a.code, b.code);
            }
            prop_assert!((fa - fb).abs() < 1e-9);
        }
    }
}
