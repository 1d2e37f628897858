// SPDX-License-Identifier: Apache-2.0

//! Transfer curves, linearity metrics and MAC error sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ArchParams;
use crate::datapath::input_convert;
use crate::mapper::{run_vmm, tile, MapperError, RunOptions, VmmJob};
use crate::variation::DeviceInstance;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("curve must cover codes 0..={expected} in order (got {got} points)")]
    IncompleteCurve { expected: u64, got: usize },
    #[error(transparent)]
    Mapper(#[from] MapperError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCurve {
    pub axis: String,
    /// (code, volts), codes strictly increasing.
    pub points: Vec<(u32, f64)>,
}

/// Input conversion of every code on `row` of macro `(v, h)`.
pub fn transfer_sweep(inst: &DeviceInstance, v: usize, h: usize, row: usize) -> TransferCurve {
    let arch = inst.arch();
    let caps = inst.macro_caps(v, h);
    let mut codes = vec![0u32; arch.rows_per_macro];
    let points = (0..=arch.max_input() as u32)
        .map(|code| {
            codes[row] = code;
            let volts = input_convert(&codes, arch, &caps).expect("codes within range")[row];
            (code, volts)
        })
        .collect();
    TransferCurve {
        axis: "input_code".into(),
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityMetrics {
    pub lsb_volts: f64,
    pub inl: Vec<f64>,
    pub dnl: Vec<f64>,
    pub max_abs_inl: f64,
    pub max_abs_dnl: f64,
}

/// Endpoint-fit INL and DNL in units of `vdd / 2^n_in`. DNL is each step's
/// deviation from the fitted step, so `inl[k+1] - inl[k] == dnl[k]`.
pub fn compute_inl_dnl(curve: &TransferCurve, arch: &ArchParams) -> Result<LinearityMetrics, AnalysisError> {
    let expected = arch.max_input();
    let complete = curve.points.len() as u64 == expected + 1
        && curve.points.iter().enumerate().all(|(i, &(c, _))| c as usize == i);
    if !complete {
        return Err(AnalysisError::IncompleteCurve {
            expected,
            got: curve.points.len(),
        });
    }
    let lsb = arch.lsb_volts();
    let v: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    let n = v.len() - 1;
    let (v0, vn) = (v[0], v[n]);
    let inl: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let fit = v0 + (vn - v0) * k as f64 / n as f64;
            (x - fit) / lsb
        })
        .collect();
    let step = (vn - v0) / n as f64;
    let dnl: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0] - step) / lsb).collect();
    let max_abs = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(LinearityMetrics {
        lsb_volts: lsb,
        max_abs_inl: max_abs(&inl),
        max_abs_dnl: max_abs(&dnl),
        inl,
        dnl,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Percent of the single-macro full-scale MAC (equivalently of vdd).
    #[default]
    FullScale,
    /// Percent of the ideal MAC at each code; undefined where it is zero.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacErrorPoint {
    pub code: u32,
    pub ideal: u64,
    pub estimate: f64,
    pub tdc_code: u32,
    pub error_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacErrorCurves {
    /// Weights swept with every input at full scale.
    pub weight_sweep: Vec<MacErrorPoint>,
    /// Inputs swept with every weight at full scale.
    pub input_sweep: Vec<MacErrorPoint>,
    pub full_scale: u64,
}

impl MacErrorCurves {
    pub fn max_error_pct(&self) -> f64 {
        self.weight_sweep
            .iter()
            .chain(&self.input_sweep)
            .filter_map(|p| p.error_pct)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacErrorOptions {
    pub normalization: Normalization,
    pub tdc_bypass: bool,
}

/// Both sweeps over one macro's worth of input channels (`rows_per_macro`)
/// and a single output channel.
pub fn mac_error_curves(inst: &DeviceInstance, opts: MacErrorOptions) -> Result<MacErrorCurves, AnalysisError> {
    let arch = inst.arch();
    let k = arch.rows_per_macro;
    let top_in = arch.max_input() as u32;
    let top_w = arch.max_weight() as u32;
    let sweep = |n: u32, base: u64, make: &(dyn Fn(u32) -> VmmJob + Sync)| -> Result<Vec<MacErrorPoint>, AnalysisError> {
        (0..=n)
            .into_par_iter()
            .map(|code| {
                let job = make(code);
                let run = RunOptions {
                    tdc_bypass: opts.tdc_bypass,
                    conversion: base + code as u64,
                    ..RunOptions::default()
                };
                let r = run_vmm(&job, &tile(&job, arch), inst, &run)?;
                let ideal = r.ideal_macs[0];
                let estimate = if opts.tdc_bypass {
                    r.analog_estimates[0]
                } else {
                    r.mac_estimates[0] as f64
                };
                let err = (estimate - ideal as f64).abs();
                let error_pct = match opts.normalization {
                    Normalization::FullScale => Some(err / r.stats.full_scale as f64 * 100.0),
                    Normalization::Ideal if ideal == 0 => None,
                    Normalization::Ideal => Some(err / ideal as f64 * 100.0),
                };
                Ok(MacErrorPoint {
                    code,
                    ideal,
                    estimate,
                    tdc_code: r.codes[0][0],
                    error_pct,
                })
            })
            .collect()
    };
    let weight_sweep = sweep(top_w, 0, &|w| VmmJob::new(vec![top_in; k], vec![w; k], 1).expect("valid job"))?;
    let input_sweep = sweep(top_in, top_w as u64 + 1, &|x| {
        VmmJob::new(vec![x; k], vec![top_w; k], 1).expect("valid job")
    })?;
    Ok(MacErrorCurves {
        weight_sweep,
        input_sweep,
        full_scale: crate::mapper::pass_full_scale(arch, 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::VariationParams;
    use crate::variation::sample_instance;

    #[test]
    fn ideal_curve_is_exact_and_linear() {
        let a = ArchParams::default();
        let c = transfer_sweep(&DeviceInstance::ideal(&a), 0, 0, 0);
        assert_eq!(c.points.len(), 256);
        for &(code, v) in &c.points {
            let expect = code as f64 / 255.0 * 0.9;
            assert!((v - expect).abs() <= 1e-12 * expect.max(1e-300));
        }
        let m = compute_inl_dnl(&c, &a).unwrap();
        assert!(m.max_abs_inl <= 1e-9);
        assert_eq!(m.dnl.len(), 255);
        assert_eq!(m.inl[0], 0.0);
        assert!(m.max_abs_dnl <= 1e-9);
    }

    #[test]
    fn bumped_code_shows_in_inl() {
        let a = ArchParams::default();
        let lsb = a.lsb_volts();
        let mut pts: Vec<(u32, f64)> = (0..256).map(|k| (k, k as f64 * lsb)).collect();
        pts[100].1 += 0.5 * lsb;
        let m = compute_inl_dnl(&TransferCurve { axis: "x".into(), points: pts }, &a).unwrap();
        assert!((m.inl[100] - 0.5).abs() < 1e-9);
        assert!((m.max_abs_inl - 0.5).abs() < 1e-9);
        assert!((m.dnl[99] - 0.5).abs() < 1e-9 && (m.dnl[100] + 0.5).abs() < 1e-9);
        let linear: Vec<(u32, f64)> = (0..256).map(|k| (k, k as f64 * lsb)).collect();
        let m = compute_inl_dnl(&TransferCurve { axis: "x".into(), points: linear }, &a).unwrap();
        assert!(m.max_abs_inl <= 1e-9 && m.max_abs_dnl <= 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn dnl_is_inl_difference(v in proptest::collection::vec(0.0f64..0.9, 256)) {
            let a = ArchParams::default();
            let pts = v.iter().enumerate().map(|(k, &x)| (k as u32, x)).collect();
            let m = compute_inl_dnl(&TransferCurve { axis: "x".into(), points: pts }, &a).unwrap();
            for k in 0..255 {
                proptest::prop_assert!((m.inl[k + 1] - m.inl[k] - m.dnl[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn linear_curves_are_clean(slope in 0.0f64..0.01, offset in 0.0f64..0.1) {
            let a = ArchParams::default();
            let pts = (0..256u32).map(|k| (k, offset + slope * k as f64)).collect();
            let m = compute_inl_dnl(&TransferCurve { axis: "x".into(), points: pts }, &a).unwrap();
            proptest::prop_assert!(m.max_abs_inl <= 1e-9 && m.max_abs_dnl <= 1e-9);
        }
    }

    #[test]
    fn incomplete_curve_rejected() {
        let a = ArchParams::default();
        let pts: Vec<(u32, f64)> = (0..200).map(|k| (k, 0.0)).collect();
        assert!(compute_inl_dnl(&TransferCurve { axis: "x".into(), points: pts }, &a).is_err());
    }

    #[test]
    fn mismatched_curve_within_two_lsb() {
        let a = ArchParams::default();
        let inst = sample_instance(&a, &VariationParams::default(), 0);
        let m = compute_inl_dnl(&transfer_sweep(&inst, 0, 0, 0), &a).unwrap();
        assert!(m.max_abs_inl < 2.0 && m.max_abs_dnl < 2.0, "{} {}", m.max_abs_inl, m.max_abs_dnl);
    }

    #[test]
    fn ideal_mac_error_is_quantization_only() {
        let a = ArchParams::default();
        let inst = DeviceInstance::ideal(&a);
        let bypass = mac_error_curves(&inst, MacErrorOptions { tdc_bypass: true, ..Default::default() }).unwrap();
        assert!(bypass.max_error_pct() < 1e-9);
        let c = mac_error_curves(&inst, MacErrorOptions::default()).unwrap();
        assert!(c.max_error_pct() <= 100.0 / 510.0 + 1e-9);
        assert_eq!(c.weight_sweep[0].error_pct, Some(0.0));
        assert_eq!(c.input_sweep[0].error_pct, Some(0.0));
        let rel = mac_error_curves(&inst, MacErrorOptions { normalization: Normalization::Ideal, tdc_bypass: true }).unwrap();
        assert_eq!(rel.weight_sweep[0].error_pct, None);
    }
}
