// SPDX-License-Identifier: Apache-2.0

//! Monte Carlo device instances, trial runner and mismatch calibration.
//!
//! Every random quantity comes from a ChaCha8 stream keyed by
//! `sha256(tag, seed, trial)` and addressed by its physical location, so any
//! trial, macro, row or VTC stage can be regenerated on its own and results
//! never depend on evaluation order or worker count.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ArchParams, VariationParams};
use crate::datapath::{convert_row, MacroCaps, MacroLayout};
use crate::time_domain::{convert_column, StageDraw, TdcParams, VtcParams};

const TAG_CAP: &[u8] = b"cap";
const TAG_VTC_GAIN: &[u8] = b"vtc-gain";
const TAG_VTC_JITTER: &[u8] = b"vtc-jitter";

/// Words reserved per conversion in a jitter stream.
const JITTER_WORDS: u128 = 16;

pub const DEFAULT_HISTOGRAM_BINS: usize = 40;

fn stream_key(tag: &[u8], seed: u64, trial: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag);
    h.update(seed.to_le_bytes());
    h.update(trial.to_le_bytes());
    h.finalize().into()
}

/// One VTC chain: the signal chain of a compute-block column or the
/// reference chain of a horizontal macro position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChainId {
    /// Global compute-block column, `h * cbs_per_macro + cb`.
    Signal(usize),
    /// Horizontal macro index.
    Reference(usize),
}

impl ChainId {
    fn stream(self, stage: usize) -> u64 {
        let (kind, idx) = match self {
            ChainId::Signal(c) => (0u64, c as u64),
            ChainId::Reference(h) => (1u64, h as u64),
        };
        kind << 62 | idx << 24 | stage as u64
    }
}

/// Row streams are keyed by physical position only, so enlarging the core
/// never reshuffles an existing macro.
fn cap_stream(v: usize, h: usize, row: usize) -> u64 {
    (v as u64) << 44 | (h as u64) << 24 | row as u64
}

/// One Monte Carlo sample of the fabric. Per-macro capacitances are
/// generated on first use.
#[derive(Debug)]
pub struct DeviceInstance {
    arch: ArchParams,
    vp: VariationParams,
    trial: u64,
    cap_key: [u8; 32],
    gain_key: [u8; 32],
    jitter_key: [u8; 32],
    macros: Vec<OnceLock<Arc<MacroCaps>>>,
    ideal_caps: OnceLock<Arc<MacroCaps>>,
    resampled: AtomicU64,
}

pub fn sample_instance(arch: &ArchParams, vp: &VariationParams, trial: u64) -> DeviceInstance {
    DeviceInstance {
        arch: arch.clone(),
        vp: vp.clone(),
        trial,
        cap_key: stream_key(TAG_CAP, vp.seed, trial),
        gain_key: stream_key(TAG_VTC_GAIN, vp.seed, trial),
        jitter_key: stream_key(TAG_VTC_JITTER, vp.seed, trial),
        macros: (0..arch.macros_per_core()).map(|_| OnceLock::new()).collect(),
        ideal_caps: OnceLock::new(),
        resampled: AtomicU64::new(0),
    }
}

impl DeviceInstance {
    /// The ideal instance of `arch`.
    pub fn ideal(arch: &ArchParams) -> Self {
        sample_instance(arch, &VariationParams::ideal(), 0)
    }

    pub fn arch(&self) -> &ArchParams {
        &self.arch
    }

    pub fn variation(&self) -> &VariationParams {
        &self.vp
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    /// (master seed, trial id)
    pub fn lineage(&self) -> (u64, u64) {
        (self.vp.seed, self.trial)
    }

    pub fn is_ideal(&self) -> bool {
        self.vp.is_ideal()
    }

    /// Non-positive draws rejected so far.
    pub fn resampled(&self) -> u64 {
        self.resampled.load(Ordering::Relaxed)
    }

    fn positive_factor(&self, rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let f = 1.0 + sigma * z;
            if f > 0.0 {
                return f;
            }
            self.resampled.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Multiplicative factors of row `row` of macro `(v, h)`, reference
    /// column last.
    pub fn cap_row_factors(&self, v: usize, h: usize, row: usize) -> Vec<f64> {
        let width = self.arch.cols_per_macro + 1;
        if self.vp.sigma_cap == 0.0 {
            return vec![1.0; width];
        }
        let mut rng = ChaCha8Rng::from_seed(self.cap_key);
        rng.set_stream(cap_stream(v, h, row));
        (0..width).map(|_| self.positive_factor(&mut rng, self.vp.sigma_cap)).collect()
    }

    /// Cell capacitances of macro `(v, h)`.
    pub fn macro_caps(&self, v: usize, h: usize) -> Arc<MacroCaps> {
        if self.vp.sigma_cap == 0.0 {
            return self.ideal_caps.get_or_init(|| Arc::new(MacroCaps::ideal(&self.arch))).clone();
        }
        let slot = &self.macros[v * self.arch.macros_h + h];
        slot.get_or_init(|| {
            let layout = MacroLayout::new(&self.arch);
            let c = self.arch.c_unit_ff;
            let mut caps = Vec::with_capacity(layout.rows * layout.width());
            for r in 0..layout.rows {
                caps.extend(self.cap_row_factors(v, h, r).into_iter().map(|f| f * c));
            }
            Arc::new(MacroCaps::from_caps(layout, caps))
        })
        .clone()
    }

    /// Stage `stage` of `chain` during conversion number `conversion`.
    /// Gain is fixed per trial; jitter is fresh per conversion.
    pub fn stage_draw(&self, chain: ChainId, stage: usize, conversion: u64) -> StageDraw {
        let stream = chain.stream(stage);
        let gain_factor = if self.vp.sigma_vtc_gain == 0.0 {
            1.0
        } else {
            let mut rng = ChaCha8Rng::from_seed(self.gain_key);
            rng.set_stream(stream);
            self.positive_factor(&mut rng, self.vp.sigma_vtc_gain)
        };
        let jitter_ps = if self.vp.sigma_vtc_jitter_ps == 0.0 {
            0.0
        } else {
            let mut rng = ChaCha8Rng::from_seed(self.jitter_key);
            rng.set_stream(stream);
            rng.set_word_pos(conversion as u128 * JITTER_WORDS);
            let z: f64 = rng.sample(StandardNormal);
            self.vp.sigma_vtc_jitter_ps * z
        };
        StageDraw {
            gain_factor,
            offset_ps: 0.0,
            jitter_ps,
        }
    }

    pub fn stage_draws(&self, chain: ChainId, stages: usize, conversion: u64) -> Vec<StageDraw> {
        (0..stages).map(|s| self.stage_draw(chain, s, conversion)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub three_sigma: f64,
    pub min: f64,
    pub max: f64,
    pub trials: usize,
    pub resampled: u64,
    pub histogram: Vec<HistogramBin>,
}

impl McStats {
    pub fn from_samples(samples: &[f64], bins: usize) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean,
            std,
            three_sigma: 3.0 * std,
            min,
            max,
            trials: samples.len(),
            resampled: 0,
            histogram: histogram(samples, min, max, bins),
        }
    }
}

fn histogram(samples: &[f64], min: f64, max: f64, bins: usize) -> Vec<HistogramBin> {
    if samples.is_empty() || bins == 0 {
        return Vec::new();
    }
    if max <= min {
        return vec![HistogramBin {
            low: min,
            high: max,
            count: samples.len() as u64,
        }];
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let i = (((x - min) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            low: min + i as f64 * width,
            high: if i + 1 == bins { max } else { min + (i + 1) as f64 * width },
            count,
        })
        .collect()
}

#[derive(Debug, Error)]
#[error("trial {trial} failed: {source}")]
pub struct McError<E: std::error::Error + 'static> {
    pub trial: u64,
    #[source]
    pub source: E,
}

/// Runs `experiment` on trials `0..trials` and returns the samples in trial order.
pub fn monte_carlo_samples<F, E>(
    arch: &ArchParams,
    vp: &VariationParams,
    trials: usize,
    experiment: F,
) -> Result<(Vec<f64>, u64), McError<E>>
where
    F: Fn(&DeviceInstance) -> Result<f64, E> + Sync,
    E: std::error::Error + Send + 'static,
{
    let out: Vec<Result<(f64, u64), McError<E>>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let inst = sample_instance(arch, vp, trial);
            experiment(&inst)
                .map(|x| (x, inst.resampled()))
                .map_err(|source| McError { trial, source })
        })
        .collect();
    let mut samples = Vec::with_capacity(trials);
    let mut resampled = 0;
    for r in out {
        let (x, n) = r?;
        samples.push(x);
        resampled += n;
    }
    Ok((samples, resampled))
}

pub fn monte_carlo<F, E>(
    arch: &ArchParams,
    vp: &VariationParams,
    trials: usize,
    bins: usize,
    experiment: F,
) -> Result<McStats, McError<E>>
where
    F: Fn(&DeviceInstance) -> Result<f64, E> + Sync,
    E: std::error::Error + Send + 'static,
{
    let (samples, resampled) = monte_carlo_samples(arch, vp, trials, experiment)?;
    let mut stats = McStats::from_samples(&samples, bins);
    stats.resampled = resampled;
    Ok(stats)
}

/// Conversion error (V) of `code` on row 0 of macro (0, 0).
pub fn input_conversion_error(inst: &DeviceInstance, code: u32) -> f64 {
    let arch = inst.arch();
    let layout = MacroLayout::new(arch);
    let factors = inst.cap_row_factors(0, 0, 0);
    let groups: Vec<f64> = layout
        .row_groups
        .iter()
        .map(|g| factors[g.clone()].iter().map(|f| f * arch.c_unit_ff).sum())
        .collect();
    let measured = convert_row(code, &groups, arch.vdd_volts);
    measured - code as f64 / arch.max_input() as f64 * arch.vdd_volts
}

/// Relative error of a full-scale chain interval over all vertical stages.
pub fn chain_full_scale_error(inst: &DeviceInstance) -> f64 {
    let arch = inst.arch();
    let stages = arch.macros_v;
    let vtc = VtcParams::from_arch(arch);
    let signal = inst.stage_draws(ChainId::Signal(0), stages, 0);
    let reference = inst.stage_draws(ChainId::Reference(0), stages, 0);
    let tdc = TdcParams::for_chain(arch, stages, 1.0);
    let r = convert_column(&vec![arch.vdd_volts; stages], arch.vdd_volts, &vtc, &signal, &reference, &tdc)
        .expect("full-scale voltages are in range");
    let ideal = vtc.gain_ps_per_v * arch.vdd_volts * stages as f64;
    (r.interval_ps() - ideal) / ideal
}

pub fn mid_code(arch: &ArchParams) -> u32 {
    1 << (arch.n_in_bits - 1)
}

/// Spread of the mid-code conversion, 3-sigma in mV.
pub fn input_conversion_spread_mv(arch: &ArchParams, sigma_cap: f64, seed: u64, trials: usize) -> f64 {
    let vp = VariationParams {
        sigma_cap,
        ..VariationParams::ideal()
    }
    .with_seed(seed);
    let code = mid_code(arch);
    let stats = monte_carlo(arch, &vp, trials, 0, |i| Ok::<_, std::convert::Infallible>(input_conversion_error(i, code)))
        .expect("infallible");
    stats.three_sigma * 1e3
}

/// 3-sigma relative full-scale chain error.
pub fn chain_spread(arch: &ArchParams, sigma_gain: f64, sigma_jitter_ps: f64, seed: u64, trials: usize) -> f64 {
    let vp = VariationParams {
        sigma_vtc_gain: sigma_gain,
        sigma_vtc_jitter_ps: sigma_jitter_ps,
        ..VariationParams::ideal()
    }
    .with_seed(seed);
    monte_carlo(arch, &vp, trials, 0, |i| Ok::<_, std::convert::Infallible>(chain_full_scale_error(i)))
        .expect("infallible")
        .three_sigma
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("target must be finite and >= 0 (got {0})")]
    BadTarget(f64),
    #[error("no sigma up to {limit} reaches the target")]
    Unbounded { limit: f64 },
    #[error("bisection stalled after {iterations} steps at spread {achieved} for target {target}")]
    NoConvergence { iterations: u32, achieved: f64, target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma: f64,
    pub target: f64,
    pub achieved: f64,
    pub iterations: u32,
}

/// Relative tolerance the bisection aims for; results within `accept` are
/// still returned if the iteration budget runs out.
const AIM: f64 = 0.002;
const ACCEPT: f64 = 0.02;
const MAX_STEPS: u32 = 80;

/// Bisection of a spread that grows monotonically with `sigma`.
fn bisect(target: f64, start: f64, spread: impl Fn(f64) -> f64) -> Result<Calibration, CalibrationError> {
    if !(target.is_finite() && target >= 0.0) {
        return Err(CalibrationError::BadTarget(target));
    }
    if target == 0.0 {
        return Ok(Calibration {
            sigma: 0.0,
            target,
            achieved: 0.0,
            iterations: 0,
        });
    }
    let mut lo = 0.0;
    let mut hi = start;
    let mut iterations = 0;
    let mut s_hi = spread(hi);
    while s_hi < target {
        lo = hi;
        hi *= 2.0;
        iterations += 1;
        if iterations > 40 {
            return Err(CalibrationError::Unbounded { limit: hi });
        }
        s_hi = spread(hi);
    }
    let mut best = (hi, s_hi);
    while iterations < MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        let s = spread(mid);
        iterations += 1;
        if (s - target).abs() < (best.1 - target).abs() {
            best = (mid, s);
        }
        if (s - target).abs() <= AIM * target {
            break;
        }
        if s < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target).abs() > ACCEPT * target {
        return Err(CalibrationError::NoConvergence {
            iterations,
            achieved: best.1,
            target,
        });
    }
    Ok(Calibration {
        sigma: best.0,
        target,
        achieved: best.1,
        iterations,
    })
}

/// Finds the unit-capacitor sigma whose mid-code conversion spread is
/// `target_3sigma_mv` over `trials` trials of `seed`.
pub fn calibrate_sigma_cap(
    arch: &ArchParams,
    target_3sigma_mv: f64,
    seed: u64,
    trials: usize,
) -> Result<Calibration, CalibrationError> {
    bisect(target_3sigma_mv, 0.01, |s| input_conversion_spread_mv(arch, s, seed, trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtcCalibration {
    pub sigma_vtc_gain: f64,
    pub sigma_vtc_jitter_ps: f64,
    pub target: f64,
    pub achieved: f64,
    pub iterations: u32,
}

/// Jitter that contributes as much chain variance as a gain spread `sigma_gain`
/// at full scale (one signal and one reference draw per stage).
pub fn matched_jitter_ps(arch: &ArchParams, sigma_gain: f64) -> f64 {
    sigma_gain * arch.vtc_gain_ps_per_v * arch.vdd_volts / std::f64::consts::SQRT_2
}

/// Scales gain spread and jitter together until the full-scale chain error
/// has 3-sigma `target_fraction`.
pub fn calibrate_vtc(
    arch: &ArchParams,
    target_fraction: f64,
    seed: u64,
    trials: usize,
) -> Result<VtcCalibration, CalibrationError> {
    let c = bisect(target_fraction, 1e-4, |g| {
        chain_spread(arch, g, matched_jitter_ps(arch, g), seed, trials)
    })?;
    Ok(VtcCalibration {
        sigma_vtc_gain: c.sigma,
        sigma_vtc_jitter_ps: matched_jitter_ps(arch, c.sigma),
        target: c.target,
        achieved: c.achieved,
        iterations: c.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn arch() -> ArchParams {
        ArchParams::default()
    }

    #[test]
    fn ideal_instance_is_exact() {
        let a = arch();
        let inst = sample_instance(&a, &VariationParams::ideal(), 3);
        assert!(inst.cap_row_factors(1, 2, 3).iter().all(|&f| f == 1.0));
        assert_eq!(*inst.macro_caps(0, 0), MacroCaps::ideal(&a));
        assert_eq!(inst.stage_draw(ChainId::Signal(4), 2, 9), StageDraw::IDEAL);
        assert_eq!(inst.resampled(), 0);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = arch();
        let vp = VariationParams::default().with_seed(99);
        let x = sample_instance(&a, &vp, 17);
        let y = sample_instance(&a, &vp, 17);
        assert_eq!(x.cap_row_factors(3, 1, 77), y.cap_row_factors(3, 1, 77));
        assert_eq!(*x.macro_caps(2, 5), *y.macro_caps(2, 5));
        assert_eq!(x.stage_draw(ChainId::Reference(1), 3, 1000), y.stage_draw(ChainId::Reference(1), 3, 1000));
        let z = sample_instance(&a, &vp, 18);
        assert_ne!(x.cap_row_factors(0, 0, 0), z.cap_row_factors(0, 0, 0));
        assert_ne!(x.cap_row_factors(0, 0, 0), x.cap_row_factors(0, 0, 1));
        assert_ne!(x.cap_row_factors(0, 0, 0), x.cap_row_factors(0, 1, 0));
    }

    #[test]
    fn macro_streams_ignore_core_width() {
        let a = arch();
        let narrow = ArchParams { macros_h: 1, ..a.clone() };
        let vp = VariationParams::default();
        let x = sample_instance(&a, &vp, 2);
        let y = sample_instance(&narrow, &vp, 2);
        assert_eq!(*x.macro_caps(3, 0), *y.macro_caps(3, 0));
    }

    #[test]
    fn gain_fixed_jitter_fresh() {
        let a = arch();
        let vp = VariationParams::default();
        let inst = sample_instance(&a, &vp, 0);
        let d0 = inst.stage_draw(ChainId::Signal(0), 0, 0);
        let d1 = inst.stage_draw(ChainId::Signal(0), 0, 1);
        assert_eq!(d0.gain_factor, d1.gain_factor);
        assert_ne!(d0.jitter_ps, d1.jitter_ps);
        let other = inst.stage_draw(ChainId::Reference(0), 0, 0);
        assert_ne!(d0.gain_factor, other.gain_factor);
    }

    #[test]
    fn factor_std_matches_sigma() {
        let a = arch();
        let vp = VariationParams {
            sigma_cap: 0.01,
            ..VariationParams::ideal()
        };
        let (samples, _) = monte_carlo_samples(&a, &vp, 2000, |i| Ok::<_, Infallible>(i.cap_row_factors(0, 0, 0)[5])).unwrap();
        let s = McStats::from_samples(&samples, 10);
        assert!((s.std - 0.01).abs() <= 0.05 * 0.01, "std {}", s.std);
        assert!((s.mean - 1.0).abs() < 1e-3);
    }

    #[test]
    fn resampling_is_counted() {
        let a = ArchParams {
            cols_per_macro: 256,
            ..arch()
        };
        let vp = VariationParams {
            sigma_cap: 0.6,
            ..VariationParams::ideal()
        };
        let inst = sample_instance(&a, &vp, 0);
        let f: Vec<f64> = (0..20).flat_map(|r| inst.cap_row_factors(0, 0, r)).collect();
        assert!(f.iter().all(|&x| x > 0.0));
        assert!(inst.resampled() > 0);
    }

    #[test]
    fn stats_examples() {
        let a = arch();
        let vp = VariationParams::default();
        let s = monte_carlo(&a, &vp, 50, 8, |_| Ok::<_, Infallible>(4.0)).unwrap();
        assert_eq!((s.mean, s.std, s.three_sigma, s.trials), (4.0, 0.0, 0.0, 50));
        assert_eq!(s.histogram.len(), 1);
        let s = monte_carlo(&a, &vp, 1, 8, |i| Ok::<_, Infallible>(i.trial() as f64 + 2.5)).unwrap();
        assert_eq!((s.mean, s.std), (2.5, 0.0));
        let s = McStats::from_samples(&[0.0, 1.0, 2.0, 3.0], 2);
        assert_eq!(s.histogram.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 2]);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[derive(Debug, Error)]
    #[error("boom")]
    struct Boom;

    #[test]
    fn failing_trial_is_reported() {
        let a = arch();
        let vp = VariationParams::default();
        let e = monte_carlo(&a, &vp, 20, 4, |i| if i.trial() == 13 { Err(Boom) } else { Ok(0.0) }).unwrap_err();
        assert_eq!(e.trial, 13);
    }

    #[test]
    fn order_independent() {
        let a = arch();
        let vp = VariationParams::default().with_seed(5);
        let run = || monte_carlo(&a, &vp, 64, 16, |i| Ok::<_, Infallible>(input_conversion_error(i, 128))).unwrap();
        let par = run();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        assert_eq!(par, single);
    }

    #[test]
    fn calibration_hits_target_and_scales() {
        let a = arch();
        let c = calibrate_sigma_cap(&a, 2.25, 1, 2000).unwrap();
        assert!((c.achieved - 2.25).abs() <= 0.02 * 2.25);
        let again = input_conversion_spread_mv(&a, c.sigma, 1, 2000);
        assert!((again - 2.25).abs() <= 0.02 * 2.25);
        let d = calibrate_sigma_cap(&a, 4.5, 1, 2000).unwrap();
        let ratio = d.sigma / c.sigma;
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
        assert_eq!(calibrate_sigma_cap(&a, 0.0, 1, 2000).unwrap().sigma, 0.0);
        assert!(calibrate_sigma_cap(&a, -1.0, 1, 10).is_err());
    }

    #[test]
    fn jitter_only_reference_spread() {
        let a = arch();
        let vp = VariationParams {
            sigma_vtc_jitter_ps: 2.0,
            ..VariationParams::ideal()
        };
        let vtc = VtcParams::from_arch(&a);
        let s = monte_carlo(&a, &vp, 4000, 0, |i| {
            let d = i.stage_draws(ChainId::Reference(0), 8, 0);
            crate::time_domain::reference_time(8, 0.9, &vtc, &d).map(|t| t.total_ps)
        })
        .unwrap();
        let expect = 8f64.sqrt() * 2.0;
        assert!((s.std - expect).abs() < 0.05 * expect, "{} vs {expect}", s.std);
        assert!((s.mean - 400.0).abs() < 0.5);
    }

    #[test]
    fn frozen_defaults_match_calibration() {
        use crate::config::{CALIBRATED_SIGMA_CAP, CALIBRATED_SIGMA_VTC_GAIN, CALIBRATED_SIGMA_VTC_JITTER_PS};
        let a = arch();
        let c = calibrate_sigma_cap(&a, 2.25, 1, 2000).unwrap();
        assert!((c.sigma - CALIBRATED_SIGMA_CAP).abs() < 1e-9);
        let v = calibrate_vtc(&a, 0.001, 1, 2000).unwrap();
        assert!((v.sigma_vtc_gain - CALIBRATED_SIGMA_VTC_GAIN).abs() < 1e-12);
        assert!((v.sigma_vtc_jitter_ps - CALIBRATED_SIGMA_VTC_JITTER_PS).abs() < 1e-6);
    }

    #[test]
    fn vtc_calibration() {
        let a = arch();
        let c = calibrate_vtc(&a, 0.001, 1, 2000).unwrap();
        assert!((c.achieved - 0.001).abs() <= 0.02 * 0.001);
        assert!(chain_spread(&a, c.sigma_vtc_gain, c.sigma_vtc_jitter_ps, 1, 2000) <= 0.0011);
    }
}
