// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use aidac_core::analysis::{compute_inl_dnl, mac_error_curves, transfer_sweep, MacErrorOptions, MacErrorPoint, Normalization};
use aidac_core::config::{Config, VariationParams};
use aidac_core::cost::{cost_report, CostOptions, Rollup};
use aidac_core::datapath::{run_macro_phases, WeightPlane};
use aidac_core::job_io::{read_job_binary, read_job_csv, MAGIC};
use aidac_core::mapper::{run_vmm, tile, tile_dims, Executor, RunOptions, VmmJob};
use aidac_core::mlp::{calibrate_mlp, infer_mlp, load_dataset_csv, InferMode, InferOptions, MlpModel};
use aidac_core::variation::{
    calibrate_sigma_cap, calibrate_vtc, chain_full_scale_error, input_conversion_error, mid_code, monte_carlo_samples,
    sample_instance, DeviceInstance, McStats,
};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::output::{num, opt, OutDir};
use crate::CliError;

/// Everything a subcommand needs besides its own flags.
pub struct Ctx {
    pub cfg: Config,
    pub seed: u64,
    pub out: OutDir,
}

impl Ctx {
    fn variation(&self) -> VariationParams {
        self.cfg.variation.clone().with_seed(self.seed)
    }

    fn instance(&self, a: &InstanceArgs) -> DeviceInstance {
        match a.mode {
            Mode::Ideal => DeviceInstance::ideal(&self.cfg.arch),
            Mode::Mc => sample_instance(&self.cfg.arch, &self.variation(), a.trial),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Nominal devices.
    Ideal,
    /// One sampled instance of the configured variation.
    Mc,
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    #[arg(long, value_enum, default_value_t = Mode::Ideal)]
    pub mode: Mode,
    /// Monte Carlo trial index of the instance.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inst: InstanceArgs,
    #[arg(long, default_value_t = 0)]
    pub macro_v: usize,
    #[arg(long, default_value_t = 0)]
    pub macro_h: usize,
    #[arg(long, default_value_t = 0)]
    pub row: usize,
}

fn check_position(ctx: &Ctx, a: &SweepArgs) -> Result<(), CliError> {
    let arch = &ctx.cfg.arch;
    if a.macro_v >= arch.macros_v || a.macro_h >= arch.macros_h || a.row >= arch.rows_per_macro {
        return Err(CliError::Input(format!(
            "position v={} h={} row={} is outside the {}x{} core of {}-row macros",
            a.macro_v, a.macro_h, a.row, arch.macros_v, arch.macros_h, arch.rows_per_macro
        )));
    }
    Ok(())
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

pub fn transfer(ctx: &Ctx, a: &SweepArgs) -> Result<String, CliError> {
    check_position(ctx, a)?;
    let curve = transfer_sweep(&ctx.instance(&a.inst), a.macro_v, a.macro_h, a.row);
    let p = ctx.out.write_csv(
        "transfer.csv",
        &["input_code", "voltage_v"],
        curve.points.iter().map(|&(c, v)| vec![c.to_string(), num(v)]),
    )?;
    let top = curve.points.last().map_or(0.0, |p| p.1);
    Ok(format!("transfer-sweep: {} codes, top code at {} V -> {}", curve.points.len(), num(top), shown(&p)))
}

pub fn inl_dnl(ctx: &Ctx, a: &SweepArgs) -> Result<String, CliError> {
    check_position(ctx, a)?;
    let curve = transfer_sweep(&ctx.instance(&a.inst), a.macro_v, a.macro_h, a.row);
    let m = compute_inl_dnl(&curve, &ctx.cfg.arch).map_err(|e| CliError::Compute(e.to_string()))?;
    ctx.out.write_csv(
        "inl_dnl.csv",
        &["input_code", "voltage_v", "inl_lsb", "dnl_lsb"],
        curve
            .points
            .iter()
            .enumerate()
            .map(|(k, &(c, v))| vec![c.to_string(), num(v), num(m.inl[k]), opt(m.dnl.get(k).copied())]),
    )?;
    let p = ctx.out.write_json(
        "linearity.json",
        &json!({
            "lsb_volts": m.lsb_volts,
            "max_abs_inl_lsb": m.max_abs_inl,
            "max_abs_dnl_lsb": m.max_abs_dnl,
            "convention": "endpoint_fit",
        }),
    )?;
    Ok(format!(
        "inl-dnl: max |INL| {} LSB, max |DNL| {} LSB -> {}",
        num(m.max_abs_inl),
        num(m.max_abs_dnl),
        shown(&p)
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum McExperiment {
    /// Input conversion error (mV) of one code on row 0 of macro (0, 0).
    InputConversion,
    /// Relative full-scale error of a chain through every vertical stage (%).
    Chain,
    /// Largest MAC error over both single-macro sweeps (% of full scale).
    MacError,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[arg(long, value_enum, default_value_t = McExperiment::InputConversion)]
    pub experiment: McExperiment,
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    #[arg(long, default_value_t = aidac_core::variation::DEFAULT_HISTOGRAM_BINS)]
    pub bins: usize,
    /// Input code for the conversion experiment; mid-scale when omitted.
    #[arg(long)]
    pub code: Option<u32>,
    /// Read chain intervals without TDC quantization (mac-error experiment).
    #[arg(long)]
    pub tdc_bypass: bool,
}

pub fn monte_carlo(ctx: &Ctx, a: &McArgs) -> Result<String, CliError> {
    let arch = &ctx.cfg.arch;
    if a.trials == 0 {
        return Err(CliError::Input("--trials must be at least 1".into()));
    }
    let code = a.code.unwrap_or_else(|| mid_code(arch));
    if code as u64 > arch.max_input() {
        return Err(CliError::Input(format!("--code {code} exceeds {}", arch.max_input())));
    }
    let vp = ctx.variation();
    let compute = |e: String| CliError::Compute(e);
    let (name, unit, (samples, resampled)) = match a.experiment {
        McExperiment::InputConversion => (
            "input_conversion",
            "mV",
            monte_carlo_samples(arch, &vp, a.trials, |i| {
                Ok::<_, std::convert::Infallible>(input_conversion_error(i, code) * 1e3)
            })
            .map_err(|e| compute(e.to_string()))?,
        ),
        McExperiment::Chain => (
            "chain_full_scale",
            "%",
            monte_carlo_samples(arch, &vp, a.trials, |i| {
                Ok::<_, std::convert::Infallible>(chain_full_scale_error(i) * 100.0)
            })
            .map_err(|e| compute(e.to_string()))?,
        ),
        McExperiment::MacError => {
            let opts = MacErrorOptions {
                tdc_bypass: a.tdc_bypass,
                ..Default::default()
            };
            (
                "mac_error_max",
                "%",
                monte_carlo_samples(arch, &vp, a.trials, |i| mac_error_curves(i, opts).map(|c| c.max_error_pct()))
                    .map_err(|e| compute(e.to_string()))?,
            )
        }
    };
    let mut stats = McStats::from_samples(&samples, a.bins);
    stats.resampled = resampled;
    ctx.out.write_csv(
        "mc_samples.csv",
        &["trial", "value"],
        samples.iter().enumerate().map(|(t, &x)| vec![t.to_string(), num(x)]),
    )?;
    ctx.out.write_csv(
        "mc_histogram.csv",
        &["bin_low", "bin_high", "count"],
        stats.histogram.iter().map(|b| vec![num(b.low), num(b.high), b.count.to_string()]),
    )?;
    let p = ctx.out.write_json(
        "mc_stats.json",
        &json!({
            "experiment": name,
            "unit": unit,
            "code": matches!(a.experiment, McExperiment::InputConversion).then_some(code),
            "variation": vp,
            "stats": stats,
        }),
    )?;
    Ok(format!(
        "monte-carlo: {name} over {} trials, mean {} {unit}, 3-sigma {} {unit} -> {}",
        stats.trials,
        num(stats.mean),
        num(stats.three_sigma),
        shown(&p)
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    FullScale,
    Ideal,
}

#[derive(Debug, Clone, Args)]
pub struct MacErrorArgs {
    #[command(flatten)]
    pub inst: InstanceArgs,
    #[arg(long)]
    pub tdc_bypass: bool,
    #[arg(long, value_enum, default_value_t = NormArg::FullScale)]
    pub normalization: NormArg,
}

pub fn mac_error(ctx: &Ctx, a: &MacErrorArgs) -> Result<String, CliError> {
    let opts = MacErrorOptions {
        tdc_bypass: a.tdc_bypass,
        normalization: match a.normalization {
            NormArg::FullScale => Normalization::FullScale,
            NormArg::Ideal => Normalization::Ideal,
        },
    };
    let curves = mac_error_curves(&ctx.instance(&a.inst), opts).map_err(|e| CliError::Compute(e.to_string()))?;
    let row = |sweep: &str, p: &MacErrorPoint| {
        vec![
            sweep.to_string(),
            p.code.to_string(),
            p.ideal.to_string(),
            num(p.estimate),
            p.tdc_code.to_string(),
            opt(p.error_pct),
        ]
    };
    ctx.out.write_csv(
        "mac_error.csv",
        &["sweep", "code", "ideal_mac", "estimate", "tdc_code", "error_pct"],
        curves
            .weight_sweep
            .iter()
            .map(|p| row("weight", p))
            .chain(curves.input_sweep.iter().map(|p| row("input", p))),
    )?;
    let max = curves.max_error_pct();
    let p = ctx.out.write_json(
        "mac_error.json",
        &json!({
            "full_scale": curves.full_scale,
            "max_error_pct": max,
            "normalization": opts.normalization,
            "tdc_bypass": a.tdc_bypass,
        }),
    )?;
    Ok(format!("mac-error: max error {}% -> {}", num(max), shown(&p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecutorArg {
    ClosedForm,
    Engine,
}

#[derive(Debug, Clone, Args)]
pub struct VmmArgs {
    /// Job file, CSV or binary.
    #[arg(long, conflicts_with = "random")]
    pub job: Option<PathBuf>,
    /// Random job of shape KxC drawn from --seed.
    #[arg(long, value_name = "KxC")]
    pub random: Option<String>,
    #[command(flatten)]
    pub inst: InstanceArgs,
    #[arg(long, value_enum, default_value_t = ExecutorArg::ClosedForm)]
    pub executor: ExecutorArg,
    #[arg(long)]
    pub tdc_bypass: bool,
    /// Fraction of full scale mapped onto the TDC range.
    #[arg(long, default_value_t = 1.0)]
    pub tdc_range: f64,
    /// Write per-stage chain delays.
    #[arg(long)]
    pub chains: bool,
    /// Write the charge-engine phase trace of the first tile.
    #[arg(long)]
    pub phase_trace: bool,
}

fn parse_shape(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Input(format!("--random expects KxC, got {s:?}"));
    let (k, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    if k == 0 || c == 0 {
        return Err(bad());
    }
    Ok((k, c))
}

fn load_job(ctx: &Ctx, a: &VmmArgs) -> Result<VmmJob, CliError> {
    let arch = &ctx.cfg.arch;
    if let Some(path) = &a.job {
        let bytes = fs::read(path).map_err(|e| CliError::Io {
            path: shown(path),
            message: e.to_string(),
        })?;
        let input = |e: String| CliError::Input(format!("{}: {e}", shown(path)));
        if bytes.starts_with(MAGIC) {
            let (job, n_in, n_w) = read_job_binary(&bytes).map_err(|e| input(e.to_string()))?;
            if (n_in, n_w) != (arch.n_in_bits, arch.n_w_bits) {
                return Err(input(format!(
                    "job declares {n_in}/{n_w}-bit elements, config uses {}/{}",
                    arch.n_in_bits, arch.n_w_bits
                )));
            }
            return Ok(job);
        }
        let text = String::from_utf8(bytes).map_err(|e| input(e.to_string()))?;
        return read_job_csv(&text).map_err(|e| input(e.to_string()));
    }
    let (k, c) = parse_shape(a.random.as_deref().unwrap_or("128x32"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let inputs = (0..k).map(|_| rng.random_range(0..=arch.max_input() as u32)).collect();
    let weights = (0..k * c).map(|_| rng.random_range(0..=arch.max_weight() as u32)).collect();
    VmmJob::new(inputs, weights, c).map_err(|e| CliError::Input(e.to_string()))
}

pub fn run_vmm_cmd(ctx: &Ctx, a: &VmmArgs) -> Result<String, CliError> {
    let arch = &ctx.cfg.arch;
    let job = load_job(ctx, a)?;
    job.validate(arch).map_err(|e| CliError::Input(e.to_string()))?;
    let plan = tile(&job, arch);
    let inst = ctx.instance(&a.inst);
    let opts = RunOptions {
        executor: match a.executor {
            ExecutorArg::ClosedForm => Executor::ClosedForm,
            ExecutorArg::Engine => Executor::Engine,
        },
        tdc_bypass: a.tdc_bypass,
        tdc_range: a.tdc_range,
        conversion: 0,
        keep_chains: a.chains,
    };
    let r = run_vmm(&job, &plan, &inst, &opts).map_err(|e| CliError::Compute(e.to_string()))?;
    ctx.out.write_csv(
        "vmm.csv",
        &["channel", "ideal_mac", "mac_estimate", "analog_estimate", "abs_error"],
        (0..job.c).map(|c| {
            let est = if a.tdc_bypass { r.analog_estimates[c] } else { r.mac_estimates[c] as f64 };
            vec![
                c.to_string(),
                r.ideal_macs[c].to_string(),
                r.mac_estimates[c].to_string(),
                num(r.analog_estimates[c]),
                num((est - r.ideal_macs[c] as f64).abs()),
            ]
        }),
    )?;
    ctx.out.write_csv(
        "vmm_codes.csv",
        &["vertical_pass", "channel", "tdc_code"],
        r.codes
            .iter()
            .enumerate()
            .flat_map(|(v, row)| row.iter().enumerate().map(move |(c, code)| vec![v.to_string(), c.to_string(), code.to_string()])),
    )?;
    if a.chains {
        ctx.out.write_csv(
            "chains.csv",
            &["vertical_pass", "channel", "stage", "delay_ps", "t_stop_ps", "t_start_ps"],
            r.chains.iter().enumerate().flat_map(|(v, row)| {
                row.iter().enumerate().flat_map(move |(c, ch)| {
                    ch.stage_delays_ps.iter().enumerate().map(move |(s, d)| {
                        vec![
                            v.to_string(),
                            c.to_string(),
                            s.to_string(),
                            num(*d),
                            num(ch.t_stop_ps),
                            num(ch.t_start_ps),
                        ]
                    })
                })
            }),
        )?;
    }
    if a.phase_trace {
        write_phase_trace(ctx, &job, &plan, &inst)?;
    }
    let p = ctx.out.write_json(
        "vmm_stats.json",
        &json!({
            "k": job.k,
            "c": job.c,
            "passes": plan.passes.len(),
            "vertical_passes": plan.vertical_passes,
            "horizontal_passes": plan.horizontal_passes,
            "executor": opts.executor,
            "tdc_bypass": a.tdc_bypass,
            "tdc_range": a.tdc_range,
            "instance": instance_label(&a.inst),
            "stats": r.stats,
        }),
    )?;
    Ok(format!(
        "run-vmm: {}x{} in {} passes, max error {}% of full scale -> {}",
        job.k,
        job.c,
        plan.passes.len(),
        num(r.stats.max_rel_error * 100.0),
        shown(&p)
    ))
}

fn instance_label(a: &InstanceArgs) -> serde_json::Value {
    match a.mode {
        Mode::Ideal => json!({"mode": "ideal"}),
        Mode::Mc => json!({"mode": "mc", "trial": a.trial}),
    }
}

fn write_phase_trace(
    ctx: &Ctx,
    job: &VmmJob,
    plan: &aidac_core::mapper::MappingPlan,
    inst: &DeviceInstance,
) -> Result<(), CliError> {
    let arch = &ctx.cfg.arch;
    let pass = &plan.passes[0];
    let t = &pass.tiles[0];
    let mut codes = vec![0u32; arch.rows_per_macro];
    codes[..t.rows.len()].copy_from_slice(&job.inputs[t.rows.clone()]);
    let per_cb: Vec<Vec<u32>> = t.channels.clone().map(|c| t.rows.clone().map(|k| job.weight(k, c)).collect()).collect();
    let compute = |e: String| CliError::Compute(e);
    let plane = WeightPlane::from_cb_weights(arch, &per_cb, pass.context).map_err(|e| compute(e.to_string()))?;
    let out = run_macro_phases(&codes, &plane, arch, &inst.macro_caps(t.v, t.h), true).map_err(|e| compute(e.to_string()))?;
    ctx.out.write_csv(
        "phase_trace.csv",
        &["phase", "island", "nodes", "capacitance_ff", "voltage_v"],
        out.phase_trace.iter().flat_map(|s| {
            s.islands.iter().map(move |i| {
                vec![
                    s.phase.to_string(),
                    i.anchor.to_string(),
                    i.size.to_string(),
                    num(i.capacitance_ff),
                    num(i.voltage),
                ]
            })
        }),
    )?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RollupArg {
    Component,
    Macro,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[arg(long, value_enum, default_value_t = RollupArg::Component)]
    pub rollup: RollupArg,
    /// Input channels; a full core when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    /// Output channels; a full core when omitted.
    #[arg(long)]
    pub c: Option<usize>,
    /// Bin input-conversion MCC energy as conversion.
    #[arg(long)]
    pub input_conversion_as_conversion: bool,
}

pub fn cost(ctx: &Ctx, a: &CostArgs) -> Result<String, CliError> {
    let arch = &ctx.cfg.arch;
    let k = a.k.unwrap_or_else(|| arch.rows_per_core());
    let c = a.c.unwrap_or_else(|| arch.outputs_per_core());
    if k == 0 || c == 0 {
        return Err(CliError::Input("--k and --c must be at least 1".into()));
    }
    let opts = CostOptions {
        rollup: match a.rollup {
            RollupArg::Component => Rollup::Component,
            RollupArg::Macro => Rollup::Macro,
        },
        input_conversion_as_conversion: a.input_conversion_as_conversion,
    };
    let report = cost_report(&tile_dims(k, c, arch), arch, &ctx.cfg.cost, &opts).map_err(CliError::Config)?;
    ctx.out.write_csv(
        "timeline.csv",
        &["pass", "phase", "start_ps", "end_ps"],
        report
            .latency
            .timeline
            .iter()
            .map(|s| vec![s.pass.to_string(), s.phase.to_string(), num(s.start_ps), num(s.end_ps)]),
    )?;
    ctx.out.write_csv(
        "energy_components.csv",
        &["component", "count", "unit_energy_fj", "energy_fj"],
        report
            .energy
            .components
            .iter()
            .map(|e| vec![e.component.clone(), num(e.count), num(e.unit_energy_fj), num(e.energy_fj)]),
    )?;
    let p = ctx.out.write_json("cost_report.json", &report)?;
    let pt = &report.performance.reference_totals;
    Ok(format!(
        "cost-report: {} TOPS/W, {} TOPS; rollup {} pJ in {} ns -> {}",
        fmt3(pt.tops_per_watt),
        fmt3(pt.tops),
        fmt3(report.energy.total_fj / 1e3),
        fmt3(report.latency.total_ps / 1e3),
        shown(&p)
    ))
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long, default_value = "data/digits_mlp.json")]
    pub model: PathBuf,
    /// Calibration split.
    #[arg(long, default_value = "data/digits_train.csv")]
    pub train: PathBuf,
    #[arg(long, default_value = "data/digits_test.csv")]
    pub test: PathBuf,
    /// `ideal` runs the analog pipeline on nominal devices; `mc` on sampled instances.
    #[arg(long, value_enum, default_value_t = Mode::Mc)]
    pub mode: Mode,
    /// Sampled instances in mc mode.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long)]
    pub tdc_bypass: bool,
    /// Map every layer onto the full TDC range.
    #[arg(long)]
    pub full_range: bool,
    /// Do not replicate narrow layers into idle rows.
    #[arg(long)]
    pub no_replication: bool,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: shown(path),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct SimRun {
    instance: serde_json::Value,
    correct: usize,
    accuracy: f64,
    drop_pp: f64,
}

pub fn infer(ctx: &Ctx, a: &InferArgs) -> Result<String, CliError> {
    let arch = &ctx.cfg.arch;
    let input = |p: &Path, e: String| CliError::Input(format!("{}: {e}", shown(p)));
    let model = MlpModel::from_json(&read_text(&a.model)?).map_err(|e| input(&a.model, e.to_string()))?;
    model.validate(arch).map_err(|e| input(&a.model, e.to_string()))?;
    let train = load_dataset_csv(&read_text(&a.train)?).map_err(|e| input(&a.train, e.to_string()))?;
    let test = load_dataset_csv(&read_text(&a.test)?).map_err(|e| input(&a.test, e.to_string()))?;
    let dim = model.layers[0].in_dim;
    for (p, d) in [(&a.train, &train), (&a.test, &test)] {
        if d.features.iter().any(|f| f.len() != dim) {
            return Err(input(p, format!("rows must have {dim} features")));
        }
    }
    let compute = |e: String| CliError::Compute(e);
    let cal = calibrate_mlp(&model, &train, arch).map_err(|e| compute(e.to_string()))?;
    let opts = InferOptions {
        tdc_bypass: a.tdc_bypass,
        use_tdc_ranges: !a.full_range,
        row_replication: !a.no_replication,
    };
    let nominal = DeviceInstance::ideal(arch);
    let digital =
        infer_mlp(&model, &test, InferMode::IdealDigital, &nominal, &cal, &opts).map_err(|e| compute(e.to_string()))?;
    let instances: Vec<(serde_json::Value, DeviceInstance)> = match a.mode {
        Mode::Ideal => vec![(json!({"mode": "ideal"}), nominal)],
        Mode::Mc => {
            if a.trials == 0 {
                return Err(CliError::Input("--trials must be at least 1".into()));
            }
            let vp = ctx.variation();
            (0..a.trials as u64)
                .map(|t| (json!({"mode": "mc", "trial": t}), sample_instance(arch, &vp, t)))
                .collect()
        }
    };
    let mut runs = Vec::new();
    let mut first_predictions = Vec::new();
    for (label, inst) in &instances {
        let r = infer_mlp(&model, &test, InferMode::Simulated, inst, &cal, &opts).map_err(|e| compute(e.to_string()))?;
        if first_predictions.is_empty() {
            first_predictions = r.predictions.clone();
        }
        runs.push(SimRun {
            instance: label.clone(),
            correct: r.correct,
            accuracy: r.accuracy,
            drop_pp: (digital.accuracy - r.accuracy) * 100.0,
        });
    }
    let worst = runs.iter().map(|r| r.drop_pp).fold(f64::NEG_INFINITY, f64::max);
    ctx.out.write_csv(
        "predictions.csv",
        &["sample", "label", "ideal_digital", "simulated"],
        test.labels.iter().enumerate().map(|(i, l)| {
            vec![
                i.to_string(),
                l.to_string(),
                digital.predictions[i].to_string(),
                first_predictions[i].to_string(),
            ]
        }),
    )?;
    let p = ctx.out.write_json(
        "infer.json",
        &json!({
            "model": model.name,
            "test_samples": test.len(),
            "ideal_digital": {"correct": digital.correct, "accuracy": digital.accuracy},
            "simulated": runs,
            "max_drop_pp": worst,
            "options": opts,
            "calibration": cal,
        }),
    )?;
    Ok(format!(
        "infer: ideal-digital {}, worst simulated drop {} pp over {} instance(s) -> {}",
        fmt3(digital.accuracy),
        fmt3(worst),
        runs.len(),
        shown(&p)
    ))
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    /// Target 3-sigma spread of the mid-code input conversion (mV).
    #[arg(long, default_value_t = 2.25)]
    pub target_mv: f64,
    /// Target 3-sigma full-scale chain error (%).
    #[arg(long, default_value_t = 0.10)]
    pub target_chain_pct: f64,
}

pub fn calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<String, CliError> {
    let arch = &ctx.cfg.arch;
    if a.trials < 2 {
        return Err(CliError::Input("--trials must be at least 2".into()));
    }
    let compute = |e: String| CliError::Compute(e);
    let cap = calibrate_sigma_cap(arch, a.target_mv, ctx.seed, a.trials).map_err(|e| compute(e.to_string()))?;
    let vtc = calibrate_vtc(arch, a.target_chain_pct / 100.0, ctx.seed, a.trials).map_err(|e| compute(e.to_string()))?;
    let mut cfg = ctx.cfg.clone();
    cfg.variation = VariationParams {
        sigma_cap: cap.sigma,
        sigma_vtc_gain: vtc.sigma_vtc_gain,
        sigma_vtc_jitter_ps: vtc.sigma_vtc_jitter_ps,
        seed: ctx.seed,
    };
    let mut text = cfg.to_json();
    text.push('\n');
    ctx.out.write_text("calibrated_config.json", &text)?;
    let p = ctx.out.write_json(
        "calibration.json",
        &json!({
            "trials": a.trials,
            "sigma_cap": cap,
            "vtc": vtc,
            "variation": cfg.variation,
        }),
    )?;
    Ok(format!(
        "calibrate: sigma_cap {} ({} mV), sigma_vtc_gain {} ({}%) -> {}",
        num(cap.sigma),
        num(cap.achieved),
        num(vtc.sigma_vtc_gain),
        num(vtc.achieved * 100.0),
        shown(&p)
    ))
}
