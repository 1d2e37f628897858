// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;

use aidac_core::config::{default_aidac, load_config, VariationParams};
use aidac_core::cost::{cost_report, CostOptions, Rollup};
use aidac_core::job_io::{read_job_binary, write_job_binary};
use aidac_core::mapper::{ideal_vmm, pass_full_scale, run_vmm, tile, RunOptions, VmmJob};
use aidac_core::mlp::{calibrate_mlp, infer_mlp, load_dataset_csv, InferMode, InferOptions, MlpModel};
use aidac_core::variation::{monte_carlo, sample_instance, DeviceInstance};

fn job(k: usize, c: usize, seed: u64) -> VmmJob {
    let mut x = seed;
    let mut next = move || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((x >> 33) & 0xff) as u32
    };
    let inputs = (0..k).map(|_| next()).collect();
    let weights = (0..k * c).map(|_| next()).collect();
    VmmJob::new(inputs, weights, c).unwrap()
}

#[test]
fn config_file_drives_the_pipeline() {
    let cfg = load_config(r#"{"arch": {"macros_v": 2, "macros_h": 2}, "variation": {"seed": 9}}"#).unwrap();
    assert_eq!(cfg.arch.rows_per_core(), 256);
    let j = job(600, 70, 3);
    let plan = tile(&j, &cfg.arch);
    assert_eq!((plan.vertical_passes, plan.horizontal_passes), (3, 2));
    let ideal = DeviceInstance::ideal(&cfg.arch);
    let r = run_vmm(&j, &plan, &ideal, &RunOptions { tdc_bypass: true, ..Default::default() }).unwrap();
    let oracle = ideal_vmm(&j);
    for (e, o) in r.analog_estimates.iter().zip(&oracle) {
        assert!((e - *o as f64).abs() <= 1e-9 * (*o as f64).max(1.0));
    }
    let q = run_vmm(&j, &plan, &ideal, &RunOptions::default()).unwrap();
    let step = pass_full_scale(&cfg.arch, 2) as f64 / 255.0;
    for (e, o) in q.mac_estimates.iter().zip(&oracle) {
        assert!((*e as f64 - *o as f64).abs() <= 3.0 * step / 2.0 + 1.0);
    }
    let back = load_config(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn sampled_runs_do_not_depend_on_worker_count() {
    let a = default_aidac().arch;
    let vp = VariationParams::default().with_seed(5);
    let j = job(1000, 300, 11);
    let run = || {
        let inst = sample_instance(&a, &vp, 3);
        run_vmm(&j, &tile(&j, &a), &inst, &RunOptions { conversion: 4, ..Default::default() }).unwrap()
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(run);
    let many = pool(6).install(run);
    assert_eq!(one, many);
    let stats = |n| {
        pool(n).install(|| {
            monte_carlo(&a, &vp, 60, 20, |i| {
                run_vmm(&j, &tile(&j, &a), i, &RunOptions::default()).map(|r| r.stats.max_rel_error)
            })
            .unwrap()
        })
    };
    assert_eq!(stats(1), stats(5));
}

#[test]
fn binary_job_runs_like_the_original() {
    let a = default_aidac().arch;
    let j = job(130, 40, 8);
    let (back, _, _) = read_job_binary(&write_job_binary(&j, a.n_in_bits, a.n_w_bits)).unwrap();
    let inst = sample_instance(&a, &VariationParams::default(), 0);
    let r1 = run_vmm(&j, &tile(&j, &a), &inst, &RunOptions::default()).unwrap();
    let r2 = run_vmm(&back, &tile(&back, &a), &inst, &RunOptions::default()).unwrap();
    assert_eq!(r1.mac_estimates, r2.mac_estimates);
}

#[test]
fn cost_of_a_mapped_layer() {
    let cfg = default_aidac();
    let j = job(2000, 600, 1);
    let plan = tile(&j, &cfg.arch);
    let comp = cost_report(&plan, &cfg.arch, &cfg.cost, &CostOptions::default()).unwrap();
    let mac = cost_report(
        &plan,
        &cfg.arch,
        &cfg.cost,
        &CostOptions {
            rollup: Rollup::Macro,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(comp.passes, 6);
    assert_eq!(comp.latency, mac.latency);
    assert!(comp.energy.total_fj > 0.0 && mac.energy.total_fj > 0.0);
    assert!(comp.performance.rollup.tops_per_watt > 0.0);
}

#[test]
fn digits_fixture_loads_and_classifies() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let read = |n: &str| fs::read_to_string(data.join(n)).unwrap();
    let model = MlpModel::from_json(&read("digits_mlp.json")).unwrap();
    let arch = default_aidac().arch;
    model.validate(&arch).unwrap();
    assert_eq!(
        model.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect::<Vec<_>>(),
        vec![(64, 16), (16, 10)]
    );
    let train = load_dataset_csv(&read("digits_train.csv")).unwrap();
    let test = load_dataset_csv(&read("digits_test.csv")).unwrap();
    assert_eq!((train.len(), test.len()), (1437, 360));
    let cal = calibrate_mlp(&model, &train, &arch).unwrap();
    let ideal = DeviceInstance::ideal(&arch);
    let digital = infer_mlp(&model, &test, InferMode::IdealDigital, &ideal, &cal, &InferOptions::calibrated()).unwrap();
    assert!(digital.accuracy > 0.9);
    let sim = infer_mlp(&model, &test, InferMode::Simulated, &ideal, &cal, &InferOptions::calibrated()).unwrap();
    assert!((digital.accuracy - sim.accuracy).abs() <= 0.01);
}
