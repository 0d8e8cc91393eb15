//! End-to-end acceptance checks. Each test prints one `criterion N:
//! pass|fail` line so the suite doubles as a checklist.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use cod::data::{ComputeBudget, FormulaVariant, PipelineConfig};
use cod::fit::{eval_curve, fit_series, ScalingCurve};
use cod::pipeline::{baseline_prediction, render_report, run_pipeline, TruthInputs};
use cod::predict::{fit_mapping, prediction_error, MappingOptions};
use cod::synth::{generate, seeded_stream, SynthCluster, SynthSpec};
use cod::theory::{am_gm_gap, theorem_decomposition, LossSample};

fn verdict(criterion: usize, name: &str, ok: bool) {
    println!(
        "criterion {criterion}: {} — {name}",
        if ok { "pass" } else { "fail" }
    );
    assert!(ok, "criterion {criterion} failed: {name}");
}

fn budget(flops: f64) -> ComputeBudget {
    ComputeBudget::new(flops).unwrap()
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<ComputeBudget> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| budget((llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// The shared oracle fixture: 12 clusters x 40 tasks over an 8-model
/// ladder spanning 1e19..1e22 FLOPs, target 4e23.
fn oracle_spec(trials: u32, seed: u64) -> SynthSpec {
    let mut rng = seeded_stream(901, 0);
    let clusters = (0..12)
        .map(|_| SynthCluster {
            task_count: 40,
            a: rng.gen_range(1.5..8.0),
            b: rng.gen_range(0.15..0.5),
            c: rng.gen_range(0.0..0.8),
            g: if rng.gen_bool(0.5) { 0.25 } else { 0.0 },
            emergence_zero_below: None,
        })
        .collect();
    SynthSpec {
        clusters,
        ladder_computes: log_spaced(1e19, 1e22, 8),
        target_compute: budget(4e23),
        trials,
        seed,
        offset: 0.02,
    }
}

fn cod_binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cod"))
}

fn run_predict(dir: &Path, out: &str) -> std::process::Output {
    cod_binary()
        .args([
            "predict",
            "--eval",
            dir.join("eval.jsonl").to_str().unwrap(),
            "--ladder",
            dir.join("ladder.json").to_str().unwrap(),
            "--target-compute",
            "4e23",
            "--out",
            dir.join(out).to_str().unwrap(),
        ])
        .output()
        .expect("failed to launch the cod binary")
}

fn write_fixture(dir: &Path, spec: &SynthSpec) -> cod::synth::SynthTruth {
    let (matrix, truth) = generate(spec).unwrap();
    cod::io::write_task_records(&dir.join("eval.jsonl"), &cod::io::matrix_to_records(&matrix))
        .unwrap();
    cod::io::write_ladder_manifest(&dir.join("ladder.json"), &matrix.ladder).unwrap();
    truth
}

#[test]
fn criterion_01_noiseless_end_to_end_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let spec = oracle_spec(0, 42);
    let truth = write_fixture(dir.path(), &spec);

    let start = Instant::now();
    let output = run_predict(dir.path(), "out");
    let elapsed = start.elapsed();
    assert!(
        output.status.success(),
        "predict failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let report_text = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    let report = cod::pipeline::PredictionReport::parse(&report_text).unwrap();
    let fe = (report.full_prediction - truth.full_truth).abs();
    let ok = fe <= 0.005 && elapsed.as_secs() <= 60;
    println!("full-set error {fe:.6}, runtime {elapsed:?}");
    verdict(1, "noiseless oracle error <= 0.5% within 60 s", ok);
}

#[test]
fn criterion_02_noisy_oracle_mean_error() {
    let mut total = 0.0;
    for seed in 0..10 {
        let spec = oracle_spec(100, seed);
        let (matrix, truth) = generate(&spec).unwrap();
        let config = PipelineConfig::with_target(spec.target_compute);
        let outcome = run_pipeline(&matrix, &config, &[], &TruthInputs::default()).unwrap();
        let fe = (outcome.report.full_prediction - truth.full_truth).abs();
        println!("seed {seed}: fe = {fe:.5}");
        total += fe;
    }
    let mean = total / 10.0;
    println!("mean full-set error {mean:.5}");
    verdict(2, "noisy oracle mean error over 10 seeds <= 2.0%", mean <= 0.02);
}

#[test]
fn criterion_03_fit_recovery() {
    let computes = log_spaced(1e19, 1e22, 8);
    let probe = budget(1e23);
    let mut rng = seeded_stream(903, 0);
    let mut worst_points: f64 = 0.0;
    let mut worst_probe: f64 = 0.0;
    for _ in 0..100 {
        let truth = ScalingCurve {
            a: rng.gen_range(1.5..8.0),
            b: rng.gen_range(0.15..0.5),
            c: rng.gen_range(0.0..0.8),
            g: if rng.gen_bool(0.5) { 0.25 } else { 0.0 },
            variant: FormulaVariant::Cod,
        };
        let points: Vec<(ComputeBudget, f64)> = computes
            .iter()
            .map(|&c| (c, eval_curve(&truth, c)))
            .collect();
        let fitted = fit_series(&points, FormulaVariant::Cod, None).unwrap();
        for &(c, y) in &points {
            worst_points = worst_points.max((eval_curve(&fitted, c) - y).abs());
        }
        worst_probe =
            worst_probe.max((eval_curve(&fitted, probe) - eval_curve(&truth, probe)).abs());
    }
    println!("max deviation on points {worst_points:.2e}, at 10x max compute {worst_probe:.2e}");
    verdict(
        3,
        "noiseless fit recovery within 1e-6 on points and 1e-3 at 10x compute",
        worst_points <= 1e-6 && worst_probe <= 1e-3,
    );
}

#[test]
fn criterion_04_classification_table() {
    use cod::cluster::ClusterAssignment;
    use cod::data::{build_eval_matrix, Clusterer, ModelPoint, TaskRecord};
    use cod::fit::{classify_cluster, cluster_accuracy_series, ClusterLabel};

    let computes = log_spaced(1e2, 1e5, 8);
    let config = PipelineConfig::with_target(budget(1e7));
    let expectations = [
        (5.0, 0.3, 0.1, ClusterLabel::Extrapolatable),
        (0.5, 0.3, 0.1, ClusterLabel::NonExtrapolatable),
        (5.0, 0.05, 0.1, ClusterLabel::NonExtrapolatable),
        (5.0, 0.3, 1.5, ClusterLabel::NonExtrapolatable),
    ];
    let mut ok = true;
    for &(a, b, c, expected) in &expectations {
        let curve = ScalingCurve {
            a,
            b,
            c,
            g: 0.0,
            variant: FormulaVariant::Cod,
        };
        // one-task matrix carrying the curve's own values
        let ladder: Vec<ModelPoint> = computes
            .iter()
            .enumerate()
            .map(|(i, &compute)| ModelPoint {
                model_id: format!("m{i}"),
                compute,
                trials: 0,
            })
            .collect();
        let records = vec![TaskRecord {
            task_id: "t0".into(),
            benchmark: "bench".into(),
            checkpoint_passrates: computes
                .iter()
                .map(|&ci| vec![eval_curve(&curve, ci)])
                .collect(),
        }];
        let matrix = build_eval_matrix(&records, &ladder, 0.0).unwrap();
        let assignment = ClusterAssignment {
            labels: vec![0],
            centers: vec![matrix.tasks[0].values.clone()],
            radius_used: 0.3,
            method: Clusterer::None,
        };
        let series = &cluster_accuracy_series(&matrix, &assignment)[0];
        let label = classify_cluster(&curve, series, &config);
        if label != expected {
            println!("curve (a={a}, b={b}, c={c}) labeled {label:?}, expected {expected:?}");
            ok = false;
        }
    }
    verdict(4, "section 4.3 classification table", ok);
}

#[test]
fn criterion_05_clustering_invariants() {
    use cod::cluster::{euclidean, improved_meanshift};
    use cod::data::{DifficultyVector, EvalMatrix, ModelPoint};

    let dim = 8;
    let mut ok = true;
    for fixture in 0..50 {
        let mut rng = seeded_stream(905, fixture);
        let blob_count = rng.gen_range(2..6);
        let mut vectors = Vec::new();
        for _ in 0..blob_count {
            let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.95)).collect();
            let size = rng.gen_range(8..30);
            for _ in 0..size {
                vectors.push(
                    center
                        .iter()
                        .map(|&c| (c + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
                        .collect::<Vec<f64>>(),
                );
            }
        }
        let ladder: Vec<ModelPoint> = (0..dim)
            .map(|i| ModelPoint {
                model_id: format!("m{i}"),
                compute: budget(10f64.powi(i as i32 + 19)),
                trials: 0,
            })
            .collect();
        let n = vectors.len();
        let matrix = EvalMatrix {
            benchmark_id: "blobs".into(),
            ladder,
            tasks: vectors
                .into_iter()
                .enumerate()
                .map(|(i, values)| DifficultyVector {
                    task_id: format!("t{i}"),
                    values,
                })
                .collect(),
            zero_set: vec![],
            full_task_count: n,
        };
        let assignment = match improved_meanshift(&matrix, 0.3, 10, 0) {
            Ok(a) => a,
            Err(e) => {
                println!("fixture {fixture}: clustering error {e}");
                ok = false;
                continue;
            }
        };
        for (task, &label) in matrix.tasks.iter().zip(&assignment.labels) {
            if label >= 0
                && euclidean(&task.values, &assignment.centers[label as usize]) > 0.3 + 1e-9
            {
                println!("fixture {fixture}: member outside radius");
                ok = false;
            }
        }
        for cid in 0..assignment.cluster_count() {
            let size = assignment.members(cid as i32).len();
            if size < 10 {
                println!("fixture {fixture}: cluster {cid} has {size} members");
                ok = false;
            }
        }
    }
    verdict(5, "within-radius and minimum-size invariants on 50 blob fixtures", ok);
}

#[test]
fn criterion_06_mapping_invariants() {
    let mut ok = true;
    let options = MappingOptions::default();
    for draw in 0..100 {
        let mut rng = seeded_stream(906, draw);
        let n = rng.gen_range(4..12);
        // monotone-ish accuracy pairs, the mapping's natural inputs
        let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let points: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
        let degree = if rng.gen_bool(0.5) { 4 } else { 3 };
        let poly = fit_mapping(&points, &[], degree, &options).unwrap();
        if poly.eval(0.0).abs() > 1e-12 || (poly.eval(1.0) - 1.0).abs() > 1e-12 {
            println!("draw {draw}: endpoint violation");
            ok = false;
        }
        if poly.min_derivative_on_grid(1001) < -1e-9 {
            println!("draw {draw}: derivative violation (warning = {})", poly.constrained_fit_warning);
            ok = false;
        }
    }
    verdict(6, "endpoint and monotonicity invariants on 100 mapping fits", ok);
}

#[test]
fn criterion_07_mean_gap_lemma() {
    let report = am_gm_gap(&[1.0, 2.0, 3.0]).unwrap();
    let delta_ok = (report.delta - (2.0 - 6.0f64.powf(1.0 / 3.0))).abs() <= 1e-9;
    let estimate_ok = (report.estimate - 1.0 / 6.0).abs() <= 1e-9;

    let pattern = [1.0, -0.5, 0.7, -1.2, 0.3];
    let residual_at = |sigma: f64| {
        let xs: Vec<f64> = pattern.iter().map(|u| 1.0 + sigma * u).collect();
        am_gm_gap(&xs).unwrap().relative_residual.unwrap()
    };
    let (r20, r10, r05) = (residual_at(0.2), residual_at(0.1), residual_at(0.05));
    println!("relative residuals: {r20:.5} -> {r10:.5} -> {r05:.5}");
    let shrink_ok = r10 <= 0.6 * r20 && r05 <= 0.6 * r10;
    verdict(
        7,
        "gap(1,2,3) exact values and residual shrink >= 40% per halving",
        delta_ok && estimate_ok && shrink_ok,
    );
}

#[test]
fn criterion_08_theorem_decomposition() {
    let sample = LossSample::new(vec![0.1, 0.2, 0.3], 0.0).unwrap();
    let report = theorem_decomposition(&sample);
    println!(
        "exact {:.6}, passrate-moment {:.6}, loss-moment {:.6}",
        report.exact_acc, report.estimate_passrate_moments, report.estimate_loss_moments
    );
    let exact_ok = (report.exact_acc - 0.821462).abs() <= 1e-6;
    let passrate_ok = (report.exact_acc - report.estimate_passrate_moments).abs() <= 1e-6;
    let loss_dev = (report.estimate_loss_moments - report.exact_acc).abs();
    let loss_ok = (loss_dev - 0.0139).abs() <= 1e-3;
    verdict(
        8,
        "passrate-moment estimate within 1e-6, loss-moment deviates by ~0.0139",
        exact_ok && passrate_ok && loss_ok,
    );
}

#[test]
fn criterion_09_two_regime_beats_baseline() {
    let mut ok = true;
    for seed in 0..10 {
        let spec = SynthSpec {
            clusters: vec![
                SynthCluster {
                    task_count: 40,
                    a: 30.0,
                    b: 0.55,
                    c: 0.05,
                    g: 0.0,
                    emergence_zero_below: None,
                },
                SynthCluster {
                    task_count: 40,
                    a: 8.0,
                    b: 0.28,
                    c: 0.2,
                    g: 0.0,
                    emergence_zero_below: None,
                },
            ],
            ladder_computes: log_spaced(1e2, 3e5, 8),
            target_compute: budget(1e7),
            trials: 100,
            seed,
            offset: 0.02,
        };
        let (matrix, truth) = generate(&spec).unwrap();
        let config = PipelineConfig::with_target(spec.target_compute);
        let outcome = run_pipeline(&matrix, &config, &[], &TruthInputs::default()).unwrap();
        let cod_fe = (outcome.report.full_prediction - truth.full_truth).abs();
        let baseline = baseline_prediction(&matrix, &config).unwrap();
        let baseline_fe = (baseline - truth.full_truth).abs();
        println!("seed {seed}: cod fe {cod_fe:.5}, baseline fe {baseline_fe:.5}");
        if cod_fe >= baseline_fe {
            ok = false;
        }
    }
    verdict(9, "two-regime benchmark: pipeline beats end-to-end baseline on all 10 seeds", ok);
}

#[test]
fn criterion_10_error_metric_arithmetic() {
    let ok = (prediction_error(84.66, 85.32) - 0.66).abs() < 1e-12
        && (prediction_error(61.58, 59.34) - 2.24).abs() < 1e-12
        && prediction_error(0.5, 0.5) == 0.0;
    verdict(10, "reference error rows reproduce exactly", ok);
}

#[test]
fn criterion_11_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let spec = oracle_spec(100, 7);
    write_fixture(dir.path(), &spec);
    let first = run_predict(dir.path(), "out1");
    let second = run_predict(dir.path(), "out2");
    assert!(first.status.success() && second.status.success());
    let a = std::fs::read(dir.path().join("out1/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("out2/report.json")).unwrap();

    // the same holds for an in-process rerun on the same matrix
    let (matrix, _) = generate(&spec).unwrap();
    let config = PipelineConfig::with_target(spec.target_compute);
    let r1 = render_report(&run_pipeline(&matrix, &config, &[], &TruthInputs::default()).unwrap().report);
    let r2 = render_report(&run_pipeline(&matrix, &config, &[], &TruthInputs::default()).unwrap().report);
    verdict(11, "identical inputs and seed give byte-identical reports", a == b && r1 == r2);
}
