//! End-to-end orchestration: cluster, fit, classify, extrapolate, map,
//! and assemble the report.

use serde::{Deserialize, Serialize};

use crate::cluster::{
    baseline_cluster, cluster_quality, improved_meanshift, BaselineParams, ClusterAssignment,
    ClusterQuality,
};
use crate::data::{Clusterer, EvalMatrix, FormulaVariant, PipelineConfig};
use crate::error::{Error, Result};
use crate::fit::{cluster_accuracy_series, fit_cluster, ClusterFit, ClusterLabel, FitOptions};
use crate::predict::{
    difficulty_bins, end_to_end_baseline, extrapolate_subset, fit_mapping,
    observed_full_accuracy, observed_subset_accuracy, predict_full, prediction_error,
    AnchorPoint, DifficultyBin, MappingOptions, MappingPolynomial,
};

pub const SCHEMA_VERSION: u32 = 1;

/// One row of the per-cluster table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster_id: usize,
    pub size: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub g: f64,
    pub rmse: f64,
    pub label: ClusterLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub schema_version: u32,
    pub benchmark_id: String,
    pub subset_prediction: f64,
    pub full_prediction: f64,
    /// Set when the mapped prediction had to be clamped into [0, 1].
    pub clamp_warning: bool,
    /// Predictable-subset fraction of the full task count.
    pub task_ratio: f64,
    pub predictable_task_count: usize,
    pub full_task_count: usize,
    pub clusters: Vec<ClusterRow>,
    pub mapping: MappingPolynomial,
    /// Cluster ids whose fitted b sits at the optimizer's cap.
    pub b_cap_active: Vec<usize>,
    pub quality: ClusterQuality,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrapolation_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_error: Option<f64>,
    pub difficulty_bins: Vec<DifficultyBin>,
    pub config: PipelineConfig,
}

/// Everything a run produces, report plus intermediates for table export.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: PredictionReport,
    pub assignment: ClusterAssignment,
    pub fits: Vec<ClusterFit>,
}

/// Known target-model accuracies for error columns.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruthInputs {
    /// True mean accuracy over the predictable tasks at the target.
    pub subset_truth: Option<f64>,
    /// True full-set accuracy at the target.
    pub full_truth: Option<f64>,
}

fn single_cluster_assignment(matrix: &EvalMatrix) -> ClusterAssignment {
    let dim = matrix.ladder.len();
    let n = matrix.tasks.len();
    let mut center = vec![0.0; dim];
    for task in &matrix.tasks {
        for (c, &v) in center.iter_mut().zip(&task.values) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= n as f64;
    }
    ClusterAssignment {
        labels: vec![0; n],
        centers: vec![center],
        radius_used: f64::INFINITY,
        method: Clusterer::None,
    }
}

/// Run the configured clusterer on the matrix.
pub fn cluster_matrix(matrix: &EvalMatrix, config: &PipelineConfig) -> Result<ClusterAssignment> {
    match config.clusterer {
        Clusterer::ImprovedMeanshift => {
            improved_meanshift(matrix, config.radius, config.min_cluster_size, config.seed)
        }
        Clusterer::None => Ok(single_cluster_assignment(matrix)),
        method => baseline_cluster(
            matrix,
            method,
            &BaselineParams {
                bandwidth: config.radius,
                eps: config.radius,
                min_pts: config.min_cluster_size,
                k: 10,
            },
            config.seed,
        ),
    }
}

/// Fit every non-empty cluster's accuracy series.
pub fn fit_clusters(
    matrix: &EvalMatrix,
    assignment: &ClusterAssignment,
    config: &PipelineConfig,
) -> Result<Vec<ClusterFit>> {
    cluster_accuracy_series(matrix, assignment)
        .iter()
        .filter(|series| series.size > 0)
        .map(|series| fit_cluster(series, config.formula_variant, config, &FitOptions::default()))
        .collect()
}

/// Full pipeline on an already-built matrix.
pub fn run_pipeline(
    matrix: &EvalMatrix,
    config: &PipelineConfig,
    anchors: &[AnchorPoint],
    truth: &TruthInputs,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let assignment = cluster_matrix(matrix, config)?;
    let fits = fit_clusters(matrix, &assignment, config)?;
    let subset_prediction = extrapolate_subset(&fits, config.target_compute)?;

    let points: Vec<(f64, f64)> = (0..matrix.ladder.len())
        .map(|i| {
            Ok((
                observed_subset_accuracy(matrix, &assignment, &fits, i)?,
                observed_full_accuracy(matrix, i)?,
            ))
        })
        .collect::<Result<_>>()?;
    // fewer than six mapping points cannot pin a quartic; drop to cubic
    let degree = if config.poly_degree == 4 && points.len() + anchors.len() < 6 {
        3
    } else {
        config.poly_degree
    };
    let mapping = fit_mapping(
        &points,
        anchors,
        degree,
        &MappingOptions {
            enforce_monotone: true,
            grid_points: config.monotone_grid_points,
        },
    )?;
    let (full_prediction, clamp_warning) = predict_full(&mapping, subset_prediction.clamp(0.0, 1.0));

    let predictable: usize = fits
        .iter()
        .filter(|f| f.label == ClusterLabel::Extrapolatable)
        .map(|f| f.size)
        .sum();
    let report = PredictionReport {
        schema_version: SCHEMA_VERSION,
        benchmark_id: matrix.benchmark_id.clone(),
        subset_prediction,
        full_prediction,
        clamp_warning,
        task_ratio: predictable as f64 / matrix.full_task_count as f64,
        predictable_task_count: predictable,
        full_task_count: matrix.full_task_count,
        clusters: fits
            .iter()
            .map(|f| ClusterRow {
                cluster_id: f.cluster_id,
                size: f.size,
                a: f.curve.a,
                b: f.curve.b,
                c: f.curve.c,
                g: f.curve.g,
                rmse: f.rmse,
                label: f.label,
            })
            .collect(),
        mapping: mapping.clone(),
        b_cap_active: fits
            .iter()
            .filter(|f| f.curve.b > 4.99)
            .map(|f| f.cluster_id)
            .collect(),
        quality: cluster_quality(&assignment, matrix),
        extrapolation_error: truth
            .subset_truth
            .map(|t| prediction_error(subset_prediction, t)),
        final_error: truth.full_truth.map(|t| prediction_error(full_prediction, t)),
        difficulty_bins: difficulty_bins(matrix, &assignment, &fits),
        config: config.clone(),
    };
    Ok(PipelineOutcome {
        report,
        assignment,
        fits,
    })
}

/// Task ids in extrapolatable clusters, for anchor subset accounting.
pub fn predictable_task_ids(
    matrix: &EvalMatrix,
    assignment: &ClusterAssignment,
    fits: &[ClusterFit],
) -> Vec<String> {
    let good: Vec<i32> = fits
        .iter()
        .filter(|f| f.label == ClusterLabel::Extrapolatable)
        .map(|f| f.cluster_id as i32)
        .collect();
    matrix
        .tasks
        .iter()
        .zip(&assignment.labels)
        .filter(|(_, l)| good.contains(l))
        .map(|(t, _)| t.task_id.clone())
        .collect()
}

/// One cell of the ablation grid; failures are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub formula: FormulaVariant,
    pub clusterer: Clusterer,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ee: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Grid over formula variants x clusterers.
pub fn run_ablation(
    matrix: &EvalMatrix,
    base_config: &PipelineConfig,
    truth: &TruthInputs,
) -> Vec<AblationCell> {
    let variants = [
        FormulaVariant::Cod,
        FormulaVariant::F1,
        FormulaVariant::F2,
        FormulaVariant::F3,
    ];
    let clusterers = [
        Clusterer::ImprovedMeanshift,
        Clusterer::Meanshift,
        Clusterer::Dbscan,
        Clusterer::Kmeans,
        Clusterer::ImprovedKmeans,
        Clusterer::None,
    ];
    let mut cells = Vec::new();
    for &formula in &variants {
        for &clusterer in &clusterers {
            let mut config = base_config.clone();
            config.formula_variant = formula;
            config.clusterer = clusterer;
            let cell = match run_pipeline(matrix, &config, &[], truth) {
                Ok(outcome) => AblationCell {
                    formula,
                    clusterer,
                    ee: outcome.report.extrapolation_error,
                    fe: outcome.report.final_error,
                    tr: Some(outcome.report.task_ratio),
                    iad: outcome.report.quality.iad,
                    outlier_rate: Some(outcome.report.quality.outlier_rate),
                    error: None,
                },
                Err(e) => AblationCell {
                    formula,
                    clusterer,
                    ee: None,
                    fe: None,
                    tr: None,
                    iad: None,
                    outlier_rate: None,
                    error: Some(e.to_string()),
                },
            };
            cells.push(cell);
        }
    }
    cells
}

pub fn ablation_table(cells: &[AblationCell]) -> String {
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    let mut out = String::from("formula\tclusterer\tee\tfe\ttr\tiad\toutlier_rate\terror\n");
    for cell in cells {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            cell.formula.name(),
            cell.clusterer.name(),
            fmt(cell.ee),
            fmt(cell.fe),
            fmt(cell.tr),
            fmt(cell.iad),
            fmt(cell.outlier_rate),
            cell.error.as_deref().unwrap_or("-"),
        ));
    }
    out
}

/// Single whole-set fit at the target, for comparison columns.
pub fn baseline_prediction(matrix: &EvalMatrix, config: &PipelineConfig) -> Result<f64> {
    end_to_end_baseline(matrix, config.formula_variant, config.target_compute)
}

/// Serialize a report deterministically (no timestamps, fixed key order).
pub fn render_report(report: &PredictionReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization cannot fail") + "\n"
}

impl PredictionReport {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("report: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ComputeBudget;
    use crate::synth::{generate, SynthCluster, SynthSpec};

    fn budget(f: f64) -> ComputeBudget {
        ComputeBudget::new(f).unwrap()
    }

    fn spec_two_clusters(trials: u32, seed: u64) -> SynthSpec {
        SynthSpec {
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
            ladder_computes: vec![
                budget(1e2),
                budget(3e2),
                budget(1e3),
                budget(3e3),
                budget(1e4),
                budget(3e4),
                budget(1e5),
                budget(3e5),
            ],
            target_compute: budget(1e7),
            trials,
            seed,
            offset: 0.02,
        }
    }

    #[test]
    fn noiseless_two_cluster_run() {
        let spec = spec_two_clusters(0, 3);
        let (matrix, truth) = generate(&spec).unwrap();
        let config = PipelineConfig::with_target(spec.target_compute);
        let outcome = run_pipeline(
            &matrix,
            &config,
            &[],
            &TruthInputs {
                subset_truth: Some(truth.subset_truth),
                full_truth: Some(truth.full_truth),
            },
        )
        .unwrap();
        let report = &outcome.report;
        assert_eq!(report.schema_version, SCHEMA_VERSION);
        assert!(report.task_ratio > 0.9, "tr = {}", report.task_ratio);
        assert!(
            report.final_error.unwrap() < 0.005,
            "fe = {:?}",
            report.final_error
        );
        assert!(
            report.extrapolation_error.unwrap() < 0.005,
            "ee = {:?}",
            report.extrapolation_error
        );
        // TR accounting is an integer identity
        assert_eq!(
            (report.task_ratio * report.full_task_count as f64).round() as usize,
            report.predictable_task_count
        );
    }

    #[test]
    fn deterministic_report_bytes() {
        let spec = spec_two_clusters(100, 9);
        let (matrix, truth) = generate(&spec).unwrap();
        let config = PipelineConfig::with_target(spec.target_compute);
        let truths = TruthInputs {
            subset_truth: Some(truth.subset_truth),
            full_truth: Some(truth.full_truth),
        };
        let a = render_report(&run_pipeline(&matrix, &config, &[], &truths).unwrap().report);
        let b = render_report(&run_pipeline(&matrix, &config, &[], &truths).unwrap().report);
        assert_eq!(a, b);
    }

    #[test]
    fn all_flat_clusters_abort_with_empty_subset() {
        let spec = SynthSpec {
            clusters: vec![SynthCluster {
                task_count: 30,
                a: 0.0,
                b: 0.3,
                c: 0.7,
                g: 0.0,
                emergence_zero_below: None,
            }],
            ladder_computes: vec![budget(1e2), budget(1e3), budget(1e4), budget(1e5)],
            target_compute: budget(1e7),
            trials: 0,
            seed: 5,
            offset: 0.0,
        };
        let (matrix, _) = generate(&spec).unwrap();
        let config = PipelineConfig::with_target(spec.target_compute);
        let err = run_pipeline(&matrix, &config, &[], &TruthInputs::default()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn clusterer_none_single_fit_path() {
        let spec = spec_two_clusters(0, 3);
        let (matrix, _) = generate(&spec).unwrap();
        let mut config = PipelineConfig::with_target(spec.target_compute);
        config.clusterer = Clusterer::None;
        let outcome = run_pipeline(&matrix, &config, &[], &TruthInputs::default()).unwrap();
        assert_eq!(outcome.fits.len(), 1);
        assert_eq!(outcome.report.clusters.len(), 1);
    }

    #[test]
    fn ablation_grid_covers_all_cells() {
        let spec = spec_two_clusters(0, 3);
        let (matrix, truth) = generate(&spec).unwrap();
        let config = PipelineConfig::with_target(spec.target_compute);
        let cells = run_ablation(
            &matrix,
            &config,
            &TruthInputs {
                subset_truth: Some(truth.subset_truth),
                full_truth: Some(truth.full_truth),
            },
        );
        assert_eq!(cells.len(), 24);
        let cod_ms = cells
            .iter()
            .find(|c| c.formula == FormulaVariant::Cod && c.clusterer == Clusterer::ImprovedMeanshift)
            .unwrap();
        assert!(cod_ms.error.is_none());
        assert!(cod_ms.fe.unwrap() < 0.005);
        assert!(ablation_table(&cells).lines().count() == 25);
    }

    #[test]
    fn single_regime_baseline_matches_analytic() {
        let spec = SynthSpec {
            clusters: vec![SynthCluster {
                task_count: 50,
                a: 12.0,
                b: 0.4,
                c: 0.1,
                g: 0.0,
                emergence_zero_below: None,
            }],
            ladder_computes: vec![
                budget(1e2),
                budget(1e3),
                budget(1e4),
                budget(1e5),
                budget(1e6),
            ],
            target_compute: budget(1e7),
            trials: 0,
            seed: 1,
            offset: 0.0,
        };
        let (matrix, truth) = generate(&spec).unwrap();
        let config = PipelineConfig::with_target(spec.target_compute);
        let baseline = baseline_prediction(&matrix, &config).unwrap();
        assert!(
            (baseline - truth.full_truth).abs() < 1e-3,
            "baseline {baseline} vs truth {}",
            truth.full_truth
        );
    }
}
