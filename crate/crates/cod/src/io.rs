//! File formats: line-delimited JSON task records, a JSON ladder
//! manifest, optional ground-truth records, synthetic-spec and
//! truth-sidecar documents, and delimited output tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{euclidean, ClusterAssignment};
use crate::data::{ComputeBudget, EvalMatrix, GroundTruth, ModelPoint, TaskRecord};
use crate::error::{Error, Result};
use crate::fit::{eval_curve, ClusterFit};
use crate::predict::AnchorPoint;
use crate::synth::{SynthSpec, SynthTruth};

/// One row of the ladder manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub model_id: String,
    pub compute_flops: f64,
    pub trials: u32,
}

/// Read one JSON task record per line; blank lines are skipped.
pub fn read_task_records(path: &Path) -> Result<Vec<TaskRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(line).map_err(|e| {
            Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::InputFormat(format!(
            "{}: no task records",
            path.display()
        )));
    }
    Ok(records)
}

/// Read the JSON-array ladder manifest, ascending compute required.
pub fn read_ladder_manifest(path: &Path) -> Result<Vec<ModelPoint>> {
    let text = fs::read_to_string(path)?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    entries
        .into_iter()
        .map(|e| {
            Ok(ModelPoint {
                model_id: e.model_id,
                compute: ComputeBudget::new(e.compute_flops)?,
                trials: e.trials,
            })
        })
        .collect()
}

pub fn write_ladder_manifest(path: &Path, ladder: &[ModelPoint]) -> Result<()> {
    let entries: Vec<ManifestEntry> = ladder
        .iter()
        .map(|p| ManifestEntry {
            model_id: p.model_id.clone(),
            compute_flops: p.compute.flops(),
            trials: p.trials,
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&entries).unwrap() + "\n")?;
    Ok(())
}

/// Read ground-truth records, one JSON object per line.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: GroundTruth = serde_json::from_str(line).map_err(|e| {
            Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if !(0.0..=1.0).contains(&row.full_set_accuracy) {
            return Err(Error::Domain(format!(
                "{}:{}: accuracy {} outside [0, 1]",
                path.display(),
                lineno + 1,
                row.full_set_accuracy
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path)?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_task_records(path: &Path, records: &[TaskRecord]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).unwrap());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reconstruct the raw record form of a generated matrix, zero-set tasks
/// restored as all-zero rows.
pub fn matrix_to_records(matrix: &EvalMatrix) -> Vec<TaskRecord> {
    let mut records: Vec<TaskRecord> = matrix
        .tasks
        .iter()
        .map(|t| TaskRecord {
            task_id: t.task_id.clone(),
            benchmark: matrix.benchmark_id.clone(),
            checkpoint_passrates: t.values.iter().map(|&v| vec![v]).collect(),
        })
        .collect();
    for task_id in &matrix.zero_set {
        records.push(TaskRecord {
            task_id: task_id.clone(),
            benchmark: matrix.benchmark_id.clone(),
            checkpoint_passrates: vec![vec![0.0]; matrix.ladder.len()],
        });
    }
    records
}

pub fn write_truth_sidecar(path: &Path, truth: &SynthTruth) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(truth).unwrap() + "\n")?;
    Ok(())
}

pub fn read_truth_sidecar(path: &Path) -> Result<SynthTruth> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Compute an anchor's (subset, full) accuracies from a single-model
/// evaluation file, using the main run's subset membership.
pub fn anchor_from_records(
    records: &[TaskRecord],
    model_id: &str,
    matrix: &EvalMatrix,
    subset_task_ids: &[String],
    weight: f64,
) -> Result<AnchorPoint> {
    let mut full_sum = 0.0;
    let mut subset_sum = 0.0;
    let mut subset_n = 0usize;
    for record in records {
        if record.checkpoint_passrates.len() != 1 {
            return Err(Error::InputFormat(format!(
                "anchor task {:?} must carry exactly one model entry",
                record.task_id
            )));
        }
        let value = crate::data::smooth_checkpoints(&record.checkpoint_passrates[0])?;
        full_sum += value;
        if subset_task_ids.contains(&record.task_id) {
            subset_sum += value;
            subset_n += 1;
        }
    }
    if subset_n == 0 {
        return Err(Error::InputFormat(format!(
            "anchor file for {model_id:?} shares no tasks with the predictable subset"
        )));
    }
    Ok(AnchorPoint {
        model_id: model_id.to_string(),
        subset_accuracy: subset_sum / subset_n as f64,
        full_accuracy: full_sum / matrix.full_task_count as f64,
        weight,
    })
}

/// Tab-separated per-task assignment table.
pub fn assignment_table(matrix: &EvalMatrix, assignment: &ClusterAssignment) -> String {
    let mut out = String::from("task_id\tlabel\tdistance_to_center\n");
    for (task, &label) in matrix.tasks.iter().zip(&assignment.labels) {
        let distance = if label >= 0 {
            format!("{:.6}", euclidean(&task.values, &assignment.centers[label as usize]))
        } else {
            String::from("NA")
        };
        out.push_str(&format!("{}\t{}\t{}\n", task.task_id, label, distance));
    }
    out
}

/// Tab-separated per-cluster fit table.
pub fn fit_table(fits: &[ClusterFit]) -> String {
    let mut out = String::from("cluster_id\tsize\ta\tb\tc\tg\trmse\tlabel\n");
    for fit in fits {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}\t{:?}\n",
            fit.cluster_id, fit.size, fit.curve.a, fit.curve.b, fit.curve.c, fit.curve.g,
            fit.rmse, fit.label
        ));
    }
    out
}

/// Fitted-curve samples at 50 log-spaced computes spanning
/// [min ladder / 10, target x 10], one row per (cluster, compute).
pub fn plot_table(
    fits: &[ClusterFit],
    min_ladder: ComputeBudget,
    target: ComputeBudget,
) -> String {
    let lo = (min_ladder.flops() / 10.0).ln();
    let hi = (target.flops() * 10.0).ln();
    let mut out = String::from("cluster_id\tcompute\taccuracy\n");
    for fit in fits {
        for i in 0..50 {
            let flops = (lo + (hi - lo) * i as f64 / 49.0).exp();
            let y = eval_curve(&fit.curve, ComputeBudget::new(flops).unwrap());
            out.push_str(&format!("{}\t{:.6e}\t{:.6}\n", fit.cluster_id, flops, y));
        }
    }
    out
}
