//! Domain types and input handling: compute budgets, model ladders,
//! per-task pass rates, and the difficulty-vector matrix the rest of the
//! pipeline consumes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training compute in FLOPs. Strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComputeBudget(f64);

impl ComputeBudget {
    pub fn new(flops: f64) -> Result<Self> {
        if !flops.is_finite() || flops <= 0.0 {
            return Err(Error::Domain(format!(
                "compute budget must be positive and finite, got {flops}"
            )));
        }
        Ok(ComputeBudget(flops))
    }

    pub fn flops(&self) -> f64 {
        self.0
    }
}

/// One rung of the model ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub model_id: String,
    pub compute: ComputeBudget,
    /// Pass-rate sampling count behind each observed rate (e.g. 100).
    pub trials: u32,
}

/// Raw per-task input: up to three adjacent-checkpoint pass rates per
/// ladder model, prior to smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub benchmark: String,
    /// Outer list: one entry per ladder model, ascending compute.
    /// Inner list: 1-3 pass rates in [0, 1].
    pub checkpoint_passrates: Vec<Vec<f64>>,
}

/// A task's smoothed pass rates across the ladder, ascending compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyVector {
    pub task_id: String,
    pub values: Vec<f64>,
}

/// The pipeline input: a ladder plus difficulty vectors, with
/// zero-performance tasks filtered out but accounted for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub benchmark_id: String,
    pub ladder: Vec<ModelPoint>,
    pub tasks: Vec<DifficultyVector>,
    /// Tasks removed because every smoothed entry was zero.
    pub zero_set: Vec<String>,
    pub full_task_count: usize,
}

/// Curve family used for cluster fits. `Cod` is the full form
/// g + (1-g)e^{-aC^-b - c}; the others drop g, c, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaVariant {
    Cod,
    F1,
    F2,
    F3,
}

impl FormulaVariant {
    pub fn has_guess_floor(self) -> bool {
        matches!(self, FormulaVariant::Cod | FormulaVariant::F2)
    }

    pub fn has_ceiling_offset(self) -> bool {
        matches!(self, FormulaVariant::Cod | FormulaVariant::F1)
    }

    pub fn name(self) -> &'static str {
        match self {
            FormulaVariant::Cod => "cod",
            FormulaVariant::F1 => "f1",
            FormulaVariant::F2 => "f2",
            FormulaVariant::F3 => "f3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clusterer {
    ImprovedMeanshift,
    Meanshift,
    Dbscan,
    Kmeans,
    ImprovedKmeans,
    /// No clustering: single end-to-end fit on the full-set series.
    None,
}

impl Clusterer {
    pub fn name(self) -> &'static str {
        match self {
            Clusterer::ImprovedMeanshift => "improved-meanshift",
            Clusterer::Meanshift => "meanshift",
            Clusterer::Dbscan => "dbscan",
            Clusterer::Kmeans => "kmeans",
            Clusterer::ImprovedKmeans => "improved-kmeans",
            Clusterer::None => "none",
        }
    }
}

/// All knobs of the pipeline, with defaults from the reference setup
/// (R = 0.3, K = 10, a > 1, b > 0.1, 0 <= c < 1, quartic mapping).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub radius: f64,
    pub min_cluster_size: usize,
    pub a_min: f64,
    pub b_min: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub poly_degree: usize,
    pub formula_variant: FormulaVariant,
    pub clusterer: Clusterer,
    pub target_compute: ComputeBudget,
    pub seed: u64,
    pub monotone_grid_points: usize,
    pub non_emergent_epsilon: f64,
    /// Smoothed entries at or below this count as zero performance.
    /// Defaults to exactly 0.0.
    pub zero_epsilon: f64,
}

impl PipelineConfig {
    pub fn with_target(target_compute: ComputeBudget) -> Self {
        PipelineConfig {
            radius: 0.3,
            min_cluster_size: 10,
            a_min: 1.0,
            b_min: 0.1,
            c_min: 0.0,
            c_max: 1.0,
            poly_degree: 4,
            formula_variant: FormulaVariant::Cod,
            clusterer: Clusterer::ImprovedMeanshift,
            target_compute,
            seed: 0,
            monotone_grid_points: 1001,
            non_emergent_epsilon: 0.02,
            zero_epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius <= 0.0 {
            return Err(Error::Parameter("radius must be positive".into()));
        }
        if self.min_cluster_size < 1 {
            return Err(Error::Parameter("min cluster size must be >= 1".into()));
        }
        if self.a_min <= 0.0 || self.b_min <= 0.0 {
            return Err(Error::Parameter("a_min and b_min must be positive".into()));
        }
        if self.c_min < 0.0 || self.c_min >= self.c_max {
            return Err(Error::Parameter("need 0 <= c_min < c_max".into()));
        }
        if self.poly_degree < 2 {
            return Err(Error::Parameter("polynomial degree must be >= 2".into()));
        }
        Ok(())
    }
}

/// Optional ground truth for error reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub benchmark: String,
    pub model_id: String,
    pub full_set_accuracy: f64,
}

/// Arithmetic mean of 1-3 adjacent-checkpoint pass rates.
///
/// Ladder-edge checkpoints have fewer neighbors, so fewer than three
/// entries is accepted.
pub fn smooth_checkpoints(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::InputFormat(
            "checkpoint pass-rate list must be non-empty".into(),
        ));
    }
    if rates.len() > 3 {
        return Err(Error::InputFormat(format!(
            "at most 3 checkpoint pass rates expected, got {}",
            rates.len()
        )));
    }
    for &r in rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InputFormat(format!(
                "pass rate {r} outside [0, 1]"
            )));
        }
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Validate the ladder: unique ids, strictly ascending compute.
pub fn validate_ladder(ladder: &[ModelPoint]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::InputFormat("ladder must be non-empty".into()));
    }
    let mut ids = BTreeSet::new();
    for point in ladder {
        if !ids.insert(point.model_id.clone()) {
            return Err(Error::InputFormat(format!(
                "duplicate model_id {:?} in ladder",
                point.model_id
            )));
        }
    }
    for pair in ladder.windows(2) {
        if pair[1].compute.flops() <= pair[0].compute.flops() {
            return Err(Error::InputFormat(
                "ladder compute must be strictly ascending".into(),
            ));
        }
    }
    Ok(())
}

/// Smooth each task's checkpoint rates into a difficulty vector and move
/// all-zero tasks into the zero set.
pub fn build_eval_matrix(
    records: &[TaskRecord],
    ladder: &[ModelPoint],
    zero_epsilon: f64,
) -> Result<EvalMatrix> {
    validate_ladder(ladder)?;
    let benchmark_id = match records.first() {
        Some(r) => r.benchmark.clone(),
        None => return Err(Error::InputFormat("no task records given".into())),
    };

    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    let mut zero_set = Vec::new();
    for record in records {
        if record.benchmark != benchmark_id {
            return Err(Error::InputFormat(format!(
                "mixed benchmarks in one input: {:?} vs {:?}",
                record.benchmark, benchmark_id
            )));
        }
        if !seen.insert(record.task_id.clone()) {
            return Err(Error::InputFormat(format!(
                "duplicate task_id {:?}",
                record.task_id
            )));
        }
        if record.checkpoint_passrates.len() != ladder.len() {
            return Err(Error::InputFormat(format!(
                "task {:?} has {} model entries, ladder has {}",
                record.task_id,
                record.checkpoint_passrates.len(),
                ladder.len()
            )));
        }
        let values = record
            .checkpoint_passrates
            .iter()
            .map(|rates| smooth_checkpoints(rates))
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().all(|&v| v <= zero_epsilon) {
            zero_set.push(record.task_id.clone());
        } else {
            tasks.push(DifficultyVector {
                task_id: record.task_id.clone(),
                values,
            });
        }
    }

    Ok(EvalMatrix {
        benchmark_id,
        ladder: ladder.to_vec(),
        full_task_count: tasks.len() + zero_set.len(),
        tasks,
        zero_set,
    })
}

/// Compute-per-token times tokens, in FLOPs.
pub fn compute_training_flops(compute_per_token: f64, tokens: f64) -> Result<ComputeBudget> {
    if !compute_per_token.is_finite() || compute_per_token <= 0.0 {
        return Err(Error::InputFormat(format!(
            "compute_per_token must be positive, got {compute_per_token}"
        )));
    }
    if !tokens.is_finite() || tokens < 0.0 {
        return Err(Error::InputFormat(format!(
            "tokens must be nonnegative, got {tokens}"
        )));
    }
    ComputeBudget::new(compute_per_token * tokens)
}
