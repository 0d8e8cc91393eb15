//! Predictable-subset aggregation, the endpoint-constrained polynomial
//! mapping from subset accuracy to full-set accuracy, and the
//! no-clustering end-to-end baseline.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::{ComputeBudget, EvalMatrix, FormulaVariant};
use crate::error::{Error, Result};
use crate::fit::{
    eval_curve, fit_series, ClusterFit, ClusterLabel,
};

/// Polynomial f(x) = sum_k alpha_k x^{k+1} + (1 - sum_k alpha_k) x.
/// Passes through (0,0) and (1,1) by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingPolynomial {
    pub degree: usize,
    /// alpha_1..alpha_{n-1}; alpha_k multiplies x^{k+1}.
    pub free_coeffs: Vec<f64>,
    /// Set when the penalty refit could not fully restore monotonicity.
    pub constrained_fit_warning: bool,
}

impl MappingPolynomial {
    pub fn identity(degree: usize) -> Self {
        MappingPolynomial {
            degree,
            free_coeffs: vec![0.0; degree - 1],
            constrained_fit_warning: false,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let linear = 1.0 - self.free_coeffs.iter().sum::<f64>();
        let mut y = linear * x;
        let mut power = x;
        for &alpha in &self.free_coeffs {
            power *= x;
            y += alpha * power;
        }
        y
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let linear = 1.0 - self.free_coeffs.iter().sum::<f64>();
        let mut d = linear;
        for (k, &alpha) in self.free_coeffs.iter().enumerate() {
            let exp = (k + 2) as f64;
            d += alpha * exp * x.powf(exp - 1.0);
        }
        d
    }

    pub fn min_derivative_on_grid(&self, grid_points: usize) -> f64 {
        (0..grid_points)
            .map(|i| self.derivative(i as f64 / (grid_points - 1) as f64))
            .fold(f64::INFINITY, f64::min)
    }
}

/// An external model's (subset accuracy, full accuracy) calibration pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub model_id: String,
    pub subset_accuracy: f64,
    pub full_accuracy: f64,
    pub weight: f64,
}

/// Size-weighted mean of extrapolated cluster accuracies at the target.
pub fn extrapolate_subset(fits: &[ClusterFit], target: ComputeBudget) -> Result<f64> {
    let extrapolatable: Vec<&ClusterFit> = fits
        .iter()
        .filter(|f| f.label == ClusterLabel::Extrapolatable)
        .collect();
    if extrapolatable.is_empty() {
        return Err(Error::EmptyPredictableSubset(format!(
            "none of {} clusters passed the extrapolatability thresholds",
            fits.len()
        )));
    }
    let total: f64 = extrapolatable.iter().map(|f| f.size as f64).sum();
    Ok(extrapolatable
        .iter()
        .map(|f| f.size as f64 * eval_curve(&f.curve, target))
        .sum::<f64>()
        / total)
}

fn extrapolatable_task_indices(
    assignment: &ClusterAssignment,
    fits: &[ClusterFit],
) -> Vec<usize> {
    let good: Vec<i32> = fits
        .iter()
        .filter(|f| f.label == ClusterLabel::Extrapolatable)
        .map(|f| f.cluster_id as i32)
        .collect();
    assignment
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| good.contains(l))
        .map(|(i, _)| i)
        .collect()
}

/// Mean difficulty-vector entry at `model_index` over the predictable
/// subset's member tasks.
pub fn observed_subset_accuracy(
    matrix: &EvalMatrix,
    assignment: &ClusterAssignment,
    fits: &[ClusterFit],
    model_index: usize,
) -> Result<f64> {
    if model_index >= matrix.ladder.len() {
        return Err(Error::Parameter(format!(
            "model index {model_index} outside ladder of {}",
            matrix.ladder.len()
        )));
    }
    let members = extrapolatable_task_indices(assignment, fits);
    if members.is_empty() {
        return Err(Error::EmptyPredictableSubset(
            "no tasks in extrapolatable clusters".into(),
        ));
    }
    Ok(members
        .iter()
        .map(|&i| matrix.tasks[i].values[model_index])
        .sum::<f64>()
        / members.len() as f64)
}

/// Full-set mean at `model_index`: retained tasks plus zeros for the
/// zero set, over the full task count.
pub fn observed_full_accuracy(matrix: &EvalMatrix, model_index: usize) -> Result<f64> {
    if model_index >= matrix.ladder.len() {
        return Err(Error::Parameter(format!(
            "model index {model_index} outside ladder of {}",
            matrix.ladder.len()
        )));
    }
    let sum: f64 = matrix
        .tasks
        .iter()
        .map(|t| t.values[model_index])
        .sum();
    Ok(sum / matrix.full_task_count as f64)
}

/// Settings for the mapping fit.
#[derive(Debug, Clone, Copy)]
pub struct MappingOptions {
    pub enforce_monotone: bool,
    pub grid_points: usize,
}

impl Default for MappingOptions {
    fn default() -> Self {
        MappingOptions {
            enforce_monotone: true,
            grid_points: 1001,
        }
    }
}

/// Weighted least squares over the free coefficients, with endpoints
/// satisfied by construction. If the fitted polynomial dips below zero
/// derivative on the check grid, refit with an escalating quadratic
/// penalty on the violating grid points.
pub fn fit_mapping(
    points: &[(f64, f64)],
    anchors: &[AnchorPoint],
    degree: usize,
    options: &MappingOptions,
) -> Result<MappingPolynomial> {
    if degree < 2 {
        return Err(Error::Parameter(format!(
            "mapping degree must be >= 2, got {degree}"
        )));
    }
    if points.is_empty() && anchors.is_empty() {
        return Err(Error::Parameter("mapping fit needs at least one point".into()));
    }
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for &(x, y) in points {
        xs.push(x);
        ys.push(y);
        ws.push(1.0);
    }
    for anchor in anchors {
        xs.push(anchor.subset_accuracy);
        ys.push(anchor.full_accuracy);
        ws.push(anchor.weight);
    }
    // rounding slack: composed accuracies can land an ulp outside [0, 1]
    for v in xs.iter_mut().chain(ys.iter_mut()) {
        if !(-1e-9..=1.0 + 1e-9).contains(v) {
            return Err(Error::Domain(format!(
                "mapping point value {v} outside the unit square"
            )));
        }
        *v = v.clamp(0.0, 1.0);
    }

    let nc = degree - 1;
    // basis phi_k(x) = x^{k+1} - x, target y - x
    let basis = |x: f64, k: usize| x.powi(k as i32 + 2) - x;
    // derivative of phi_k at x
    let dbasis = |x: f64, k: usize| (k as f64 + 2.0) * x.powi(k as i32 + 1) - 1.0;

    // normal equations for the data term
    let mut h_mat = vec![vec![0.0; nc]; nc];
    let mut h_vec = vec![0.0; nc];
    for ((&x, &y), &w) in xs.iter().zip(&ys).zip(&ws) {
        for i in 0..nc {
            let bi = basis(x, i);
            h_vec[i] += w * bi * (y - x);
            for j in 0..nc {
                h_mat[i][j] += w * bi * basis(x, j);
            }
        }
    }
    // ridge for rank deficiency (few distinct x values)
    for (i, row) in h_mat.iter_mut().enumerate() {
        row[i] += 1e-12;
    }

    let solve = |penalty: f64, violations: &[f64]| -> Option<Vec<f64>> {
        let mut ata = h_mat.clone();
        let mut atb = h_vec.clone();
        // quadratic penalty driving f'(x_v) = 1 + sum alpha_k dphi_k
        // toward zero from below
        for &xv in violations {
            let d: Vec<f64> = (0..nc).map(|k| dbasis(xv, k)).collect();
            for i in 0..nc {
                atb[i] += penalty * d[i] * (-1.0);
                for j in 0..nc {
                    ata[i][j] += penalty * d[i] * d[j];
                }
            }
        }
        solve_linear(&ata, &atb)
    };

    let mut coeffs = solve(0.0, &[])
        .ok_or_else(|| Error::FitFailure("mapping normal equations singular".into()))?;
    let mut poly = MappingPolynomial {
        degree,
        free_coeffs: coeffs.clone(),
        constrained_fit_warning: false,
    };

    if options.enforce_monotone {
        let mut penalty = 10.0;
        for _ in 0..4 {
            if poly.min_derivative_on_grid(options.grid_points) >= -1e-9 {
                return Ok(poly);
            }
            let violations: Vec<f64> = (0..options.grid_points)
                .map(|i| i as f64 / (options.grid_points - 1) as f64)
                .filter(|&x| poly.derivative(x) < 0.0)
                .collect();
            coeffs = solve(penalty, &violations).ok_or_else(|| {
                Error::FitFailure("penalized mapping fit singular".into())
            })?;
            poly.free_coeffs = coeffs.clone();
            penalty *= 10.0;
        }
        if poly.min_derivative_on_grid(options.grid_points) < -1e-9 {
            // penalties did not converge; solve the monotone fit exactly
            // as a QP (the slope constraints are linear in alpha)
            match monotone_qp(&h_mat, &h_vec, nc, options.grid_points, &dbasis) {
                Some(qp) => {
                    poly.free_coeffs = qp;
                }
                None => {
                    // shrink toward the identity (alpha = 0), which is
                    // monotone: f_t = (1-t) f + t x has minimum slope
                    // (1-t) m + t, zero at t = m / (m - 1)
                    let m = poly.min_derivative_on_grid(options.grid_points);
                    let t = (m / (m - 1.0)).clamp(0.0, 1.0);
                    for alpha in &mut poly.free_coeffs {
                        *alpha *= 1.0 - t;
                    }
                    poly.constrained_fit_warning = true;
                }
            }
            if poly.min_derivative_on_grid(options.grid_points) < -1e-9 {
                poly.constrained_fit_warning = true;
            }
        }
    }
    Ok(poly)
}

/// Active-set solve of min 1/2 a'Ha - h'a subject to the grid slope
/// constraints 1 + d(x_j) . a >= 0.
fn monotone_qp(
    h_mat: &[Vec<f64>],
    h_vec: &[f64],
    nc: usize,
    grid_points: usize,
    dbasis: &dyn Fn(f64, usize) -> f64,
) -> Option<Vec<f64>> {
    let grid: Vec<Vec<f64>> = (0..grid_points)
        .map(|i| {
            let x = i as f64 / (grid_points - 1) as f64;
            (0..nc).map(|k| dbasis(x, k)).collect()
        })
        .collect();
    let mut active: Vec<usize> = Vec::new();
    let mut alpha = vec![0.0; nc];
    for _ in 0..200 {
        // KKT system: [H -C'; C 0] [alpha; mu] = [h; -1]
        let na = active.len();
        let dim = nc + na;
        let mut m = vec![vec![0.0; dim]; dim];
        let mut rhs = vec![0.0; dim];
        for i in 0..nc {
            for j in 0..nc {
                m[i][j] = h_mat[i][j];
            }
            rhs[i] = h_vec[i];
        }
        for (s, &j) in active.iter().enumerate() {
            for i in 0..nc {
                m[i][nc + s] = -grid[j][i];
                m[nc + s][i] = grid[j][i];
            }
            rhs[nc + s] = -1.0;
        }
        let sol = solve_linear(&m, &rhs)?;
        alpha.copy_from_slice(&sol[..nc]);
        let mu = &sol[nc..];

        // drop one constraint pushing in the wrong direction, if any
        if let Some(worst) = (0..na)
            .filter(|&s| mu[s] < -1e-12)
            .min_by(|&p, &q| mu[p].partial_cmp(&mu[q]).unwrap())
        {
            active.remove(worst);
            continue;
        }
        // add the most violated slope constraint
        let mut worst_violation = -1e-12;
        let mut worst_index = None;
        for (j, d) in grid.iter().enumerate() {
            if active.contains(&j) {
                continue;
            }
            let slope = 1.0 + d.iter().zip(&alpha).map(|(&di, &ai)| di * ai).sum::<f64>();
            if slope < worst_violation {
                worst_violation = slope;
                worst_index = Some(j);
            }
        }
        match worst_index {
            Some(j) if active.len() < nc => active.push(j),
            Some(_) => return None,
            None => return Some(alpha),
        }
    }
    None
}

fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = m[i][n];
        for j in i + 1..n {
            sum -= m[i][j] * x[j];
        }
        x[i] = sum / m[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Apply the mapping, clamping to [0, 1]. Returns (value, clamped).
pub fn predict_full(mapping: &MappingPolynomial, subset_prediction: f64) -> (f64, bool) {
    let raw = mapping.eval(subset_prediction);
    let clamped = raw.clamp(0.0, 1.0);
    (clamped, clamped != raw)
}

/// Absolute prediction error; both inputs must share units.
pub fn prediction_error(predicted: f64, actual: f64) -> f64 {
    (predicted - actual).abs()
}

/// Single fit of the chosen variant on the full-set series, no
/// clustering and no mapping.
pub fn end_to_end_baseline(
    matrix: &EvalMatrix,
    variant: FormulaVariant,
    target: ComputeBudget,
) -> Result<f64> {
    let points: Vec<(ComputeBudget, f64)> = matrix
        .ladder
        .iter()
        .enumerate()
        .map(|(i, point)| Ok((point.compute, observed_full_accuracy(matrix, i)?)))
        .collect::<Result<_>>()?;
    let curve = fit_series(&points, variant, None)?;
    Ok(eval_curve(&curve, target))
}

/// Per-difficulty-bin counts of predictable-subset and retained tasks,
/// binned by the second-largest ladder model's entries in steps of 0.1.
pub fn difficulty_bins(
    matrix: &EvalMatrix,
    assignment: &ClusterAssignment,
    fits: &[ClusterFit],
) -> Vec<DifficultyBin> {
    let model_index = matrix.ladder.len().saturating_sub(2);
    let subset: Vec<usize> = extrapolatable_task_indices(assignment, fits);
    let mut bins: Vec<DifficultyBin> = (0..10)
        .map(|i| DifficultyBin {
            lower: i as f64 * 0.1,
            upper: (i + 1) as f64 * 0.1,
            subset_count: 0,
            total_count: 0,
        })
        .collect();
    let bin_of = |v: f64| ((v * 10.0).floor() as usize).min(9);
    for (i, task) in matrix.tasks.iter().enumerate() {
        let b = bin_of(task.values[model_index]);
        bins[b].total_count += 1;
        if subset.contains(&i) {
            bins[b].subset_count += 1;
        }
    }
    bins
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBin {
    pub lower: f64,
    pub upper: f64,
    pub subset_count: usize,
    pub total_count: usize,
}
