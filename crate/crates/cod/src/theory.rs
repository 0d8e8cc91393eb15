//! Numeric checks of the arithmetic-geometric mean gap and the accuracy
//! decomposition behind the scaling-curve family.
//!
//! Two second-order correction variants are computed side by side: the
//! loss-moment form sigma_L^2 / (2 mu_L) as stated, and the
//! passrate-moment form Var(e^-L) / (2 E[e^-L]) that the mean-gap lemma
//! actually yields when applied to the passrates themselves. Tests
//! document that the passrate-moment form tracks the exact accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    /// Per-task answer losses in nats, all positive.
    pub losses: Vec<f64>,
    /// Random guessing baseline in [0, 1).
    pub g: f64,
}

impl LossSample {
    pub fn new(losses: Vec<f64>, g: f64) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::Domain("loss sample must be non-empty".into()));
        }
        for &l in &losses {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::Domain(format!("loss {l} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&g) {
            return Err(Error::Domain(format!("guess floor {g} outside [0, 1)")));
        }
        Ok(LossSample { losses, g })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Arithmetic mean minus geometric mean; nonnegative for positive input.
    pub delta: f64,
    /// Second-order estimate sigma^2 / (2 mu), population variance.
    pub estimate: f64,
    /// |delta - estimate| / sigma^2, absent when sigma^2 = 0.
    pub relative_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// g + (1-g) * mean(e^-L); the ground truth.
    pub exact_acc: f64,
    /// Correction from passrate moments: Var(e^-L) / (2 mean(e^-L)).
    pub estimate_passrate_moments: f64,
    /// Correction from loss moments: sigma_L^2 / (2 mu_L).
    pub estimate_loss_moments: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (1/n).
fn population_variance(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64
}

/// Arithmetic-geometric mean gap with its second-order estimate.
pub fn am_gm_gap(xs: &[f64]) -> Result<GapReport> {
    if xs.is_empty() {
        return Err(Error::Domain("input must be non-empty".into()));
    }
    for &x in xs {
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::Domain(format!("entry {x} must be positive")));
        }
    }
    let mu = mean(xs);
    let geo = (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp();
    let var = population_variance(xs);
    let delta = mu - geo;
    let estimate = var / (2.0 * mu);
    Ok(GapReport {
        delta,
        estimate,
        relative_residual: (var > 0.0).then(|| (delta - estimate).abs() / var),
    })
}

/// p(a_true | q) = e^-L for a deterministic unique answer.
pub fn passrate_from_loss(loss: f64) -> f64 {
    (-loss).exp()
}

/// Exact expected accuracy next to both second-order approximations.
pub fn theorem_decomposition(sample: &LossSample) -> DecompositionReport {
    let passrates: Vec<f64> = sample.losses.iter().map(|&l| passrate_from_loss(l)).collect();
    let scale = 1.0 - sample.g;
    let exact = sample.g + scale * mean(&passrates);

    let mu_loss = mean(&sample.losses);
    let var_loss = population_variance(&sample.losses);
    let geo = (-mu_loss).exp();

    let pass_correction = population_variance(&passrates) / (2.0 * mean(&passrates));
    let loss_correction = var_loss / (2.0 * mu_loss);

    DecompositionReport {
        exact_acc: exact,
        estimate_passrate_moments: sample.g + scale * (geo + pass_correction),
        estimate_loss_moments: sample.g + scale * (geo + loss_correction),
    }
}
