//! Steering interventions: shift penultimate representations along a
//! feature's present-absent difference vector and measure which predicted
//! labels flip.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::MlpModel;
use crate::store::RepresentationSnapshot;

use super::probe::ProbeFit;

/// The present-absent difference vector of a binary-feature probe: the
/// predicted representation at feature = 1 minus at feature = 0, which is
/// the probe's single coefficient row. Returns the vector and its norm.
pub fn steering_vector(probe: &ProbeFit) -> Result<(Vec<f64>, f64)> {
    if probe.coefficients.rows() != 1 {
        return Err(Error::contract(
            "steering vectors require a single-column (binary feature) probe",
        ));
    }
    let d = probe.coefficients.row(0).to_vec();
    let magnitude = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((d, magnitude))
}

#[derive(Debug, Clone)]
pub struct InterventionResult {
    pub alpha: f64,
    /// Fraction of stimuli whose predicted label changed, per feature.
    pub flip_fraction: Vec<f64>,
}

fn surgery_layer(model: &MlpModel, snapshot: &RepresentationSnapshot) -> Result<usize> {
    let layer_index = model.penultimate_layer();
    let expected = format!("hidden{layer_index}");
    if snapshot.layer != expected {
        return Err(Error::contract(format!(
            "snapshot layer '{}' does not match the surgery point '{expected}'",
            snapshot.layer
        )));
    }
    Ok(layer_index)
}

fn predictions(logits: &Matrix) -> Vec<Vec<bool>> {
    (0..logits.rows())
        .map(|i| (0..logits.cols()).map(|f| logits.get(i, f) > 0.0).collect())
        .collect()
}

/// Shifts every stimulus by `-alpha * d` when the model currently labels
/// the steered feature 1 (else `+alpha * d`), resumes the forward pass,
/// and reports the per-feature fraction of flipped predictions.
pub fn intervene(
    model: &MlpModel,
    snapshot: &RepresentationSnapshot,
    steered_feature: usize,
    d: &[f64],
    alpha: f64,
) -> Result<InterventionResult> {
    let layer_index = surgery_layer(model, snapshot)?;
    if d.len() != snapshot.cols {
        return Err(Error::contract("steering vector width mismatch"));
    }
    if steered_feature >= model.config().output_dim {
        return Err(Error::contract("steered feature out of range"));
    }
    let reps = snapshot.to_matrix();
    let baseline = predictions(&model.forward_from_layer(layer_index, &reps)?);

    let mut shifted = reps;
    for i in 0..shifted.rows() {
        let sign = if baseline[i][steered_feature] { -1.0 } else { 1.0 };
        for (v, &dv) in shifted.row_mut(i).iter_mut().zip(d) {
            *v += sign * alpha * dv;
        }
    }
    let steered = predictions(&model.forward_from_layer(layer_index, &shifted)?);

    let n = baseline.len().max(1) as f64;
    let n_features = model.config().output_dim;
    let flip_fraction = (0..n_features)
        .map(|f| {
            baseline
                .iter()
                .zip(&steered)
                .filter(|(b, s)| b[f] != s[f])
                .count() as f64
                / n
        })
        .collect();
    Ok(InterventionResult {
        alpha,
        flip_fraction,
    })
}

/// Smallest shift magnitude (in representation units) that flips the
/// steered feature's predicted label for every stimulus, found by
/// exponential search plus bisection along the unit steering direction.
pub fn flip_threshold_magnitude(
    model: &MlpModel,
    snapshot: &RepresentationSnapshot,
    steered_feature: usize,
    d: &[f64],
) -> Result<f64> {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::numeric("steering vector has zero norm"));
    }
    let all_flip = |magnitude: f64| -> Result<bool> {
        let alpha = magnitude / norm;
        let result = intervene(model, snapshot, steered_feature, d, alpha)?;
        Ok(result.flip_fraction[steered_feature] >= 1.0)
    };

    let mut hi = norm;
    let mut grew = 0;
    while !all_flip(hi)? {
        hi *= 2.0;
        grew += 1;
        if grew > 20 {
            return Err(Error::numeric(
                "no magnitude below 2^20 relative flips every label",
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if all_flip(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
