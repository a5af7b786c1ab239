//! Model simplification through principal components: project the
//! penultimate representations onto (or off) the top-k subspace and resume
//! the forward pass to measure what survives.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{principal_components, Matrix, PcaResult};
use crate::nn::MlpModel;
use crate::store::RepresentationSnapshot;
use crate::trainer::accuracy_per_feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaMode {
    /// Keep only the span of the top-k components (plus the mean).
    KeepTop,
    /// Remove the span of the top-k components, keeping everything else.
    DropTop,
}

#[derive(Debug, Clone)]
pub struct PcaReadoutRow {
    pub k: usize,
    /// Per-feature accuracy after surgery.
    pub accuracy: Vec<f64>,
}

fn check_surgery_layer(model: &MlpModel, snapshot: &RepresentationSnapshot) -> Result<usize> {
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

/// Accuracy per feature after projecting the snapshot onto (KEEP_TOP) or
/// off (DROP_TOP) its top-k principal components and resuming the forward
/// pass, for each requested k.
pub fn pca_readout(
    model: &MlpModel,
    snapshot: &RepresentationSnapshot,
    labels: &Matrix,
    ks: &[usize],
    mode: PcaMode,
) -> Result<Vec<PcaReadoutRow>> {
    let layer_index = check_surgery_layer(model, snapshot)?;
    if labels.rows() != snapshot.rows {
        return Err(Error::contract("labels do not align with snapshot rows"));
    }
    let reps = snapshot.to_matrix();
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if max_k == 0 || max_k > reps.rows().min(reps.cols()) {
        return Err(Error::contract("k out of range for snapshot"));
    }
    let pca = principal_components(&reps, max_k)?;

    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let truncated = PcaResult {
            components: take_rows(&pca.components, k),
            singular_values: pca.singular_values.clone(),
            mean: pca.mean.clone(),
        };
        let modified = match mode {
            PcaMode::KeepTop => truncated.reconstruct(&reps),
            PcaMode::DropTop => truncated.remove_top(&reps),
        };
        let logits = model.forward_from_layer(layer_index, &modified)?;
        rows.push(PcaReadoutRow {
            k,
            accuracy: accuracy_per_feature(&logits, labels),
        });
    }
    Ok(rows)
}

fn take_rows(m: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(k, m.cols());
    for r in 0..k {
        out.row_mut(r).copy_from_slice(m.row(r));
    }
    out
}

/// Writes the 2-D principal-component projection of a snapshot as CSV
/// (`stimulus_id,pc1,pc2,<feature columns>`) for external plotting.
pub fn export_pca_projection(
    snapshot: &RepresentationSnapshot,
    labels: &Matrix,
    feature_names: &[String],
    w: &mut impl Write,
) -> Result<()> {
    if labels.rows() != snapshot.rows || feature_names.len() != labels.cols() {
        return Err(Error::contract("labels do not align with snapshot"));
    }
    let reps = snapshot.to_matrix();
    let pca = principal_components(&reps, 2.min(reps.rows().min(reps.cols())))?;
    let scores = pca.scores(&reps);
    write!(w, "stimulus_id,pc1,pc2")?;
    for name in feature_names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for i in 0..snapshot.rows {
        write!(
            w,
            "{},{},{}",
            snapshot.stimulus_ids[i],
            scores.get(i, 0),
            if scores.cols() > 1 { scores.get(i, 1) } else { 0.0 }
        )?;
        for f in 0..labels.cols() {
            write!(w, ",{}", labels.get(i, f))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
