//! Per-run summary: final accuracy and variance explained for every
//! feature of a completed run, with the all-patterns probe for nonlinear
//! features where tractable.

use serde::Serialize;

use crate::booldata::FeatureKind;
use crate::error::{Error, Result};
use crate::trainer::RunOutput;

use super::probe::{variance_explained, variance_explained_patterns};

#[derive(Debug, Clone, Serialize)]
pub struct FeatureSummary {
    pub feature: usize,
    pub kind: String,
    pub prevalence: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub r2_raw: f64,
    /// All-patterns probe over the feature's relevant inputs; absent for
    /// LINEAR features (the plain probe already spans their patterns) and
    /// arities past the enumeration guard.
    pub pattern_r2: Option<f64>,
    pub total_test_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub final_step: u64,
    pub features: Vec<FeatureSummary>,
}

/// Summarizes a run from its final penultimate snapshots.
pub fn final_run_summary(run: &RunOutput) -> Result<RunSummary> {
    let (val, test) = run
        .final_penultimate()
        .ok_or_else(|| Error::contract("run has no final penultimate snapshots"))?;
    let config = &run.record.config.dataset;
    let final_step = run.record.final_step;

    let mut features = Vec::with_capacity(config.features.len());
    for (f, spec) in config.features.iter().enumerate() {
        let f_val = run.dataset.validation.label_column(f);
        let f_test = run.dataset.test.label_column(f);
        let (_, ve) = variance_explained(
            val,
            test,
            &f_val,
            &f_test,
            None,
            &spec.kind.name(),
        )?;
        let pattern_r2 = if spec.kind != FeatureKind::Linear && spec.input_indices.len() <= 8 {
            let (_, pve) = variance_explained_patterns(
                spec,
                val,
                test,
                &run.dataset.validation.inputs,
                &run.dataset.test.inputs,
                None,
            )?;
            Some(pve.r2_raw)
        } else {
            None
        };
        let (acc, loss) = run
            .record
            .evals
            .iter()
            .rev()
            .find(|e| e.step == final_step && e.feature == f)
            .map(|e| (e.accuracy, e.loss))
            .unwrap_or((f64::NAN, f64::NAN));
        features.push(FeatureSummary {
            feature: f,
            kind: spec.kind.name(),
            prevalence: spec.prevalence,
            final_accuracy: acc,
            final_loss: loss,
            r2_raw: ve.r2_raw,
            pattern_r2,
            total_test_variance: ve.total_test_variance,
        });
    }
    Ok(RunSummary {
        run_id: run.record.run_id.clone(),
        final_step,
        features,
    })
}
