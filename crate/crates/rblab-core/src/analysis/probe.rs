//! Linear probes from feature values (or pattern one-hots) onto
//! representations, and the variance-explained measures built on them.
//!
//! Probes are fit on the validation split and scored on the test split.
//! Both representations and the design are centered by their validation
//! means, so no intercept appears in the design.

use serde::Serialize;

use crate::booldata::{enumerate_patterns, FeatureSpec};
use crate::error::{Error, Result};
use crate::linalg::{solve_least_squares, Matrix};
use crate::store::RepresentationSnapshot;

/// A fitted linear map from (centered) feature values to (centered)
/// representations.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeFit {
    /// What was probed (a feature name or pattern-set id).
    pub target: String,
    /// design_width x units.
    pub coefficients: Matrix,
    /// Validation mean of the representations; acts as the intercept.
    pub rep_mean: Vec<f64>,
    /// Validation mean of each design column.
    pub design_mean: Vec<f64>,
    /// Split the probe was fit on.
    pub fit_split: String,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VarianceExplainedResult {
    /// Out-of-sample fraction of total representation variance explained;
    /// may be negative.
    pub r2_raw: f64,
    /// Explained variance normalized by the end-of-training total variance
    /// instead of the current one (equals `r2_raw` when no final variance
    /// is supplied, as at the final step).
    pub r2_final_normalized: f64,
    /// Mean squared centered test representation norm.
    pub total_test_variance: f64,
    pub step: u64,
}

fn centered_design(design: &Matrix, mean: &[f64]) -> Matrix {
    design.sub_row_vector(mean)
}

fn check_alignment(
    reps_val: &RepresentationSnapshot,
    reps_test: &RepresentationSnapshot,
    design_val_rows: usize,
    design_test_rows: usize,
) -> Result<()> {
    if reps_val.rows != design_val_rows || reps_test.rows != design_test_rows {
        return Err(Error::contract(
            "feature values are not aligned with snapshot rows",
        ));
    }
    if reps_val.cols != reps_test.cols {
        return Err(Error::contract(
            "validation and test snapshots have different unit counts",
        ));
    }
    if reps_val.layer != reps_test.layer || reps_val.run_id != reps_test.run_id {
        return Err(Error::contract(
            "validation and test snapshots come from different runs or layers",
        ));
    }
    Ok(())
}

/// Fits the probe on the validation snapshot.
pub fn fit_probe(
    reps_val: &RepresentationSnapshot,
    design_val: &Matrix,
    target: &str,
) -> Result<ProbeFit> {
    if design_val.rows() != reps_val.rows {
        return Err(Error::contract("design rows do not match snapshot rows"));
    }
    let reps = reps_val.to_matrix();
    let rep_mean = reps.column_means();
    let design_mean = design_val.column_means();
    let coefficients = solve_least_squares(
        &centered_design(design_val, &design_mean),
        &reps.sub_row_vector(&rep_mean),
        0.0,
    )?;
    Ok(ProbeFit {
        target: target.to_string(),
        coefficients,
        rep_mean,
        design_mean,
        fit_split: reps_val.split.clone(),
    })
}

fn score_probe(
    probe: &ProbeFit,
    reps_test: &RepresentationSnapshot,
    design_test: &Matrix,
    final_total_variance: Option<f64>,
) -> Result<VarianceExplainedResult> {
    let reps = reps_test.to_matrix().sub_row_vector(&probe.rep_mean);
    let design = centered_design(design_test, &probe.design_mean);
    let pred = design.matmul(&probe.coefficients);
    let mut resid = reps.clone();
    for (r, p) in resid.as_mut_slice().iter_mut().zip(pred.as_slice()) {
        *r -= p;
    }
    let total = reps.mean_squared_row_norm();
    if total == 0.0 {
        return Err(Error::UndefinedR2(
            "total test representation variance is zero".into(),
        ));
    }
    let msr = resid.mean_squared_row_norm();
    let r2_raw = 1.0 - msr / total;
    let r2_final_normalized = match final_total_variance {
        Some(v_final) if v_final > 0.0 => r2_raw * total / v_final,
        Some(_) => {
            return Err(Error::UndefinedR2(
                "final total variance must be positive".into(),
            ))
        }
        None => r2_raw,
    };
    Ok(VarianceExplainedResult {
        r2_raw,
        r2_final_normalized,
        total_test_variance: total,
        step: reps_test.step,
    })
}

/// Variance in the representations explained by one feature: fit on
/// validation, scored on test, both centered by validation means.
pub fn variance_explained(
    reps_val: &RepresentationSnapshot,
    reps_test: &RepresentationSnapshot,
    f_val: &[f64],
    f_test: &[f64],
    final_total_variance: Option<f64>,
    target: &str,
) -> Result<(ProbeFit, VarianceExplainedResult)> {
    check_alignment(reps_val, reps_test, f_val.len(), f_test.len())?;
    let design_val = Matrix::new(f_val.len(), 1, f_val.to_vec())?;
    let design_test = Matrix::new(f_test.len(), 1, f_test.to_vec())?;
    let probe = fit_probe(reps_val, &design_val, target)?;
    let result = score_probe(&probe, reps_test, &design_test, final_total_variance)?;
    Ok((probe, result))
}

/// Variance explained by the one-hot encoding of every configuration of a
/// feature's relevant inputs; captures any function of those inputs.
pub fn variance_explained_patterns(
    spec: &FeatureSpec,
    reps_val: &RepresentationSnapshot,
    reps_test: &RepresentationSnapshot,
    inputs_val: &Matrix,
    inputs_test: &Matrix,
    final_total_variance: Option<f64>,
) -> Result<(ProbeFit, VarianceExplainedResult)> {
    check_alignment(reps_val, reps_test, inputs_val.rows(), inputs_test.rows())?;
    let design_val = enumerate_patterns(spec, inputs_val)?;
    let design_test = enumerate_patterns(spec, inputs_test)?;
    let target = format!("patterns:{}", spec.kind.name());
    let probe = fit_probe(reps_val, &design_val, &target)?;
    let result = score_probe(&probe, reps_test, &design_test, final_total_variance)?;
    Ok((probe, result))
}

/// Total centered test variance at this layer/step, centered by the
/// validation mean; used as the normalization denominator for
/// end-of-training comparisons.
pub fn total_test_variance(
    reps_val: &RepresentationSnapshot,
    reps_test: &RepresentationSnapshot,
) -> Result<f64> {
    check_alignment(reps_val, reps_test, reps_val.rows, reps_test.rows)?;
    let mean = reps_val.to_matrix().column_means();
    Ok(reps_test.to_matrix().sub_row_vector(&mean).mean_squared_row_norm())
}

#[derive(Debug, Clone, Serialize)]
pub struct PerUnitVariance {
    /// Out-of-sample R-squared per unit; `None` marks zero-variance units.
    pub r2: Vec<Option<f64>>,
    /// Centered test variance per unit.
    pub variance: Vec<f64>,
    /// Pooled result over all units (the variance-weighted mean of the
    /// per-unit values).
    pub pooled: VarianceExplainedResult,
}

/// Independent simple regressions from one feature onto each unit.
pub fn per_unit_variance(
    reps_val: &RepresentationSnapshot,
    reps_test: &RepresentationSnapshot,
    f_val: &[f64],
    f_test: &[f64],
) -> Result<PerUnitVariance> {
    let (probe, pooled) = variance_explained(reps_val, reps_test, f_val, f_test, None, "per-unit")?;
    let reps = reps_test.to_matrix().sub_row_vector(&probe.rep_mean);
    let design = Matrix::new(f_test.len(), 1, f_test.to_vec())?
        .sub_row_vector(&probe.design_mean);
    let pred = design.matmul(&probe.coefficients);

    let n = reps.rows();
    let units = reps.cols();
    let mut variance = vec![0.0; units];
    let mut msr = vec![0.0; units];
    for i in 0..n {
        for j in 0..units {
            let x = reps.get(i, j);
            let r = x - pred.get(i, j);
            variance[j] += x * x;
            msr[j] += r * r;
        }
    }
    let inv = 1.0 / n as f64;
    let r2 = variance
        .iter()
        .zip(&msr)
        .map(|(&v, &m)| {
            if v == 0.0 {
                None
            } else {
                Some(1.0 - m / v)
            }
        })
        .collect();
    for v in &mut variance {
        *v *= inv;
    }
    Ok(PerUnitVariance {
        r2,
        variance,
        pooled,
    })
}

/// Accuracy of decoding a binary feature from representations with a
/// linear probe (fit on validation, thresholded at one half on test).
pub fn linear_decode_accuracy(
    reps_val: &RepresentationSnapshot,
    reps_test: &RepresentationSnapshot,
    f_val: &[f64],
    f_test: &[f64],
) -> Result<f64> {
    check_alignment(reps_val, reps_test, f_val.len(), f_test.len())?;
    let val = reps_val.to_matrix();
    let rep_mean = val.column_means();
    let f_mean = f_val.iter().sum::<f64>() / f_val.len().max(1) as f64;
    let targets = Matrix::new(f_val.len(), 1, f_val.iter().map(|&f| f - f_mean).collect())?;
    let w = solve_least_squares(&val.sub_row_vector(&rep_mean), &targets, 0.0)?;
    let pred = reps_test.to_matrix().sub_row_vector(&rep_mean).matmul(&w);
    let correct = f_test
        .iter()
        .enumerate()
        .filter(|&(i, &f)| ((pred.get(i, 0) + f_mean) > 0.5) == (f > 0.5))
        .count();
    Ok(correct as f64 / f_test.len().max(1) as f64)
}
