//! Representational similarity analysis: stimulus-by-stimulus
//! dissimilarity matrices and correlations between their upper triangles.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, pearson, spearman, Matrix};
use crate::store::RepresentationSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RdmMetric {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RsaCorrelation {
    Pearson,
    Spearman,
}

/// Symmetric nonnegative dissimilarity matrix with zero diagonal.
#[derive(Debug, Clone)]
pub struct Rdm {
    pub metric: RdmMetric,
    pub stimulus_ids: Vec<u64>,
    pub data: Matrix,
}

/// Pairwise distances between stimulus rows of a snapshot.
pub fn rdm(snapshot: &RepresentationSnapshot, metric: RdmMetric) -> Result<Rdm> {
    snapshot.validate()?;
    let reps = snapshot.to_matrix();
    let n = reps.rows();
    let mut data = Matrix::zeros(n, n);

    let norms: Vec<f64> = (0..n)
        .map(|i| dot(reps.row(i), reps.row(i)).sqrt())
        .collect();
    if metric == RdmMetric::Cosine && norms.iter().any(|&v| v == 0.0) {
        return Err(Error::numeric(
            "cosine dissimilarity is undefined for zero-norm rows",
        ));
    }

    for i in 0..n {
        for j in (i + 1)..n {
            let d = match metric {
                RdmMetric::Euclidean => reps
                    .row(i)
                    .iter()
                    .zip(reps.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                RdmMetric::Cosine => {
                    1.0 - dot(reps.row(i), reps.row(j)) / (norms[i] * norms[j])
                }
            };
            data.set(i, j, d);
            data.set(j, i, d);
        }
    }
    Ok(Rdm {
        metric,
        stimulus_ids: snapshot.stimulus_ids.clone(),
        data,
    })
}

/// Correlation between the upper triangles of two dissimilarity matrices
/// over the same stimuli (diagonal excluded).
pub fn rsa_compare(a: &Rdm, b: &Rdm, corr: RsaCorrelation) -> Result<f64> {
    if a.stimulus_ids != b.stimulus_ids {
        return Err(Error::contract(
            "rdm comparison requires the same stimulus set and order",
        ));
    }
    let n = a.data.rows();
    if n < 3 {
        return Err(Error::contract("rdm comparison needs at least 3 stimuli"));
    }
    let mut ua = Vec::with_capacity(n * (n - 1) / 2);
    let mut ub = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            ua.push(a.data.get(i, j));
            ub.push(b.data.get(i, j));
        }
    }
    match corr {
        RsaCorrelation::Pearson => pearson(&ua, &ub),
        RsaCorrelation::Spearman => spearman(&ua, &ub),
    }
}
