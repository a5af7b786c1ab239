//! Downstream classifiers trained on frozen representations, and the
//! easy-vs-hard preference they exhibit when the features are pitted
//! against one another.

use crate::booldata::{downstream_dataset, BoolDatasetConfig, DownstreamMode};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::nn::{MlpConfig, MlpModel, Mode, Nonlinearity};
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::rng::derive_seed;

use super::sparsity::logistic_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    /// Ridge-regularized logistic regression.
    Linear,
    /// One-hidden-layer MLP head.
    Mlp1Hidden,
}

fn check_reps(train_reps: &Matrix, conflict_reps: &Matrix) -> Result<()> {
    if train_reps.cols() != conflict_reps.cols() {
        return Err(Error::contract("train and conflict reps width mismatch"));
    }
    if train_reps.rows() == 0 || conflict_reps.rows() == 0 {
        return Err(Error::contract("empty representation sets"));
    }
    Ok(())
}

/// Trains a classifier on (reps, target) pairs from a JOINT set and
/// returns the fraction of CONFLICT-set predictions that agree with the
/// easy feature's implied label.
pub fn downstream_bias(
    train_reps: &Matrix,
    train_targets: &[f64],
    conflict_reps: &Matrix,
    conflict_easy_labels: &[f64],
    classifier: ClassifierKind,
    seed: u64,
) -> Result<f64> {
    check_reps(train_reps, conflict_reps)?;
    if train_targets.len() != train_reps.rows()
        || conflict_easy_labels.len() != conflict_reps.rows()
    {
        return Err(Error::contract("labels do not align with representations"));
    }

    let predictions: Vec<bool> = match classifier {
        ClassifierKind::Linear => {
            let fit = logistic_fit(train_reps, train_targets, 1e-4, 1e-6, 200_000)?;
            (0..conflict_reps.rows())
                .map(|i| dot(conflict_reps.row(i), &fit.weights) + fit.intercept > 0.0)
                .collect()
        }
        ClassifierKind::Mlp1Hidden => {
            let mut head = MlpModel::init(MlpConfig {
                input_dim: train_reps.cols(),
                hidden_sizes: vec![32],
                output_dim: 1,
                nonlinearity: Nonlinearity::LeakyRelu,
                residual: false,
                dropout_rate: 0.0,
                init_scale: 1.0,
                seed,
            })?;
            let mut opt = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 1e-3));
            let labels = Matrix::new(train_targets.len(), 1, train_targets.to_vec())?;
            let mut streak = 0;
            for step in 0..2000 {
                let (_, grads) = head.loss_and_grads(train_reps, &labels, &[1.0], None)?;
                let mut params = head.param_tensors_mut();
                opt.step(&mut params, &grads.tensors())?;
                if step % 25 == 0 {
                    let trace = head.forward(train_reps, Mode::Eval, None)?;
                    let acc = crate::trainer::accuracy_per_feature(&trace.logits, &labels)[0];
                    streak = if acc >= 0.999 { streak + 1 } else { 0 };
                    if streak >= 3 {
                        break;
                    }
                }
            }
            let trace = head.forward(conflict_reps, Mode::Eval, None)?;
            (0..conflict_reps.rows())
                .map(|i| trace.logits.get(i, 0) > 0.0)
                .collect()
        }
    };

    let agree = predictions
        .iter()
        .zip(conflict_easy_labels)
        .filter(|(&p, &e)| p == (e > 0.5))
        .count();
    Ok(agree as f64 / predictions.len() as f64)
}

/// End-to-end preference measurement for a trained easy+hard model: build
/// a JOINT set at predictivity `q`, extract penultimate representations,
/// train the classifier on the latent target, and score it on a CONFLICT
/// set.
pub fn downstream_preference(
    model: &MlpModel,
    base: &BoolDatasetConfig,
    q: f64,
    classifier: ClassifierKind,
    train_size: usize,
    conflict_size: usize,
    seed: u64,
) -> Result<f64> {
    let joint = downstream_dataset(base, q, DownstreamMode::Joint, train_size, derive_seed(seed, 1))?;
    let conflict = downstream_dataset(
        base,
        q,
        DownstreamMode::Conflict,
        conflict_size,
        derive_seed(seed, 2),
    )?;

    let penultimate = model.penultimate_layer();
    let train_reps = model
        .forward(&joint.split.inputs, Mode::Eval, None)?
        .activations
        .swap_remove(penultimate);
    let conflict_reps = model
        .forward(&conflict.split.inputs, Mode::Eval, None)?
        .activations
        .swap_remove(penultimate);

    let targets: Vec<f64> = joint.targets.iter().map(|&t| t as f64).collect();
    let easy_labels = conflict.split.label_column(conflict.easy_feature);
    downstream_bias(
        &train_reps,
        &targets,
        &conflict_reps,
        &easy_labels,
        classifier,
        derive_seed(seed, 3),
    )
}
