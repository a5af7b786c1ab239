//! Experiment orchestration: training regimes (simultaneous or
//! pretrain-then-joint), per-feature evaluation on the test split, and
//! EVAL-mode representation snapshots on a log-spaced schedule.
//!
//! Runs are deterministic single-threaded functions of their config;
//! sweeps fan independent runs out to parallel workers.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::booldata::{generate, BoolDatasetConfig, GeneratedDataset, SplitName};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{MlpConfig, MlpModel, Mode, Nonlinearity};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::rng::{derive_seed, Rng64};
use crate::store::RepresentationSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingRegime {
    Simultaneous,
    /// Train only `pretrain_features` until they reach `stop_accuracy` on
    /// the test split (or `max_steps` elapse), then train all features
    /// jointly.
    Pretrain {
        pretrain_features: Vec<usize>,
        #[serde(default = "default_pretrain_accuracy")]
        stop_accuracy: f64,
        #[serde(default = "default_pretrain_steps")]
        max_steps: u64,
    },
}

fn default_pretrain_accuracy() -> f64 {
    0.999
}

fn default_pretrain_steps() -> u64 {
    u64::MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Per-feature test accuracy every feature must reach.
    pub threshold: f64,
    /// Consecutive evaluations the threshold must hold.
    pub patience: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            threshold: 0.999,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnapshotSchedule {
    /// Snapshot at 0, 1, and successive steps spaced by `factor`, plus the
    /// final step.
    LogSpaced { factor: f64 },
    /// Snapshot at the listed steps plus first and final steps.
    Explicit { steps: Vec<u64> },
}

impl Default for SnapshotSchedule {
    fn default() -> Self {
        SnapshotSchedule::LogSpaced { factor: 1.3 }
    }
}

impl SnapshotSchedule {
    fn planned_steps(&self, max_steps: u64) -> BTreeSet<u64> {
        let mut steps = BTreeSet::new();
        steps.insert(0);
        match self {
            SnapshotSchedule::LogSpaced { factor } => {
                let mut s = 1u64;
                while s <= max_steps {
                    steps.insert(s);
                    s = ((s as f64 * factor).ceil() as u64).max(s + 1);
                }
            }
            SnapshotSchedule::Explicit { steps: listed } => {
                steps.extend(listed.iter().copied().filter(|&s| s <= max_steps));
            }
        }
        steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: BoolDatasetConfig,
    pub model: MlpConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_regime")]
    pub regime: TrainingRegime,
    pub max_steps: u64,
    /// Examples per update; absent means one update per pass over the whole
    /// training set.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub snapshot_schedule: SnapshotSchedule,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub stop_when_all_accurate: StopRule,
    /// Snapshot every hidden layer instead of only the penultimate one.
    #[serde(default)]
    pub snapshot_all_layers: bool,
    pub seed: u64,
}

fn default_regime() -> TrainingRegime {
    TrainingRegime::Simultaneous
}

fn default_eval_every() -> u64 {
    25
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        if self.model.input_dim != self.dataset.n_inputs {
            return Err(Error::contract(format!(
                "model input_dim {} does not match dataset n_inputs {}",
                self.model.input_dim, self.dataset.n_inputs
            )));
        }
        if self.model.output_dim != self.dataset.n_features() {
            return Err(Error::contract(format!(
                "model output_dim {} does not match feature count {}",
                self.model.output_dim,
                self.dataset.n_features()
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::contract("eval_every must be >= 1"));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > self.dataset.sizes.train {
                return Err(Error::contract("batch_size out of range"));
            }
        }
        if let SnapshotSchedule::LogSpaced { factor } = self.snapshot_schedule {
            if !(factor > 1.0) {
                return Err(Error::contract("log schedule factor must exceed 1"));
            }
        }
        let s = &self.stop_when_all_accurate;
        if !(s.threshold > 0.5 && s.threshold <= 1.0) || s.patience == 0 {
            return Err(Error::contract(
                "stop threshold must lie in (0.5, 1] with patience >= 1",
            ));
        }
        if let TrainingRegime::Pretrain {
            pretrain_features,
            stop_accuracy,
            ..
        } = &self.regime
        {
            let n = self.dataset.n_features();
            if pretrain_features.is_empty()
                || pretrain_features.len() >= n
                || pretrain_features.iter().any(|&f| f >= n)
            {
                return Err(Error::contract(
                    "pretrain_features must be a nonempty proper subset of the features",
                ));
            }
            if !(*stop_accuracy > 0.5 && *stop_accuracy <= 1.0) {
                return Err(Error::contract("pretrain stop accuracy must lie in (0.5, 1]"));
            }
        }
        Ok(())
    }

    /// Deterministic id derived from the canonical config encoding.
    pub fn run_id(&self) -> String {
        let encoded = serde_json::to_string(self).expect("config serializes");
        format!("run{:016x}", fnv64(encoded.as_bytes()))
    }
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    Pretrain,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub feature: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub phase: RunPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub step: u64,
    pub layer: String,
    pub split: SplitName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Ran to max_steps or the accuracy stop rule.
    Completed { converged: bool },
    /// Aborted on a non-finite loss.
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub evals: Vec<EvalRow>,
    pub snapshots: Vec<SnapshotRef>,
    pub final_step: u64,
    /// Step at which the pretrain phase handed over to joint training.
    pub pretrain_end_step: Option<u64>,
    pub status: RunStatus,
}

/// A completed run: the record plus the in-memory artifacts callers
/// persist or analyze.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub snapshots: Vec<RepresentationSnapshot>,
    /// Final parameters at full precision; round through
    /// [`MlpModel::storage_rounded`] for values consistent with snapshots
    /// and serialized models.
    pub final_model: MlpModel,
    pub dataset: GeneratedDataset,
}

impl RunOutput {
    pub fn penultimate_layer_name(&self) -> String {
        format!("hidden{}", self.final_model.penultimate_layer())
    }

    pub fn snapshot(&self, step: u64, layer: &str, split: SplitName) -> Option<&RepresentationSnapshot> {
        self.snapshots
            .iter()
            .find(|s| s.step == step && s.layer == layer && s.split == split.as_str())
    }

    /// Penultimate validation/test snapshot pair at the final step.
    pub fn final_penultimate(&self) -> Option<(&RepresentationSnapshot, &RepresentationSnapshot)> {
        let layer = self.penultimate_layer_name();
        let step = self.record.final_step;
        Some((
            self.snapshot(step, &layer, SplitName::Validation)?,
            self.snapshot(step, &layer, SplitName::Test)?,
        ))
    }
}

/// Per-feature classification accuracy of logits against 0/1 labels.
pub fn accuracy_per_feature(logits: &Matrix, labels: &Matrix) -> Vec<f64> {
    assert_eq!(logits.rows(), labels.rows());
    assert_eq!(logits.cols(), labels.cols());
    let n = logits.rows();
    (0..logits.cols())
        .map(|f| {
            let correct = (0..n)
                .filter(|&i| (logits.get(i, f) > 0.0) == (labels.get(i, f) > 0.5))
                .count();
            correct as f64 / n.max(1) as f64
        })
        .collect()
}

/// Per-feature mean sigmoid cross-entropy of logits against 0/1 labels.
pub fn ce_per_feature(logits: &Matrix, labels: &Matrix) -> Vec<f64> {
    let n = logits.rows();
    (0..logits.cols())
        .map(|f| {
            (0..n)
                .map(|i| {
                    let z = logits.get(i, f);
                    let y = labels.get(i, f);
                    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
                })
                .sum::<f64>()
                / n.max(1) as f64
        })
        .collect()
}

struct ScheduleState {
    planned: BTreeSet<u64>,
}

impl ScheduleState {
    fn due(&self, step: u64) -> bool {
        self.planned.contains(&step)
    }
}

/// Executes one experiment.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let run_id = config.run_id();
    let dataset = generate(&config.dataset)?;
    let mut model = MlpModel::init(config.model.clone())?;
    let mut optimizer = OptimizerState::new(config.optimizer.clone());
    let mut train_rng = Rng64::new(derive_seed(config.seed, 0x7261));

    let n_features = config.dataset.n_features();
    let (mut mask, mut phase, pretrain_rule) = match &config.regime {
        TrainingRegime::Simultaneous => (vec![1.0; n_features], RunPhase::Joint, None),
        TrainingRegime::Pretrain {
            pretrain_features,
            stop_accuracy,
            max_steps,
        } => {
            let mut m = vec![0.0; n_features];
            for &f in pretrain_features {
                m[f] = 1.0;
            }
            (
                m,
                RunPhase::Pretrain,
                Some((pretrain_features.clone(), *stop_accuracy, *max_steps)),
            )
        }
    };

    let schedule = ScheduleState {
        planned: config.snapshot_schedule.planned_steps(config.max_steps),
    };
    let mut evals: Vec<EvalRow> = Vec::new();
    let mut snapshots: Vec<RepresentationSnapshot> = Vec::new();
    let mut snapshot_refs: Vec<SnapshotRef> = Vec::new();
    let mut batch_order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut epoch_offset = 0usize;
    let mut stop_streak = 0usize;
    let mut pretrain_end_step = None;
    let mut status = RunStatus::Completed { converged: false };
    let mut step = 0u64;
    let mut last_eval_step = None;
    let mut last_snapshot_step = None;

    loop {
        // Evaluate on the planned cadence, tracking phase transitions and
        // the stop rule.
        if step % config.eval_every == 0 {
            let accs = evaluate(&mut evals, &model, &dataset, phase, step)?;
            last_eval_step = Some(step);

            if phase == RunPhase::Pretrain {
                let (features, stop_acc, pre_max) =
                    pretrain_rule.as_ref().expect("pretrain phase has a rule");
                let done = features.iter().all(|&f| accs[f] >= *stop_acc) || step >= *pre_max;
                if done {
                    phase = RunPhase::Joint;
                    mask = vec![1.0; n_features];
                    pretrain_end_step = Some(step);
                }
            } else {
                let rule = &config.stop_when_all_accurate;
                if accs.iter().all(|&a| a >= rule.threshold) {
                    stop_streak += 1;
                } else {
                    stop_streak = 0;
                }
                if stop_streak >= rule.patience {
                    status = RunStatus::Completed { converged: true };
                    break;
                }
            }
        }
        if schedule.due(step) {
            capture_snapshots(
                &run_id,
                &model,
                &dataset,
                config.snapshot_all_layers,
                step,
                &mut snapshots,
                &mut snapshot_refs,
            )?;
            last_snapshot_step = Some(step);
        }
        if step >= config.max_steps {
            break;
        }

        // One optimizer update.
        let (batch_inputs, batch_labels) = next_batch(
            config.batch_size,
            &dataset,
            &mut batch_order,
            &mut epoch_offset,
            &mut train_rng,
        );
        let grads = match model.loss_and_grads(
            batch_inputs.as_ref(),
            batch_labels.as_ref(),
            &mask,
            Some(&mut train_rng),
        ) {
            Ok((_, grads)) => grads,
            Err(Error::Numeric(msg)) => {
                status = RunStatus::Diverged { step };
                evals.push(EvalRow {
                    step,
                    feature: usize::MAX,
                    accuracy: f64::NAN,
                    loss: f64::NAN,
                    phase,
                });
                let _ = msg;
                break;
            }
            Err(e) => return Err(e),
        };
        let mut params = model.param_tensors_mut();
        if let Err(e) = optimizer.step(&mut params, &grads.tensors()) {
            match e {
                Error::Numeric(_) => {
                    status = RunStatus::Diverged { step };
                    break;
                }
                other => return Err(other),
            }
        }
        step += 1;
    }

    if !matches!(status, RunStatus::Diverged { .. }) {
        if last_eval_step != Some(step) {
            evaluate(&mut evals, &model, &dataset, phase, step)?;
        }
        if last_snapshot_step != Some(step) {
            capture_snapshots(
                &run_id,
                &model,
                &dataset,
                config.snapshot_all_layers,
                step,
                &mut snapshots,
                &mut snapshot_refs,
            )?;
        }
    }

    Ok(RunOutput {
        record: RunRecord {
            run_id,
            config: config.clone(),
            evals,
            snapshots: snapshot_refs,
            final_step: step,
            pretrain_end_step,
            status,
        },
        snapshots,
        final_model: model,
        dataset,
    })
}

fn evaluate(
    evals: &mut Vec<EvalRow>,
    model: &MlpModel,
    dataset: &GeneratedDataset,
    phase: RunPhase,
    step: u64,
) -> Result<Vec<f64>> {
    let trace = model.forward(&dataset.test.inputs, Mode::Eval, None)?;
    let accs = accuracy_per_feature(&trace.logits, &dataset.test.labels);
    let losses = ce_per_feature(&trace.logits, &dataset.test.labels);
    for f in 0..accs.len() {
        evals.push(EvalRow {
            step,
            feature: f,
            accuracy: accs[f],
            loss: losses[f],
            phase,
        });
    }
    Ok(accs)
}

/// Captures EVAL-mode snapshots from the model as a reader of the
/// serialized file would see it, so stored snapshots recompute exactly
/// from stored models.
fn capture_snapshots(
    run_id: &str,
    model: &MlpModel,
    dataset: &GeneratedDataset,
    all_layers: bool,
    step: u64,
    snapshots: &mut Vec<RepresentationSnapshot>,
    refs: &mut Vec<SnapshotRef>,
) -> Result<()> {
    let stored = model.storage_rounded();
    let penultimate = stored.penultimate_layer();
    for split in [SplitName::Validation, SplitName::Test] {
        let data = dataset.split(split);
        let trace = stored.forward(&data.inputs, Mode::Eval, None)?;
        for (l, act) in trace.activations.iter().enumerate() {
            if !all_layers && l != penultimate {
                continue;
            }
            let layer = format!("hidden{l}");
            snapshots.push(RepresentationSnapshot::from_matrix(
                run_id, step, &layer, split.as_str(), act,
            ));
            refs.push(SnapshotRef {
                step,
                layer,
                split,
            });
        }
    }
    Ok(())
}

fn next_batch<'a>(
    batch_size: Option<usize>,
    dataset: &'a GeneratedDataset,
    order: &mut Vec<usize>,
    offset: &mut usize,
    rng: &mut Rng64,
) -> (BatchRef<'a>, BatchRef<'a>) {
    match batch_size {
        None => (
            BatchRef::Borrowed(&dataset.train.inputs),
            BatchRef::Borrowed(&dataset.train.labels),
        ),
        Some(b) => {
            let n = dataset.train.len();
            if *offset >= n {
                *offset = 0;
            }
            if *offset == 0 {
                for i in (1..n).rev() {
                    let j = rng.below(i + 1);
                    order.swap(i, j);
                }
            }
            let end = (*offset + b).min(n);
            let idx = &order[*offset..end];
            *offset = end;
            let mut xb = Matrix::zeros(idx.len(), dataset.train.inputs.cols());
            let mut yb = Matrix::zeros(idx.len(), dataset.train.labels.cols());
            for (r, &i) in idx.iter().enumerate() {
                xb.row_mut(r).copy_from_slice(dataset.train.inputs.row(i));
                yb.row_mut(r).copy_from_slice(dataset.train.labels.row(i));
            }
            (BatchRef::Owned(xb), BatchRef::Owned(yb))
        }
    }
}

enum BatchRef<'a> {
    Borrowed(&'a Matrix),
    Owned(Matrix),
}

impl AsRef<Matrix> for BatchRef<'_> {
    fn as_ref(&self) -> &Matrix {
        match self {
            BatchRef::Borrowed(m) => m,
            BatchRef::Owned(m) => m,
        }
    }
}

/// Writes the evaluation time series as CSV with columns
/// `step,feature,split,accuracy,loss`.
pub fn write_metrics_csv(record: &RunRecord, w: &mut impl Write) -> Result<()> {
    writeln!(w, "step,feature,split,accuracy,loss")?;
    for row in &record.evals {
        if row.feature == usize::MAX {
            continue;
        }
        writeln!(
            w,
            "{},{},test,{},{}",
            row.step, row.feature, row.accuracy, row.loss
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Axes of a sweep grid; empty axes keep the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub optimizers: Vec<OptimizerConfig>,
    #[serde(default)]
    pub dropout_rates: Vec<f64>,
    #[serde(default)]
    pub hidden_sizes: Vec<Vec<usize>>,
    #[serde(default)]
    pub init_scales: Vec<f64>,
    #[serde(default)]
    pub nonlinearities: Vec<Nonlinearity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub axes: SweepAxes,
}

#[derive(Debug, Clone)]
pub struct SweepCellConfig {
    pub index: usize,
    pub label: String,
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub struct SweepCell<R> {
    pub index: usize,
    pub label: String,
    pub outcome: Result<R>,
}

impl SweepSpec {
    /// Expands the cartesian product of all nonempty axes. Each seed-axis
    /// value derives independent dataset/model/training seeds.
    pub fn expand(&self) -> Vec<SweepCellConfig> {
        fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
            if axis.is_empty() {
                vec![base]
            } else {
                axis.to_vec()
            }
        }
        let seeds = or_base(&self.axes.seeds, self.base.seed);
        let optimizers = or_base(&self.axes.optimizers, self.base.optimizer.clone());
        let dropouts = or_base(&self.axes.dropout_rates, self.base.model.dropout_rate);
        let hiddens = or_base(&self.axes.hidden_sizes, self.base.model.hidden_sizes.clone());
        let scales = or_base(&self.axes.init_scales, self.base.model.init_scale);
        let nonlins = or_base(&self.axes.nonlinearities, self.base.model.nonlinearity);

        let mut cells = Vec::new();
        for &seed in &seeds {
            for optimizer in &optimizers {
                for &dropout in &dropouts {
                    for hidden in &hiddens {
                        for &scale in &scales {
                            for &nonlin in &nonlins {
                                let mut config = self.base.clone();
                                config.seed = seed;
                                config.dataset.seed = derive_seed(seed, 101);
                                config.model.seed = derive_seed(seed, 102);
                                config.optimizer = optimizer.clone();
                                config.model.dropout_rate = dropout;
                                config.model.hidden_sizes = hidden.clone();
                                config.model.init_scale = scale;
                                config.model.nonlinearity = nonlin;
                                let label = format!(
                                    "seed={seed},optimizer={:?},lr={},dropout={dropout},depth={},scale={scale},nonlinearity={:?}",
                                    optimizer.kind,
                                    optimizer.learning_rate,
                                    hidden.len(),
                                    nonlin,
                                );
                                cells.push(SweepCellConfig {
                                    index: cells.len(),
                                    label,
                                    config,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Runs `cell_fn` over every cell on `workers` threads. Cell failures are
/// recorded and do not stop the sweep; results arrive in cell order.
pub fn sweep<R, F>(spec: &SweepSpec, workers: usize, cell_fn: F) -> Vec<SweepCell<R>>
where
    R: Send,
    F: Fn(&SweepCellConfig) -> Result<R> + Sync,
{
    let cells = spec.expand();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepCell<R>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = workers.max(1).min(cells.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let cell = &cells[i];
                let outcome = cell_fn(cell);
                let mut slot = results.lock().expect("sweep results lock");
                slot[i] = Some(SweepCell {
                    index: cell.index,
                    label: cell.label.clone(),
                    outcome,
                });
            });
        }
    });

    results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .map(|c| c.expect("every cell visited"))
        .collect()
}

/// Convenience sweep that executes [`run`] per cell and keeps the records.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Vec<SweepCell<RunRecord>> {
    sweep(spec, workers, |cell| run(&cell.config).map(|out| out.record))
}
