//! Boolean multi-feature dataset generation: independent features on
//! disjoint input indices, controlled prevalence, IID train/validation/test
//! splits.
//!
//! Labels are sampled first (Bernoulli at the configured prevalence), then
//! each feature's relevant inputs are sampled uniformly conditioned on
//! realizing that label; remaining inputs are uniform noise.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, Rng64};

/// Resampling attempts allowed per feature per example before generation
/// fails.
pub const REJECTION_BUDGET: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Value of a single logical input, optionally copied across several
    /// consecutive input units.
    Linear,
    And { arity: usize },
    Or { arity: usize },
    Xor2,
    Parity3,
    #[serde(rename = "sum_mod2_4")]
    SumMod2_4,
}

impl FeatureKind {
    /// Number of relevant input bits (for LINEAR, the logical arity is 1;
    /// redundancy governs the encoded width).
    pub fn arity(&self) -> usize {
        match self {
            FeatureKind::Linear => 1,
            FeatureKind::And { arity } | FeatureKind::Or { arity } => *arity,
            FeatureKind::Xor2 => 2,
            FeatureKind::Parity3 => 3,
            FeatureKind::SumMod2_4 => 4,
        }
    }

    pub fn name(&self) -> String {
        match self {
            FeatureKind::Linear => "linear".into(),
            FeatureKind::And { arity } => format!("and_{arity}"),
            FeatureKind::Or { arity } => format!("or_{arity}"),
            FeatureKind::Xor2 => "xor2".into(),
            FeatureKind::Parity3 => "parity3".into(),
            FeatureKind::SumMod2_4 => "sum_mod2_4".into(),
        }
    }
}

/// Definition of one target feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(flatten)]
    pub kind: FeatureKind,
    /// Input indices this feature owns; disjoint across the features of a
    /// dataset. For LINEAR this lists the `redundancy` consecutive indices
    /// carrying copies of the logical bit.
    pub input_indices: Vec<usize>,
    #[serde(default = "default_prevalence")]
    pub prevalence: f64,
    #[serde(default = "default_redundancy")]
    pub redundancy: usize,
}

fn default_prevalence() -> f64 {
    0.5
}

fn default_redundancy() -> usize {
    1
}

impl FeatureSpec {
    pub fn linear(start: usize, redundancy: usize) -> FeatureSpec {
        FeatureSpec {
            kind: FeatureKind::Linear,
            input_indices: (start..start + redundancy).collect(),
            prevalence: 0.5,
            redundancy,
        }
    }

    pub fn of_kind(kind: FeatureKind, start: usize) -> FeatureSpec {
        FeatureSpec {
            kind,
            input_indices: (start..start + kind.arity()).collect(),
            prevalence: 0.5,
            redundancy: 1,
        }
    }

    pub fn with_prevalence(mut self, prevalence: f64) -> FeatureSpec {
        self.prevalence = prevalence;
        self
    }

    pub fn validate(&self, n_inputs: usize) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::contract("prevalence must lie in (0, 1)"));
        }
        if self.redundancy == 0 {
            return Err(Error::contract("redundancy must be >= 1"));
        }
        if self.kind != FeatureKind::Linear && self.redundancy != 1 {
            return Err(Error::contract("redundancy applies to LINEAR features only"));
        }
        let expected = match self.kind {
            FeatureKind::Linear => self.redundancy,
            _ => self.kind.arity(),
        };
        if self.input_indices.len() != expected {
            return Err(Error::contract(format!(
                "{} expects {} input indices, got {}",
                self.kind.name(),
                expected,
                self.input_indices.len()
            )));
        }
        if self.kind == FeatureKind::Linear {
            let start = self.input_indices[0];
            if !self
                .input_indices
                .iter()
                .enumerate()
                .all(|(i, &idx)| idx == start + i)
            {
                return Err(Error::contract(
                    "LINEAR redundancy indices must be consecutive",
                ));
            }
        }
        if self.input_indices.iter().any(|&i| i >= n_inputs) {
            return Err(Error::contract("feature index out of input range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoolDatasetConfig {
    #[serde(default = "default_n_inputs")]
    pub n_inputs: usize,
    pub features: Vec<FeatureSpec>,
    pub sizes: SplitSizes,
    pub seed: u64,
}

fn default_n_inputs() -> usize {
    64
}

impl BoolDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::contract("dataset needs at least one feature"));
        }
        let mut used = vec![false; self.n_inputs];
        for spec in &self.features {
            spec.validate(self.n_inputs)?;
            for &i in &spec.input_indices {
                if used[i] {
                    return Err(Error::contract(format!(
                        "input index {i} is claimed by two features"
                    )));
                }
                used[i] = true;
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }
}

/// One split: inputs in {0,1} (examples x n_inputs) and per-feature labels
/// (examples x n_features).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub inputs: Matrix,
    pub labels: Matrix,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label column as 0/1 values.
    pub fn label_column(&self, feature: usize) -> Vec<f64> {
        self.labels.column(feature)
    }
}

/// Train/validation/test triple sampled IID from the same process.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub config: BoolDatasetConfig,
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub test: DatasetSplit,
}

impl GeneratedDataset {
    pub fn split(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

/// Evaluates one feature on a full input vector.
pub fn feature_value(spec: &FeatureSpec, input: &[u8]) -> Result<u8> {
    if spec.input_indices.iter().any(|&i| i >= input.len()) {
        return Err(Error::contract("feature index out of range for input"));
    }
    Ok(match spec.kind {
        FeatureKind::Linear => input[spec.input_indices[0]],
        FeatureKind::And { .. } => spec
            .input_indices
            .iter()
            .all(|&i| input[i] == 1) as u8,
        FeatureKind::Or { .. } => spec
            .input_indices
            .iter()
            .any(|&i| input[i] == 1) as u8,
        FeatureKind::Xor2 | FeatureKind::Parity3 | FeatureKind::SumMod2_4 => {
            spec.input_indices
                .iter()
                .map(|&i| input[i] as usize)
                .sum::<usize>() as u8
                % 2
        }
    })
}

/// Samples the relevant bits of `spec` uniformly conditioned on the feature
/// evaluating to `label`, writing them into `row`.
fn realize_feature(spec: &FeatureSpec, label: u8, row: &mut [u8], rng: &mut Rng64) -> Result<()> {
    match spec.kind {
        FeatureKind::Linear => {
            for &i in &spec.input_indices {
                row[i] = label;
            }
            Ok(())
        }
        _ => {
            for _ in 0..REJECTION_BUDGET {
                for &i in &spec.input_indices {
                    row[i] = rng.bit();
                }
                if feature_value(spec, row)? == label {
                    return Ok(());
                }
            }
            Err(Error::generation(format!(
                "rejection budget exceeded while conditioning feature {}",
                spec.kind.name()
            )))
        }
    }
}

fn generate_split(config: &BoolDatasetConfig, n: usize, seed: u64) -> Result<DatasetSplit> {
    let mut rng = Rng64::new(seed);
    let n_inputs = config.n_inputs;
    let n_features = config.features.len();
    let mut inputs = vec![0.0; n * n_inputs];
    let mut labels = vec![0.0; n * n_features];
    let mut row = vec![0u8; n_inputs];

    for i in 0..n {
        for b in row.iter_mut() {
            *b = rng.bit();
        }
        for (f, spec) in config.features.iter().enumerate() {
            let label = rng.bernoulli(spec.prevalence) as u8;
            realize_feature(spec, label, &mut row, &mut rng)?;
            labels[i * n_features + f] = label as f64;
        }
        for (dst, &b) in inputs[i * n_inputs..(i + 1) * n_inputs].iter_mut().zip(&row) {
            *dst = b as f64;
        }
    }
    Ok(DatasetSplit {
        inputs: Matrix::from_raw(n, n_inputs, inputs),
        labels: Matrix::from_raw(n, n_features, labels),
    })
}

/// Generates the train/validation/test triple for a config. Deterministic
/// per seed; the three splits use independent derived streams.
pub fn generate(config: &BoolDatasetConfig) -> Result<GeneratedDataset> {
    config.validate()?;
    Ok(GeneratedDataset {
        config: config.clone(),
        train: generate_split(config, config.sizes.train, derive_seed(config.seed, 0))?,
        validation: generate_split(config, config.sizes.validation, derive_seed(config.seed, 1))?,
        test: generate_split(config, config.sizes.test, derive_seed(config.seed, 2))?,
    })
}

/// One-hot encoding of every configuration of a feature's relevant inputs.
///
/// Column j is hot exactly when the relevant bits, read most-significant
/// first in index order, equal j. Refused above arity 8.
pub fn enumerate_patterns(spec: &FeatureSpec, inputs: &Matrix) -> Result<Matrix> {
    let arity = spec.input_indices.len();
    if arity > 8 {
        return Err(Error::contract(format!(
            "pattern enumeration over {arity} bits would need {} columns; arities above 8 are refused",
            1usize << arity
        )));
    }
    if spec.input_indices.iter().any(|&i| i >= inputs.cols()) {
        return Err(Error::contract("feature index out of range for inputs"));
    }
    let n_patterns = 1usize << arity;
    let n = inputs.rows();
    let mut out = vec![0.0; n * n_patterns];
    for i in 0..n {
        let mut code = 0usize;
        for &idx in &spec.input_indices {
            code = (code << 1) | (inputs.get(i, idx) > 0.5) as usize;
        }
        out[i * n_patterns + code] = 1.0;
    }
    Ok(Matrix::from_raw(n, n_patterns, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamMode {
    /// Both features independently predict the target with probability q.
    Joint,
    /// Only the easy feature predicts the target; the hard one is uniform.
    EasyOnly,
    /// Only the hard feature predicts the target; the easy one is uniform.
    HardOnly,
    /// The features disagree: easy matches the target, hard is inverted.
    Conflict,
}

/// A downstream split plus the latent target each row was generated from.
#[derive(Debug, Clone)]
pub struct DownstreamDataset {
    pub split: DatasetSplit,
    pub targets: Vec<u8>,
    /// Index of the LINEAR feature within the base config's feature list.
    pub easy_feature: usize,
    /// Index of the SUM_MOD2_4 feature.
    pub hard_feature: usize,
}

/// Builds a dataset whose latent binary target is stochastically tied to
/// the easy and hard features of an easy+hard base config.
pub fn downstream_dataset(
    base: &BoolDatasetConfig,
    predictivity: f64,
    mode: DownstreamMode,
    size: usize,
    seed: u64,
) -> Result<DownstreamDataset> {
    base.validate()?;
    if !(0.5..=1.0).contains(&predictivity) {
        return Err(Error::contract("predictivity must lie in [0.5, 1.0]"));
    }
    let easy = base
        .features
        .iter()
        .position(|f| f.kind == FeatureKind::Linear);
    let hard = base
        .features
        .iter()
        .position(|f| f.kind == FeatureKind::SumMod2_4);
    let (easy, hard) = match (easy, hard, base.features.len()) {
        (Some(e), Some(h), 2) => (e, h),
        _ => {
            return Err(Error::contract(
                "downstream base config must have exactly one LINEAR and one SUM_MOD2_4 feature",
            ))
        }
    };

    let mut rng = Rng64::new(seed);
    let n_inputs = base.n_inputs;
    let n_features = base.features.len();
    let mut inputs = vec![0.0; size * n_inputs];
    let mut labels = vec![0.0; size * n_features];
    let mut targets = Vec::with_capacity(size);
    let mut row = vec![0u8; n_inputs];

    for i in 0..size {
        let g = rng.bit();
        let flip = |rng: &mut Rng64, v: u8| if rng.bernoulli(predictivity) { v } else { 1 - v };
        let (f_easy, f_hard) = match mode {
            DownstreamMode::Joint => (flip(&mut rng, g), flip(&mut rng, g)),
            DownstreamMode::EasyOnly => (g, rng.bit()),
            DownstreamMode::HardOnly => (rng.bit(), g),
            DownstreamMode::Conflict => (g, 1 - g),
        };
        for b in row.iter_mut() {
            *b = rng.bit();
        }
        realize_feature(&base.features[easy], f_easy, &mut row, &mut rng)?;
        realize_feature(&base.features[hard], f_hard, &mut row, &mut rng)?;
        labels[i * n_features + easy] = f_easy as f64;
        labels[i * n_features + hard] = f_hard as f64;
        for (dst, &b) in inputs[i * n_inputs..(i + 1) * n_inputs].iter_mut().zip(&row) {
            *dst = b as f64;
        }
        targets.push(g);
    }

    Ok(DownstreamDataset {
        split: DatasetSplit {
            inputs: Matrix::from_raw(size, n_inputs, inputs),
            labels: Matrix::from_raw(size, n_features, labels),
        },
        targets,
        easy_feature: easy,
        hard_feature: hard,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    inputs: String,
    labels: Vec<u8>,
}

/// Writes a split as JSONL, one record per example with the input bits as
/// a 0/1 string.
pub fn write_jsonl(split: &DatasetSplit, w: &mut impl Write) -> Result<()> {
    for i in 0..split.len() {
        let bits: String = split
            .inputs
            .row(i)
            .iter()
            .map(|&v| if v > 0.5 { '1' } else { '0' })
            .collect();
        let labels: Vec<u8> = split.labels.row(i).iter().map(|&v| (v > 0.5) as u8).collect();
        let record = JsonlRecord { inputs: bits, labels };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_jsonl(r: &mut impl BufRead) -> Result<DatasetSplit> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut n_inputs = None;
    let mut n_labels = None;
    let mut rows = 0usize;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(format!("bad jsonl record: {e}")))?;
        let bits: Vec<f64> = record
            .inputs
            .chars()
            .map(|c| match c {
                '0' => Ok(0.0),
                '1' => Ok(1.0),
                other => Err(Error::corrupt(format!("bad input bit '{other}'"))),
            })
            .collect::<Result<_>>()?;
        if *n_inputs.get_or_insert(bits.len()) != bits.len()
            || *n_labels.get_or_insert(record.labels.len()) != record.labels.len()
        {
            return Err(Error::corrupt("ragged jsonl records"));
        }
        inputs.extend_from_slice(&bits);
        labels.extend(record.labels.iter().map(|&b| b as f64));
        rows += 1;
    }
    Ok(DatasetSplit {
        inputs: Matrix::from_raw(rows, n_inputs.unwrap_or(0), inputs),
        labels: Matrix::from_raw(rows, n_labels.unwrap_or(0), labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pearson, solve_least_squares};

    fn easy_hard_config(seed: u64, sizes: SplitSizes) -> BoolDatasetConfig {
        BoolDatasetConfig {
            n_inputs: 64,
            features: vec![
                FeatureSpec::linear(0, 4),
                FeatureSpec::of_kind(FeatureKind::SumMod2_4, 4),
            ],
            sizes,
            seed,
        }
    }

    fn bits(row: &[f64]) -> Vec<u8> {
        row.iter().map(|&v| (v > 0.5) as u8).collect()
    }

    #[test]
    fn feature_value_examples() {
        let sum = FeatureSpec::of_kind(FeatureKind::SumMod2_4, 0);
        assert_eq!(feature_value(&sum, &[1, 1, 0, 1]).unwrap(), 1);
        let lin = FeatureSpec::linear(0, 1);
        assert_eq!(feature_value(&lin, &[0, 1]).unwrap(), 0);
        let and3 = FeatureSpec::of_kind(FeatureKind::And { arity: 3 }, 0);
        assert_eq!(feature_value(&and3, &[1, 1, 0]).unwrap(), 0);
        let or3 = FeatureSpec::of_kind(FeatureKind::Or { arity: 3 }, 0);
        assert_eq!(feature_value(&or3, &[1, 0, 0]).unwrap(), 1);
        assert!(feature_value(&or3, &[1, 0]).is_err());
    }

    #[test]
    fn feature_values_match_truth_tables() {
        // Exhaustive check of every kind against a direct truth-table
        // evaluation over all inputs of its arity.
        let specs = vec![
            FeatureSpec::of_kind(FeatureKind::And { arity: 2 }, 0),
            FeatureSpec::of_kind(FeatureKind::And { arity: 4 }, 0),
            FeatureSpec::of_kind(FeatureKind::Or { arity: 3 }, 0),
            FeatureSpec::of_kind(FeatureKind::Xor2, 0),
            FeatureSpec::of_kind(FeatureKind::Parity3, 0),
            FeatureSpec::of_kind(FeatureKind::SumMod2_4, 0),
        ];
        for spec in specs {
            let arity = spec.kind.arity();
            for code in 0..(1usize << arity) {
                let input: Vec<u8> = (0..arity)
                    .map(|b| ((code >> (arity - 1 - b)) & 1) as u8)
                    .collect();
                let ones = input.iter().filter(|&&b| b == 1).count();
                let expected = match spec.kind {
                    FeatureKind::And { arity } => (ones == arity) as u8,
                    FeatureKind::Or { .. } => (ones > 0) as u8,
                    FeatureKind::Linear => input[0],
                    _ => (ones % 2) as u8,
                };
                assert_eq!(feature_value(&spec, &input).unwrap(), expected);
            }
        }
    }

    #[test]
    fn generated_labels_are_consistent_and_balanced() {
        let config = easy_hard_config(
            3,
            SplitSizes {
                train: 4096,
                validation: 512,
                test: 512,
            },
        );
        let data = generate(&config).unwrap();
        for split in [&data.train, &data.validation, &data.test] {
            for i in 0..split.len() {
                let row = bits(split.inputs.row(i));
                for (f, spec) in config.features.iter().enumerate() {
                    assert_eq!(
                        feature_value(spec, &row).unwrap() as f64,
                        split.labels.get(i, f),
                        "row {i} feature {f}"
                    );
                }
            }
        }
        for f in 0..2 {
            let mean: f64 =
                data.train.label_column(f).iter().sum::<f64>() / data.train.len() as f64;
            assert!((0.45..=0.55).contains(&mean), "feature {f} mean {mean}");
        }
    }

    #[test]
    fn rare_prevalence_hits_target_rate() {
        let mut config = easy_hard_config(
            9,
            SplitSizes {
                train: 32_768,
                validation: 16,
                test: 16,
            },
        );
        config.features[1].prevalence = 0.1;
        let data = generate(&config).unwrap();
        let mean: f64 = data.train.label_column(1).iter().sum::<f64>() / data.train.len() as f64;
        assert!((0.07..=0.13).contains(&mean), "rare mean {mean}");
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let config = easy_hard_config(
            5,
            SplitSizes {
                train: 128,
                validation: 64,
                test: 64,
            },
        );
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.train.inputs, b.train.inputs);
        assert_eq!(a.test.labels, b.test.labels);
        assert_ne!(a.train.inputs, a.validation.inputs);
        let mut other = config.clone();
        other.seed = 6;
        assert_ne!(generate(&other).unwrap().train.inputs, a.train.inputs);
    }

    #[test]
    fn features_and_noise_are_independent() {
        let config = BoolDatasetConfig {
            n_inputs: 32,
            features: vec![
                FeatureSpec::linear(0, 4),
                FeatureSpec::of_kind(FeatureKind::SumMod2_4, 4),
                FeatureSpec::of_kind(FeatureKind::Xor2, 8),
            ],
            sizes: SplitSizes {
                train: 8192,
                validation: 16,
                test: 16,
            },
            seed: 17,
        };
        let data = generate(&config).unwrap();
        let n = data.train.len() as f64;
        let bound = 4.0 / n.sqrt();
        let cols: Vec<Vec<f64>> = (0..3).map(|f| data.train.label_column(f)).collect();
        for a in 0..3 {
            for b in (a + 1)..3 {
                let r = pearson(&cols[a], &cols[b]).unwrap();
                assert!(r.abs() < bound, "labels {a},{b} correlate {r}");
            }
        }
        for noise_col in [10usize, 20, 31] {
            let noise = data.train.inputs.column(noise_col);
            for (f, col) in cols.iter().enumerate() {
                let r = pearson(&noise, col).unwrap();
                assert!(r.abs() < bound, "noise {noise_col} vs label {f}: {r}");
            }
        }
    }

    #[test]
    fn pattern_columns_partition_examples() {
        let spec = FeatureSpec::of_kind(FeatureKind::SumMod2_4, 2);
        let config = BoolDatasetConfig {
            n_inputs: 8,
            features: vec![spec.clone()],
            sizes: SplitSizes {
                train: 256,
                validation: 16,
                test: 16,
            },
            seed: 2,
        };
        let data = generate(&config).unwrap();
        let patterns = enumerate_patterns(&spec, &data.train.inputs).unwrap();
        assert_eq!(patterns.cols(), 16);
        for i in 0..patterns.rows() {
            let hot: Vec<usize> = (0..16).filter(|&j| patterns.get(i, j) == 1.0).collect();
            assert_eq!(hot.len(), 1, "row {i} not one-hot");
            let mut code = 0usize;
            for &idx in &spec.input_indices {
                code = (code << 1) | (data.train.inputs.get(i, idx) > 0.5) as usize;
            }
            assert_eq!(hot[0], code);
        }
    }

    #[test]
    fn pattern_encoding_conventions() {
        let spec = FeatureSpec::of_kind(FeatureKind::Xor2, 0);
        let inputs = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let patterns = enumerate_patterns(&spec, &inputs).unwrap();
        // Bits (1,0) read most-significant-first are pattern 2.
        assert_eq!(patterns.get(0, 2), 1.0);
        assert_eq!(patterns.get(1, 0), 1.0);

        let wide = FeatureSpec {
            kind: FeatureKind::And { arity: 9 },
            input_indices: (0..9).collect(),
            prevalence: 0.5,
            redundancy: 1,
        };
        assert!(enumerate_patterns(&wide, &inputs).is_err());
    }

    #[test]
    fn patterns_linearly_reproduce_any_boolean_function() {
        // A regression from the one-hot pattern design reproduces an
        // arbitrary function of the relevant bits exactly.
        let spec = FeatureSpec::of_kind(FeatureKind::SumMod2_4, 1);
        let config = BoolDatasetConfig {
            n_inputs: 6,
            features: vec![spec.clone()],
            sizes: SplitSizes {
                train: 512,
                validation: 16,
                test: 16,
            },
            seed: 8,
        };
        let data = generate(&config).unwrap();
        let patterns = enumerate_patterns(&spec, &data.train.inputs).unwrap();
        // Arbitrary nonlinear target: AND of the first two relevant bits.
        let target: Vec<f64> = (0..data.train.len())
            .map(|i| {
                let a = data.train.inputs.get(i, spec.input_indices[0]) > 0.5;
                let b = data.train.inputs.get(i, spec.input_indices[1]) > 0.5;
                (a && b) as u8 as f64
            })
            .collect();
        let y = Matrix::new(target.len(), 1, target.clone()).unwrap();
        let w = solve_least_squares(&patterns, &y, 0.0).unwrap();
        let pred = patterns.matmul(&w);
        for i in 0..target.len() {
            assert!((pred.get(i, 0) - target[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn downstream_modes_and_predictivity() {
        let base = easy_hard_config(
            4,
            SplitSizes {
                train: 16,
                validation: 16,
                test: 16,
            },
        );

        let exact = downstream_dataset(&base, 1.0, DownstreamMode::Joint, 512, 3).unwrap();
        for i in 0..512 {
            let g = exact.targets[i] as f64;
            assert_eq!(exact.split.labels.get(i, 0), g);
            assert_eq!(exact.split.labels.get(i, 1), g);
        }

        let coin = downstream_dataset(&base, 0.5, DownstreamMode::Joint, 10_000, 5).unwrap();
        let g: Vec<f64> = coin.targets.iter().map(|&t| t as f64).collect();
        let corr = pearson(&coin.split.label_column(0), &g).unwrap();
        assert!(corr.abs() < 0.05, "q=0.5 corr {corr}");

        // Monte-Carlo agreement rate against the generative definition.
        let mid = downstream_dataset(&base, 0.8, DownstreamMode::Joint, 10_000, 6).unwrap();
        let agree = (0..10_000)
            .filter(|&i| mid.split.labels.get(i, 0) == mid.targets[i] as f64)
            .count() as f64
            / 10_000.0;
        assert!((0.78..=0.82).contains(&agree), "q=0.8 agreement {agree}");

        let conflict = downstream_dataset(&base, 0.9, DownstreamMode::Conflict, 256, 7).unwrap();
        for i in 0..256 {
            let g = conflict.targets[i] as f64;
            assert_eq!(conflict.split.labels.get(i, 0), g);
            assert_eq!(conflict.split.labels.get(i, 1), 1.0 - g);
        }

        let easy_only = downstream_dataset(&base, 0.9, DownstreamMode::EasyOnly, 4096, 8).unwrap();
        let g: Vec<f64> = easy_only.targets.iter().map(|&t| t as f64).collect();
        assert_eq!(easy_only.split.label_column(0), g);
        let hard_corr = pearson(&easy_only.split.label_column(1), &g).unwrap();
        assert!(hard_corr.abs() < 0.07);

        assert!(downstream_dataset(&base, 0.4, DownstreamMode::Joint, 16, 1).is_err());
        assert!(downstream_dataset(&base, 1.1, DownstreamMode::Joint, 16, 1).is_err());
    }

    #[test]
    fn labels_recomputed_from_downstream_inputs_match() {
        let base = easy_hard_config(
            4,
            SplitSizes {
                train: 16,
                validation: 16,
                test: 16,
            },
        );
        let data = downstream_dataset(&base, 0.7, DownstreamMode::Joint, 512, 9).unwrap();
        for i in 0..data.split.len() {
            let row = bits(data.split.inputs.row(i));
            for (f, spec) in base.features.iter().enumerate() {
                assert_eq!(
                    feature_value(spec, &row).unwrap() as f64,
                    data.split.labels.get(i, f)
                );
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let config = easy_hard_config(
            12,
            SplitSizes {
                train: 64,
                validation: 16,
                test: 16,
            },
        );
        let data = generate(&config).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&data.train, &mut buf).unwrap();
        let back = read_jsonl(&mut buf.as_slice()).unwrap();
        assert_eq!(back.inputs, data.train.inputs);
        assert_eq!(back.labels, data.train.labels);
    }
}
