//! Sequence dataset generators: bounded-depth Dyck sentences with
//! structural features, and letter-string datasets with chunked
//! match-style features. Both are exported as JSONL files for external
//! consumers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, Rng64};

// ---------------------------------------------------------------------------
// Dyck sentences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyckConfig {
    #[serde(default = "default_bracket_types")]
    pub n_bracket_types: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
    /// Probability that the next token keeps the open/close kind of the
    /// previous token when unconstrained.
    #[serde(default = "default_continuation")]
    pub same_type_continuation_prob: f64,
    /// Probability of ending the sentence whenever depth returns to zero.
    #[serde(default = "default_termination")]
    pub root_termination_prob: f64,
    pub seed: u64,
}

fn default_bracket_types() -> usize {
    20
}

fn default_max_depth() -> usize {
    10
}

fn default_max_length() -> usize {
    64
}

fn default_continuation() -> f64 {
    0.70
}

fn default_termination() -> f64 {
    0.50
}

impl DyckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bracket_types == 0 || self.n_bracket_types > 256 {
            return Err(Error::contract("n_bracket_types must be in 1..=256"));
        }
        if self.max_depth == 0 {
            return Err(Error::contract("max_depth must be >= 1"));
        }
        if self.max_length < 2 {
            return Err(Error::contract("max_length must be >= 2"));
        }
        for p in [self.same_type_continuation_prob, self.root_termination_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract("probabilities must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyckToken {
    pub open: bool,
    pub class: u8,
}

impl DyckToken {
    pub fn render(&self) -> String {
        format!("{}{}", if self.open { 'o' } else { 'c' }, self.class)
    }

    pub fn parse(s: &str) -> Result<DyckToken> {
        let open = match s.chars().next() {
            Some('o') => true,
            Some('c') => false,
            _ => return Err(Error::corrupt(format!("bad dyck token '{s}'"))),
        };
        let class: u8 = s[1..]
            .parse()
            .map_err(|_| Error::corrupt(format!("bad dyck token class in '{s}'")))?;
        Ok(DyckToken { open, class })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyckFeatures {
    pub first_token_class: u8,
    /// Class of the first token that appears at the sentence's maximum
    /// nesting depth.
    pub first_max_depth_class: u8,
    pub max_depth: usize,
    /// Opening brackets at depth zero.
    pub n_root_nodes: usize,
    /// Largest direct-child count over all bracket pairs and a virtual root
    /// whose children are the root nodes.
    pub max_branching_factor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyckSentence {
    pub tokens: Vec<DyckToken>,
    pub features: DyckFeatures,
}

/// Samples one sentence token by token. Open/close choices carry a
/// same-kind-as-previous bias except where the depth and length bounds
/// force the choice, so every sample satisfies the language constraints.
pub fn sample_dyck(config: &DyckConfig, rng: &mut Rng64) -> Result<DyckSentence> {
    config.validate()?;
    let mut tokens: Vec<DyckToken> = Vec::new();
    let mut stack: Vec<u8> = Vec::new();

    loop {
        let len = tokens.len();
        let depth = stack.len();
        if depth == 0 {
            let room_to_open = config.max_length - len >= 2;
            if !tokens.is_empty() && (!room_to_open || rng.bernoulli(config.root_termination_prob))
            {
                break;
            }
            let class = rng.below(config.n_bracket_types) as u8;
            tokens.push(DyckToken { open: true, class });
            stack.push(class);
            continue;
        }
        let can_open = depth < config.max_depth && config.max_length - len >= depth + 2;
        let open_next = if !can_open {
            false
        } else {
            let prev_open = tokens.last().expect("depth > 0 implies tokens").open;
            if rng.bernoulli(config.same_type_continuation_prob) {
                prev_open
            } else {
                !prev_open
            }
        };
        if open_next {
            let class = rng.below(config.n_bracket_types) as u8;
            tokens.push(DyckToken { open: true, class });
            stack.push(class);
        } else {
            let class = stack.pop().expect("depth > 0");
            tokens.push(DyckToken { open: false, class });
        }
    }

    let features = dyck_features(&tokens)?;
    Ok(DyckSentence { tokens, features })
}

/// Computes the five sentence features in a single stack pass, validating
/// balance and class matching along the way.
pub fn dyck_features(tokens: &[DyckToken]) -> Result<DyckFeatures> {
    if tokens.is_empty() {
        return Err(Error::Parse {
            position: 0,
            message: "empty sentence".into(),
        });
    }
    // Stack entries: (class, direct children so far, position of the open).
    let mut stack: Vec<(u8, usize, usize)> = Vec::new();
    let mut max_depth = 0usize;
    let mut first_max_depth_class = tokens[0].class;
    let mut n_root_nodes = 0usize;
    let mut max_branching = 0usize;

    for (pos, tok) in tokens.iter().enumerate() {
        if tok.open {
            match stack.last_mut() {
                Some(parent) => parent.1 += 1,
                None => n_root_nodes += 1,
            }
            stack.push((tok.class, 0, pos));
            if stack.len() > max_depth {
                max_depth = stack.len();
                first_max_depth_class = tok.class;
            }
        } else {
            let (class, children, _) = stack.pop().ok_or(Error::Parse {
                position: pos,
                message: "closing bracket at depth zero".into(),
            })?;
            if class != tok.class {
                return Err(Error::Parse {
                    position: pos,
                    message: format!("close class {} does not match open class {class}", tok.class),
                });
            }
            max_branching = max_branching.max(children);
        }
    }
    if let Some(&(_, _, open_pos)) = stack.first() {
        return Err(Error::Parse {
            position: open_pos,
            message: "bracket never closed".into(),
        });
    }

    Ok(DyckFeatures {
        first_token_class: tokens[0].class,
        first_max_depth_class,
        max_depth,
        n_root_nodes,
        max_branching_factor: max_branching.max(n_root_nodes),
    })
}

/// Checks that a token sequence is a valid sentence within a config's
/// depth and length bounds.
pub fn validate_dyck(tokens: &[DyckToken], config: &DyckConfig) -> Result<()> {
    let features = dyck_features(tokens)?;
    if tokens.len() > config.max_length {
        return Err(Error::Parse {
            position: config.max_length,
            message: format!("length {} exceeds limit {}", tokens.len(), config.max_length),
        });
    }
    if features.max_depth > config.max_depth {
        return Err(Error::Parse {
            position: 0,
            message: format!(
                "depth {} exceeds limit {}",
                features.max_depth, config.max_depth
            ),
        });
    }
    if tokens
        .iter()
        .any(|t| t.class as usize >= config.n_bracket_types)
    {
        return Err(Error::Parse {
            position: 0,
            message: "bracket class out of range".into(),
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DyckRecord {
    tokens: Vec<String>,
    features: DyckFeatures,
}

/// Writes sampled sentences as JSONL records
/// `{"tokens": ["o3", "c3", ...], "features": {...}}`.
pub fn write_dyck_jsonl(config: &DyckConfig, count: usize, w: &mut impl Write) -> Result<()> {
    let mut rng = Rng64::new(config.seed);
    for _ in 0..count {
        let sentence = sample_dyck(config, &mut rng)?;
        let record = DyckRecord {
            tokens: sentence.tokens.iter().map(|t| t.render()).collect(),
            features: sentence.features,
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Letter strings
// ---------------------------------------------------------------------------

/// The nine-letter vocabulary A-I.
pub const LETTER_VOCAB: &[u8] = b"ABCDEFGHI";

/// Letters per feature chunk; relevant letters occupy the chunk prefix.
pub const CHUNK_LENGTH: usize = 5;

/// Features per sequence.
pub const N_LETTER_FEATURES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LetterFeatureKind {
    /// 1 iff the chunk prefix equals the target exactly.
    ExactMatch { k: usize },
    /// 1 iff exactly k-1 of the k prefix letters match the target.
    AllButOne { k: usize },
    /// Number of prefix letters matching the target, mod 2, over 4 letters.
    #[serde(rename = "sum_match_mod2_4")]
    SumMatchMod2_4,
}

impl LetterFeatureKind {
    pub fn arity(&self) -> usize {
        match self {
            LetterFeatureKind::ExactMatch { k } | LetterFeatureKind::AllButOne { k } => *k,
            LetterFeatureKind::SumMatchMod2_4 => 4,
        }
    }

    pub fn name(&self) -> String {
        match self {
            LetterFeatureKind::ExactMatch { k } => format!("exact_match_{k}"),
            LetterFeatureKind::AllButOne { k } => format!("all_but_one_{k}"),
            LetterFeatureKind::SumMatchMod2_4 => "sum_match_mod2_4".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterFeatureSpec {
    #[serde(flatten)]
    pub kind: LetterFeatureKind,
    /// Target string of length `arity` over the vocabulary.
    pub target: String,
}

impl LetterFeatureSpec {
    pub fn validate(&self) -> Result<()> {
        let valid_k = match self.kind {
            LetterFeatureKind::ExactMatch { k } => (1..=4).contains(&k),
            LetterFeatureKind::AllButOne { k } => (2..=4).contains(&k),
            LetterFeatureKind::SumMatchMod2_4 => true,
        };
        if !valid_k {
            return Err(Error::contract(format!(
                "unsupported arity for {}",
                self.kind.name()
            )));
        }
        if self.target.len() != self.kind.arity() {
            return Err(Error::contract(format!(
                "target '{}' length does not match arity {}",
                self.target,
                self.kind.arity()
            )));
        }
        if self
            .target
            .bytes()
            .any(|b| !LETTER_VOCAB.contains(&b))
        {
            return Err(Error::contract(format!(
                "target '{}' uses letters outside A-I",
                self.target
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterDatasetConfig {
    pub features: Vec<LetterFeatureSpec>,
    pub sizes: crate::booldata::SplitSizes,
    pub seed: u64,
}

impl LetterDatasetConfig {
    /// The default eight-feature menu: exact match over 1-4 letters,
    /// all-but-one over 2-4, and match-sum mod 2 over 4.
    pub fn standard(sizes: crate::booldata::SplitSizes, seed: u64) -> LetterDatasetConfig {
        let targets = ["A", "AB", "ABC", "ABCD", "BC", "BCD", "BCDE", "CDEF"];
        let kinds = [
            LetterFeatureKind::ExactMatch { k: 1 },
            LetterFeatureKind::ExactMatch { k: 2 },
            LetterFeatureKind::ExactMatch { k: 3 },
            LetterFeatureKind::ExactMatch { k: 4 },
            LetterFeatureKind::AllButOne { k: 2 },
            LetterFeatureKind::AllButOne { k: 3 },
            LetterFeatureKind::AllButOne { k: 4 },
            LetterFeatureKind::SumMatchMod2_4,
        ];
        LetterDatasetConfig {
            features: kinds
                .iter()
                .zip(targets)
                .map(|(&kind, target)| LetterFeatureSpec {
                    kind,
                    target: target.to_string(),
                })
                .collect(),
            sizes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != N_LETTER_FEATURES {
            return Err(Error::contract(format!(
                "letter datasets use exactly {N_LETTER_FEATURES} features"
            )));
        }
        for f in &self.features {
            f.validate()?;
        }
        Ok(())
    }

    pub fn sequence_length(&self) -> usize {
        N_LETTER_FEATURES * CHUNK_LENGTH
    }
}

/// Evaluates a letter feature on its chunk (the first `arity` letters are
/// the relevant ones).
pub fn letter_feature_value(spec: &LetterFeatureSpec, chunk: &[u8]) -> Result<u8> {
    let k = spec.kind.arity();
    if chunk.len() < k {
        return Err(Error::contract("chunk shorter than feature arity"));
    }
    let target = spec.target.as_bytes();
    let matches = (0..k).filter(|&i| chunk[i] == target[i]).count();
    Ok(match spec.kind {
        LetterFeatureKind::ExactMatch { k } => (matches == k) as u8,
        LetterFeatureKind::AllButOne { k } => (matches == k - 1) as u8,
        LetterFeatureKind::SumMatchMod2_4 => (matches % 2) as u8,
    })
}

/// One generated split: sequences of 40 letters plus the 8 label columns.
#[derive(Debug, Clone)]
pub struct LetterSplit {
    pub sequences: Vec<String>,
    pub labels: Matrix,
}

#[derive(Debug, Clone)]
pub struct LetterDataset {
    pub config: LetterDatasetConfig,
    pub train: LetterSplit,
    pub validation: LetterSplit,
    pub test: LetterSplit,
}

const LETTER_REJECTION_BUDGET: usize = 10_000;

fn sample_chunk_for_label(
    spec: &LetterFeatureSpec,
    label: u8,
    chunk: &mut [u8],
    rng: &mut Rng64,
) -> Result<()> {
    // An exact-match positive has a single satisfying prefix, so rejection
    // would waste its whole budget on arity 4; write the target directly.
    if let (LetterFeatureKind::ExactMatch { k }, 1) = (spec.kind, label) {
        chunk[..k].copy_from_slice(&spec.target.as_bytes()[..k]);
        return Ok(());
    }
    for _ in 0..LETTER_REJECTION_BUDGET {
        for c in chunk.iter_mut() {
            *c = LETTER_VOCAB[rng.below(LETTER_VOCAB.len())];
        }
        if letter_feature_value(spec, chunk)? == label {
            return Ok(());
        }
    }
    Err(Error::generation(format!(
        "rejection budget exceeded while conditioning letter feature {} on label {label}",
        spec.kind.name()
    )))
}

fn generate_letter_split(config: &LetterDatasetConfig, n: usize, seed: u64) -> Result<LetterSplit> {
    let mut rng = Rng64::new(seed);
    let len = config.sequence_length();
    let n_features = config.features.len();
    let mut sequences = Vec::with_capacity(n);
    let mut labels = vec![0.0; n * n_features];
    let mut seq = vec![0u8; len];

    for i in 0..n {
        for c in seq.iter_mut() {
            *c = LETTER_VOCAB[rng.below(LETTER_VOCAB.len())];
        }
        for (f, spec) in config.features.iter().enumerate() {
            let label = rng.bernoulli(0.5) as u8;
            let chunk = &mut seq[f * CHUNK_LENGTH..(f + 1) * CHUNK_LENGTH];
            sample_chunk_for_label(spec, label, chunk, &mut rng)?;
            labels[i * n_features + f] = label as f64;
        }
        sequences.push(String::from_utf8(seq.clone()).expect("vocabulary is ascii"));
    }
    Ok(LetterSplit {
        sequences,
        labels: Matrix::from_raw(n, n_features, labels),
    })
}

/// Generates the letter-string train/validation/test triple: uniform
/// sequences whose per-feature chunks are resampled until each feature
/// realizes its independently assigned balanced label.
pub fn generate_letter_dataset(config: &LetterDatasetConfig) -> Result<LetterDataset> {
    config.validate()?;
    Ok(LetterDataset {
        config: config.clone(),
        train: generate_letter_split(config, config.sizes.train, derive_seed(config.seed, 0))?,
        validation: generate_letter_split(
            config,
            config.sizes.validation,
            derive_seed(config.seed, 1),
        )?,
        test: generate_letter_split(config, config.sizes.test, derive_seed(config.seed, 2))?,
    })
}

#[derive(Serialize, Deserialize)]
struct LetterRecord {
    sequence: String,
    labels: Vec<u8>,
}

pub fn write_letters_jsonl(split: &LetterSplit, w: &mut impl Write) -> Result<()> {
    for (i, seq) in split.sequences.iter().enumerate() {
        let record = LetterRecord {
            sequence: seq.clone(),
            labels: split.labels.row(i).iter().map(|&v| (v > 0.5) as u8).collect(),
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}
