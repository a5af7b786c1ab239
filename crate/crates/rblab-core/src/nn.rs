//! Trainable MLP: configurable architecture, forward pass with per-layer
//! activation capture, exact backpropagation, and resume-from-layer entry
//! points for representation surgery.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng64;

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Mean-preserving correction for a normal truncated at two standard
/// deviations, so initialized weights hit the requested variance exactly.
const TRUNC_NORMAL_STD_CORRECTION: f64 = 0.879_625_661_034_239_8;

const MODEL_MAGIC: &str = "RBLABM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    LeakyRelu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden_sizes")]
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    pub seed: u64,
}

fn default_hidden_sizes() -> Vec<usize> {
    vec![256, 128, 64, 64]
}

fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::LeakyRelu
}

fn default_init_scale() -> f64 {
    1.0
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() {
            return Err(Error::contract("hidden_sizes must be nonempty"));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::contract("input_dim and output_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract("dropout_rate must be in [0, 1)"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::contract("init_scale must be positive"));
        }
        Ok(())
    }

    /// Widths entering each layer: input, then each hidden size.
    fn fan_ins(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim];
        v.extend_from_slice(&self.hidden_sizes);
        v
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// in_dim x out_dim.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// MLP with `hidden_sizes.len()` nonlinear layers followed by an affine
/// output layer.
#[derive(Debug, Clone)]
pub struct MlpModel {
    config: MlpConfig,
    layers: Vec<Layer>,
}

/// Activations captured by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Output of each hidden layer (post-nonlinearity, plus identity skip
    /// where active), in layer order. The last entry is the penultimate
    /// representation.
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
    /// Dropout scale masks, present only for training-mode passes with a
    /// nonzero dropout rate.
    pub masks: Option<Vec<Matrix>>,
}

/// Parameter gradients mirroring the model layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.biases.as_slice());
        }
        out
    }
}

struct FullTrace {
    /// x_0 = inputs, x_{l+1} = output of hidden layer l.
    layer_inputs: Vec<Matrix>,
    /// Post-nonlinearity, pre-dropout, pre-skip activations per hidden layer.
    pre_dropout: Vec<Matrix>,
    masks: Option<Vec<Matrix>>,
    logits: Matrix,
}

impl MlpModel {
    /// Initializes weights with a truncated normal (two standard
    /// deviations) of variance `init_scale / fan_in`; biases start at zero.
    pub fn init(config: MlpConfig) -> Result<MlpModel> {
        config.validate()?;
        let mut rng = Rng64::new(config.seed);
        let fan_ins = config.fan_ins();
        let mut widths = config.hidden_sizes.clone();
        widths.push(config.output_dim);

        let mut layers = Vec::with_capacity(widths.len());
        for (l, &out_dim) in widths.iter().enumerate() {
            let in_dim = fan_ins[l];
            let std = (config.init_scale / in_dim as f64).sqrt() / TRUNC_NORMAL_STD_CORRECTION;
            let data: Vec<f64> = (0..in_dim * out_dim)
                .map(|_| rng.truncated_normal2() * std)
                .collect();
            layers.push(Layer {
                weights: Matrix::from_raw(in_dim, out_dim, data),
                biases: vec![0.0; out_dim],
            });
        }
        Ok(MlpModel { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_hidden(&self) -> usize {
        self.config.hidden_sizes.len()
    }

    /// Index of the hidden layer whose output is the penultimate
    /// representation (immediately before the output logits).
    pub fn penultimate_layer(&self) -> usize {
        self.n_hidden() - 1
    }

    /// Mutable views of every parameter tensor, in a fixed order matching
    /// [`Gradients::tensors`].
    pub fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            let Layer { weights, biases } = layer;
            out.push(weights.as_mut_slice());
            out.push(biases.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    fn nonlinearity(&self, z: f64) -> f64 {
        match self.config.nonlinearity {
            Nonlinearity::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Nonlinearity::Tanh => z.tanh(),
        }
    }

    /// Derivative of the nonlinearity expressed through its output value.
    fn nonlinearity_grad_from_output(&self, a: f64) -> f64 {
        match self.config.nonlinearity {
            Nonlinearity::LeakyRelu => {
                if a >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Nonlinearity::Tanh => 1.0 - a * a,
        }
    }

    fn skip_active(&self, in_dim: usize, out_dim: usize) -> bool {
        self.config.residual && in_dim == out_dim
    }

    fn affine(&self, l: usize, x: &Matrix) -> Matrix {
        let mut z = x.matmul(&self.layers[l].weights);
        z.add_row_vector_in_place(&self.layers[l].biases);
        z
    }

    fn forward_full(
        &self,
        inputs: &Matrix,
        mode: Mode,
        mut rng: Option<&mut Rng64>,
    ) -> Result<FullTrace> {
        if inputs.cols() != self.config.input_dim {
            return Err(Error::contract(format!(
                "input width {} does not match model input_dim {}",
                inputs.cols(),
                self.config.input_dim
            )));
        }
        let rate = self.config.dropout_rate;
        let dropout_on = mode == Mode::Train && rate > 0.0;
        if dropout_on && rng.is_none() {
            return Err(Error::contract(
                "training-mode forward with dropout requires an rng",
            ));
        }

        let n_hidden = self.n_hidden();
        let mut layer_inputs = Vec::with_capacity(n_hidden + 1);
        let mut pre_dropout = Vec::with_capacity(n_hidden);
        let mut masks = if dropout_on { Some(Vec::new()) } else { None };
        layer_inputs.push(inputs.clone());

        for l in 0..n_hidden {
            let x = &layer_inputs[l];
            let a = self.affine(l, x).map(|z| self.nonlinearity(z));
            let mut h = if dropout_on {
                let rng = rng.as_deref_mut().expect("checked above");
                let keep_scale = 1.0 / (1.0 - rate);
                let mask = Matrix::from_raw(
                    a.rows(),
                    a.cols(),
                    (0..a.rows() * a.cols())
                        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep_scale })
                        .collect(),
                );
                let mut h = a.clone();
                for (v, &m) in h.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *v *= m;
                }
                masks.as_mut().expect("dropout on").push(mask);
                h
            } else {
                a.clone()
            };
            if self.skip_active(x.cols(), h.cols()) {
                for (v, &s) in h.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *v += s;
                }
            }
            pre_dropout.push(a);
            layer_inputs.push(h);
        }

        let logits = self.affine(n_hidden, &layer_inputs[n_hidden]);
        Ok(FullTrace {
            layer_inputs,
            pre_dropout,
            masks,
            logits,
        })
    }

    /// Forward pass capturing each hidden layer's output.
    pub fn forward(
        &self,
        inputs: &Matrix,
        mode: Mode,
        rng: Option<&mut Rng64>,
    ) -> Result<ForwardTrace> {
        let full = self.forward_full(inputs, mode, rng)?;
        let mut activations = full.layer_inputs;
        activations.remove(0);
        Ok(ForwardTrace {
            activations,
            logits: full.logits,
            masks: full.masks,
        })
    }

    /// Resumes the forward pass from a hidden layer's captured output;
    /// equals the tail of a full evaluation pass bit for bit.
    pub fn forward_from_layer(&self, layer_index: usize, activations: &Matrix) -> Result<Matrix> {
        let n_hidden = self.n_hidden();
        if layer_index >= n_hidden {
            return Err(Error::contract(format!(
                "layer index {} out of range for {} hidden layers",
                layer_index, n_hidden
            )));
        }
        if activations.cols() != self.config.hidden_sizes[layer_index] {
            return Err(Error::contract(format!(
                "activation width {} does not match layer {} width {}",
                activations.cols(),
                layer_index,
                self.config.hidden_sizes[layer_index]
            )));
        }
        let mut x = activations.clone();
        for l in (layer_index + 1)..n_hidden {
            let mut h = self.affine(l, &x).map(|z| self.nonlinearity(z));
            if self.skip_active(x.cols(), h.cols()) {
                for (v, &s) in h.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *v += s;
                }
            }
            x = h;
        }
        Ok(self.affine(n_hidden, &x))
    }

    /// Training-mode forward and exact backward pass.
    ///
    /// The total loss is `sum_f mask_f * mean_batch(sigmoid_ce(logit_f))`;
    /// the returned per-feature losses are the unmasked batch means.
    pub fn loss_and_grads(
        &self,
        inputs: &Matrix,
        labels: &Matrix,
        loss_mask: &[f64],
        rng: Option<&mut Rng64>,
    ) -> Result<(Vec<f64>, Gradients)> {
        if labels.cols() != self.config.output_dim || loss_mask.len() != self.config.output_dim {
            return Err(Error::contract(
                "labels and loss_mask width must equal output_dim",
            ));
        }
        if labels.rows() != inputs.rows() {
            return Err(Error::contract("labels and inputs row count mismatch"));
        }
        let n = inputs.rows();
        if n == 0 {
            return Err(Error::contract("empty batch"));
        }

        let trace = self.forward_full(inputs, Mode::Train, rng)?;
        let n_hidden = self.n_hidden();
        let d_out = self.config.output_dim;

        // Per-feature sigmoid cross-entropy and dLoss/dlogits.
        let mut per_feature = vec![0.0; d_out];
        let mut dlogits = Matrix::zeros(n, d_out);
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            for f in 0..d_out {
                let z = trace.logits.get(i, f);
                let y = labels.get(i, f);
                per_feature[f] += (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()) * inv_n;
                let sig = 1.0 / (1.0 + (-z).exp());
                dlogits.set(i, f, loss_mask[f] * (sig - y) * inv_n);
            }
        }
        if !per_feature.iter().all(|l| l.is_finite()) {
            return Err(Error::numeric("loss is not finite"));
        }

        let mut grad_layers: Vec<Option<Layer>> = (0..=n_hidden).map(|_| None).collect();

        // Output layer.
        let x_last = &trace.layer_inputs[n_hidden];
        grad_layers[n_hidden] = Some(Layer {
            weights: x_last.matmul_at_b(&dlogits),
            biases: column_sums(&dlogits),
        });
        let mut g = dlogits.matmul_abt(&self.layers[n_hidden].weights);

        for l in (0..n_hidden).rev() {
            let x = &trace.layer_inputs[l];
            let a = &trace.pre_dropout[l];
            let skip = self.skip_active(x.cols(), a.cols());

            // d/da through the dropout mask, then d/dz through the
            // nonlinearity.
            let mut dz = g.clone();
            if let Some(masks) = &trace.masks {
                for (v, &m) in dz.as_mut_slice().iter_mut().zip(masks[l].as_slice()) {
                    *v *= m;
                }
            }
            for (v, &av) in dz.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *v *= self.nonlinearity_grad_from_output(av);
            }

            grad_layers[l] = Some(Layer {
                weights: x.matmul_at_b(&dz),
                biases: column_sums(&dz),
            });

            let mut g_prev = dz.matmul_abt(&self.layers[l].weights);
            if skip {
                for (v, &s) in g_prev.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *v += s;
                }
            }
            g = g_prev;
        }

        let grads = Gradients {
            layers: grad_layers.into_iter().map(|g| g.expect("filled")).collect(),
        };
        Ok((per_feature, grads))
    }

    /// Serializes as a JSON header line plus a little-endian IEEE-754
    /// 32-bit parameter payload.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let shapes: Vec<[usize; 2]> = self
            .layers
            .iter()
            .map(|l| [l.weights.rows(), l.weights.cols()])
            .collect();
        let header = serde_json::json!({
            "magic": MODEL_MAGIC,
            "config": self.config,
            "layer_shapes": shapes,
        });
        let mut line = serde_json::to_string(&header)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for layer in &self.layers {
            for &v in layer.weights.as_slice() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            for &v in &layer.biases {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<MlpModel> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::corrupt("model file has no header line"))?;
        let header: serde_json::Value = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::corrupt(format!("model header is not valid json: {e}")))?;
        if header.get("magic").and_then(|m| m.as_str()) != Some(MODEL_MAGIC) {
            return Err(Error::corrupt("model file magic mismatch"));
        }
        let config: MlpConfig = serde_json::from_value(
            header
                .get("config")
                .cloned()
                .ok_or_else(|| Error::corrupt("model header missing config"))?,
        )
        .map_err(|e| Error::corrupt(format!("bad model config: {e}")))?;
        let shapes: Vec<[usize; 2]> = serde_json::from_value(
            header
                .get("layer_shapes")
                .cloned()
                .ok_or_else(|| Error::corrupt("model header missing layer_shapes"))?,
        )
        .map_err(|e| Error::corrupt(format!("bad layer shapes: {e}")))?;

        let fan_ins = config.fan_ins();
        let mut widths = config.hidden_sizes.clone();
        widths.push(config.output_dim);
        if shapes.len() != widths.len()
            || shapes
                .iter()
                .zip(widths.iter().enumerate())
                .any(|(s, (l, &w))| s[0] != fan_ins[l] || s[1] != w)
        {
            return Err(Error::corrupt("layer shapes inconsistent with config"));
        }

        let payload = &bytes[newline + 1..];
        let expected: usize = shapes.iter().map(|s| (s[0] * s[1] + s[1]) * 4).sum();
        if payload.len() != expected {
            return Err(Error::corrupt(format!(
                "model payload is {} bytes, expected {}",
                payload.len(),
                expected
            )));
        }
        let mut offset = 0;
        let mut read_f64 = |count: usize| -> Vec<f64> {
            let out = payload[offset..offset + count * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            offset += count * 4;
            out
        };
        let mut layers = Vec::with_capacity(shapes.len());
        for s in &shapes {
            let weights = Matrix::from_raw(s[0], s[1], read_f64(s[0] * s[1]));
            let biases = read_f64(s[1]);
            layers.push(Layer { weights, biases });
        }
        Ok(MlpModel { config, layers })
    }

    /// Round-trips the parameters through the 32-bit storage format in
    /// memory, yielding the model a reader of the serialized file sees.
    pub fn storage_rounded(&self) -> MlpModel {
        let mut clone = self.clone();
        for layer in &mut clone.layers {
            for v in layer.weights.as_mut_slice() {
                *v = *v as f32 as f64;
            }
            for v in &mut layer.biases {
                *v = *v as f32 as f64;
            }
        }
        clone
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, &v) in sums.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    sums
}
