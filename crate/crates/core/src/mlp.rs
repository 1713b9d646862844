//! ReLU multilayer perceptron with a two-way softmax output ("up", "down"),
//! trained by mini-batch gradient descent on cross-entropy.
//!
//! Output unit 0 is "up" and unit 1 is "down". Weights are stored row-major,
//! one row per output unit. Zero inputs are skipped in the matrix products,
//! which keeps the sparse news blocks cheap without changing any sums.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureVector, Layout};
use crate::sampling::Label;

const MAGIC: &[u8; 8] = b"NWSMLP1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        let nz: Vec<usize> = (0..input.len()).filter(|&j| input[j] != 0.0).collect();
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(i, &b)| {
            let row = &self.weights[i * self.inputs..(i + 1) * self.inputs];
            b + nz.iter().map(|&j| row[j] * input[j]).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub train_losses: Vec<f64>,
    pub valid_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub layout: Option<Layout>,
    pub meta: TrainingMeta,
}

/// Per-parameter gradients with the same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// `p_up − p_down`
    pub confidence: f64,
    pub p_up: f64,
    pub p_down: f64,
}

impl Prediction {
    pub fn from_probs(p_up: f64, p_down: f64) -> Self {
        Prediction {
            label: if p_up > p_down { Label::Up } else { Label::Down },
            confidence: p_up - p_down,
            p_up,
            p_down,
        }
    }
}

/// Numerically stable two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `−ln softmax(logits)[target]` via log-sum-exp.
pub fn cross_entropy(logits: [f64; 2], target: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[target]
}

fn target_index(label: Label) -> usize {
    match label {
        Label::Up => 0,
        Label::Down => 1,
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases; the output layer must have 2 units.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Invalid("an MLP needs at least input and output dims".into()));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Invalid(format!("layer dims must be positive: {layer_dims:?}")));
        }
        if *layer_dims.last().unwrap() != 2 {
            return Err(Error::Invalid("output layer must have exactly 2 units".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for v in layer.weights.iter_mut() {
                    *v = rng.gen_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(MlpModel {
            layers,
            layout: None,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok([cur[0], cur[1]])
    }

    /// `(p_up, p_down)`
    pub fn forward(&self, x: &[f64]) -> Result<(f64, f64)> {
        let [up, down] = softmax2(self.logits(x)?);
        Ok((up, down))
    }

    /// Label and confidence; ties go to down.
    pub fn predict_values(&self, x: &[f64]) -> Result<Prediction> {
        let (up, down) = self.forward(x)?;
        Ok(Prediction::from_probs(up, down))
    }

    /// Like [`predict_values`](Self::predict_values) but also checks the
    /// vector's layout against the one recorded in the model.
    pub fn predict(&self, x: &FeatureVector) -> Result<Prediction> {
        if let Some(layout) = &self.layout {
            if *layout != x.layout {
                return Err(Error::Layout {
                    expected: layout.to_string(),
                    got: x.layout.to_string(),
                });
            }
        }
        self.predict_values(&x.values)
    }

    /// Mean cross-entropy over the batch plus `l2/2·‖W‖²` per weight matrix,
    /// and the matching gradients.
    pub fn loss_and_gradients(&self, batch: &[(&[f64], Label)], l2: f64) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut grads = Gradients {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        };
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len() + 1];
        for &(x, label) in batch {
            self.check_input(x)?;
            acts[0].clear();
            acts[0].extend_from_slice(x);
            for (l, layer) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(l + 1);
                layer.forward(&head[l], &mut tail[0]);
                if l < last {
                    tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            let logits = [acts[last + 1][0], acts[last + 1][1]];
            let target = target_index(label);
            loss += cross_entropy(logits, target);
            let probs = softmax2(logits);
            let mut delta = vec![probs[0], probs[1]];
            delta[target] -= 1.0;
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let g = &mut grads.layers[l];
                let input = &acts[l];
                let nz: Vec<usize> = (0..input.len()).filter(|&j| input[j] != 0.0).collect();
                for (i, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[i] += d;
                    let row = &mut g.weights[i * layer.inputs..(i + 1) * layer.inputs];
                    for &j in &nz {
                        row[j] += d * input[j];
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (i, &d) in delta.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[i * layer.inputs..(i + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += w * d;
                        }
                    }
                    // ReLU gate: activations are zero exactly where the unit was inactive
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let n = batch.len() as f64;
        loss /= n;
        for (g, layer) in grads.layers.iter_mut().zip(&self.layers) {
            for (gw, w) in g.weights.iter_mut().zip(&layer.weights) {
                *gw = *gw / n + l2 * w;
            }
            g.biases.iter_mut().for_each(|b| *b /= n);
            if l2 > 0.0 {
                loss += 0.5 * l2 * layer.weights.iter().map(|w| w * w).sum::<f64>();
            }
        }
        Ok((loss, grads))
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= lr * gb;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn error_rate_on(&self, data: &FeatureMatrix) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Invalid("error rate of an empty set".into()));
        }
        let mut wrong = 0usize;
        for r in &data.rows {
            if self.predict_values(&r.values)?.label != r.label {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / data.len() as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::json!({
            "layer_dims": self.layer_dims(),
            "layout": self.layout.as_ref().map(|l| l.to_string()),
            "training": self.meta,
        });
        let header = serde_json::to_vec(&header).map_err(|e| Error::Invalid(e.to_string()))?;
        let n_params: usize = self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n_params);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("model file: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: serde_json::Value = serde_json::from_slice(&r[..len]).map_err(|e| bad(&e.to_string()))?;
        r = &r[len..];
        let dims: Vec<usize> = serde_json::from_value(header["layer_dims"].clone()).map_err(|e| bad(&e.to_string()))?;
        let layout = match header["layout"].as_str() {
            Some(s) => Some(s.parse::<Layout>()?),
            None => None,
        };
        let meta: TrainingMeta = serde_json::from_value(header["training"].clone()).map_err(|e| bad(&e.to_string()))?;
        if dims.len() < 2 || dims.last() != Some(&2) {
            return Err(bad("layer dims must end in 2 outputs"));
        }
        let mut read_f64 = || -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated parameters"))?;
            Ok(f64::from_le_bytes(b))
        };
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let mut layer = Dense::zeros(w[0], w[1]);
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = read_f64()?;
            }
            layers.push(layer);
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        if let Some(l) = &layout {
            if l.dim() != dims[0] {
                return Err(bad("layout width does not match input dim"));
            }
        }
        Ok(MlpModel { layers, layout, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![1024; 4],
            learning_rate: 0.01,
            decay: 0.5,
            decay_every: 10,
            batch_size: 32,
            epochs: 30,
            l2: 1e-4,
            seed: 1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.learning_rate) || !positive(self.decay) || self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "learning_rate, decay, decay_every and batch_size must be positive".into(),
            ));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Trains on `train`, selecting the parameters of the epoch with the lowest
/// validation error (earliest on ties).
pub fn train(train: &FeatureMatrix, valid: &FeatureMatrix, config: &TrainConfig) -> Result<MlpModel> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    if train.layout != valid.layout {
        return Err(Error::Layout {
            expected: train.layout.to_string(),
            got: valid.layout.to_string(),
        });
    }
    let mut dims = vec![train.layout.dim()];
    dims.extend(&config.hidden);
    dims.push(2);
    let mut model = MlpModel::init(&dims, config.seed)?;
    model.layout = Some(train.layout.clone());
    if config.epochs == 0 {
        return Ok(model);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, MlpModel)> = None;
    let mut since_best = 0usize;
    let mut meta = model.meta.clone();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.decay.powi((epoch / config.decay_every) as i32);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], Label)> = chunk
                .iter()
                .map(|&i| (train.rows[i].values.as_slice(), train.rows[i].label))
                .collect();
            let (loss, grads) = model.loss_and_gradients(&batch, config.l2)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("loss became {loss} at batch {batches} (learning rate {lr})"),
                });
            }
            model.apply(&grads, lr);
            loss_sum += loss;
            batches += 1;
        }
        if !model.all_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "non-finite parameters".into(),
            });
        }
        let valid_error = model.error_rate_on(valid)?;
        meta.train_losses.push(loss_sum / batches as f64);
        meta.valid_errors.push(valid_error);
        meta.epochs_run = epoch + 1;
        log::debug!(
            "epoch {epoch}: train loss {:.5}, validation error {valid_error:.4}",
            loss_sum / batches as f64
        );
        if best.as_ref().is_none_or(|(e, _)| valid_error < *e) {
            best = Some((valid_error, model.clone()));
            meta.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }
    let (_, mut chosen) = best.expect("at least one epoch ran");
    chosen.meta = meta;
    Ok(chosen)
}
