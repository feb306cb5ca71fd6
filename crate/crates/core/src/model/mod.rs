//! Convolutional-recurrent frame detector.
//!
//! ```text
//! [T, F] ─┬─ conv 3×3 → batch norm → ReLU → max-pool (freq)   × blocks
//!         ├─ reshape [T, F'·C]
//!         ├─ bidirectional GRU (outputs concatenated)          × gru_layers
//!         ├─ dense + ReLU
//!         └─ dense(1) + sigmoid → [T]
//! ```
//!
//! Batches of different-length recordings are zero-padded to the longest
//! one. Padded frames are excluded from batch-norm statistics and never feed
//! into valid frames, so a recording's predictions do not depend on what it
//! is batched with (except through training-mode batch statistics).

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub conv_channels: usize,
    /// One conv block per entry; each pools the frequency axis by that width.
    pub pools: Vec<usize>,
    /// Units per direction.
    pub gru_units: usize,
    pub gru_layers: usize,
    pub dense_units: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_mels: 40,
            conv_channels: 64,
            pools: vec![5, 4, 2],
            gru_units: 64,
            gru_layers: 2,
            dense_units: 64,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Param(format!("model: {m}")));
        if self.pools.is_empty() || self.pools.contains(&0) {
            return fail("pools must be a non-empty list of positive widths".into());
        }
        if self.pooled_bands() == 0 {
            return fail(format!("pools {:?} reduce {} bands to nothing", self.pools, self.n_mels));
        }
        if self.conv_channels == 0 || self.gru_units == 0 || self.gru_layers == 0 || self.dense_units == 0 {
            return fail("layer widths must be positive".into());
        }
        if !(self.bn_eps > 0.0 && (0.0..1.0).contains(&self.bn_momentum)) {
            return fail("bn_eps must be positive and bn_momentum in [0, 1)".into());
        }
        Ok(())
    }

    /// Frequency bins left after the pooling chain.
    pub fn pooled_bands(&self) -> usize {
        self.pools.iter().fold(self.n_mels, |f, &k| f.checked_div(k).unwrap_or(0))
    }

    /// Name, shape and Glorot fans `(fan_in, fan_out)` of every trainable
    /// tensor, in checkpoint order. Fans of `None` mean "not a weight".
    fn layout(&self) -> Vec<(String, Vec<usize>, Option<(usize, usize)>)> {
        let c = self.conv_channels;
        let h = self.gru_units;
        let mut out = Vec::new();
        let mut cin = 1;
        for b in 1..=self.pools.len() {
            out.push((format!("block{b}.conv.kernel"), vec![3, 3, cin, c], Some((9 * cin, 9 * c))));
            out.push((format!("block{b}.bn.gamma"), vec![c], None));
            out.push((format!("block{b}.bn.beta"), vec![c], None));
            cin = c;
        }
        let mut input = self.pooled_bands() * c;
        for l in 1..=self.gru_layers {
            for dir in ["fwd", "bwd"] {
                out.push((format!("gru{l}.{dir}.w_ih"), vec![input, 3 * h], Some((input, 3 * h))));
                out.push((format!("gru{l}.{dir}.w_hh"), vec![h, 3 * h], Some((h, 3 * h))));
                out.push((format!("gru{l}.{dir}.bias"), vec![3 * h], None));
            }
            input = 2 * h;
        }
        let d = self.dense_units;
        out.push(("dense1.kernel".into(), vec![input, d], Some((input, d))));
        out.push(("dense1.bias".into(), vec![d], None));
        out.push(("dense2.kernel".into(), vec![d, 1], Some((d, 1))));
        out.push(("dense2.bias".into(), vec![1], None));
        out
    }
}

/// `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

/// Per-frame scores of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePredictions {
    pub id: String,
    pub scores: Vec<f64>,
}

impl FramePredictions {
    pub fn threshold(&self, tau: f64) -> Vec<bool> {
        threshold(&self.scores, tau)
    }
}

/// `score ≥ τ`.
pub fn threshold(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&o| o >= tau).collect()
}

/// A recorded forward pass over one padded batch.
pub struct ForwardPass {
    pub graph: Graph,
    /// Leaf ids of the trainable tensors, in [`ModelParams::weights`] order.
    pub weights: Vec<NodeId>,
    /// `[T_b]` predictions of each input.
    pub outputs: Vec<NodeId>,
    bn_nodes: Vec<NodeId>,
}

impl ForwardPass {
    pub fn predictions(&self, b: usize) -> &[f64] {
        self.graph.value(self.outputs[b]).data()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    weights: Vec<(String, Tensor)>,
    /// Per block: running mean and variance.
    running: Vec<(Vec<f64>, Vec<f64>)>,
    seed: Option<u64>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, `γ = 1`, `β = 0`, running
    /// statistics at mean 0 / variance 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = config
            .layout()
            .into_iter()
            .map(|(name, shape, fans)| {
                let t = match fans {
                    Some((i, o)) => uniform(&mut rng, &shape, glorot_bound(i, o)),
                    None if name.ends_with(".gamma") => Tensor::full(&shape, 1.0),
                    None => Tensor::zeros(&shape),
                };
                (name, t)
            })
            .collect();
        let c = config.conv_channels;
        Ok(ModelParams {
            config: config.clone(),
            weights,
            running: vec![(vec![0.0; c], vec![1.0; c]); config.pools.len()],
            seed: Some(seed),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Seed used at initialisation; unknown for loaded checkpoints.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn weights(&self) -> &[(String, Tensor)] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.weights.iter_mut().map(|(_, t)| t)
    }

    pub fn weight(&self, name: &str) -> Option<&Tensor> {
        self.weights.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn weight_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.weights.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn running_stats(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [(Vec<f64>, Vec<f64>)] {
        &mut self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records a forward pass over `inputs`, zero-padding to the longest.
    pub fn forward(&self, inputs: &[&FeatureMatrix], mode: Mode) -> Result<ForwardPass> {
        let cfg = &self.config;
        if inputs.is_empty() {
            return Err(Error::Contract("forward over an empty batch".into()));
        }
        let f = cfg.n_mels;
        for x in inputs {
            if x.bands() != f {
                return Err(Error::shape("model input bands", &[x.frames(), x.bands()], &[f]));
            }
        }
        let lengths: Vec<usize> = inputs.iter().map(|x| x.frames()).collect();
        let (nb, nt) = (inputs.len(), *lengths.iter().max().unwrap());
        let mut padded = vec![0.0; nb * nt * f];
        for (b, x) in inputs.iter().enumerate() {
            padded[b * nt * f..b * nt * f + x.data().len()].copy_from_slice(x.data());
        }

        let mut g = Graph::new();
        let weights: Vec<NodeId> = self.weights.iter().map(|(_, t)| g.param(t.clone())).collect();
        let mut w = weights.iter().copied();
        let mut next = || w.next().expect("layout matches weights");

        let mut x = g.input(Tensor::new(vec![nb, nt, f, 1], padded)?);
        let mut bn_nodes = Vec::new();
        for (block, &k) in cfg.pools.iter().enumerate() {
            let (kernel, gamma, beta) = (next(), next(), next());
            x = g.conv2d_same(x, kernel)?;
            x = match mode {
                Mode::Train => {
                    let y = g.batch_norm(x, gamma, beta, cfg.bn_eps, Some(&lengths))?;
                    bn_nodes.push(y);
                    y
                }
                Mode::Infer => {
                    let (mean, var) = &self.running[block];
                    let (gv, bv) = (g.value(gamma).data(), g.value(beta).data());
                    let scale: Vec<f64> = gv.iter().zip(var).map(|(g, v)| g / (v + cfg.bn_eps).sqrt()).collect();
                    let shift: Vec<f64> = bv.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
                    g.channel_affine(x, &scale, &shift, Some(&lengths))?
                }
            };
            x = g.relu(x);
            x = g.max_pool_freq(x, k)?;
        }
        x = g.reshape(x, &[nb, nt, cfg.pooled_bands() * cfg.conv_channels])?;
        for _ in 0..cfg.gru_layers {
            let (fw_ih, fw_hh, fb) = (next(), next(), next());
            let (bw_ih, bw_hh, bb) = (next(), next(), next());
            let fwd = g.gru(x, fw_ih, fw_hh, fb, &lengths, false)?;
            let bwd = g.gru(x, bw_ih, bw_hh, bb, &lengths, true)?;
            x = g.concat_last(fwd, bwd)?;
        }
        let (k1, b1, k2, b2) = (next(), next(), next(), next());
        x = g.matmul(x, k1)?;
        x = g.add_bias(x, b1)?;
        x = g.relu(x);
        x = g.matmul(x, k2)?;
        x = g.add_bias(x, b2)?;
        x = g.sigmoid(x);
        let scores = g.reshape(x, &[nb, nt])?;
        let outputs = lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| g.take_bag(scores, b, len))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass {
            graph: g,
            weights,
            outputs,
            bn_nodes,
        })
    }

    /// Inference-mode predictions for one recording.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<FramePredictions> {
        let pass = self.forward(&[features], Mode::Infer)?;
        Ok(FramePredictions {
            id: features.id.clone(),
            scores: pass.predictions(0).to_vec(),
        })
    }

    /// Inference over many recordings, `chunk` at a time.
    pub fn predict_many(&self, inputs: &[&FeatureMatrix], chunk: usize) -> Result<Vec<FramePredictions>> {
        let mut out = Vec::with_capacity(inputs.len());
        for group in inputs.chunks(chunk.max(1)) {
            let pass = self.forward(group, Mode::Infer)?;
            for (b, x) in group.iter().enumerate() {
                out.push(FramePredictions {
                    id: x.id.clone(),
                    scores: pass.predictions(b).to_vec(),
                });
            }
        }
        Ok(out)
    }

    /// `running ← m · running + (1 − m) · batch` from a training-mode pass.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) -> Result<()> {
        if pass.bn_nodes.len() != self.running.len() {
            return Err(Error::Contract("running statistics need a training-mode pass".into()));
        }
        let m = self.config.bn_momentum;
        for (&node, (rm, rv)) in pass.bn_nodes.iter().zip(self.running.iter_mut()) {
            let (mean, var) = pass.graph.batch_norm_stats(node).expect("batch-norm node");
            for (r, b) in rm.iter_mut().zip(mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, b) in rv.iter_mut().zip(var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
        Ok(())
    }

    /// Trainable tensors followed by `block{b}.bn.running_mean` /
    /// `block{b}.bn.running_var`.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.weights.clone();
        for (b, (mean, var)) in self.running.iter().enumerate() {
            out.push((format!("block{}.bn.running_mean", b + 1), Tensor::vector(mean.clone())));
            out.push((format!("block{}.bn.running_var", b + 1), Tensor::vector(var.clone())));
        }
        out
    }

    pub fn from_named_tensors(config: &ModelConfig, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let template = ModelParams::init(config, 0)?;
        let expected = template.named_tensors();
        if entries.len() != expected.len() {
            return Err(Error::Param(format!(
                "checkpoint holds {} tensors, model config expects {}",
                entries.len(),
                expected.len()
            )));
        }
        for ((name, t), (want, wt)) in entries.iter().zip(&expected) {
            if name != want || t.shape() != wt.shape() {
                return Err(Error::Param(format!(
                    "checkpoint tensor `{name}` {:?} does not match `{want}` {:?}",
                    t.shape(),
                    wt.shape()
                )));
            }
        }
        let n = template.weights.len();
        let mut it = entries.into_iter();
        let weights: Vec<(String, Tensor)> = it.by_ref().take(n).collect();
        let rest: Vec<Tensor> = it.map(|(_, t)| t).collect();
        let running = rest
            .chunks(2)
            .map(|p| (p[0].data().to_vec(), p[1].data().to_vec()))
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            weights,
            running,
            seed: None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(path, &self.named_tensors())
    }

    pub fn load(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        let path = path.as_ref();
        let entries = read_checkpoint(path)?;
        Self::from_named_tensors(config, entries).map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })
    }
}
