//! Mini-batch training with Adam over half-and-half batches.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Anchor, Bag, HnhSampler, WeakLabel};
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::eval::{frame_metrics, write_metric_log, MetricRecord, Scored, ValScores};
use crate::loss::{LossRegistry, MilLoss};
use crate::model::{threshold, Mode, ModelConfig, ModelParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Registry name of the bag loss.
    pub loss: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub anchor: Anchor,
    /// Write a checkpoint every this many epochs; 0 disables periodic ones.
    /// The final epoch is always written.
    pub checkpoint_interval: usize,
    /// Score the validation set every this many epochs (and at the last).
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: "mmm".into(),
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            anchor: Anchor::Majority,
            checkpoint_interval: 0,
            eval_interval: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Param(format!("train: {m}")));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) || self.epsilon <= 0.0 {
            return fail("betas must lie in [0, 1) and epsilon be positive");
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam {
        Adam {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// Seeds for parameter initialisation and for the sampler.
    pub fn derived_seeds(&self) -> (u64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (rng.random(), rng.random())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First and second moments per parameter tensor, and the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

impl Adam {
    /// ```text
    /// m ← β1 m + (1 − β1) g      v ← β2 v + (1 − β2) g²
    /// θ ← θ − lr · m̂ / (√v̂ + ε),  m̂ = m / (1 − β1ᵗ),  v̂ = v / (1 − β2ᵗ)
    /// ```
    pub fn step<'a>(
        &self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[&Tensor],
        state: &mut AdamState,
    ) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::Contract(format!(
                "adam: {} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            for (((th, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *th -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// One optimisation step on `batch`; returns the batch loss (mean over
/// bags) before the update. A non-finite loss or gradient leaves `params`
/// untouched and is reported as a contract error.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[&Bag],
    loss: &dyn MilLoss,
    adam: &Adam,
    state: &mut AdamState,
) -> Result<f64> {
    step(params, batch, loss, adam, state)?
        .ok_or_else(|| Error::Contract("non-finite loss or gradient".into()))
}

fn step(
    params: &mut ModelParams,
    batch: &[&Bag],
    loss: &dyn MilLoss,
    adam: &Adam,
    state: &mut AdamState,
) -> Result<Option<f64>> {
    let inputs: Vec<&FeatureMatrix> = batch.iter().map(|b| &b.features).collect();
    let mut pass = params.forward(&inputs, Mode::Train)?;
    let mut per_bag = Vec::with_capacity(batch.len());
    for (b, bag) in batch.iter().enumerate() {
        per_bag.push(loss.record(&mut pass.graph, pass.outputs[b], bag.label)?);
    }
    let stacked = pass.graph.stack(&per_bag)?;
    let total = pass.graph.mean(stacked);
    let value = pass.graph.value(total).item();
    if !value.is_finite() {
        return Ok(None);
    }
    let grads = pass.graph.backward(total)?;
    let zero: Vec<Tensor> = params.weights().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let gs: Vec<&Tensor> = pass
        .weights
        .iter()
        .zip(&zero)
        .map(|(&id, z)| grads.get(id).unwrap_or(z))
        .collect();
    if !gs.iter().all(|g| g.is_finite()) {
        return Ok(None);
    }
    params.update_running_stats(&pass)?;
    adam.step(params.weights_mut(), &gs, state)?;
    Ok(Some(value))
}

/// Strongly labelled recordings scored during training.
pub struct ValidationSet {
    pub features: Vec<FeatureMatrix>,
    pub truth: Vec<Vec<bool>>,
    pub threshold: f64,
}

impl ValidationSet {
    pub fn score(&self, params: &ModelParams) -> Result<ValScores> {
        let inputs: Vec<&FeatureMatrix> = self.features.iter().collect();
        let preds = params.predict_many(&inputs, 8)?;
        let binary: Vec<Vec<bool>> = preds.iter().map(|p| threshold(&p.scores, self.threshold)).collect();
        let items: Vec<Scored> = preds
            .iter()
            .zip(&binary)
            .zip(&self.truth)
            .map(|((p, b), t)| Scored {
                id: &p.id,
                pred: b,
                truth: t,
            })
            .collect();
        let r = frame_metrics(&items)?;
        Ok(ValScores {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub f1: f64,
    pub params: ModelParams,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<MetricRecord>,
    /// Highest validation F1 seen (earliest epoch on ties).
    pub best: Option<BestCheckpoint>,
    pub steps: u64,
}

/// Files written under an output directory.
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.wsck";
pub const BEST_CHECKPOINT: &str = "best.wsck";

pub fn periodic_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:05}.wsck"))
}

/// Runs the configured number of epochs. Nothing here stops training
/// early; the best validation checkpoint is only recorded.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    registry: &'a LossRegistry,
    validation: Option<&'a ValidationSet>,
    out_dir: Option<&'a Path>,
    observer: Option<Box<dyn FnMut(&MetricRecord) + 'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, registry: &'a LossRegistry) -> Self {
        Trainer {
            config,
            registry,
            validation: None,
            out_dir: None,
            observer: None,
        }
    }

    pub fn validation(mut self, v: &'a ValidationSet) -> Self {
        self.validation = Some(v);
        self
    }

    /// Metric log and checkpoints go here.
    pub fn output_dir(mut self, dir: &'a Path) -> Self {
        self.out_dir = Some(dir);
        self
    }

    pub fn on_epoch(mut self, f: impl FnMut(&MetricRecord) + 'a) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    /// Initialises parameters from the configured seed and trains.
    pub fn run(self, model: &ModelConfig, bags: &[Bag]) -> Result<TrainOutcome> {
        let (init_seed, _) = self.config.derived_seeds();
        let params = ModelParams::init(model, init_seed)?;
        self.run_from(params, bags)
    }

    pub fn run_from(mut self, mut params: ModelParams, bags: &[Bag]) -> Result<TrainOutcome> {
        let cfg = self.config;
        cfg.validate()?;
        let loss = self.registry.get(&cfg.loss)?;
        let labels: Vec<WeakLabel> = bags.iter().map(|b| b.label).collect();
        let (_, sampler_seed) = cfg.derived_seeds();
        let mut sampler = HnhSampler::new(&labels, cfg.batch_size, cfg.anchor, sampler_seed)?;
        if let Some(dir) = self.out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let adam = cfg.adam();
        let mut state = AdamState::new(params.weights().iter().map(|(_, t)| t));
        let mut log = Vec::with_capacity(cfg.epochs);
        let mut best: Option<BestCheckpoint> = None;

        for epoch in 1..=cfg.epochs {
            let batches = sampler.next_epoch();
            let mut sum = 0.0;
            for (bi, idx) in batches.iter().enumerate() {
                let batch: Vec<&Bag> = idx.iter().map(|&i| &bags[i]).collect();
                match step(&mut params, &batch, loss, &adam, &mut state)? {
                    Some(l) => sum += l,
                    None => return Err(Error::NonFinite { epoch, batch: bi + 1 }),
                }
            }
            let last = epoch == cfg.epochs;
            let validation = match self.validation {
                Some(v) if last || epoch % cfg.eval_interval == 0 => Some(v.score(&params)?),
                _ => None,
            };
            let record = MetricRecord {
                epoch,
                train_loss: sum / batches.len() as f64,
                validation,
            };
            log.push(record);
            if let Some(v) = validation {
                if best.as_ref().is_none_or(|b| v.f1 > b.f1) {
                    best = Some(BestCheckpoint {
                        epoch,
                        f1: v.f1,
                        params: params.clone(),
                    });
                    if let Some(dir) = self.out_dir {
                        params.save(dir.join(BEST_CHECKPOINT))?;
                    }
                }
            }
            if let Some(dir) = self.out_dir {
                write_metric_log(dir.join(METRICS_FILE), &log)?;
                if cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0 {
                    params.save(periodic_checkpoint(dir, epoch))?;
                }
                if last {
                    params.save(dir.join(FINAL_CHECKPOINT))?;
                }
            }
            if let Some(f) = self.observer.as_mut() {
                f(&record);
            }
        }
        Ok(TrainOutcome {
            params,
            log,
            best,
            steps: state.t,
        })
    }
}
