//! Mini-batch training with Adam or SGD, seeded shuffling and per-epoch history.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::flow_stack;
use crate::model::{BatchItem, Model};
use crate::ops::{cross_entropy, Label};
use crate::tensor::Tensor;
use crate::video::AugmentationSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Weight the loss by inverse class frequency of the training split.
    pub class_weights: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-4,
            batch_size: 4,
            optimizer: OptimizerKind::Adam,
            class_weights: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves every parameter untouched.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Optimiser state, indexed in [`Model::parameters_mut`] order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update from the accumulated gradients of trainable parameters.
    pub fn step(&mut self, model: &mut Model<f32>) {
        if self.learning_rate == 0.0 {
            return;
        }
        let mut params = model.parameters_mut();
        if self.m.is_empty() && self.kind == OptimizerKind::Adam {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = lr as f32;
                for (_, p) in params.iter_mut().filter(|(_, p)| p.trainable) {
                    let g = p.grad.data().to_vec();
                    for (w, g) in p.value.data_mut().iter_mut().zip(g) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                let step_size = (lr * c2.sqrt() / c1) as f32;
                let eps = (ADAM_EPSILON * c2.sqrt()) as f32;
                for (i, (_, p)) in params.iter_mut().enumerate() {
                    if !p.trainable {
                        continue;
                    }
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    let g = p.grad.data().to_vec();
                    for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= step_size * *m / (v.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// A preprocessed training unit: one `T×H×W×3` RGB window plus its flow stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub label: Label,
    pub rgb: Tensor<f32>,
    pub flow: Option<Tensor<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// CSV with full round-trip precision.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                opt(r.val_loss),
                opt(r.val_accuracy)
            ));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Inverse-frequency weights `N / (2·N_c)`; a class with no samples gets 1.
pub fn class_weights(samples: &[Sample]) -> [f64; 2] {
    let n = samples.len() as f64;
    let mut counts = [0usize; 2];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    counts.map(|c| if c == 0 { 1.0 } else { n / (2.0 * c as f64) })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where to write the model state if the loss diverges.
    pub dump_dir: Option<PathBuf>,
}

fn prepared_features(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<Vec<Tensor<f32>>>> {
    samples.iter().map(|s| model.features(&s.rgb, s.flow.as_ref())).collect()
}

fn augmented(model: &Model<f32>, s: &Sample, spec: &AugmentationSpec, seed: u64) -> Result<Sample> {
    let t = spec.sample(&mut ChaCha8Rng::seed_from_u64(seed));
    let depth = s.rgb.dims()[0];
    let frames = (0..depth).map(|i| t.apply(&s.rgb.index_axis0(i)?)).collect::<Result<Vec<_>>>()?;
    let flow = if model.two_stream() {
        Some(flow_stack(&frames, &model.config.flow)?)
    } else {
        None
    };
    Ok(Sample {
        clip_id: s.clip_id.clone(),
        label: s.label,
        rgb: Tensor::stack(&frames)?,
        flow,
    })
}

/// Mean unweighted loss and accuracy (threshold 0.5) in inference mode.
pub fn score(model: &Model<f32>, samples: &[Sample], features: Option<&[Vec<Tensor<f32>>]>) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("cannot score an empty split".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, s) in samples.iter().enumerate() {
        let p = match features {
            Some(f) => model.predict_features(&f[i])?,
            None => model.predict(&s.rgb, s.flow.as_ref())?,
        };
        loss += cross_entropy([p.p_accident, p.p_normal], s.label, 1.0);
        if p.label(0.5) == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Train `model` in place using `model.config.train`, recording one history
/// row per epoch. Frozen parameters are never touched.
pub fn train(
    model: &mut Model<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    let cfg = model.config.train.clone();
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    for s in train_set.iter().chain(val_set) {
        if model.two_stream() && s.flow.is_none() {
            return Err(Error::Data(format!("clip {} has no flow stack for a two-stream model", s.clip_id)));
        }
    }
    let weights = if cfg.class_weights { class_weights(train_set) } else { [1.0, 1.0] };
    let augment = model.config.augment;
    // Frozen backbones produce the same features every epoch: compute them once.
    let cache_features = !model.backbone_trainable();
    let train_feats = if cache_features && augment.is_none() {
        Some(prepared_features(model, train_set)?)
    } else {
        None
    };
    let val_feats = if cache_features && !val_set.is_empty() {
        Some(prepared_features(model, val_set)?)
    } else {
        None
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x2545_F491_4F6C_DD1D);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let aug: Vec<Sample> = match &augment {
                Some(spec) => chunk
                    .iter()
                    .map(|&i| augmented(model, &train_set[i], spec, augment_rng.next_u64()))
                    .collect::<Result<_>>()?,
                None => Vec::new(),
            };
            let items: Vec<BatchItem<'_>> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let s = if augment.is_some() { &aug[k] } else { &train_set[i] };
                    BatchItem {
                        rgb: &s.rgb,
                        flow: s.flow.as_ref(),
                        features: train_feats.as_ref().map(|f| f[i].as_slice()),
                        label: s.label,
                    }
                })
                .collect();
            model.zero_grad();
            let stats = match model.forward_backward(&items, weights, &mut dropout_rng) {
                Ok(s) => s,
                Err(Error::NonFinite(_)) => return Err(diverged(model, options, epoch, bi, f64::NAN)),
                Err(e) => return Err(e),
            };
            let mean = stats.loss_sum / stats.count as f64;
            let grads_finite = model.parameters().iter().all(|(_, p)| p.grad.is_finite());
            if !mean.is_finite() || !grads_finite {
                return Err(diverged(model, options, epoch, bi, mean));
            }
            loss_sum += stats.loss_sum;
            correct += stats.correct;
            opt.step(model);
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = score(model, val_set, val_feats.as_deref())?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}

fn diverged(model: &Model<f32>, options: &TrainOptions, epoch: usize, batch: usize, loss: f64) -> Error {
    let dump = options.dump_dir.as_deref().and_then(|d| dump_state(model, d).ok());
    Error::Divergence { epoch, batch, loss, dump }
}

fn dump_state(model: &Model<f32>, dir: &Path) -> Result<PathBuf> {
    model.save(dir)?;
    Ok(dir.to_path_buf())
}
