//! The full two-stream classifier: backbones, head and softmax.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneCache, Stream};
use crate::config::ModelConfig;
use crate::convlstm::SequenceCache;
use crate::error::{Error, Result};
use crate::head::Head;
use crate::ops::{cross_entropy, cross_entropy_grad, gap2d, gap2d_backward, softmax2, Label};
use crate::param::Parameter;
use crate::tensor::{Scalar, Tensor};
use crate::tensor_file;

pub const VARIANT_FILE: &str = "variant.cfg";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub p_accident: f64,
    pub p_normal: f64,
    pub logits: [f64; 2],
}

impl Prediction {
    /// Accident when `p_accident` exceeds `threshold`.
    pub fn label(&self, threshold: f64) -> Label {
        if self.p_accident > threshold {
            Label::Accident
        } else {
            Label::Normal
        }
    }
}

/// One training example. `features` holds precomputed backbone outputs
/// (one per stream) and replaces the raw inputs when present.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a, S: Scalar = f32> {
    pub rgb: &'a Tensor<S>,
    pub flow: Option<&'a Tensor<S>>,
    pub features: Option<&'a [Tensor<S>]>,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchStats {
    /// Sum of weighted per-sample losses.
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct Model<S: Scalar = f32> {
    pub config: ModelConfig,
    pub backbones: Vec<Backbone<S>>,
    pub head: Head<S>,
}

impl<S: Scalar> Model<S> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = config.input_extent();
        let mut backbones = Vec::with_capacity(config.streams.len());
        let mut feature_dims = Vec::with_capacity(config.streams.len());
        for &s in &config.streams {
            let b = Backbone::build(config.backbone(s), extent, rng.next_u64())?;
            feature_dims.push((s, b.output_dims()?));
            backbones.push(b);
        }
        let head = Head::build(config.head.clone(), &feature_dims, &mut rng)?;
        Ok(Self { config, backbones, head })
    }

    pub fn two_stream(&self) -> bool {
        self.backbones.len() == 2
    }

    pub fn streams(&self) -> Vec<Stream> {
        self.config.streams.clone()
    }

    fn inputs<'a>(&self, rgb: &'a Tensor<S>, flow: Option<&'a Tensor<S>>) -> Result<Vec<&'a Tensor<S>>> {
        match (self.two_stream(), flow) {
            (true, Some(f)) => Ok(vec![rgb, f]),
            (true, None) => Err(Error::Data("two-stream model needs a flow input".into())),
            (false, _) => Ok(vec![rgb]),
        }
    }

    /// Backbone output of every stream.
    pub fn features(&self, rgb: &Tensor<S>, flow: Option<&Tensor<S>>) -> Result<Vec<Tensor<S>>> {
        self.inputs(rgb, flow)?
            .into_iter()
            .zip(&self.backbones)
            .map(|(x, b)| b.forward(x))
            .collect()
    }

    /// Inference-mode head on precomputed backbone features.
    pub fn predict_features(&self, features: &[Tensor<S>]) -> Result<Prediction> {
        if features.len() != self.backbones.len() {
            return Err(Error::Data(format!(
                "expected {} feature maps, got {}",
                self.backbones.len(),
                features.len()
            )));
        }
        let mut pooled = Vec::with_capacity(features.len());
        for (f, br) in features.iter().zip(&self.head.branches) {
            let mut h = br.forward_lstm(f)?;
            if let Some(bn) = &br.bn {
                h = bn.forward_infer(&h)?;
            }
            pooled.push(gap2d(&h)?);
        }
        let refs: Vec<&Tensor<S>> = pooled.iter().collect();
        let fused = Tensor::concat_last(&refs)?;
        let z = self.head.classifier.forward(&fused)?;
        to_prediction(z)
    }

    /// Full inference forward. Deterministic: dropout off, batch norm uses running statistics.
    pub fn predict(&self, rgb: &Tensor<S>, flow: Option<&Tensor<S>>) -> Result<Prediction> {
        self.predict_features(&self.features(rgb, flow)?)
    }

    pub fn backbone_trainable(&self) -> bool {
        self.backbones.iter().any(|b| b.parameters().iter().any(|(_, p)| p.trainable))
    }

    /// Train-mode forward and backward over a batch, accumulating gradients
    /// of the mean weighted loss. `class_weights` is indexed by label.
    pub fn forward_backward<R: Rng + ?Sized>(
        &mut self,
        batch: &[BatchItem<'_, S>],
        class_weights: [f64; 2],
        rng: &mut R,
    ) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let nb = self.backbones.len();
        let train_backbone: Vec<bool> = self
            .backbones
            .iter()
            .map(|b| b.parameters().iter().any(|(_, p)| p.trainable))
            .collect();

        // Per item, per branch: backbone cache (if any) and ConvLSTM caches.
        let mut bb_caches: Vec<Vec<Option<BackboneCache<S>>>> = Vec::with_capacity(batch.len());
        let mut lstm_caches: Vec<Vec<Vec<SequenceCache<S>>>> = Vec::with_capacity(batch.len());
        let mut states: Vec<Vec<Tensor<S>>> = vec![Vec::with_capacity(batch.len()); nb];
        for item in batch {
            let mut bc = Vec::with_capacity(nb);
            let mut lc = Vec::with_capacity(nb);
            let feats: Vec<Tensor<S>> = match item.features {
                Some(f) if f.len() == nb => {
                    bc.extend((0..nb).map(|_| None));
                    f.to_vec()
                }
                Some(f) => {
                    return Err(Error::Data(format!("expected {nb} feature maps, got {}", f.len())));
                }
                None => {
                    let xs = self.inputs(item.rgb, item.flow)?;
                    let mut out = Vec::with_capacity(nb);
                    for (b, x) in xs.into_iter().enumerate() {
                        if train_backbone[b] {
                            let (y, c) = self.backbones[b].forward_train(x)?;
                            bc.push(Some(c));
                            out.push(y);
                        } else {
                            bc.push(None);
                            out.push(self.backbones[b].forward(x)?);
                        }
                    }
                    out
                }
            };
            for (b, f) in feats.iter().enumerate() {
                let (h, c) = self.head.branches[b].forward_lstm_train(f)?;
                states[b].push(h);
                lc.push(c);
            }
            bb_caches.push(bc);
            lstm_caches.push(lc);
        }

        let mut bn_caches = Vec::with_capacity(nb);
        let mut normed: Vec<Vec<Tensor<S>>> = Vec::with_capacity(nb);
        for (b, hs) in states.iter().enumerate() {
            match &mut self.head.branches[b].bn {
                Some(bn) => {
                    let (y, c) = bn.forward_train(hs)?;
                    normed.push(y);
                    bn_caches.push(Some(c));
                }
                None => {
                    normed.push(hs.clone());
                    bn_caches.push(None);
                }
            }
        }

        let n = batch.len() as f64;
        let mut stats = BatchStats::default();
        let widths: Vec<usize> = self.head.branches.iter().map(|b| b.out_channels()).collect();
        let mut grad_states: Vec<Vec<Tensor<S>>> = vec![Vec::with_capacity(batch.len()); nb];
        for (i, item) in batch.iter().enumerate() {
            let pooled = (0..nb).map(|b| gap2d(&normed[b][i])).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Tensor<S>> = pooled.iter().collect();
            let fused = Tensor::concat_last(&refs)?;
            let (z, cache) = self.head.classifier.forward_train(&fused, Some(&mut *rng))?;
            let p = softmax2(z)?;
            let w = S::from_f64_lossy(class_weights[item.label.index()]);
            let loss = cross_entropy(p, item.label, w).as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss of batch item {i}")));
            }
            stats.loss_sum += loss;
            stats.count += 1;
            let predicted = if p[0] >= p[1] { Label::Accident } else { Label::Normal };
            if predicted == item.label {
                stats.correct += 1;
            }
            let scale = S::from_f64_lossy(1.0 / n);
            let g = cross_entropy_grad(p, item.label, w);
            let dfused = self.head.classifier.backward(&cache, [g[0] * scale, g[1] * scale])?;
            for (b, part) in dfused.split_last(&widths)?.into_iter().enumerate() {
                grad_states[b].push(gap2d_backward(normed[b][i].dims(), &part)?);
            }
        }

        for b in 0..nb {
            let grads = match &bn_caches[b] {
                Some(c) => self.head.branches[b]
                    .bn
                    .as_mut()
                    .expect("cache implies batch norm")
                    .backward(c, &grad_states[b])?,
                None => std::mem::take(&mut grad_states[b]),
            };
            for (i, g) in grads.iter().enumerate() {
                let need_input = bb_caches[i][b].is_some();
                let dx = self.head.branches[b].backward_lstm(&lstm_caches[i][b], g, need_input)?;
                if let (Some(c), Some(dx)) = (&bb_caches[i][b], dx) {
                    self.backbones[b].backward(c, &dx, false)?;
                }
            }
        }
        Ok(stats)
    }

    /// Every parameter with a stable dotted name.
    pub fn parameters(&self) -> Vec<(String, &Parameter<S>)> {
        let mut out = Vec::new();
        for (b, s) in self.backbones.iter().zip(&self.config.streams) {
            out.extend(b.parameters().into_iter().map(|(n, p)| (format!("{s}.{n}"), p)));
        }
        for br in &self.head.branches {
            out.extend(br.parameters().into_iter().map(|(n, p)| (format!("head.{}.{n}", br.stream), p)));
        }
        out.extend(
            self.head
                .classifier
                .parameters()
                .into_iter()
                .map(|(n, p)| (format!("classifier.{n}"), p)),
        );
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter<S>)> {
        let mut out = Vec::new();
        for (b, s) in self.backbones.iter_mut().zip(&self.config.streams) {
            out.extend(b.parameters_mut().into_iter().map(|(n, p)| (format!("{s}.{n}"), p)));
        }
        for br in &mut self.head.branches {
            let stream = br.stream;
            out.extend(br.parameters_mut().into_iter().map(|(n, p)| (format!("head.{stream}.{n}"), p)));
        }
        out.extend(
            self.head
                .classifier
                .parameters_mut()
                .into_iter()
                .map(|(n, p)| (format!("classifier.{n}"), p)),
        );
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// `(total, trainable)` parameter element counts.
    pub fn param_count(&self) -> (usize, usize) {
        self.parameters()
            .iter()
            .fold((0, 0), |(t, tr), (_, p)| (t + p.len(), tr + if p.trainable { p.len() } else { 0 }))
    }

    /// Parameters plus batch-norm running statistics, for serialisation.
    pub fn state(&self) -> Vec<(String, Tensor<S>)> {
        let mut out: Vec<(String, Tensor<S>)> = self.parameters().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        for br in &self.head.branches {
            if let Some(bn) = &br.bn {
                out.push((format!("head.{}.bn.running_mean", br.stream), bn.running_mean.clone()));
                out.push((format!("head.{}.bn.running_var", br.stream), bn.running_var.clone()));
            }
        }
        out
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            backbones: self.backbones.iter().map(|b| b.cast()).collect(),
            head: self.head.cast(),
        }
    }
}

fn to_prediction<S: Scalar>(z: [S; 2]) -> Result<Prediction> {
    let p = softmax2(z)?;
    Ok(Prediction {
        p_accident: p[0].as_f64(),
        p_normal: p[1].as_f64(),
        logits: [z[0].as_f64(), z[1].as_f64()],
    })
}

impl Model<f32> {
    /// Write `variant.cfg`, one TNSR file per tensor and `index.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let state = self.state();
        let named: Vec<(String, &Tensor<f32>)> = state.iter().map(|(n, t)| (n.clone(), t)).collect();
        tensor_file::save_named(dir, &named)?;
        let cfg = dir.join(VARIANT_FILE);
        std::fs::write(&cfg, self.config.to_text()).map_err(|e| Error::io(&cfg, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = ModelConfig::load(&dir.join(VARIANT_FILE))?;
        let mut model = Model::build(config, 0)?;
        let mut tensors: std::collections::HashMap<String, Tensor<f32>> = tensor_file::load_named(dir)?.into_iter().collect();
        let mut take = |name: &str, dims: &[usize]| -> Result<Tensor<f32>> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::Data(format!("{}: weights missing tensor {name}", dir.display())))?;
            t.expect_dims(dims, name)?;
            Ok(t)
        };
        for (name, p) in model.parameters_mut() {
            p.value = take(&name, p.value.dims())?;
        }
        for br in &mut model.head.branches {
            let stream = br.stream;
            if let Some(bn) = &mut br.bn {
                bn.running_mean = take(&format!("head.{stream}.bn.running_mean"), bn.running_mean.dims())?;
                bn.running_var = take(&format!("head.{stream}.bn.running_var"), bn.running_var.dims())?;
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Data(format!("{}: unexpected tensor {extra}", dir.display())));
        }
        Ok(model)
    }
}
