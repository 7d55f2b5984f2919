//! Classification head: per-branch ConvLSTM stacks, optional batch norm,
//! global average pooling, concatenation fusion and a dense ReLU stack
//! ending in a two-way softmax.

use rand::Rng;

use crate::backbone::Stream;
use crate::convlstm::{ConvLstmLayer, SequenceCache};
use crate::error::{Error, Result};
use crate::layers::DenseLayer;
use crate::ops::BatchNorm2d;
use crate::param::Parameter;
use crate::tensor::{Scalar, Tensor};

pub const CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// ConvLSTM filter counts, first layer first. Every layer but the last
    /// returns full sequences; the last returns `H_T` only.
    pub filters: Vec<usize>,
    /// Square ConvLSTM kernel extent.
    pub kernel: usize,
    pub batchnorm_before_gap: bool,
    pub dense: Vec<usize>,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            filters: vec![64, 32, 32],
            kernel: 3,
            batchnorm_before_gap: false,
            dense: vec![256, 128, 128],
            dropout: 0.3,
        }
    }
}

impl HeadConfig {
    /// Extra first-layer filters, batch norm before pooling and a wider dense stack.
    pub fn trainable_variant() -> Self {
        Self {
            filters: vec![96, 32, 32],
            kernel: 3,
            batchnorm_before_gap: true,
            dense: vec![512, 256, 256],
            dropout: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::Config("head needs at least one ConvLSTM layer".into()));
        }
        if self.filters.contains(&0) || self.dense.contains(&0) {
            return Err(Error::Config("head filter counts and dense widths must be positive".into()));
        }
        if self.kernel == 0 {
            return Err(Error::Config("ConvLSTM kernel must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form parameter count of one branch over `in_channels` features.
    pub fn branch_param_count(&self, in_channels: usize) -> usize {
        let k2 = self.kernel * self.kernel;
        let mut c = in_channels;
        let mut total = 0;
        for &f in &self.filters {
            total += 4 * (k2 * c * f + k2 * f * f + f);
            c = f;
        }
        if self.batchnorm_before_gap {
            total += 2 * c;
        }
        total
    }

    pub fn classifier_param_count(&self, fused: usize) -> usize {
        let mut n = fused;
        let mut total = 0;
        for &m in self.dense.iter().chain(std::iter::once(&CLASSES)) {
            total += n * m + m;
            n = m;
        }
        total
    }
}

#[derive(Clone, Debug)]
pub struct BranchHead<S: Scalar = f32> {
    pub stream: Stream,
    pub lstm: Vec<ConvLstmLayer<S>>,
    pub bn: Option<BatchNorm2d<S>>,
}

impl<S: Scalar> BranchHead<S> {
    pub fn new<R: Rng + ?Sized>(config: &HeadConfig, stream: Stream, in_channels: usize, rng: &mut R) -> Result<Self> {
        let mut c = in_channels;
        let n = config.filters.len();
        let mut lstm = Vec::with_capacity(n);
        for (i, &f) in config.filters.iter().enumerate() {
            lstm.push(ConvLstmLayer::new(config.kernel, c, f, i + 1 < n, rng)?);
            c = f;
        }
        let bn = if config.batchnorm_before_gap {
            Some(BatchNorm2d::new(c)?)
        } else {
            None
        };
        Ok(Self { stream, lstm, bn })
    }

    pub fn out_channels(&self) -> usize {
        self.lstm.last().map(|l| l.filters()).unwrap_or(0)
    }

    /// ConvLSTM stack over a `T×H×W×C` feature map, returning the final `H×W×F` state.
    pub fn forward_lstm(&self, features: &Tensor<S>) -> Result<Tensor<S>> {
        let mut cur = features.clone();
        for l in &self.lstm {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_lstm_train(&self, features: &Tensor<S>) -> Result<(Tensor<S>, Vec<SequenceCache<S>>)> {
        let mut cur = features.clone();
        let mut caches = Vec::with_capacity(self.lstm.len());
        for l in &self.lstm {
            let (y, c) = l.forward_train(&cur)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    pub fn backward_lstm(&mut self, caches: &[SequenceCache<S>], grad: &Tensor<S>, want_input: bool) -> Result<Option<Tensor<S>>> {
        let mut g = grad.clone();
        for (i, (l, c)) in self.lstm.iter_mut().zip(caches).enumerate().rev() {
            match l.backward(c, &g, i > 0 || want_input)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn parameters(&self) -> Vec<(String, &Parameter<S>)> {
        let mut out = Vec::new();
        for (i, l) in self.lstm.iter().enumerate() {
            for (n, p) in l.weights.parameters() {
                out.push((format!("lstm{i}.{n}"), p));
            }
        }
        if let Some(bn) = &self.bn {
            out.push(("bn.gamma".into(), &bn.gamma));
            out.push(("bn.beta".into(), &bn.beta));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter<S>)> {
        let mut out = Vec::new();
        for (i, l) in self.lstm.iter_mut().enumerate() {
            for (n, p) in l.weights.parameters_mut() {
                out.push((format!("lstm{i}.{n}"), p));
            }
        }
        if let Some(bn) = &mut self.bn {
            out.push(("bn.gamma".into(), &mut bn.gamma));
            out.push(("bn.beta".into(), &mut bn.beta));
        }
        out
    }

    pub fn cast<T: Scalar>(&self) -> BranchHead<T> {
        BranchHead {
            stream: self.stream,
            lstm: self.lstm.iter().map(|l| l.cast()).collect(),
            bn: self.bn.as_ref().map(|b| b.cast()),
        }
    }
}

/// Concatenate pooled branch vectors, RGB first. A missing flow vector
/// passes the RGB vector through unchanged.
pub fn fuse<S: Scalar>(rgb: &Tensor<S>, flow: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    rgb.expect_rank(1, "fuse rgb vector")?;
    match flow {
        None => Ok(rgb.clone()),
        Some(f) => {
            f.expect_rank(1, "fuse flow vector")?;
            Tensor::concat_last(&[rgb, f])
        }
    }
}

/// Dense ReLU stack with inverted dropout, then the two-logit output layer.
#[derive(Clone, Debug)]
pub struct Classifier<S: Scalar = f32> {
    pub hidden: Vec<DenseLayer<S>>,
    pub output: DenseLayer<S>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct ClassifierCache<S: Scalar> {
    /// Input of each hidden layer and of the output layer.
    inputs: Vec<Tensor<S>>,
    /// Post-ReLU activations of each hidden layer (before dropout).
    activations: Vec<Tensor<S>>,
    /// Per-hidden-layer dropout multipliers (0 or 1/(1-p)).
    masks: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Classifier<S> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, widths: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        let mut n = inputs;
        let mut hidden = Vec::with_capacity(widths.len());
        for &m in widths {
            hidden.push(DenseLayer::new(n, m, rng)?);
            n = m;
        }
        Ok(Self {
            hidden,
            output: DenseLayer::new(n, CLASSES, rng)?,
            dropout,
        })
    }

    pub fn inputs(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).inputs()
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<[S; 2]> {
        let mut cur = x.clone();
        for l in &self.hidden {
            cur = l.forward(&cur)?.map(|v| v.max(S::zero()));
        }
        let z = self.output.forward(&cur)?;
        Ok([z.data()[0], z.data()[1]])
    }

    /// Train-mode forward. Dropout masks are drawn from `rng` when given.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor<S>, mut rng: Option<&mut R>) -> Result<([S; 2], ClassifierCache<S>)> {
        let mut cur = x.clone();
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut activations = Vec::with_capacity(self.hidden.len());
        let mut masks = Vec::with_capacity(self.hidden.len());
        let keep = 1.0 - self.dropout;
        for l in &self.hidden {
            inputs.push(cur.clone());
            let a = l.forward(&cur)?.map(|v| v.max(S::zero()));
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let scale = S::from_f64_lossy(1.0 / keep);
                    Some(
                        (0..a.len())
                            .map(|_| if r.gen::<f64>() < keep { scale } else { S::zero() })
                            .collect::<Vec<S>>(),
                    )
                }
                _ => None,
            };
            cur = match &mask {
                Some(m) => {
                    let mut d = a.clone();
                    for (v, &s) in d.data_mut().iter_mut().zip(m) {
                        *v = *v * s;
                    }
                    d
                }
                None => a.clone(),
            };
            activations.push(a);
            masks.push(mask);
        }
        inputs.push(cur.clone());
        let z = self.output.forward(&cur)?;
        Ok((
            [z.data()[0], z.data()[1]],
            ClassifierCache {
                inputs,
                activations,
                masks,
            },
        ))
    }

    /// Backward from logit gradients; returns the gradient w.r.t. the fused vector.
    pub fn backward(&mut self, cache: &ClassifierCache<S>, grad_logits: [S; 2]) -> Result<Tensor<S>> {
        let go = Tensor::new(vec![CLASSES], grad_logits.to_vec())?;
        let n = self.hidden.len();
        let mut g = self.output.backward(&cache.inputs[n], &go)?;
        for i in (0..n).rev() {
            if let Some(m) = &cache.masks[i] {
                for (v, &s) in g.data_mut().iter_mut().zip(m) {
                    *v = *v * s;
                }
            }
            for (v, &a) in g.data_mut().iter_mut().zip(cache.activations[i].data()) {
                if a <= S::zero() {
                    *v = S::zero();
                }
            }
            g = self.hidden[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }

    pub fn parameters(&self) -> Vec<(String, &Parameter<S>)> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            out.push((format!("dense{i}.weights"), &l.weights));
            out.push((format!("dense{i}.bias"), &l.bias));
        }
        out.push(("logits.weights".into(), &self.output.weights));
        out.push(("logits.bias".into(), &self.output.bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter<S>)> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter_mut().enumerate() {
            out.push((format!("dense{i}.weights"), &mut l.weights));
            out.push((format!("dense{i}.bias"), &mut l.bias));
        }
        out.push(("logits.weights".into(), &mut self.output.weights));
        out.push(("logits.bias".into(), &mut self.output.bias));
        out
    }

    pub fn cast<T: Scalar>(&self) -> Classifier<T> {
        Classifier {
            hidden: self.hidden.iter().map(|l| l.cast()).collect(),
            output: self.output.cast(),
            dropout: self.dropout,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Head<S: Scalar = f32> {
    pub config: HeadConfig,
    pub branches: Vec<BranchHead<S>>,
    pub classifier: Classifier<S>,
}

impl<S: Scalar> Head<S> {
    /// One branch per `(stream, backbone output T×H×W×C)` entry, RGB first.
    pub fn build<R: Rng + ?Sized>(config: HeadConfig, features: &[(Stream, Vec<usize>)], rng: &mut R) -> Result<Self> {
        config.validate()?;
        if features.is_empty() || features.len() > 2 {
            return Err(Error::Config(format!("head supports 1 or 2 branches, got {}", features.len())));
        }
        if features[0].0 != Stream::Rgb || features.get(1).is_some_and(|f| f.0 != Stream::Flow) {
            return Err(Error::Config("branches must be [rgb] or [rgb, flow]".into()));
        }
        let mut branches = Vec::with_capacity(features.len());
        for (stream, dims) in features {
            if dims.len() != 4 {
                return Err(Error::shape(format!("{stream} features must be T×H×W×C, got {dims:?}")));
            }
            branches.push(BranchHead::new(&config, *stream, dims[3], rng)?);
        }
        let fused = branches.iter().map(|b| b.out_channels()).sum();
        let classifier = Classifier::new(fused, &config.dense, config.dropout, rng)?;
        Ok(Self {
            config,
            branches,
            classifier,
        })
    }

    pub fn fused_len(&self) -> usize {
        self.branches.iter().map(|b| b.out_channels()).sum()
    }

    pub fn param_count(&self) -> usize {
        let b: usize = self.branches.iter().flat_map(|b| b.parameters()).map(|(_, p)| p.len()).sum();
        let c: usize = self.classifier.parameters().iter().map(|(_, p)| p.len()).sum();
        b + c
    }

    pub fn cast<T: Scalar>(&self) -> Head<T> {
        Head {
            config: self.config.clone(),
            branches: self.branches.iter().map(|b| b.cast()).collect(),
            classifier: self.classifier.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fuse_concatenates_rgb_first() {
        let a = Tensor::<f32>::scalar_vec(&[1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::scalar_vec(&[3.0]).unwrap();
        assert_eq!(fuse(&a, Some(&b)).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert_eq!(fuse(&a, None).unwrap(), a);
    }

    #[test]
    fn head_param_count_matches_closed_form() {
        // 64/32/32 with 3×3 kernels over 192 channels:
        // 4(9·192·64 + 9·64·64 + 64) + 4(9·64·32 + 9·32·32 + 32) + 4(9·32·32 + 9·32·32 + 32)
        let cfg = HeadConfig::default();
        assert_eq!(cfg.branch_param_count(192), 590_080 + 110_720 + 73_856);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = Head::<f32>::build(cfg.clone(), &[(Stream::Rgb, vec![4, 7, 7, 192])], &mut rng).unwrap();
        // dense 32→256→128→128→2
        let dense = 32 * 256 + 256 + 256 * 128 + 128 + 128 * 128 + 128 + 128 * 2 + 2;
        assert_eq!(cfg.classifier_param_count(32), dense);
        assert_eq!(head.param_count(), 774_656 + dense);
    }

    #[test]
    fn two_branch_fused_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = HeadConfig {
            filters: vec![4, 3],
            dense: vec![5],
            ..HeadConfig::default()
        };
        let head = Head::<f32>::build(cfg, &[(Stream::Rgb, vec![2, 3, 3, 6]), (Stream::Flow, vec![2, 3, 3, 6])], &mut rng).unwrap();
        assert_eq!(head.fused_len(), 6);
        assert_eq!(head.classifier.inputs(), 6);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = HeadConfig {
            filters: vec![],
            ..HeadConfig::default()
        };
        assert!(Head::<f32>::build(cfg, &[(Stream::Rgb, vec![2, 3, 3, 6])], &mut rng).is_err());
        assert!(Head::<f32>::build(HeadConfig::default(), &[(Stream::Flow, vec![2, 3, 3, 6])], &mut rng).is_err());
        assert!(Head::<f32>::build(HeadConfig::default(), &[(Stream::Rgb, vec![3, 3, 6])], &mut rng).is_err());
    }
}
