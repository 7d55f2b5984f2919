//! Per-channel batch normalisation over channels-last maps.

use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<S: Scalar = f32> {
    pub gamma: Parameter<S>,
    pub beta: Parameter<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Saved state from a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<S: Scalar> {
    normalized: Vec<Tensor<S>>,
    inv_std: Vec<S>,
}

impl<S: Scalar> BatchNorm2d<S> {
    /// Scale 1, shift 0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Parameter::new(Tensor::full(vec![channels], S::one())?),
            beta: Parameter::zeros(vec![channels])?,
            running_mean: Tensor::zeros(vec![channels])?,
            running_var: Tensor::full(vec![channels], S::one())?,
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<S>) -> Result<()> {
        let c = *x.dims().last().unwrap();
        if c != self.channels() {
            return Err(Error::ChannelMismatch {
                expected: self.channels(),
                got: c,
            });
        }
        Ok(())
    }

    /// Normalise with the running statistics.
    pub fn forward_infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check(x)?;
        let eps = S::from_f64_lossy(self.epsilon);
        let c = self.channels();
        let scale: Vec<S> = (0..c)
            .map(|k| self.gamma.value.data()[k] / (self.running_var.data()[k] + eps).sqrt())
            .collect();
        let mut out = x.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for k in 0..c {
                px[k] = (px[k] - self.running_mean.data()[k]) * scale[k] + self.beta.value.data()[k];
            }
        }
        Ok(out)
    }

    /// Normalise each channel with statistics over every sample and position
    /// of the batch, then fold the batch statistics into the running ones.
    pub fn forward_train(&mut self, batch: &[Tensor<S>]) -> Result<(Vec<Tensor<S>>, BatchNormCache<S>)> {
        let first = batch
            .first()
            .ok_or_else(|| Error::invalid("batch norm in train mode needs a non-empty batch"))?;
        for x in batch {
            self.check(x)?;
            x.expect_dims(first.dims(), "batch norm batch")?;
        }
        let c = self.channels();
        let count = batch.iter().map(|x| x.len() / c).sum::<usize>();
        let m = S::from_usize(count).unwrap();
        let mut mean = vec![S::zero(); c];
        for x in batch {
            for px in x.data().chunks_exact(c) {
                for k in 0..c {
                    mean[k] = mean[k] + px[k];
                }
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / m);
        let mut var = vec![S::zero(); c];
        for x in batch {
            for px in x.data().chunks_exact(c) {
                for k in 0..c {
                    let d = px[k] - mean[k];
                    var[k] = var[k] + d * d;
                }
            }
        }
        var.iter_mut().for_each(|v| *v = *v / m);
        let eps = S::from_f64_lossy(self.epsilon);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();

        let mut normalized = Vec::with_capacity(batch.len());
        let mut outputs = Vec::with_capacity(batch.len());
        for x in batch {
            let mut xhat = x.clone();
            let mut y = x.clone();
            for (hp, yp) in xhat.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
                for k in 0..c {
                    hp[k] = (hp[k] - mean[k]) * inv_std[k];
                    yp[k] = hp[k] * self.gamma.value.data()[k] + self.beta.value.data()[k];
                }
            }
            normalized.push(xhat);
            outputs.push(y);
        }

        let mo = S::from_f64_lossy(self.momentum);
        for k in 0..c {
            let rm = &mut self.running_mean.data_mut()[k];
            *rm = (S::one() - mo) * *rm + mo * mean[k];
            let rv = &mut self.running_var.data_mut()[k];
            *rv = (S::one() - mo) * *rv + mo * var[k];
        }
        Ok((outputs, BatchNormCache { normalized, inv_std }))
    }

    /// Backward through a train-mode forward: accumulates scale/shift
    /// gradients and returns the per-sample input gradients.
    pub fn backward(&mut self, cache: &BatchNormCache<S>, grad_output: &[Tensor<S>]) -> Result<Vec<Tensor<S>>> {
        if grad_output.len() != cache.normalized.len() {
            return Err(Error::shape("batch norm backward: batch size mismatch"));
        }
        let c = self.channels();
        let mut sum_dy = vec![S::zero(); c];
        let mut sum_dy_xhat = vec![S::zero(); c];
        let mut count = 0usize;
        for (g, xh) in grad_output.iter().zip(&cache.normalized) {
            g.expect_dims(xh.dims(), "batch norm grad")?;
            for (gp, hp) in g.data().chunks_exact(c).zip(xh.data().chunks_exact(c)) {
                for k in 0..c {
                    sum_dy[k] = sum_dy[k] + gp[k];
                    sum_dy_xhat[k] = sum_dy_xhat[k] + gp[k] * hp[k];
                }
                count += 1;
            }
        }
        self.gamma.accumulate(&sum_dy_xhat);
        self.beta.accumulate(&sum_dy);

        let m = S::from_usize(count).unwrap();
        let mut out = Vec::with_capacity(grad_output.len());
        for (g, xh) in grad_output.iter().zip(&cache.normalized) {
            let mut dx = g.clone();
            for (dp, hp) in dx.data_mut().chunks_exact_mut(c).zip(xh.data().chunks_exact(c)) {
                for k in 0..c {
                    let scale = self.gamma.value.data()[k] * cache.inv_std[k] / m;
                    dp[k] = scale * (m * dp[k] - sum_dy[k] - hp[k] * sum_dy_xhat[k]);
                }
            }
            out.push(dx);
        }
        Ok(out)
    }

    pub fn cast<T: Scalar>(&self) -> BatchNorm2d<T> {
        BatchNorm2d {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            epsilon: self.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_mode_defaults_are_near_identity() {
        let bn = BatchNorm2d::<f64>::new(3).unwrap();
        let x = Tensor::<f64>::from_fn(vec![2, 2, 3], |i| i as f64 - 5.0).unwrap();
        let y = bn.forward_infer(&x).unwrap();
        let scale = 1.0 / (1.0 + DEFAULT_EPSILON).sqrt();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a * scale - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_sample_batch() {
        let mut bn = BatchNorm2d::<f64>::new(2).unwrap();
        let a = Tensor::<f64>::full(vec![1, 1, 2], -1.0).unwrap();
        let b = Tensor::<f64>::full(vec![1, 1, 2], 1.0).unwrap();
        let (out, _) = bn.forward_train(&[a, b]).unwrap();
        let expected = 1.0 / (1.0 + DEFAULT_EPSILON).sqrt();
        assert!((out[0].data()[0] + expected).abs() < 1e-12);
        assert!((out[1].data()[1] - expected).abs() < 1e-12);
        // running stats: mean stays 0, var moves toward 1 (batch var is 1)
        assert!(bn.running_mean.data()[0].abs() < 1e-15);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_and_channel_mismatch() {
        let mut bn = BatchNorm2d::<f32>::new(2).unwrap();
        assert!(bn.forward_train(&[]).is_err());
        let x = Tensor::<f32>::zeros(vec![2, 2, 3]).unwrap();
        assert!(bn.forward_infer(&x).is_err());
    }
}
