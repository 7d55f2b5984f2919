use rand::Rng;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// A learnable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<S: Scalar = f32> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(value: Tensor<S>) -> Self {
        let grad = value.zeros_like();
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Ok(Self::new(Tensor::zeros(dims)?))
    }

    /// He-style uniform initialisation: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn he_uniform<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, fan_in: usize, rng: &mut R) -> Result<Self> {
        let limit = (6.0 / fan_in.max(1) as f64).sqrt();
        Ok(Self::new(Tensor::random_uniform(dims, -limit, limit, rng)?))
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    /// Add `delta` into the gradient, a no-op for frozen parameters.
    pub fn accumulate(&mut self, delta: &[S]) {
        if !self.trainable {
            return;
        }
        assert_eq!(delta.len(), self.grad.len(), "gradient length mismatch");
        for (g, &d) in self.grad.data_mut().iter_mut().zip(delta) {
            *g = *g + d;
        }
    }

    pub fn cast<T: Scalar>(&self) -> Parameter<T> {
        Parameter {
            value: self.value.cast(),
            grad: self.grad.cast(),
            trainable: self.trainable,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_grad_and_frozen_accumulate() {
        let mut p = Parameter::<f64>::zeros(vec![3]).unwrap();
        p.accumulate(&[1.0, 2.0, 3.0]);
        assert_eq!(p.grad.data(), &[1.0, 2.0, 3.0]);
        p.zero_grad();
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
        p.trainable = false;
        p.accumulate(&[1.0, 1.0, 1.0]);
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn he_uniform_respects_bound_and_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = Parameter::<f32>::he_uniform(vec![4, 6], 24, &mut r1).unwrap();
        let b = Parameter::<f32>::he_uniform(vec![4, 6], 24, &mut r2).unwrap();
        assert_eq!(a.value, b.value);
        let limit = (6.0f32 / 24.0).sqrt();
        assert!(a.value.data().iter().all(|x| x.abs() <= limit));
    }
}
