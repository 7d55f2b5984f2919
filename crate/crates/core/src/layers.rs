//! Convolution and dense layers: kernels plus bias parameters.

use rand::Rng;

use crate::error::Result;
use crate::ops::conv::{conv3d_backward_with, conv3d_with, ConvGeometry};
use crate::ops::{dense, dense_backward, Padding};
use crate::param::Parameter;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Conv3dLayer<S: Scalar = f32> {
    pub kernel: Parameter<S>,
    pub bias: Parameter<S>,
    pub strides: [usize; 3],
    pub padding: Padding,
}

impl<S: Scalar> Conv3dLayer<S> {
    pub fn new<R: Rng + ?Sized>(
        kernel: [usize; 3],
        in_channels: usize,
        filters: usize,
        strides: [usize; 3],
        padding: Padding,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = kernel.iter().product::<usize>() * in_channels;
        Ok(Self {
            kernel: Parameter::he_uniform(vec![kernel[0], kernel[1], kernel[2], in_channels, filters], fan_in, rng)?,
            bias: Parameter::zeros(vec![filters])?,
            strides,
            padding,
        })
    }

    pub fn filters(&self) -> usize {
        self.kernel.dims()[4]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[3]
    }

    pub fn geometry(&self, input_dims: &[usize]) -> Result<ConvGeometry> {
        if input_dims.len() != 4 {
            return Err(crate::Error::shape(format!("conv3d input must be T×H×W×C, got {input_dims:?}")));
        }
        ConvGeometry::new(
            [input_dims[0], input_dims[1], input_dims[2], input_dims[3]],
            self.kernel.dims(),
            self.strides,
            self.padding,
        )
    }

    pub fn output_dims(&self, input_dims: &[usize]) -> Result<Vec<usize>> {
        Ok(self.geometry(input_dims)?.output_dims())
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let geo = self.geometry(x.dims())?;
        let mut out = conv3d_with(&geo, x.data(), self.kernel.value.data())?;
        let f = geo.filters;
        let b = self.bias.value.data();
        for px in out.chunks_exact_mut(f) {
            for (v, &bb) in px.iter_mut().zip(b) {
                *v = *v + bb;
            }
        }
        Tensor::new(geo.output_dims(), out)
    }

    /// Accumulate parameter gradients (when trainable) and return the input
    /// gradient when `want_input` is set.
    pub fn backward(&mut self, x: &Tensor<S>, grad_output: &Tensor<S>, want_input: bool) -> Result<Option<Tensor<S>>> {
        let geo = self.geometry(x.dims())?;
        grad_output.expect_dims(&geo.output_dims(), "conv3d layer grad")?;
        let trainable = self.kernel.trainable;
        let (gi, gk) = conv3d_backward_with(&geo, x.data(), self.kernel.value.data(), grad_output.data(), want_input, trainable);
        if let Some(gk) = gk {
            self.kernel.accumulate(&gk);
        }
        if self.bias.trainable {
            let f = geo.filters;
            let mut gb = vec![S::zero(); f];
            for px in grad_output.data().chunks_exact(f) {
                for (g, &v) in gb.iter_mut().zip(px) {
                    *g = *g + v;
                }
            }
            self.bias.accumulate(&gb);
        }
        gi.map(|d| Tensor::new(x.dims().to_vec(), d)).transpose()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.kernel.trainable = trainable;
        self.bias.trainable = trainable;
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn cast<T: Scalar>(&self) -> Conv3dLayer<T> {
        Conv3dLayer {
            kernel: self.kernel.cast(),
            bias: self.bias.cast(),
            strides: self.strides,
            padding: self.padding,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer<S: Scalar = f32> {
    pub weights: Parameter<S>,
    pub bias: Parameter<S>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            weights: Parameter::he_uniform(vec![inputs, outputs], inputs, rng)?,
            bias: Parameter::zeros(vec![outputs])?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        dense(x, &self.weights.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor<S>, grad_output: &Tensor<S>) -> Result<Tensor<S>> {
        let (dx, dw, db) = dense_backward(x, &self.weights.value, grad_output)?;
        self.weights.accumulate(dw.data());
        self.bias.accumulate(db.data());
        Ok(dx)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<T: Scalar>(&self) -> DenseLayer<T> {
        DenseLayer {
            weights: self.weights.cast(),
            bias: self.bias.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = DenseLayer::<f32>::new(4, 3, &mut rng).unwrap();
        assert_eq!(d.param_count(), 15);
        let c = Conv3dLayer::<f32>::new([3, 3, 3], 2, 4, [1, 1, 1], Padding::Same, &mut rng).unwrap();
        assert_eq!(c.param_count(), 220);
    }

    #[test]
    fn zero_input_gives_bias_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Conv3dLayer::<f64>::new([3, 3, 3], 2, 3, [2, 2, 2], Padding::Same, &mut rng).unwrap();
        c.bias.value = Tensor::scalar_vec(&[0.5, -1.0, 2.0]).unwrap();
        let y = c.forward(&Tensor::zeros(vec![4, 5, 5, 2]).unwrap()).unwrap();
        assert_eq!(y.dims(), &[2, 3, 3, 3]);
        for px in y.data().chunks_exact(3) {
            assert_eq!(px, &[0.5, -1.0, 2.0]);
        }
    }
}
