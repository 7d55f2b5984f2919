use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Global average pooling of an `H×W×C` map to a length-`C` vector.
pub fn gap2d<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    x.expect_rank(3, "gap2d input (H×W×C)")?;
    let c = x.dims()[2];
    let hw = x.dims()[0] * x.dims()[1];
    let mut acc = vec![S::zero(); c];
    for px in x.data().chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a = *a + v;
        }
    }
    let scale = S::one() / S::from_usize(hw).unwrap();
    Tensor::new(vec![c], acc.into_iter().map(|a| a * scale).collect())
}

/// Spread each channel gradient uniformly over the `H×W` positions.
pub fn gap2d_backward<S: Scalar>(input_dims: &[usize], grad_output: &Tensor<S>) -> Result<Tensor<S>> {
    let hw = input_dims[0] * input_dims[1];
    let scale = S::one() / S::from_usize(hw).unwrap();
    let g: Vec<S> = grad_output.data().iter().map(|&v| v * scale).collect();
    let mut out = Vec::with_capacity(hw * g.len());
    for _ in 0..hw {
        out.extend_from_slice(&g);
    }
    Tensor::new(input_dims.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_mean() {
        let x = Tensor::<f64>::full(vec![3, 4, 2], 2.25).unwrap();
        assert_eq!(gap2d(&x).unwrap().data(), &[2.25, 2.25]);
        let x = Tensor::<f64>::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap2d(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn backward_is_uniform() {
        let g = Tensor::<f64>::scalar_vec(&[4.0, -8.0]).unwrap();
        let dx = gap2d_backward(&[2, 2, 2], &g).unwrap();
        assert_eq!(dx.data(), &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);
    }
}
