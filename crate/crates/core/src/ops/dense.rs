use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

fn check(x: &Tensor<impl Scalar>, weights: &Tensor<impl Scalar>, bias: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    weights.expect_rank(2, "dense weights (n×m)")?;
    let (n, m) = (weights.dims()[0], weights.dims()[1]);
    if x.len() != n {
        return Err(Error::shape(format!(
            "dense: input length {} vs weights {:?}",
            x.len(),
            weights.dims()
        )));
    }
    if bias.len() != m {
        return Err(Error::shape(format!("dense: bias length {} vs {m} outputs", bias.len())));
    }
    Ok((n, m))
}

/// `y_j = Σ_i x_i·W_ij + b_j`.
pub fn dense<S: Scalar>(x: &Tensor<S>, weights: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, m) = check(x, weights, bias)?;
    let mut y = bias.data().to_vec();
    gemm(1, n, m, x.data(), false, weights.data(), false, &mut y, true);
    Tensor::new(vec![m], y)
}

/// Returns `(dx, dW, db)`.
pub fn dense_backward<S: Scalar>(x: &Tensor<S>, weights: &Tensor<S>, grad_output: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    weights.expect_rank(2, "dense weights (n×m)")?;
    let (n, m) = (weights.dims()[0], weights.dims()[1]);
    if x.len() != n || grad_output.len() != m {
        return Err(Error::shape("dense_backward: length mismatch"));
    }
    let mut dw = vec![S::zero(); n * m];
    gemm(n, 1, m, x.data(), false, grad_output.data(), false, &mut dw, false);
    let mut dx = vec![S::zero(); n];
    gemm(1, m, n, grad_output.data(), false, weights.data(), true, &mut dx, false);
    Ok((
        Tensor::new(vec![n], dx)?,
        Tensor::new(vec![n, m], dw)?,
        Tensor::new(vec![m], grad_output.data().to_vec())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_arithmetic() {
        let x = Tensor::<f64>::scalar_vec(&[1.0, 2.0]).unwrap();
        let w = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero = Tensor::<f64>::zeros(vec![2]).unwrap();
        assert_eq!(dense(&x, &w, &zero).unwrap(), x);
        let b = Tensor::<f64>::scalar_vec(&[1.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn length_mismatch() {
        let x = Tensor::<f32>::zeros(vec![3]).unwrap();
        let w = Tensor::<f32>::zeros(vec![2, 2]).unwrap();
        let b = Tensor::<f32>::zeros(vec![2]).unwrap();
        assert!(dense(&x, &w, &b).is_err());
    }
}
