use std::str::FromStr;

use crate::error::Error;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl Activation {
    pub fn apply_scalar<S: Scalar>(self, x: S) -> S {
        match self {
            Self::Sigmoid => sigmoid(x),
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(S::zero()),
        }
    }

    /// Derivative expressed through the forward output `y`.
    pub fn derivative_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Self::Sigmoid => y * (S::one() - y),
            Self::Tanh => S::one() - y * y,
            Self::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }

    pub fn forward<S: Scalar>(self, x: &Tensor<S>) -> Tensor<S> {
        x.map(|v| self.apply_scalar(v))
    }

    pub fn backward<S: Scalar>(self, output: &Tensor<S>, grad_output: &Tensor<S>) -> crate::Result<Tensor<S>> {
        output.zip_map(grad_output, |y, g| g * self.derivative_from_output(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(3.0f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(Activation::Tanh.apply_scalar(0.0f64), 0.0);
        assert_eq!(Activation::Relu.apply_scalar(-3.0f64), 0.0);
        assert!(sigmoid(-1000.0f64) >= 0.0 && sigmoid(1000.0f64) <= 1.0);
    }

    #[test]
    fn ranges_hold() {
        let x = Tensor::<f32>::from_fn(vec![101], |i| (i as f32 - 50.0) * 0.3).unwrap();
        let s = Activation::Sigmoid.forward(&x);
        let t = Activation::Tanh.forward(&x);
        let r = Activation::Relu.forward(&x);
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(r.data().iter().all(|&v| v >= 0.0));
    }
}
