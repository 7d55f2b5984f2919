use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Binary class label. Logit/probability index 0 is the accident class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Accident,
    Normal,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Accident => 0,
            Label::Normal => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Accident),
            1 => Ok(Label::Normal),
            other => Err(Error::invalid(format!("label index {other} out of range"))),
        }
    }

    pub const ALL: [Label; 2] = [Label::Accident, Label::Normal];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Accident => "accident",
            Label::Normal => "normal",
        })
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accident" => Ok(Label::Accident),
            "normal" => Ok(Label::Normal),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Two-class softmax `(p_accident, p_normal)`.
///
/// The larger probability is computed from max-shifted exponentials and the
/// smaller one as its complement, so the pair always sums to exactly one.
pub fn softmax2<S: Scalar>(z: [S; 2]) -> Result<[S; 2]> {
    if !z[0].is_finite() || !z[1].is_finite() {
        return Err(Error::NonFinite("softmax2 logits".into()));
    }
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let sum = e0 + e1;
    if z[0] >= z[1] {
        let p0 = e0 / sum;
        Ok([p0, S::one() - p0])
    } else {
        let p1 = e1 / sum;
        Ok([S::one() - p1, p1])
    }
}

pub const PROB_FLOOR: f64 = 1e-12;

/// `-weight · ln(max(p_label, 1e-12))`.
pub fn cross_entropy<S: Scalar>(p: [S; 2], label: Label, weight: S) -> S {
    let pl = p[label.index()].max(S::from_f64_lossy(PROB_FLOOR));
    -weight * pl.ln()
}

/// Gradient of softmax followed by cross-entropy w.r.t. the logits: `weight·(p − onehot)`.
pub fn cross_entropy_grad<S: Scalar>(p: [S; 2], label: Label, weight: S) -> [S; 2] {
    let mut g = p;
    g[label.index()] = g[label.index()] - S::one();
    [g[0] * weight, g[1] * weight]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_reference_values() {
        assert_eq!(softmax2([3.0f64, 3.0]).unwrap(), [0.5, 0.5]);
        let p = softmax2([1000.0f64, 0.0]).unwrap();
        assert!(p[0] > 0.999_999 && p[1] < 1e-6 && p[0] + p[1] == 1.0);
        let p = softmax2([2.0f64, 0.0]).unwrap();
        assert!((p[0] - 0.880797).abs() < 1e-6 && (p[1] - 0.119203).abs() < 1e-6);
        assert!(softmax2([f64::NAN, 0.0]).is_err());
        assert!(softmax2([f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_reference_values() {
        assert_eq!(cross_entropy([1.0f64, 0.0], Label::Accident, 1.0), 0.0);
        let l = cross_entropy([0.5f64, 0.5], Label::Normal, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        // floor keeps the loss finite
        assert!(cross_entropy([1.0f64, 0.0], Label::Normal, 1.0).is_finite());
    }

    #[test]
    fn labels_parse() {
        assert_eq!("accident".parse::<Label>().unwrap(), Label::Accident);
        assert!("crash".parse::<Label>().is_err());
    }
}
