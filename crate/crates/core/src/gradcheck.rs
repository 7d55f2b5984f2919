//! Central finite-difference verification of hand-written backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Elements per tensor above which a random subsample is checked.
pub const SUBSAMPLE_ABOVE: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    /// `(tensor index, element index)` of the largest error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn merge(mut self, other: GradCheckReport) -> GradCheckReport {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.tolerance = self.tolerance.min(other.tolerance);
        self
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `analytic[i]` against central differences of `loss` w.r.t. each
/// element of `inputs[i]`. `inputs` is perturbed in place and restored.
pub fn grad_check<F>(
    inputs: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    mut loss: F,
    epsilon: f64,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        tolerance,
        worst: None,
    };
    for ti in 0..inputs.len() {
        assert_eq!(inputs[ti].dims(), analytic[ti].dims(), "gradient dims for input {ti}");
        let n = inputs[ti].len();
        let elements: Vec<usize> = if n > SUBSAMPLE_ABOVE {
            let mut picked = sample(&mut rng, n, SUBSAMPLE_ABOVE).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..n).collect()
        };
        for e in elements {
            let orig = inputs[ti].data()[e];
            inputs[ti].data_mut()[e] = orig + epsilon;
            let plus = loss(inputs);
            inputs[ti].data_mut()[e] = orig - epsilon;
            let minus = loss(inputs);
            inputs[ti].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[ti].data()[e], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, e));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let mut x = vec![Tensor::<f64>::scalar_vec(&[1.0, -2.0, 0.5]).unwrap()];
        let good = vec![x[0].map(|v| 2.0 * v)];
        let f = |t: &[Tensor<f64>]| t[0].data().iter().map(|v| v * v).sum::<f64>();
        let r = grad_check(&mut x, &good, f, 1e-5, 1e-6, 0);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 3);
        let bad = vec![x[0].map(|v| 2.0 * v + 0.1)];
        let r = grad_check(&mut x, &bad, f, 1e-5, 1e-6, 0);
        assert!(!r.passed());
        // inputs restored
        assert_eq!(x[0].data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
