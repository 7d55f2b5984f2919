//! Independent references for the integration and acceptance suites.
//! Written directly from the definitions, with no calls into the kernels
//! they check.

#![allow(dead_code)]

use rand::Rng;
use roadwatch::ops::conv::Padding;
use roadwatch::Tensor;

/// Extent and leading pad of one axis.
pub fn axis(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, isize) {
    match padding {
        Padding::Valid => ((input - k) / stride + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            (out, (total / 2) as isize)
        }
    }
}

/// Nested-loop 3D convolution in f64: `T×H×W×C` input, `Kt×Kh×Kw×C×F` kernel.
pub fn conv3d_ref(x: &[f64], xd: [usize; 4], k: &[f64], kd: [usize; 5], strides: [usize; 3], padding: Padding) -> (Vec<f64>, [usize; 4]) {
    let [t, h, w, c] = xd;
    let [kt, kh, kw, _, f] = kd;
    let (ot, pt) = axis(t, kt, strides[0], padding);
    let (oh, ph) = axis(h, kh, strides[1], padding);
    let (ow, pw) = axis(w, kw, strides[2], padding);
    let mut out = vec![0.0; ot * oh * ow * f];
    for a in 0..ot {
        for b in 0..oh {
            for d in 0..ow {
                for ff in 0..f {
                    let mut s = 0.0;
                    for i in 0..kt {
                        for j in 0..kh {
                            for l in 0..kw {
                                let ti = (a * strides[0] + i) as isize - pt;
                                let yi = (b * strides[1] + j) as isize - ph;
                                let xi = (d * strides[2] + l) as isize - pw;
                                if ti < 0 || yi < 0 || xi < 0 || ti >= t as isize || yi >= h as isize || xi >= w as isize {
                                    continue;
                                }
                                for cc in 0..c {
                                    let xv = x[((ti as usize * h + yi as usize) * w + xi as usize) * c + cc];
                                    let kv = k[(((i * kh + j) * kw + l) * c + cc) * f + ff];
                                    s += xv * kv;
                                }
                            }
                        }
                    }
                    out[((a * oh + b) * ow + d) * f + ff] = s;
                }
            }
        }
    }
    (out, [ot, oh, ow, f])
}

/// Valid max-pool reference.
pub fn maxpool_ref(x: &[f64], xd: [usize; 4], win: [usize; 3], st: [usize; 3]) -> (Vec<f64>, [usize; 4]) {
    let [t, h, w, c] = xd;
    let o = [(t - win[0]) / st[0] + 1, (h - win[1]) / st[1] + 1, (w - win[2]) / st[2] + 1];
    let mut out = Vec::with_capacity(o[0] * o[1] * o[2] * c);
    for a in 0..o[0] {
        for b in 0..o[1] {
            for d in 0..o[2] {
                for cc in 0..c {
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..win[0] {
                        for j in 0..win[1] {
                            for l in 0..win[2] {
                                let (ti, yi, xi) = (a * st[0] + i, b * st[1] + j, d * st[2] + l);
                                m = m.max(x[((ti * h + yi) * w + xi) * c + cc]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    (out, [o[0], o[1], o[2], c])
}

pub fn dense_ref(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let m = b.len();
    (0..m)
        .map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * m + j]).sum::<f64>())
        .collect()
}

pub fn gap_ref(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    (0..c)
        .map(|k| (0..h * w).map(|p| x[p * c + k]).sum::<f64>() / (h * w) as f64)
        .collect()
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn f32_tensor(dims: &[usize], v: &[f64]) -> Tensor<f32> {
    Tensor::new(dims.to_vec(), v.iter().map(|&x| x as f32).collect()).unwrap()
}

/// Largest `|got − want| / max(1, |want|)`.
pub fn scaled_error(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g as f64 - w).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Scalar LSTM gates in the order forget, input, output, cell.
#[derive(Clone, Copy, Debug)]
pub struct ScalarLstm {
    pub w: [f64; 4],
    pub u: [f64; 4],
    pub b: [f64; 4],
}

impl ScalarLstm {
    pub fn run(&self, xs: &[f64]) -> Vec<f64> {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (mut h, mut c) = (0.0, 0.0);
        xs.iter()
            .map(|&x| {
                let z = |g: usize| self.w[g] * x + self.u[g] * h + self.b[g];
                let (f, i, o, g) = (sig(z(0)), sig(z(1)), sig(z(2)), z(3).tanh());
                c = f * c + i * g;
                h = o * c.tanh();
                h
            })
            .collect()
    }
}

/// Area under the interpolation-free PR curve, walking every distinct
/// threshold from high to low: `Σ (R_k − R_{k−1})·P_k`. Scores must be
/// distinct so each threshold admits one more item.
pub fn ap_bruteforce(scores: &[f64], positive: &[bool]) -> f64 {
    let total = positive.iter().filter(|&&p| p).count();
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    let mut prev_tp = 0;
    let mut sum = 0.0;
    for &tau in &thresholds {
        let admitted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= tau).collect();
        let tp = admitted.iter().filter(|&&i| positive[i]).count();
        let precision = tp as f64 / admitted.len() as f64;
        // Recall rises by (tp − prev_tp)/total; fold the 1/total in at the end.
        sum += (tp - prev_tp) as f64 * precision;
        prev_tp = tp;
    }
    sum / total as f64
}

/// Smooth texture moving `shift` pixels to the right.
pub fn sinusoid(h: usize, w: usize, shift: f64) -> Tensor<f32> {
    Tensor::from_fn(vec![h, w], |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64 - shift);
        (0.5 + 0.2 * (x * 0.31).sin() * (y * 0.27).cos() + 0.1 * (x * 0.13 + y * 0.19).sin()) as f32
    })
    .unwrap()
}
