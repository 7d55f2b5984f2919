//! Convolutional LSTM with backpropagation through time.
//!
//! For input `X_t` and previous state `(H_{t-1}, C_{t-1})`:
//!
//! ```text
//! F_t = σ(W_f ∗ X_t + U_f ∗ H_{t-1} + b_f)
//! I_t = σ(W_i ∗ X_t + U_i ∗ H_{t-1} + b_i)
//! O_t = σ(W_o ∗ X_t + U_o ∗ H_{t-1} + b_o)
//! C_t = F_t ⊙ C_{t-1} + I_t ⊙ tanh(W_c ∗ X_t + U_c ∗ H_{t-1} + b_c)
//! H_t = O_t ⊙ tanh(C_t)
//! ```
//!
//! `∗` is a same-padded 2D convolution, so states keep the input's `H×W`.
//! The four gates are packed into one `Kh×Kw×C×4F` kernel per call so each
//! timestep costs two convolutions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::conv::{conv3d_backward_with, conv3d_with, ConvGeometry};
use crate::ops::{sigmoid, Padding};
use crate::param::Parameter;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Cell = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Cell];

    fn tag(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Cell => "c",
        }
    }
}

/// Per-gate input kernels `W`, recurrent kernels `U` and biases `b`, indexed by [`Gate`].
#[derive(Clone, Debug)]
pub struct ConvLstmWeights<S: Scalar = f32> {
    pub w: [Parameter<S>; 4],
    pub u: [Parameter<S>; 4],
    pub b: [Parameter<S>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState<S: Scalar = f32> {
    pub c: Tensor<S>,
    pub h: Tensor<S>,
}

impl<S: Scalar> ConvLstmState<S> {
    pub fn zeros(height: usize, width: usize, filters: usize) -> Result<Self> {
        Ok(Self {
            c: Tensor::zeros(vec![height, width, filters])?,
            h: Tensor::zeros(vec![height, width, filters])?,
        })
    }
}

impl<S: Scalar> ConvLstmWeights<S> {
    pub fn zeros(kernel: usize, in_channels: usize, filters: usize) -> Result<Self> {
        let w = || Parameter::zeros(vec![kernel, kernel, in_channels, filters]);
        let u = || Parameter::zeros(vec![kernel, kernel, filters, filters]);
        let b = || Parameter::zeros(vec![filters]);
        Ok(Self {
            w: [w()?, w()?, w()?, w()?],
            u: [u()?, u()?, u()?, u()?],
            b: [b()?, b()?, b()?, b()?],
        })
    }

    /// He-uniform input and recurrent kernels; forget-gate bias 1, others 0.
    pub fn init<R: Rng + ?Sized>(kernel: usize, in_channels: usize, filters: usize, rng: &mut R) -> Result<Self> {
        let mut out = Self::zeros(kernel, in_channels, filters)?;
        let fan_in = kernel * kernel * (in_channels + filters);
        for g in Gate::ALL {
            out.w[g as usize] = Parameter::he_uniform(vec![kernel, kernel, in_channels, filters], fan_in, rng)?;
            out.u[g as usize] = Parameter::he_uniform(vec![kernel, kernel, filters, filters], fan_in, rng)?;
        }
        out.b[Gate::Forget as usize].value.fill(S::one());
        Ok(out)
    }

    pub fn kernel(&self) -> usize {
        self.w[0].dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w[0].dims()[2]
    }

    pub fn filters(&self) -> usize {
        self.w[0].dims()[3]
    }

    pub fn validate(&self) -> Result<()> {
        let wd = self.w[0].dims().to_vec();
        if wd.len() != 4 || wd[0] != wd[1] {
            return Err(Error::shape(format!("ConvLSTM input kernel must be K×K×C×F, got {wd:?}")));
        }
        let (k, f) = (wd[0], wd[3]);
        for g in Gate::ALL {
            let i = g as usize;
            self.w[i].value.expect_dims(&wd, "ConvLSTM W kernels")?;
            self.u[i].value.expect_dims(&[k, k, f, f], "ConvLSTM U kernels")?;
            self.b[i].value.expect_dims(&[f], "ConvLSTM biases")?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.w.iter().chain(&self.u).chain(&self.b).map(|p| p.len()).sum()
    }

    pub fn parameters(&self) -> Vec<(String, &Parameter<S>)> {
        let mut out = Vec::with_capacity(12);
        for g in Gate::ALL {
            let i = g as usize;
            out.push((format!("w_{}", g.tag()), &self.w[i]));
            out.push((format!("u_{}", g.tag()), &self.u[i]));
            out.push((format!("b_{}", g.tag()), &self.b[i]));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter<S>)> {
        let mut out = Vec::with_capacity(12);
        let (w, u, b) = (&mut self.w, &mut self.u, &mut self.b);
        for ((g, wp), (up, bp)) in Gate::ALL.iter().zip(w.iter_mut()).zip(u.iter_mut().zip(b.iter_mut())) {
            out.push((format!("w_{}", g.tag()), wp));
            out.push((format!("u_{}", g.tag()), up));
            out.push((format!("b_{}", g.tag()), bp));
        }
        out
    }

    pub fn cast<T: Scalar>(&self) -> ConvLstmWeights<T> {
        ConvLstmWeights {
            w: self.w.clone().map(|p| p.cast()),
            u: self.u.clone().map(|p| p.cast()),
            b: self.b.clone().map(|p| p.cast()),
        }
    }

    fn pack(&self) -> Packed<S> {
        Packed {
            w: pack_kernels(&self.w),
            u: pack_kernels(&self.u),
            b: pack_kernels(&self.b),
            filters: self.filters(),
        }
    }

    fn accumulate_packed(&mut self, dw: Option<&[S]>, du: &[S], db: &[S]) {
        if let Some(dw) = dw {
            unpack_into(&mut self.w, dw);
        }
        unpack_into(&mut self.u, du);
        unpack_into(&mut self.b, db);
    }

    fn any_trainable(&self) -> bool {
        self.w.iter().chain(&self.u).chain(&self.b).any(|p| p.trainable)
    }
}

/// Interleave four `…×F` gate tensors into one `…×4F` tensor.
fn pack_kernels<S: Scalar>(gates: &[Parameter<S>; 4]) -> Vec<S> {
    let f = *gates[0].dims().last().unwrap();
    let rows = gates[0].len() / f;
    let mut out = Vec::with_capacity(rows * 4 * f);
    for r in 0..rows {
        for g in gates {
            out.extend_from_slice(&g.value.data()[r * f..(r + 1) * f]);
        }
    }
    out
}

fn unpack_into<S: Scalar>(gates: &mut [Parameter<S>; 4], packed: &[S]) {
    let f = *gates[0].dims().last().unwrap();
    let rows = gates[0].len() / f;
    for (gi, g) in gates.iter_mut().enumerate() {
        if !g.trainable {
            continue;
        }
        let mut delta = Vec::with_capacity(rows * f);
        for r in 0..rows {
            let at = r * 4 * f + gi * f;
            delta.extend_from_slice(&packed[at..at + f]);
        }
        g.accumulate(&delta);
    }
}

struct Packed<S> {
    w: Vec<S>,
    u: Vec<S>,
    b: Vec<S>,
    filters: usize,
}

fn geometry(height: usize, width: usize, channels: usize, kernel: usize, filters: usize, frames: usize) -> Result<ConvGeometry> {
    ConvGeometry::new(
        [frames, height, width, channels],
        &[1, kernel, kernel, channels, 4 * filters],
        [1, 1, 1],
        Padding::Same,
    )
}

/// Saved activations of one timestep.
#[derive(Clone, Debug)]
pub struct StepCache<S: Scalar> {
    h_prev: Tensor<S>,
    c_prev: Tensor<S>,
    /// Activated gates interleaved per pixel as `[f | i | o | g]`.
    gates: Vec<S>,
    tanh_c: Vec<S>,
}

/// Combine pre-activations `z` (input part already in place) with the
/// recurrent contribution and advance the state.
fn cell_forward<S: Scalar>(
    mut z: Vec<S>,
    state: &ConvLstmState<S>,
    packed: &Packed<S>,
    kernel: usize,
) -> Result<(ConvLstmState<S>, StepCache<S>)> {
    let (h, w, f) = (state.h.dims()[0], state.h.dims()[1], packed.filters);
    let geo = geometry(h, w, f, kernel, f, 1)?;
    let zh = conv3d_with(&geo, state.h.data(), &packed.u)?;
    let mut c_new = vec![S::zero(); h * w * f];
    let mut h_new = vec![S::zero(); h * w * f];
    let mut tanh_c = vec![S::zero(); h * w * f];
    for p in 0..h * w {
        let zp = &mut z[p * 4 * f..(p + 1) * 4 * f];
        let zhp = &zh[p * 4 * f..(p + 1) * 4 * f];
        for k in 0..4 * f {
            zp[k] = zp[k] + zhp[k] + packed.b[k];
        }
        for k in 0..f {
            let fg = sigmoid(zp[k]);
            let ig = sigmoid(zp[f + k]);
            let og = sigmoid(zp[2 * f + k]);
            let gg = zp[3 * f + k].tanh();
            zp[k] = fg;
            zp[f + k] = ig;
            zp[2 * f + k] = og;
            zp[3 * f + k] = gg;
            let c = fg * state.c.data()[p * f + k] + ig * gg;
            let tc = c.tanh();
            c_new[p * f + k] = c;
            tanh_c[p * f + k] = tc;
            h_new[p * f + k] = og * tc;
        }
    }
    let next = ConvLstmState {
        c: Tensor::new(vec![h, w, f], c_new)?,
        h: Tensor::new(vec![h, w, f], h_new)?,
    };
    let cache = StepCache {
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gates: z,
        tanh_c,
    };
    Ok((next, cache))
}

/// Backward through one cell given gradients w.r.t. `H_t` and `C_t`.
/// Returns `(dZ, dH_{t-1}, dC_{t-1})` and accumulates `dU`, `db`.
fn cell_backward<S: Scalar>(
    cache: &StepCache<S>,
    dh: &[S],
    dc: &[S],
    packed: &Packed<S>,
    kernel: usize,
    du: &mut [S],
    db: &mut [S],
    need_h_prev: bool,
) -> Result<(Vec<S>, Option<Vec<S>>, Vec<S>)> {
    let (h, w, f) = (cache.h_prev.dims()[0], cache.h_prev.dims()[1], packed.filters);
    let mut dz = vec![S::zero(); h * w * 4 * f];
    let mut dc_prev = vec![S::zero(); h * w * f];
    let one = S::one();
    for p in 0..h * w {
        let g = &cache.gates[p * 4 * f..(p + 1) * 4 * f];
        let dzp = &mut dz[p * 4 * f..(p + 1) * 4 * f];
        for k in 0..f {
            let i = p * f + k;
            let (fg, ig, og, gg) = (g[k], g[f + k], g[2 * f + k], g[3 * f + k]);
            let tc = cache.tanh_c[i];
            let d_o = dh[i] * tc;
            let dct = dc[i] + dh[i] * og * (one - tc * tc);
            let d_f = dct * cache.c_prev.data()[i];
            let d_i = dct * gg;
            let d_g = dct * ig;
            dc_prev[i] = dct * fg;
            dzp[k] = d_f * fg * (one - fg);
            dzp[f + k] = d_i * ig * (one - ig);
            dzp[2 * f + k] = d_o * og * (one - og);
            dzp[3 * f + k] = d_g * (one - gg * gg);
        }
        for (b, &v) in db.iter_mut().zip(dzp.iter()) {
            *b = *b + v;
        }
    }
    let geo = geometry(h, w, f, kernel, f, 1)?;
    let (dh_prev, du_step) = conv3d_backward_with(&geo, cache.h_prev.data(), &packed.u, &dz, need_h_prev, true);
    for (a, b) in du.iter_mut().zip(du_step.expect("requested")) {
        *a = *a + b;
    }
    Ok((dz, dh_prev, dc_prev))
}

/// One ConvLSTM timestep from `state` on input `x` (`H×W×Cin`).
pub fn convlstm_step<S: Scalar>(x: &Tensor<S>, state: &ConvLstmState<S>, weights: &ConvLstmWeights<S>) -> Result<ConvLstmState<S>> {
    convlstm_step_train(x, state, weights).map(|(s, _)| s)
}

fn check_step<S: Scalar>(x: &Tensor<S>, state: &ConvLstmState<S>, weights: &ConvLstmWeights<S>) -> Result<()> {
    weights.validate()?;
    x.expect_rank(3, "ConvLSTM input (H×W×C)")?;
    if x.dims()[2] != weights.in_channels() {
        return Err(Error::ChannelMismatch {
            expected: weights.in_channels(),
            got: x.dims()[2],
        });
    }
    let sd = [x.dims()[0], x.dims()[1], weights.filters()];
    state.c.expect_dims(&sd, "ConvLSTM cell state")?;
    state.h.expect_dims(&sd, "ConvLSTM hidden state")?;
    Ok(())
}

/// Step forward that also returns the cache for [`convlstm_step_backward`].
pub fn convlstm_step_train<S: Scalar>(
    x: &Tensor<S>,
    state: &ConvLstmState<S>,
    weights: &ConvLstmWeights<S>,
) -> Result<(ConvLstmState<S>, StepCache<S>)> {
    check_step(x, state, weights)?;
    let packed = weights.pack();
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let geo = geometry(h, w, c, weights.kernel(), weights.filters(), 1)?;
    let zx = conv3d_with(&geo, x.data(), &packed.w)?;
    cell_forward(zx, state, &packed, weights.kernel())
}

/// Gradients of one step w.r.t. `(x, H_{t-1}, C_{t-1})`; weight gradients
/// are accumulated into `weights`.
pub fn convlstm_step_backward<S: Scalar>(
    x: &Tensor<S>,
    cache: &StepCache<S>,
    weights: &mut ConvLstmWeights<S>,
    dh: &Tensor<S>,
    dc: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let packed = weights.pack();
    let k = weights.kernel();
    let f = weights.filters();
    let mut du = vec![S::zero(); packed.u.len()];
    let mut db = vec![S::zero(); 4 * f];
    let (dz, dh_prev, dc_prev) = cell_backward(cache, dh.data(), dc.data(), &packed, k, &mut du, &mut db, true)?;
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let geo = geometry(h, w, c, k, f, 1)?;
    let (dx, dw) = conv3d_backward_with(&geo, x.data(), &packed.w, &dz, true, true);
    weights.accumulate_packed(dw.as_deref(), &du, &db);
    let sd = vec![h, w, f];
    Ok((
        Tensor::new(x.dims().to_vec(), dx.expect("requested"))?,
        Tensor::new(sd.clone(), dh_prev.expect("requested"))?,
        Tensor::new(sd, dc_prev)?,
    ))
}

/// A ConvLSTM layer over `T×H×W×Cin` sequences.
#[derive(Clone, Debug)]
pub struct ConvLstmLayer<S: Scalar = f32> {
    pub weights: ConvLstmWeights<S>,
    /// Emit every `H_t` (`T×H×W×F`) or only the final `H_T` (`H×W×F`).
    pub return_sequences: bool,
}

/// Saved activations for a whole sequence.
#[derive(Clone, Debug)]
pub struct SequenceCache<S: Scalar> {
    input: Tensor<S>,
    steps: Vec<StepCache<S>>,
}

impl<S: Scalar> ConvLstmLayer<S> {
    pub fn new<R: Rng + ?Sized>(kernel: usize, in_channels: usize, filters: usize, return_sequences: bool, rng: &mut R) -> Result<Self> {
        Ok(Self {
            weights: ConvLstmWeights::init(kernel, in_channels, filters, rng)?,
            return_sequences,
        })
    }

    pub fn filters(&self) -> usize {
        self.weights.filters()
    }

    pub fn output_dims(&self, input_dims: &[usize]) -> Vec<usize> {
        let f = self.filters();
        if self.return_sequences {
            vec![input_dims[0], input_dims[1], input_dims[2], f]
        } else {
            vec![input_dims[1], input_dims[2], f]
        }
    }

    pub fn forward(&self, xs: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_train(xs).map(|(y, _)| y)
    }

    pub fn forward_train(&self, xs: &Tensor<S>) -> Result<(Tensor<S>, SequenceCache<S>)> {
        let (hs, cache) = self.run(xs)?;
        let out = if self.return_sequences {
            Tensor::stack(&hs)?
        } else {
            hs.into_iter().last().expect("T >= 1")
        };
        Ok((out, cache))
    }

    /// All hidden states `H_1..H_T` and cell states `C_1..C_T`.
    pub fn trajectory(&self, xs: &Tensor<S>) -> Result<(Vec<Tensor<S>>, Vec<Tensor<S>>)> {
        let (hs, cache) = self.run(xs)?;
        let f = self.filters();
        let (h, w) = (xs.dims()[1], xs.dims()[2]);
        let mut cs = Vec::with_capacity(hs.len());
        // C_t is the c_prev of step t+1; recompute the last one from its cache.
        for s in cache.steps.iter().skip(1) {
            cs.push(s.c_prev.clone());
        }
        let last = cache.steps.last().expect("T >= 1");
        let mut c_last = vec![S::zero(); h * w * f];
        for p in 0..h * w {
            for k in 0..f {
                let g = &last.gates[p * 4 * f..];
                c_last[p * f + k] = g[k] * last.c_prev.data()[p * f + k] + g[f + k] * g[3 * f + k];
            }
        }
        cs.push(Tensor::new(vec![h, w, f], c_last)?);
        Ok((hs, cs))
    }

    fn run(&self, xs: &Tensor<S>) -> Result<(Vec<Tensor<S>>, SequenceCache<S>)> {
        xs.expect_rank(4, "ConvLSTM sequence (T×H×W×C)")?;
        self.weights.validate()?;
        let (t, h, w, c) = (xs.dims()[0], xs.dims()[1], xs.dims()[2], xs.dims()[3]);
        if c != self.weights.in_channels() {
            return Err(Error::ChannelMismatch {
                expected: self.weights.in_channels(),
                got: c,
            });
        }
        let f = self.filters();
        let k = self.weights.kernel();
        let packed = self.weights.pack();
        let geo = geometry(h, w, c, k, f, t)?;
        let zx = conv3d_with(&geo, xs.data(), &packed.w)?;
        let step_len = h * w * 4 * f;
        let mut state = ConvLstmState::zeros(h, w, f)?;
        let mut hs = Vec::with_capacity(t);
        let mut steps = Vec::with_capacity(t);
        for ti in 0..t {
            let z = zx[ti * step_len..(ti + 1) * step_len].to_vec();
            let (next, cache) = cell_forward(z, &state, &packed, k)?;
            hs.push(next.h.clone());
            steps.push(cache);
            state = next;
        }
        Ok((hs, SequenceCache { input: xs.clone(), steps }))
    }

    /// Backpropagation through time. `grad_output` matches the forward
    /// output shape. Returns the input-sequence gradient when requested.
    pub fn backward(&mut self, cache: &SequenceCache<S>, grad_output: &Tensor<S>, want_input: bool) -> Result<Option<Tensor<S>>> {
        let xs = &cache.input;
        let (t, h, w, c) = (xs.dims()[0], xs.dims()[1], xs.dims()[2], xs.dims()[3]);
        let f = self.filters();
        let k = self.weights.kernel();
        grad_output.expect_dims(&self.output_dims(xs.dims()), "ConvLSTM grad_output")?;
        if !want_input && !self.weights.any_trainable() {
            return Ok(None);
        }
        let packed = self.weights.pack();
        let state_len = h * w * f;
        let mut du = vec![S::zero(); packed.u.len()];
        let mut db = vec![S::zero(); 4 * f];
        let mut dz_all = vec![S::zero(); t * h * w * 4 * f];
        let mut dh_next = vec![S::zero(); state_len];
        let mut dc_next = vec![S::zero(); state_len];
        for ti in (0..t).rev() {
            let mut dh = dh_next.clone();
            let go = if self.return_sequences {
                Some(&grad_output.data()[ti * state_len..(ti + 1) * state_len])
            } else if ti == t - 1 {
                Some(grad_output.data())
            } else {
                None
            };
            if let Some(go) = go {
                for (a, &b) in dh.iter_mut().zip(go) {
                    *a = *a + b;
                }
            }
            let (dz, dh_prev, dc_prev) = cell_backward(&cache.steps[ti], &dh, &dc_next, &packed, k, &mut du, &mut db, ti > 0)?;
            let step_len = h * w * 4 * f;
            dz_all[ti * step_len..(ti + 1) * step_len].copy_from_slice(&dz);
            dh_next = dh_prev.unwrap_or_default();
            dc_next = dc_prev;
        }
        let geo = geometry(h, w, c, k, f, t)?;
        let want_w = self.weights.w.iter().any(|p| p.trainable);
        let (dx, dw) = conv3d_backward_with(&geo, xs.data(), &packed.w, &dz_all, want_input, want_w);
        self.weights.accumulate_packed(dw.as_deref(), &du, &db);
        dx.map(|d| Tensor::new(xs.dims().to_vec(), d)).transpose()
    }

    pub fn cast<T: Scalar>(&self) -> ConvLstmLayer<T> {
        ConvLstmLayer {
            weights: self.weights.cast(),
            return_sequences: self.return_sequences,
        }
    }
}

/// Run a sequence from zero state, returning every `H_t` as `T×H×W×F`.
pub fn convlstm_sequence<S: Scalar>(xs: &Tensor<S>, weights: &ConvLstmWeights<S>) -> Result<Tensor<S>> {
    let layer = ConvLstmLayer {
        weights: weights.clone(),
        return_sequences: true,
    };
    layer.forward(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_half_gates_and_zero_state() {
        let w = ConvLstmWeights::<f64>::zeros(3, 2, 4).unwrap();
        let x = Tensor::<f64>::from_fn(vec![5, 5, 2], |i| i as f64).unwrap();
        let s0 = ConvLstmState::zeros(5, 5, 4).unwrap();
        let (s1, cache) = convlstm_step_train(&x, &s0, &w).unwrap();
        assert!(s1.c.data().iter().all(|&v| v == 0.0));
        assert!(s1.h.data().iter().all(|&v| v == 0.0));
        for p in cache.gates.chunks_exact(16) {
            assert!(p[..12].iter().all(|&g| g == 0.5));
            assert!(p[12..].iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn saturated_output_gate_silences_hidden_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = ConvLstmWeights::<f64>::init(3, 2, 3, &mut rng).unwrap();
        w.b[Gate::Output as usize].value.fill(-50.0);
        let x = Tensor::<f64>::random_uniform(vec![4, 4, 2], -1.0, 1.0, &mut rng).unwrap();
        let s = convlstm_step(&x, &ConvLstmState::zeros(4, 4, 3).unwrap(), &w).unwrap();
        assert!(s.h.data().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn shape_and_channel_errors() {
        let w = ConvLstmWeights::<f32>::zeros(3, 2, 4).unwrap();
        let x = Tensor::<f32>::zeros(vec![5, 5, 3]).unwrap();
        let s0 = ConvLstmState::zeros(5, 5, 4).unwrap();
        assert!(convlstm_step(&x, &s0, &w).is_err());
        let x = Tensor::<f32>::zeros(vec![5, 5, 2]).unwrap();
        let s_bad = ConvLstmState::zeros(4, 5, 4).unwrap();
        assert!(convlstm_step(&x, &s_bad, &w).is_err());
    }

    #[test]
    fn sequence_of_one_equals_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = ConvLstmWeights::<f64>::init(3, 2, 3, &mut rng).unwrap();
        let x = Tensor::<f64>::random_uniform(vec![1, 4, 4, 2], -1.0, 1.0, &mut rng).unwrap();
        let seq = convlstm_sequence(&x, &w).unwrap();
        let step = convlstm_step(&x.index_axis0(0).unwrap(), &ConvLstmState::zeros(4, 4, 3).unwrap(), &w).unwrap();
        assert_eq!(seq.index_axis0(0).unwrap(), step.h);
    }

    #[test]
    fn pack_unpack_preserves_gate_order() {
        let mut w = ConvLstmWeights::<f64>::zeros(1, 1, 2).unwrap();
        for g in Gate::ALL {
            w.w[g as usize].value.fill(g as usize as f64);
        }
        let packed = pack_kernels(&w.w);
        assert_eq!(packed, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        unpack_into(&mut w.w, &packed);
        assert_eq!(w.w[3].grad.data(), &[3.0, 3.0]);
    }
}
