//! Horn–Schunck dense optical flow.
//!
//! Frames are `[0, 1]` grayscale; derivatives are taken in 8-bit intensity
//! units so `alpha` has its customary scale. Derivatives are formed in f64;
//! the iterate itself is f32.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::FrameSequence;

pub const DEFAULT_ALPHA: f64 = 15.0;
pub const DEFAULT_ITERATIONS: usize = 100;
const INTENSITY_SCALE: f64 = 255.0;

/// Per-pixel displacement in pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Tensor<f32>,
    pub v: Tensor<f32>,
}

impl FlowField {
    /// Interleave into the `H×W×2` branch layout.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        let h = self.u.dims()[0];
        let w = self.u.dims()[1];
        Tensor::concat_last(&[&self.u.clone().reshape(vec![h, w, 1])?, &self.v.clone().reshape(vec![h, w, 1])?])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HornSchunck {
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

struct Derivatives {
    h: usize,
    w: usize,
    ix: Vec<f32>,
    iy: Vec<f32>,
    it: Vec<f32>,
}

impl Derivatives {
    /// Central differences averaged over both frames, `I_t = B − A`, edges replicated.
    fn new(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Self> {
        a.expect_rank(2, "flow frame (H×W)")?;
        b.expect_dims(a.dims(), "second flow frame")?;
        a.ensure_finite("flow frame")?;
        b.ensure_finite("flow frame")?;
        let (h, w) = (a.dims()[0], a.dims()[1]);
        let (pa, pb) = (a.data(), b.data());
        let avg: Vec<f64> = pa
            .iter()
            .zip(pb)
            .map(|(&p, &q)| (p as f64 + q as f64) * 0.5 * INTENSITY_SCALE)
            .collect();
        let mut ix = vec![0.0; h * w];
        let mut iy = vec![0.0; h * w];
        let it = pa
            .iter()
            .zip(pb)
            .map(|(&p, &q)| ((q as f64 - p as f64) * INTENSITY_SCALE) as f32)
            .collect();
        for y in 0..h {
            let (up, mid, down) = (
                &avg[y.saturating_sub(1) * w..][..w],
                &avg[y * w..][..w],
                &avg[(y + 1).min(h - 1) * w..][..w],
            );
            let (gx, gy) = (&mut ix[y * w..][..w], &mut iy[y * w..][..w]);
            for x in 0..w {
                gx[x] = ((mid[(x + 1).min(w - 1)] - mid[x.saturating_sub(1)]) * 0.5) as f32;
                gy[x] = ((down[x] - up[x]) * 0.5) as f32;
            }
        }
        Ok(Self { h, w, ix, iy, it })
    }
}

/// Jacobi update of row `y` from the full fields `(u, v)` into the row
/// slices `(ou, ov)`; the 4-neighbour mean replicates edges.
fn sweep_row(d: &Derivatives, inv_den: &[f32], u: &[f32], v: &[f32], ou: &mut [f32], ov: &mut [f32], y: usize) {
    let (h, w) = (d.h, d.w);
    let (up, down) = (y.saturating_sub(1) * w, (y + 1).min(h - 1) * w);
    let r = y * w..(y + 1) * w;
    let (uu, um, ud) = (&u[up..up + w], &u[r.clone()], &u[down..down + w]);
    let (vu, vm, vd) = (&v[up..up + w], &v[r.clone()], &v[down..down + w]);
    let (ix, iy, it, inv) = (&d.ix[r.clone()], &d.iy[r.clone()], &d.it[r.clone()], &inv_den[r]);
    let mut at = |x: usize, l: usize, rr: usize| {
        let ub = (uu[x] + ud[x] + um[l] + um[rr]) * 0.25;
        let vb = (vu[x] + vd[x] + vm[l] + vm[rr]) * 0.25;
        let t = (ix[x] * ub + iy[x] * vb + it[x]) * inv[x];
        ou[x] = ub - ix[x] * t;
        ov[x] = vb - iy[x] * t;
    };
    at(0, 0, 1.min(w - 1));
    if w > 1 {
        at(w - 1, w - 2, w - 1);
    }
    if w > 2 {
        // Interior: neighbours never clamp, so the loop vectorizes.
        let n = w - 2;
        let (ul, ur, vl, vr) = (&um[..n], &um[2..], &vm[..n], &vm[2..]);
        let (uu, ud, vu, vd) = (&uu[1..n + 1], &ud[1..n + 1], &vu[1..n + 1], &vd[1..n + 1]);
        let (ix, iy, it, inv) = (&ix[1..n + 1], &iy[1..n + 1], &it[1..n + 1], &inv[1..n + 1]);
        let (ou, ov) = (&mut ou[1..n + 1], &mut ov[1..n + 1]);
        for x in 0..n {
            let ub = (uu[x] + ud[x] + ul[x] + ur[x]) * 0.25;
            let vb = (vu[x] + vd[x] + vl[x] + vr[x]) * 0.25;
            let t = (ix[x] * ub + iy[x] * vb + it[x]) * inv[x];
            ou[x] = ub - ix[x] * t;
            ov[x] = vb - iy[x] * t;
        }
    }
}

fn sweep(d: &Derivatives, inv_den: &[f32], u: &[f32], v: &[f32], un: &mut [f32], vn: &mut [f32]) {
    let w = d.w;
    for (y, (ou, ov)) in un.chunks_exact_mut(w).zip(vn.chunks_exact_mut(w)).enumerate() {
        sweep_row(d, inv_den, u, v, ou, ov, y);
    }
}

/// Two sweeps in one pass over the image: row `y` of the next iterate goes
/// to `(un, vn)`, then row `y − 1` of the one after overwrites `(u, v)`,
/// whose old row `y − 1` is no longer needed. Bit-identical to two calls
/// of [`sweep`], with half the memory traffic.
fn double_sweep(d: &Derivatives, inv_den: &[f32], u: &mut [f32], v: &mut [f32], un: &mut [f32], vn: &mut [f32]) {
    let (h, w) = (d.h, d.w);
    for y in 0..=h {
        if y < h {
            let r = y * w..(y + 1) * w;
            sweep_row(d, inv_den, u, v, &mut un[r.clone()], &mut vn[r], y);
        }
        if y > 0 {
            let r = (y - 1) * w..y * w;
            sweep_row(d, inv_den, un, vn, &mut u[r.clone()], &mut v[r], y - 1);
        }
    }
}

impl HornSchunck {
    pub fn new(alpha: f64, iterations: usize) -> Result<Self> {
        let hs = Self { alpha, iterations };
        hs.validate()?;
        Ok(hs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("Horn-Schunck needs at least one iteration"));
        }
        Ok(())
    }

    pub fn compute(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<FlowField> {
        self.run(a, b, false).map(|(f, _)| f)
    }

    /// Like [`compute`](Self::compute), also returning the objective before
    /// the first sweep and after each sweep.
    pub fn compute_traced(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(FlowField, Vec<f64>)> {
        self.run(a, b, true)
    }

    fn run(&self, a: &Tensor<f32>, b: &Tensor<f32>, trace: bool) -> Result<(FlowField, Vec<f64>)> {
        self.validate()?;
        let d = Derivatives::new(a, b)?;
        let n = d.h * d.w;
        let a2 = self.alpha * self.alpha;
        let inv_den: Vec<f32> =
            d.ix.iter()
                .zip(&d.iy)
                .map(|(&gx, &gy)| (1.0 / (a2 + (gx as f64).powi(2) + (gy as f64).powi(2))) as f32)
                .collect();
        let mut u = vec![0.0f32; n];
        let mut v = vec![0.0f32; n];
        let mut un = vec![0.0f32; n];
        let mut vn = vec![0.0f32; n];
        let mut energies = Vec::new();
        if trace {
            energies.push(energy(&d, &u, &v, self.alpha));
            for _ in 0..self.iterations {
                sweep(&d, &inv_den, &u, &v, &mut un, &mut vn);
                std::mem::swap(&mut u, &mut un);
                std::mem::swap(&mut v, &mut vn);
                energies.push(energy(&d, &u, &v, self.alpha));
            }
        } else {
            for _ in 0..self.iterations / 2 {
                double_sweep(&d, &inv_den, &mut u, &mut v, &mut un, &mut vn);
            }
            if self.iterations % 2 == 1 {
                sweep(&d, &inv_den, &u, &v, &mut un, &mut vn);
                std::mem::swap(&mut u, &mut un);
                std::mem::swap(&mut v, &mut vn);
            }
        }
        let to_t = |f: Vec<f32>| Tensor::new(vec![d.h, d.w], f);
        Ok((FlowField { u: to_t(u)?, v: to_t(v)? }, energies))
    }
}

/// `Σ (I_x u + I_y v + I_t)² + α²/4 · Σ_edges (Δu² + Δv²)` over
/// 4-neighbour pixel pairs. The Jacobi sweep never increases it.
fn energy(d: &Derivatives, u: &[f32], v: &[f32], alpha: f64) -> f64 {
    let (h, w) = (d.h, d.w);
    let f = |a: &[f32], i: usize| a[i] as f64;
    let mut data = 0.0;
    let mut smooth = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = f(&d.ix, i) * f(u, i) + f(&d.iy, i) * f(v, i) + f(&d.it, i);
            data += r * r;
            if x + 1 < w {
                smooth += (f(u, i + 1) - f(u, i)).powi(2) + (f(v, i + 1) - f(v, i)).powi(2);
            }
            if y + 1 < h {
                smooth += (f(u, i + w) - f(u, i)).powi(2) + (f(v, i + w) - f(v, i)).powi(2);
            }
        }
    }
    data + alpha * alpha * 0.25 * smooth
}

pub fn horn_schunck(a: &Tensor<f32>, b: &Tensor<f32>, alpha: f64, iterations: usize) -> Result<FlowField> {
    HornSchunck::new(alpha, iterations)?.compute(a, b)
}

/// Rec.601 luma of an `H×W×3` frame.
pub fn luminance(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    frame.expect_rank(3, "frame (H×W×3)")?;
    let (h, w, c) = (frame.dims()[0], frame.dims()[1], frame.dims()[2]);
    if c != 3 {
        return Err(Error::ChannelMismatch { expected: 3, got: c });
    }
    let data = frame
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Tensor::new(vec![h, w], data)
}

/// `N×H×W×2` flow stack: the `N−1` consecutive fields with the last one
/// repeated so the temporal length matches the RGB stack.
pub fn flow_sequence(frames: &FrameSequence, hs: &HornSchunck) -> Result<Tensor<f32>> {
    flow_stack(&frames.frames, hs)
}

pub fn flow_stack(frames: &[Tensor<f32>], hs: &HornSchunck) -> Result<Tensor<f32>> {
    if frames.len() < 2 {
        return Err(Error::invalid(format!("flow needs at least 2 frames, got {}", frames.len())));
    }
    let gray = frames.iter().map(luminance).collect::<Result<Vec<_>>>()?;
    let mut fields = Vec::with_capacity(frames.len());
    for pair in gray.windows(2) {
        fields.push(hs.compute(&pair[0], &pair[1])?.to_tensor()?);
    }
    fields.push(fields.last().expect("at least one pair").clone());
    Tensor::stack(&fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize, shift: f64) -> Tensor<f32> {
        Tensor::from_fn(vec![h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64 - shift);
            (0.5 + 0.25 * (x * 0.7).sin() * (y * 0.45).cos() + 0.15 * (x * 0.23 + y * 0.31).sin()) as f32
        })
        .unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(16, 16, 0.0);
        let f = horn_schunck(&a, &a, 3.0, 25).unwrap();
        assert!(f.u.data().iter().chain(f.v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn brightness_offset_on_flat_frames_gives_zero_flow() {
        let a = Tensor::full(vec![8, 9], 0.3f32).unwrap();
        let b = Tensor::full(vec![8, 9], 0.6f32).unwrap();
        let f = horn_schunck(&a, &b, 10.0, 50).unwrap();
        assert!(f.u.data().iter().chain(f.v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn bad_arguments() {
        let a = texture(4, 4, 0.0);
        assert!(horn_schunck(&a, &texture(4, 5, 0.0), 1.0, 1).is_err());
        assert!(horn_schunck(&a, &a, 0.0, 1).is_err());
        assert!(horn_schunck(&a, &a, 1.0, 0).is_err());
    }

    #[test]
    fn energy_trace_is_monotone() {
        let (_, e) = HornSchunck::new(10.0, 40)
            .unwrap()
            .compute_traced(&texture(20, 20, 0.0), &texture(20, 20, 1.0))
            .unwrap();
        assert_eq!(e.len(), 41);
        for p in e.windows(2) {
            assert!(p[1] <= p[0] * (1.0 + 1e-12), "{} -> {}", p[0], p[1]);
        }
    }

    #[test]
    fn sequence_replicates_last_field() {
        let f = |s| {
            let g = texture(6, 7, s);
            Tensor::concat_last(&[&g.clone().reshape(vec![6, 7, 1]).unwrap(); 3]).unwrap()
        };
        let seq = FrameSequence::new(vec![f(0.0), f(1.0), f(1.5)], 10.0, "s").unwrap();
        let hs = HornSchunck::new(5.0, 10).unwrap();
        let st = flow_sequence(&seq, &hs).unwrap();
        assert_eq!(st.dims(), &[3, 6, 7, 2]);
        assert_eq!(st.axis0_slice(1), st.axis0_slice(2));
        assert_ne!(st.axis0_slice(0), st.axis0_slice(1));
        assert!(flow_stack(&seq.frames[..1], &hs).is_err());
    }

    #[test]
    fn fused_sweeps_match_single_sweeps() {
        for (h, w) in [(1, 1), (1, 5), (2, 2), (5, 1), (7, 9)] {
            let a = texture(h, w, 0.0);
            let b = texture(h, w, 0.6);
            for it in [1, 2, 5, 8] {
                let hs = HornSchunck::new(4.0, it).unwrap();
                let fast = hs.compute(&a, &b).unwrap();
                let (slow, _) = hs.compute_traced(&a, &b).unwrap();
                assert_eq!(fast, slow, "{h}x{w}, {it} sweeps");
            }
        }
    }
}
