//! Frame sequences and the preprocessing chain: five-second segmentation,
//! stride sampling, bilinear resize, normalisation and sliding windows.

mod augment;
pub mod ppm;

pub use augment::{augment, AugmentationSpec, Transform, MAX_ROTATION_DEG};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLIP_SECONDS: f64 = 5.0;

/// An ordered clip of `H×W×3` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Tensor<f32>>,
    pub fps: f64,
    pub source_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor<f32>>, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if let Some(first) = frames.first() {
            first.expect_rank(3, "frame (H×W×C)")?;
            for (i, f) in frames.iter().enumerate() {
                if f.dims() != first.dims() {
                    return Err(Error::shape(format!(
                        "frame {i} has extents {:?}, frame 0 has {:?}",
                        f.dims(),
                        first.dims()
                    )));
                }
            }
        }
        Ok(Self {
            frames,
            fps,
            source_id: source_id.into(),
        })
    }

    /// Split a `N×H×W×C` tensor into frames.
    pub fn from_tensor(t: &Tensor<f32>, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        t.expect_rank(4, "frame stack (N×H×W×C)")?;
        let frames = (0..t.dims()[0]).map(|i| t.index_axis0(i)).collect::<Result<_>>()?;
        Self::new(frames, fps, source_id)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_dims(&self) -> Option<&[usize]> {
        self.frames.first().map(|f| f.dims())
    }

    /// `N×H×W×C` stack of all frames.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        Tensor::stack(&self.frames)
    }
}

/// A fixed-depth run of frames cut from a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub frames: Tensor<f32>,
    pub start_index: usize,
    pub clip_id: String,
}

/// Frames per five-second segment, `round(5·fps)`.
pub fn clip_length(fps: f64) -> Result<usize> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    Ok((CLIP_SECONDS * fps).round().max(1.0) as usize)
}

/// Number of whole segments in `n` frames.
pub fn segment_count(n: usize, fps: f64) -> Result<usize> {
    Ok(n / clip_length(fps)?)
}

/// Consecutive non-overlapping five-second clips; the remainder is dropped.
/// Clip `k` is named `<source_id>_c<k>` with a three-digit index.
pub fn segment_clips(raw: &FrameSequence) -> Result<Vec<FrameSequence>> {
    let len = clip_length(raw.fps)?;
    Ok(raw
        .frames
        .chunks_exact(len)
        .enumerate()
        .map(|(k, chunk)| FrameSequence {
            frames: chunk.to_vec(),
            fps: raw.fps,
            source_id: format!("{}_c{k:03}", raw.source_id),
        })
        .collect())
}

pub fn sampled_len(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Keep frames `0, stride, 2·stride, …`.
pub fn sample_frames(clip: &FrameSequence, stride: usize) -> Result<FrameSequence> {
    if stride == 0 {
        return Err(Error::invalid("sampling stride must be >= 1"));
    }
    if clip.is_empty() {
        return Err(Error::invalid(format!("clip {} is empty", clip.source_id)));
    }
    Ok(FrameSequence {
        frames: clip.frames.iter().step_by(stride).cloned().collect(),
        fps: clip.fps / stride as f64,
        source_id: clip.source_id.clone(),
    })
}

/// Bilinear resize with corner-aligned sampling: output pixel `(y, x)` reads
/// source coordinate `(y·(H−1)/(H'−1), x·(W−1)/(W'−1))`.
pub fn resize_bilinear(frame: &Tensor<f32>, target: (usize, usize)) -> Result<Tensor<f32>> {
    frame.expect_rank(3, "frame (H×W×C)")?;
    let (h, w, c) = (frame.dims()[0], frame.dims()[1], frame.dims()[2]);
    let (th, tw) = target;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("cannot resize a degenerate {h}×{w} frame")));
    }
    if th == 0 || tw == 0 {
        return Err(Error::shape(format!("resize target {th}×{tw} is empty")));
    }
    if (th, tw) == (h, w) {
        return Ok(frame.clone());
    }
    let scale = |n: usize, tn: usize| if tn > 1 { (n - 1) as f64 / (tn - 1) as f64 } else { 0.0 };
    let (sy, sx) = (scale(h, th), scale(w, tw));
    let src = frame.data();
    let mut out = vec![0.0f32; th * tw * c];
    let cols: Vec<(usize, usize, f32)> = (0..tw)
        .map(|x| {
            let fx = x as f64 * sx;
            let x0 = (fx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            (x0, x1, (fx - x0 as f64) as f32)
        })
        .collect();
    for y in 0..th {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let wy = (fy - y0 as f64) as f32;
        let r0 = &src[y0 * w * c..(y0 + 1) * w * c];
        let r1 = &src[y1 * w * c..(y1 + 1) * w * c];
        for (x, &(x0, x1, wx)) in cols.iter().enumerate() {
            let o = &mut out[(y * tw + x) * c..(y * tw + x + 1) * c];
            for (k, v) in o.iter_mut().enumerate() {
                let top = r0[x0 * c + k] * (1.0 - wx) + r0[x1 * c + k] * wx;
                let bot = r1[x0 * c + k] * (1.0 - wx) + r1[x1 * c + k] * wx;
                *v = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Tensor::new(vec![th, tw, c], out)
}

/// Map 8-bit pixel values to `[0, 1]` by `x / 255`.
pub fn normalize(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    if let Some(bad) = frame.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Data(format!("pixel value {bad} outside [0, 255]")));
    }
    Ok(frame.map(|v| v / 255.0))
}

pub fn normalize_u8(dims: impl Into<Vec<usize>>, bytes: &[u8]) -> Result<Tensor<f32>> {
    Tensor::new(dims, bytes.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn window_count(n: usize, depth: usize, stride: usize) -> usize {
    if depth == 0 || stride == 0 || n < depth {
        0
    } else {
        (n - depth) / stride + 1
    }
}

/// Window start indices `0, S, 2S, …` while `start + T ≤ N`.
pub fn window_starts(n: usize, depth: usize, stride: usize) -> Result<Vec<usize>> {
    if depth == 0 || stride == 0 {
        return Err(Error::invalid(format!("window depth {depth} and stride {stride} must be >= 1")));
    }
    if n < depth {
        return Err(Error::Data(format!("{n} frames are fewer than the window depth {depth}")));
    }
    Ok((0..window_count(n, depth, stride)).map(|k| k * stride).collect())
}

pub fn make_windows(clip: &FrameSequence, depth: usize, stride: usize) -> Result<Vec<Window>> {
    window_starts(clip.len(), depth, stride)?
        .into_iter()
        .map(|s| {
            Ok(Window {
                frames: Tensor::stack(&clip.frames[s..s + depth])?,
                start_index: s,
                clip_id: clip.source_id.clone(),
            })
        })
        .collect()
}

/// Sampling and spatial settings shared by preprocessing, training and detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub frame_size: usize,
    pub sample_stride: usize,
    pub depth: usize,
    pub window_stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_size: 224,
            sample_stride: 5,
            depth: 30,
            window_stride: 15,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 1 || self.sample_stride < 1 || self.depth < 1 || self.window_stride < 1 {
            return Err(Error::Config(format!("pipeline settings must all be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Sample by stride, then resize every frame to `frame_size²`.
    pub fn prepare(&self, clip: &FrameSequence) -> Result<FrameSequence> {
        let sampled = sample_frames(clip, self.sample_stride)?;
        let frames = sampled
            .frames
            .iter()
            .map(|f| resize_bilinear(f, (self.frame_size, self.frame_size)))
            .collect::<Result<_>>()?;
        Ok(FrameSequence { frames, ..sampled })
    }
}
