//! Sliding-window detection over a frame stream.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::flow::luminance;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::video::{resize_bilinear, FrameSequence};

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRecord {
    /// Index of the window's first frame in the sampled stream.
    pub start_index: usize,
    pub p_accident: f64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub clip_id: String,
    pub windows: Vec<WindowRecord>,
    pub threshold: f64,
    /// True when any window scores above the threshold.
    pub accident: bool,
}

impl DetectionResult {
    pub fn window_line(clip_id: &str, w: &WindowRecord) -> String {
        format!("{clip_id},{},{}", w.start_index, w.p_accident)
    }

    pub fn verdict_line(&self) -> String {
        format!(
            "#verdict {} {} (threshold {}, {} windows)",
            self.clip_id,
            if self.accident { "accident" } else { "normal" },
            self.threshold,
            self.windows.len()
        )
    }

    /// Per-window CSV lines followed by the verdict line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for w in &self.windows {
            let _ = writeln!(s, "{}", Self::window_line(&self.clip_id, w));
        }
        let _ = writeln!(s, "{}", self.verdict_line());
        s
    }
}

/// Consumes raw frames one at a time, keeps every `sample_stride`-th, and
/// scores each `depth`-frame window as soon as its last frame arrives.
/// Holds at most `depth` frames and `depth − 1` flow fields.
pub struct StreamDetector<'m> {
    model: &'m Model<f32>,
    clip_id: String,
    threshold: f64,
    raw_seen: usize,
    sampled: usize,
    next_start: usize,
    frames: VecDeque<Tensor<f32>>,
    gray: VecDeque<Tensor<f32>>,
    flows: VecDeque<Tensor<f32>>,
    windows: Vec<WindowRecord>,
    pending_ms: f64,
}

impl<'m> StreamDetector<'m> {
    pub fn new(model: &'m Model<f32>, clip_id: impl Into<String>, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold must lie in [0, 1], got {threshold}")));
        }
        Ok(Self {
            model,
            clip_id: clip_id.into(),
            threshold,
            raw_seen: 0,
            sampled: 0,
            next_start: 0,
            frames: VecDeque::new(),
            gray: VecDeque::new(),
            flows: VecDeque::new(),
            windows: Vec::new(),
            pending_ms: 0.0,
        })
    }

    /// Frames currently buffered.
    pub fn buffered(&self) -> usize {
        self.frames.len()
    }

    pub fn push(&mut self, frame: &Tensor<f32>) -> Result<Option<WindowRecord>> {
        let p = &self.model.config.pipeline;
        let keep = self.raw_seen.is_multiple_of(p.sample_stride);
        self.raw_seen += 1;
        if !keep {
            return Ok(None);
        }
        let t0 = Instant::now();
        let frame = resize_bilinear(frame, (p.frame_size, p.frame_size))?;
        let index = self.sampled;
        self.sampled += 1;
        if index < self.next_start {
            self.pending_ms = 0.0;
            return Ok(None);
        }
        if self.model.two_stream() {
            let g = luminance(&frame)?;
            if let Some(prev) = self.gray.back() {
                self.flows.push_back(self.model.config.flow.compute(prev, &g)?.to_tensor()?);
            }
            self.gray.push_back(g);
        }
        self.frames.push_back(frame);
        self.pending_ms += t0.elapsed().as_secs_f64() * 1e3;
        if self.frames.len() < p.depth {
            return Ok(None);
        }
        let t1 = Instant::now();
        let rgb = Tensor::stack(self.frames.make_contiguous())?;
        let flow = if self.model.two_stream() {
            let mut fields: Vec<Tensor<f32>> = self.flows.iter().cloned().collect();
            let last = fields
                .last()
                .cloned()
                .ok_or_else(|| Error::invalid("flow needs a depth of at least 2"))?;
            fields.push(last);
            Some(Tensor::stack(&fields)?)
        } else {
            None
        };
        let pred = self.model.predict(&rgb, flow.as_ref())?;
        let record = WindowRecord {
            start_index: self.next_start,
            p_accident: pred.p_accident,
            elapsed_ms: self.pending_ms + t1.elapsed().as_secs_f64() * 1e3,
        };
        self.pending_ms = 0.0;
        self.advance(p.window_stride);
        self.windows.push(record.clone());
        Ok(Some(record))
    }

    fn advance(&mut self, stride: usize) {
        self.next_start += stride;
        let drop = stride.min(self.frames.len());
        self.frames.drain(..drop);
        self.gray.drain(..drop.min(self.gray.len()));
        self.flows.drain(..drop.min(self.flows.len()));
    }

    pub fn finish(self) -> Result<DetectionResult> {
        let depth = self.model.config.pipeline.depth;
        if self.windows.is_empty() {
            return Err(Error::Data(format!(
                "stream {} has {} sampled frames, shorter than the window depth {depth}",
                self.clip_id, self.sampled
            )));
        }
        let accident = self.windows.iter().any(|w| w.p_accident > self.threshold);
        Ok(DetectionResult {
            clip_id: self.clip_id,
            windows: self.windows,
            threshold: self.threshold,
            accident,
        })
    }
}

/// Run a whole in-memory stream through a [`StreamDetector`].
pub fn detect(model: &Model<f32>, stream: &FrameSequence, threshold: f64) -> Result<DetectionResult> {
    let mut d = StreamDetector::new(model, stream.source_id.clone(), threshold)?;
    for f in &stream.frames {
        d.push(f)?;
    }
    d.finish()
}
