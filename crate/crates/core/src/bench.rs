//! Single-window inference latency: end-to-end and per stage.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::flow_stack;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct StageTimes {
    pub flow_ms: f64,
    pub backbone_ms: f64,
    pub head_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub variant: String,
    pub input: [usize; 3],
    pub repetitions: usize,
    pub warmup: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub flow_median_ms: f64,
    pub backbone_median_ms: f64,
    pub head_median_ms: f64,
    pub samples: Vec<StageTimes>,
}

impl LatencyReport {
    /// A single timed repetition says nothing about spread.
    pub fn statistical(&self) -> bool {
        self.repetitions > 1
    }

    pub fn to_report(&self) -> String {
        let mut s = format!("#variant={}\n", self.variant);
        let [t, h, w] = self.input;
        let _ = writeln!(s, "input={t}x{h}x{w}");
        let _ = writeln!(s, "repetitions={}", self.repetitions);
        let _ = writeln!(s, "warmup={}", self.warmup);
        for (k, v) in [
            ("median_ms", self.median_ms),
            ("p95_ms", self.p95_ms),
            ("flow_median_ms", self.flow_median_ms),
            ("backbone_median_ms", self.backbone_median_ms),
            ("head_median_ms", self.head_median_ms),
        ] {
            let _ = writeln!(s, "{k}={v:.3}");
        }
        if !self.statistical() {
            s.push_str("#note=single repetition, not statistically meaningful\n");
        }
        s
    }
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// Random frames in `[0, 1]` shaped like one model window.
pub fn synthetic_window(model: &Model<f32>, seed: u64) -> Result<Vec<Tensor<f32>>> {
    let p = &model.config.pipeline;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p.depth)
        .map(|_| Tensor::from_fn(vec![p.frame_size, p.frame_size, 3], |_| rng.gen::<f32>()))
        .collect()
}

fn time_once(model: &Model<f32>, frames: &[Tensor<f32>]) -> Result<StageTimes> {
    let start = Instant::now();
    let flow = if model.two_stream() {
        Some(flow_stack(frames, &model.config.flow)?)
    } else {
        None
    };
    let t_flow = Instant::now();
    let rgb = Tensor::stack(frames)?;
    let features = model.features(&rgb, flow.as_ref())?;
    let t_backbone = Instant::now();
    let pred = model.predict_features(&features)?;
    let end = Instant::now();
    std::hint::black_box(pred);
    let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
    Ok(StageTimes {
        flow_ms: ms(start, t_flow),
        backbone_ms: ms(t_flow, t_backbone),
        head_ms: ms(t_backbone, end),
        total_ms: ms(start, end),
    })
}

pub fn bench_inference(model: &Model<f32>, repetitions: usize, warmup: usize, seed: u64) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::invalid("benchmark needs at least one repetition"));
    }
    let frames = synthetic_window(model, seed)?;
    for _ in 0..warmup {
        time_once(model, &frames)?;
    }
    let samples = (0..repetitions).map(|_| time_once(model, &frames)).collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&StageTimes) -> f64| samples.iter().map(f).collect::<Vec<_>>();
    let totals = col(|s| s.total_ms);
    let p = &model.config.pipeline;
    Ok(LatencyReport {
        variant: model.config.name.clone(),
        input: [p.depth, p.frame_size, p.frame_size],
        repetitions,
        warmup,
        median_ms: median(&totals),
        p95_ms: percentile(&totals, 0.95),
        flow_median_ms: median(&col(|s| s.flow_ms)),
        backbone_median_ms: median(&col(|s| s.backbone_ms)),
        head_median_ms: median(&col(|s| s.head_ms)),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    #[test]
    fn percentiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(percentile(&v, 0.95), 5.0);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }

    #[test]
    fn toy_report() {
        let m = Model::build(ModelConfig::preset("nontrainable_twostream").unwrap().toy_scale(), 0).unwrap();
        let r = bench_inference(&m, 3, 1, 0).unwrap();
        assert!(r.median_ms <= r.p95_ms);
        assert!(r.statistical());
        assert_eq!(r.samples.len(), 3);
        let one = bench_inference(&m, 1, 0, 0).unwrap();
        assert!(one.to_report().contains("#note=single repetition"));
        assert!(bench_inference(&m, 0, 0, 0).is_err());
    }
}
