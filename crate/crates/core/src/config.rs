//! Named model variants as plain `key=value` files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::backbone::{format_stages, parse_stages, BackboneConfig, StageConfig, Stream};
use crate::error::{Error, Result};
use crate::flow::HornSchunck;
use crate::head::HeadConfig;
use crate::train::{OptimizerKind, TrainConfig};
use crate::video::{AugmentationSpec, PipelineConfig};

pub const VARIANTS: [&str; 4] = ["rgb_only", "nontrainable_twostream", "augmented_twostream", "trainable_twostream"];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub streams: Vec<Stream>,
    pub stages: Vec<StageConfig>,
    pub trainable_last_n: usize,
    pub head: HeadConfig,
    pub pipeline: PipelineConfig,
    pub flow: HornSchunck,
    pub augment: Option<AugmentationSpec>,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// Built-in settings for one of [`VARIANTS`].
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            name: name.to_string(),
            streams: vec![Stream::Rgb, Stream::Flow],
            stages: BackboneConfig::mini_i3d(3).stages,
            trainable_last_n: 0,
            head: HeadConfig::default(),
            pipeline: PipelineConfig::default(),
            flow: HornSchunck::default(),
            augment: None,
            train: TrainConfig::default(),
        };
        match name {
            "rgb_only" => Ok(Self {
                streams: vec![Stream::Rgb],
                ..base
            }),
            "nontrainable_twostream" => Ok(base),
            "augmented_twostream" => Ok(Self {
                augment: Some(AugmentationSpec::default()),
                ..base
            }),
            "trainable_twostream" => Ok(Self {
                trainable_last_n: 3,
                head: HeadConfig::trainable_variant(),
                ..base
            }),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected one of {}",
                VARIANTS.join(", ")
            ))),
        }
    }

    pub fn two_stream(&self) -> bool {
        self.streams.contains(&Stream::Flow)
    }

    pub fn backbone(&self, stream: Stream) -> BackboneConfig {
        BackboneConfig {
            stages: self.stages.clone(),
            trainable_last_n: self.trainable_last_n,
            input_channels: stream.channels(),
        }
    }

    /// `T×H×W` of one model input window.
    pub fn input_extent(&self) -> [usize; 3] {
        let p = &self.pipeline;
        [p.depth, p.frame_size, p.frame_size]
    }

    pub fn validate(&self) -> Result<()> {
        if self.streams.first() != Some(&Stream::Rgb) || self.streams.len() > 2 || self.streams[1..].iter().any(|s| *s != Stream::Flow) {
            return Err(Error::Config(format!("streams must be rgb or rgb,flow, got {:?}", self.streams)));
        }
        self.pipeline.validate()?;
        self.flow.validate()?;
        self.head.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.train.validate()?;
        for s in &self.streams {
            self.backbone(*s).validate(self.input_extent())?;
        }
        Ok(())
    }

    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |e: String| Error::Config(format!("{key}={v}: {e}"));
        match key.trim() {
            "name" => self.name = v.to_string(),
            "streams" => {
                self.streams = v
                    .split(',')
                    .map(|s| match s.trim() {
                        "rgb" => Ok(Stream::Rgb),
                        "flow" => Ok(Stream::Flow),
                        other => Err(bad(format!("unknown stream {other:?}"))),
                    })
                    .collect::<Result<_>>()?
            }
            "backbone.preset" => self.stages = BackboneConfig::preset(v, 3)?.stages,
            "backbone.stages" => self.stages = parse_stages(v)?,
            "backbone.trainable_last_n" => self.trainable_last_n = parse(v).map_err(bad)?,
            "head.filters" => self.head.filters = parse_list(v).map_err(bad)?,
            "head.kernel" => self.head.kernel = parse(v).map_err(bad)?,
            "head.batchnorm_before_gap" => self.head.batchnorm_before_gap = parse(v).map_err(bad)?,
            "head.dense" => self.head.dense = parse_list(v).map_err(bad)?,
            "head.dropout" => self.head.dropout = parse(v).map_err(bad)?,
            "input.frame_size" => self.pipeline.frame_size = parse(v).map_err(bad)?,
            "input.sample_stride" => self.pipeline.sample_stride = parse(v).map_err(bad)?,
            "input.depth" => self.pipeline.depth = parse(v).map_err(bad)?,
            "input.window_stride" => self.pipeline.window_stride = parse(v).map_err(bad)?,
            "flow.alpha" => self.flow.alpha = parse(v).map_err(bad)?,
            "flow.iterations" => self.flow.iterations = parse(v).map_err(bad)?,
            "augment" => {
                let on: bool = parse(v).map_err(bad)?;
                self.augment = match (on, self.augment) {
                    (false, _) => None,
                    (true, Some(a)) => Some(a),
                    (true, None) => Some(AugmentationSpec::default()),
                }
            }
            k if k.starts_with("augment.") => {
                let a = self.augment.get_or_insert_with(AugmentationSpec::default);
                match k {
                    "augment.crop_min" => a.crop_fraction.0 = parse(v).map_err(bad)?,
                    "augment.crop_max" => a.crop_fraction.1 = parse(v).map_err(bad)?,
                    "augment.zoom_min" => a.zoom.0 = parse(v).map_err(bad)?,
                    "augment.zoom_max" => a.zoom.1 = parse(v).map_err(bad)?,
                    "augment.rotation_deg" => a.rotation_cap_deg = parse(v).map_err(bad)?,
                    "augment.hflip_prob" => a.hflip_prob = parse(v).map_err(bad)?,
                    _ => return Err(Error::Config(format!("unknown key {k:?}"))),
                }
            }
            "train.epochs" => self.train.epochs = parse(v).map_err(bad)?,
            "train.learning_rate" => self.train.learning_rate = parse(v).map_err(bad)?,
            "train.batch_size" => self.train.batch_size = parse(v).map_err(bad)?,
            "train.optimizer" => self.train.optimizer = parse(v).map_err(bad)?,
            "train.class_weights" => self.train.class_weights = parse(v).map_err(bad)?,
            "train.seed" => self.train.seed = parse(v).map_err(bad)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply every non-comment line of a `key=value` text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                what: "variant config",
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                what: "variant config",
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Start from the preset named by the text's `name=` line (or `fallback`)
    /// and apply the remaining keys on top.
    pub fn from_text(text: &str, fallback: &str) -> Result<Self> {
        let name = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix("name="))
            .next_back()
            .map(str::trim)
            .unwrap_or(fallback);
        let mut cfg = Self::preset(name)?;
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, "trainable_twostream")
    }

    /// Every setting, one per line, in a stable order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let streams: Vec<&str> = self.streams.iter().map(|s| s.name()).collect();
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "streams={}", streams.join(","));
        let _ = writeln!(s, "backbone.stages={}", format_stages(&self.stages));
        let _ = writeln!(s, "backbone.trainable_last_n={}", self.trainable_last_n);
        let _ = writeln!(s, "head.filters={}", list(&self.head.filters));
        let _ = writeln!(s, "head.kernel={}", self.head.kernel);
        let _ = writeln!(s, "head.batchnorm_before_gap={}", self.head.batchnorm_before_gap);
        let _ = writeln!(s, "head.dense={}", list(&self.head.dense));
        let _ = writeln!(s, "head.dropout={}", self.head.dropout);
        let _ = writeln!(s, "input.frame_size={}", self.pipeline.frame_size);
        let _ = writeln!(s, "input.sample_stride={}", self.pipeline.sample_stride);
        let _ = writeln!(s, "input.depth={}", self.pipeline.depth);
        let _ = writeln!(s, "input.window_stride={}", self.pipeline.window_stride);
        let _ = writeln!(s, "flow.alpha={}", self.flow.alpha);
        let _ = writeln!(s, "flow.iterations={}", self.flow.iterations);
        let _ = writeln!(s, "augment={}", self.augment.is_some());
        if let Some(a) = &self.augment {
            let _ = writeln!(s, "augment.crop_min={}", a.crop_fraction.0);
            let _ = writeln!(s, "augment.crop_max={}", a.crop_fraction.1);
            let _ = writeln!(s, "augment.zoom_min={}", a.zoom.0);
            let _ = writeln!(s, "augment.zoom_max={}", a.zoom.1);
            let _ = writeln!(s, "augment.rotation_deg={}", a.rotation_cap_deg);
            let _ = writeln!(s, "augment.hflip_prob={}", a.hflip_prob);
        }
        let t = &self.train;
        let _ = writeln!(s, "train.epochs={}", t.epochs);
        let _ = writeln!(s, "train.learning_rate={}", t.learning_rate);
        let _ = writeln!(s, "train.batch_size={}", t.batch_size);
        let _ = writeln!(s, "train.optimizer={}", t.optimizer);
        let _ = writeln!(s, "train.class_weights={}", t.class_weights);
        let _ = writeln!(s, "train.seed={}", t.seed);
        s
    }

    /// Shrink to 32×32 frames, depth 8 and the toy backbone, keeping the
    /// head, freezing and augmentation settings of the variant.
    pub fn toy_scale(mut self) -> Self {
        self.stages = BackboneConfig::toy(3).stages;
        self.pipeline = PipelineConfig {
            frame_size: 32,
            sample_stride: 1,
            depth: 8,
            window_stride: 4,
        };
        self.flow = HornSchunck::new(self.flow.alpha, 30).expect("valid");
        self
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|x| parse(x.trim())).collect()
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for v in VARIANTS {
            let cfg = ModelConfig::preset(v).unwrap();
            cfg.validate().unwrap();
            let back = ModelConfig::from_text(&cfg.to_text(), "rgb_only").unwrap();
            assert_eq!(back, cfg, "{v}");
            let toy = cfg.toy_scale();
            toy.validate().unwrap();
        }
        assert!(ModelConfig::preset("densenet").is_err());
    }

    #[test]
    fn file_keys_override_preset() {
        let cfg = ModelConfig::from_text("name=rgb_only\ntrain.learning_rate=0.01\n# c\nhead.dense=8,4\n", "x").unwrap();
        assert_eq!(cfg.streams, vec![Stream::Rgb]);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.head.dense, vec![8, 4]);
        let err = ModelConfig::from_text("name=rgb_only\nbogus=1\n", "x").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn variant_differences() {
        let t = ModelConfig::preset("trainable_twostream").unwrap();
        assert_eq!(t.head.filters, vec![96, 32, 32]);
        assert!(t.head.batchnorm_before_gap);
        assert_eq!(t.head.dense, vec![512, 256, 256]);
        assert!(t.trainable_last_n > 0);
        assert!(ModelConfig::preset("augmented_twostream").unwrap().augment.is_some());
        assert_eq!(ModelConfig::preset("nontrainable_twostream").unwrap().trainable_last_n, 0);
        assert!(!ModelConfig::preset("rgb_only").unwrap().two_stream());
    }
}
