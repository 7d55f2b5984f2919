//! Dataset manifests, clip caches and conversion of clips into model samples.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::flow::flow_stack;
use crate::ops::Label;
use crate::tensor::Tensor;
use crate::tensor_file::{read_tensor, write_tensor};
use crate::train::Sample;
use crate::video::{ppm, FrameSequence};

pub const MANIFEST_HEADER: &str = "clip_id,frames_dir,label,split,source";
pub const RGB_CACHE: &str = "rgb.tnsr";
pub const FLOW_CACHE: &str = "flow.tnsr";
pub const CLIP_META: &str = "clip.txt";

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(Split { Train => "train", Val => "val", Test => "test" });
text_enum!(Source { Trafficam => "trafficam", Dashcam => "dashcam", External => "external" });

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub clip_id: String,
    /// Either a directory of PPM frames or a clip cache.
    pub frames_dir: PathBuf,
    pub label: Label,
    pub split: Split,
    pub source: Source,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Parse CSV text. Relative `frames_dir` values resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            Some((i, h)) => {
                return Err(Error::Parse {
                    what: "manifest",
                    line: i + 1,
                    msg: format!("expected header {MANIFEST_HEADER:?}, got {h:?}"),
                })
            }
            None => return Err(Error::Data("manifest is empty".into())),
        }
        let mut seen = HashSet::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let err = |msg: String| Error::Parse {
                what: "manifest",
                line: i + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, got {}", fields.len())));
            }
            let label: Label = fields[2].parse().map_err(|e: Error| err(e.to_string()))?;
            let split: Split = fields[3].parse().map_err(|e: Error| err(e.to_string()))?;
            let source: Source = fields[4].parse().map_err(|e: Error| err(e.to_string()))?;
            let clip_id = fields[0].to_string();
            if clip_id.is_empty() {
                return Err(err("empty clip_id".into()));
            }
            if !seen.insert(clip_id.clone()) {
                return Err(err(format!("duplicate clip_id {clip_id:?}")));
            }
            let dir = PathBuf::from(fields[1]);
            rows.push(ManifestRow {
                clip_id,
                frames_dir: if dir.is_absolute() { dir } else { base.join(dir) },
                label,
                split,
                source,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.clip_id,
                r.frames_dir.display(),
                r.label,
                r.split,
                r.source
            ));
        }
        s
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn summary(&self) -> SplitSummary {
        let mut s = SplitSummary::default();
        for r in &self.rows {
            *s.totals.entry(r.split).or_default() += 1;
            *s.cells.entry((r.split, r.source, r.label)).or_default() += 1;
        }
        s
    }

    /// Every `frames_dir` must exist.
    pub fn check_dirs(&self) -> Result<()> {
        for r in &self.rows {
            if !r.frames_dir.is_dir() {
                return Err(Error::Data(format!(
                    "clip {}: frames_dir {} does not exist",
                    r.clip_id,
                    r.frames_dir.display()
                )));
            }
        }
        Ok(())
    }
}

/// Per-split totals and per (split, source, label) cell counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitSummary {
    pub totals: BTreeMap<Split, usize>,
    pub cells: BTreeMap<(Split, Source, Label), usize>,
}

impl SplitSummary {
    pub fn total(&self, split: Split) -> usize {
        self.totals.get(&split).copied().unwrap_or(0)
    }
}

impl fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "split")?;
        for src in Source::ALL {
            for l in Label::ALL {
                write!(f, ",{src}_{l}")?;
            }
        }
        writeln!(f, ",total")?;
        for &sp in Split::ALL {
            write!(f, "{sp}")?;
            for &src in Source::ALL {
                for l in Label::ALL {
                    write!(f, ",{}", self.cells.get(&(sp, src, l)).copied().unwrap_or(0))?;
                }
            }
            writeln!(f, ",{}", self.total(sp))?;
        }
        Ok(())
    }
}

/// Write a clip cache: the prepared RGB stack, its flow stack and metadata.
pub fn write_cache(dir: &Path, rgb: &Tensor<f32>, flow: Option<&Tensor<f32>>, fps: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor(dir.join(RGB_CACHE), rgb)?;
    if let Some(f) = flow {
        write_tensor(dir.join(FLOW_CACHE), f)?;
    }
    let meta = dir.join(CLIP_META);
    fs::write(&meta, format!("fps={fps}\nframes={}\n", rgb.dims()[0])).map_err(|e| Error::io(&meta, e))
}

pub fn is_cache(dir: &Path) -> bool {
    dir.join(RGB_CACHE).is_file()
}

/// Cut the first `depth` frames; the flow stack's last field is replaced by
/// its predecessor so it matches a flow stack computed on the window alone.
fn first_window(rgb: &Tensor<f32>, flow: Option<&Tensor<f32>>, depth: usize, id: &str) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let n = rgb.dims()[0];
    if n < depth {
        return Err(Error::Data(format!(
            "clip {id}: {n} frames after sampling, window depth is {depth}"
        )));
    }
    if n == depth {
        return Ok((rgb.clone(), flow.cloned()));
    }
    let rgb = rgb.narrow_axis0(0, depth)?;
    let flow = match flow {
        Some(f) => {
            let mut w = f.narrow_axis0(0, depth)?;
            if depth >= 2 {
                let prev = w.axis0_slice(depth - 2).to_vec();
                w.axis0_slice_mut(depth - 1).copy_from_slice(&prev);
            }
            Some(w)
        }
        None => None,
    };
    Ok((rgb, flow))
}

/// Sample, resize and cut a raw clip into one model input.
pub fn prepare_clip(clip: &FrameSequence, config: &ModelConfig) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let prepared = config.pipeline.prepare(clip)?;
    let depth = config.pipeline.depth;
    if prepared.len() < depth {
        return Err(Error::Data(format!(
            "clip {}: {} frames after sampling, window depth is {depth}",
            clip.source_id,
            prepared.len()
        )));
    }
    let frames = &prepared.frames[..depth];
    let flow = if config.two_stream() {
        Some(flow_stack(frames, &config.flow)?)
    } else {
        None
    };
    Ok((Tensor::stack(frames)?, flow))
}

/// Sample and resize every frame of a clip and cache it with its flow stack
/// (two-stream configs only). Returns the number of cached frames.
pub fn cache_clip(clip: &FrameSequence, config: &ModelConfig, dir: &Path) -> Result<usize> {
    let prepared = config.pipeline.prepare(clip)?;
    if prepared.is_empty() {
        return Err(Error::Data(format!("clip {} has no frames after sampling", clip.source_id)));
    }
    let flow = if config.two_stream() {
        if prepared.len() < 2 {
            return Err(Error::Data(format!(
                "clip {}: flow needs at least 2 sampled frames",
                clip.source_id
            )));
        }
        Some(flow_stack(&prepared.frames, &config.flow)?)
    } else {
        None
    };
    write_cache(dir, &Tensor::stack(&prepared.frames)?, flow.as_ref(), prepared.fps)?;
    Ok(prepared.len())
}

/// Cut a raw stream into fixed-duration clips and cache each one under
/// `out/<clip_id>`. Returns the clip ids with their cached frame counts.
pub fn preprocess_stream(raw: &FrameSequence, config: &ModelConfig, out: &Path) -> Result<Vec<(String, usize)>> {
    let clips = crate::video::segment_clips(raw)?;
    if clips.is_empty() {
        return Err(Error::Data(format!(
            "stream {} has {} frames, shorter than one clip",
            raw.source_id,
            raw.len()
        )));
    }
    clips
        .iter()
        .map(|c| Ok((c.source_id.clone(), cache_clip(c, config, &out.join(&c.source_id))?)))
        .collect()
}

/// Cache every manifest row under `out/clips/<clip_id>` and write
/// `out/manifest.csv` pointing at the caches.
pub fn preprocess_manifest(manifest: &Manifest, config: &ModelConfig, out: &Path) -> Result<Manifest> {
    manifest.check_dirs()?;
    let mut rows = Vec::with_capacity(manifest.rows.len());
    for row in &manifest.rows {
        let rel = Path::new("clips").join(&row.clip_id);
        let clip = ppm::read_frame_dir(&row.frames_dir)?;
        cache_clip(&clip, config, &out.join(&rel))?;
        rows.push(ManifestRow {
            frames_dir: rel,
            ..row.clone()
        });
    }
    let cached = Manifest { rows };
    let path = out.join("manifest.csv");
    fs::write(&path, cached.to_csv()).map_err(|e| Error::io(&path, e))?;
    Manifest::load(&path)
}

/// Load one manifest row as a sample, from a cache or from raw frames.
pub fn load_sample(row: &ManifestRow, config: &ModelConfig) -> Result<Sample> {
    let dir = &row.frames_dir;
    let (rgb, flow) = if is_cache(dir) {
        let rgb = read_tensor(dir.join(RGB_CACHE))?;
        let size = config.pipeline.frame_size;
        if rgb.rank() != 4 || rgb.dims()[1..] != [size, size, 3] {
            return Err(Error::Data(format!(
                "clip {}: cached frames are {:?}, config expects N×{size}×{size}×3",
                row.clip_id,
                rgb.dims()
            )));
        }
        let flow_path = dir.join(FLOW_CACHE);
        let flow = if config.two_stream() {
            if !flow_path.is_file() {
                return Err(Error::Data(format!(
                    "clip {}: flow cache {} absent but variant {} is two-stream",
                    row.clip_id,
                    flow_path.display(),
                    config.name
                )));
            }
            let f = read_tensor(&flow_path)?;
            f.expect_dims(&[rgb.dims()[0], size, size, 2], "cached flow stack")?;
            Some(f)
        } else {
            None
        };
        first_window(&rgb, flow.as_ref(), config.pipeline.depth, &row.clip_id)?
    } else if dir.join(ppm::frame_name(0)).is_file() {
        prepare_clip(&ppm::read_frame_dir(dir)?, config)?
    } else {
        return Err(Error::Data(format!(
            "clip {}: {} holds neither a cache nor PPM frames",
            row.clip_id,
            dir.display()
        )));
    };
    Ok(Sample {
        clip_id: row.clip_id.clone(),
        label: row.label,
        rgb,
        flow,
    })
}

pub fn load_split(manifest: &Manifest, split: Split, config: &ModelConfig) -> Result<Vec<Sample>> {
    manifest.split(split).into_iter().map(|r| load_sample(r, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_and_rejects_bad_ones() {
        let text = "clip_id,frames_dir,label,split,source\n\
                    a,clips/a,accident,train,trafficam\n\
                    b,/abs/b,normal,val,dashcam\n\
                    c,c,normal,test,external\n";
        let m = Manifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.rows[0].frames_dir, PathBuf::from("/data/clips/a"));
        assert_eq!(m.rows[1].frames_dir, PathBuf::from("/abs/b"));
        let crash = text.replace("a,clips/a,accident", "a,clips/a,crash");
        let err = Manifest::parse(&crash, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("crash"), "{err}");
        let dup = text.replace("b,/abs/b", "a,/abs/b");
        assert!(Manifest::parse(&dup, Path::new(".")).is_err());
        assert!(Manifest::parse("id,dir\n", Path::new(".")).is_err());
        assert_eq!(Manifest::parse(&m.to_csv(), Path::new("/elsewhere")).unwrap(), m);
    }

    #[test]
    fn window_cut_matches_window_flow() {
        let rgb = Tensor::from_fn(vec![5, 2, 2, 3], |i| i as f32).unwrap();
        let flow = Tensor::from_fn(vec![5, 2, 2, 2], |i| i as f32).unwrap();
        let (r, f) = first_window(&rgb, Some(&flow), 3, "x").unwrap();
        assert_eq!(r.dims(), &[3, 2, 2, 3]);
        let f = f.unwrap();
        assert_eq!(f.axis0_slice(2), flow.axis0_slice(1));
        assert!(first_window(&rgb, None, 6, "x").is_err());
    }

    #[test]
    fn cached_manifest_loads_like_raw_frames() {
        use crate::synthetic::{dataset, write_dataset, SceneConfig};
        let raw = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let clips = dataset(2, &SceneConfig::default(), 9).unwrap();
        let m = write_dataset(raw.path(), &clips, &[Split::Train]).unwrap();
        let mut cfg = ModelConfig::preset("trainable_twostream").unwrap().toy_scale();
        cfg.pipeline.depth = 6;
        cfg.flow.iterations = 4;
        let cached = preprocess_manifest(&m, &cfg, out.path()).unwrap();
        assert!(cached.rows.iter().all(|r| is_cache(&r.frames_dir)));
        assert_eq!(
            load_split(&cached, Split::Train, &cfg).unwrap(),
            load_split(&m, Split::Train, &cfg).unwrap()
        );
        let rgb_only = ModelConfig {
            streams: vec![crate::backbone::Stream::Rgb],
            ..cfg.clone()
        };
        let plain = tempfile::tempdir().unwrap();
        let no_flow = preprocess_manifest(&m, &rgb_only, plain.path()).unwrap();
        assert!(matches!(load_split(&no_flow, Split::Train, &cfg), Err(Error::Data(_))));
    }
}
