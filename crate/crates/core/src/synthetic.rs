//! Synthetic static-camera scenes: two squares over a textured background
//! that either collide and stop, or pass each other in separate lanes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Manifest, ManifestRow, Source, Split};
use crate::error::{Error, Result};
use crate::ops::Label;
use crate::tensor::Tensor;
use crate::video::{ppm, FrameSequence};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub size: usize,
    pub frames: usize,
    pub square: usize,
    pub fps: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 32,
            frames: 8,
            square: 6,
            fps: 30.0,
        }
    }
}

/// Smooth random texture in roughly `[0.25, 0.75]`.
pub fn background<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<[f32; 3]> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.15..0.6),
                rng.gen_range(0.15..0.6),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.04..0.08),
            )
        })
        .collect();
    let tint: [f64; 3] = [rng.gen_range(0.9..1.1), rng.gen_range(0.9..1.1), rng.gen_range(0.9..1.1)];
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            let v = 0.5 + waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum::<f64>();
            tint.map(|t| (v * t).clamp(0.0, 1.0) as f32)
        })
        .collect()
}

/// Square with a texture fixed to its own coordinates, so interior pixels
/// carry brightness gradients that move with it.
fn paint(frame: &mut [[f32; 3]], size: usize, y: f64, x: f64, side: usize, color: [f32; 3]) {
    let (y0, x0) = (y.round() as i64, x.round() as i64);
    let w = std::f32::consts::TAU / TEXTURE_PERIOD;
    for dy in 0..side as i64 {
        for dx in 0..side as i64 {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < size && (xx as usize) < size {
                let m = TEXTURE_AMPLITUDE * ((dy as f32 * w).sin() + (dx as f32 * w).cos());
                frame[yy as usize * size + xx as usize] = color.map(|c| (c + m).clamp(0.0, 1.0));
            }
        }
    }
}

const TEXTURE_AMPLITUDE: f32 = 0.1;
const TEXTURE_PERIOD: f32 = 8.0;

fn to_tensor(frame: &[[f32; 3]], size: usize) -> Tensor<f32> {
    Tensor::new(vec![size, size, 3], frame.iter().flatten().copied().collect()).expect("size² pixels")
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    let mut c = [rng.gen_range(0.0..0.15f32), rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.15)];
    c[rng.gen_range(0..3)] = rng.gen_range(0.85..1.0);
    c
}

/// One clip of `cfg.frames` frames. Collisions: the squares share a lane,
/// meet at a random frame in the middle half of the clip and stay together.
/// Pass-bys: separate lanes, constant velocity throughout.
pub fn scene(kind: Label, cfg: &SceneConfig, seed: u64) -> Result<FrameSequence> {
    if cfg.frames < 2 || cfg.square == 0 || cfg.size < 4 * cfg.square {
        return Err(Error::invalid(format!("scene config too small: {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, s, sq) = (cfg.frames, cfg.size as f64, cfg.square as f64);
    let bg = background(cfg.size, &mut rng);
    let (ca, cb) = (color(&mut rng), color(&mut rng));
    let vertical = rng.gen_bool(0.5);
    let last = (n - 1) as f64;
    let margin = 1.0;
    let lane_room = s - sq - 2.0 * margin;
    // Positions along the motion axis for square A (moving +) and B (moving −).
    let (lane_a, lane_b, meet) = match kind {
        Label::Accident => {
            let lane = margin + rng.gen_range(0.0..lane_room);
            (lane, lane, Some(rng.gen_range(0.4..0.75) * last))
        }
        Label::Normal => {
            let gap = sq + 2.0;
            let a = margin + rng.gen_range(0.0..(lane_room - gap));
            let b = rng.gen_range(a + gap..=lane_room + margin);
            if rng.gen_bool(0.5) {
                (a, b, None)
            } else {
                (b, a, None)
            }
        }
    };
    let contact = rng.gen_range(sq..s - 2.0 * sq);
    let speed = rng.gen_range(1.0..2.0f64).max((s - 2.0 * sq) / (2.0 * last.max(1.0))).min(sq - 1.0);
    let t_meet = meet.unwrap_or(last * 0.5);
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let tt = match meet {
            Some(m) => (t as f64).min(m),
            None => t as f64,
        };
        let pa = contact - sq - speed * (t_meet - tt);
        let pb = contact + speed * (t_meet - tt);
        let mut f = bg.clone();
        let place = |f: &mut Vec<[f32; 3]>, lane: f64, pos: f64, c: [f32; 3]| {
            if vertical {
                paint(f, cfg.size, pos, lane, cfg.square, c)
            } else {
                paint(f, cfg.size, lane, pos, cfg.square, c)
            }
        };
        place(&mut f, lane_a, pa, ca);
        place(&mut f, lane_b, pb, cb);
        frames.push(to_tensor(&f, cfg.size));
    }
    FrameSequence::new(frames, cfg.fps, format!("{kind}_{seed}"))
}

/// Balanced labelled clips, alternating accident / normal.
pub fn dataset(count: usize, cfg: &SceneConfig, seed: u64) -> Result<Vec<(FrameSequence, Label)>> {
    (0..count)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Accident } else { Label::Normal };
            let clip_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut clip = scene(label, cfg, clip_seed)?;
            clip.source_id = format!("syn{seed}_{i:03}");
            Ok((clip, label))
        })
        .collect()
}

/// Two frames of a single square moving by `(dy, dx)` pixels over a textured
/// background, with the square's pixel mask in the first frame.
pub fn moving_square_pair(size: usize, side: usize, dy: i64, dx: i64, seed: u64) -> Result<(Tensor<f32>, Tensor<f32>, Vec<bool>)> {
    if size < side + 4 {
        return Err(Error::invalid("frame too small for the square"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = background(size, &mut rng);
    let c = (size - side) as f64 / 2.0;
    let col = [0.8, 0.75, 0.1];
    let mut a = bg.clone();
    paint(&mut a, size, c, c, side, col);
    let mut b = bg;
    paint(&mut b, size, c + dy as f64, c + dx as f64, side, col);
    let start = c.round() as usize;
    let mask = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            (start..start + side).contains(&y) && (start..start + side).contains(&x)
        })
        .collect();
    Ok((to_tensor(&a, size), to_tensor(&b, size), mask))
}

/// Write clips as PPM frame directories plus a `manifest.csv`. Clip `i` goes
/// to `splits[i % splits.len()]`.
pub fn write_dataset(dir: &Path, clips: &[(FrameSequence, Label)], splits: &[Split]) -> Result<Manifest> {
    if splits.is_empty() {
        return Err(Error::invalid("need at least one split"));
    }
    let mut rows = Vec::with_capacity(clips.len());
    for (i, (clip, label)) in clips.iter().enumerate() {
        let rel = Path::new("clips").join(&clip.source_id);
        ppm::write_frame_dir(&dir.join(&rel), clip)?;
        rows.push(ManifestRow {
            clip_id: clip.source_id.clone(),
            frames_dir: rel,
            label: *label,
            split: splits[i % splits.len()],
            source: Source::External,
        });
    }
    let manifest = Manifest { rows };
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest.to_csv()).map_err(|e| Error::io(&path, e))?;
    Manifest::load(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let cfg = SceneConfig::default();
        for kind in Label::ALL {
            let a = scene(kind, &cfg, 4).unwrap();
            assert_eq!(a, scene(kind, &cfg, 4).unwrap());
            assert_eq!(a.len(), 8);
            for f in &a.frames {
                assert_eq!(f.dims(), &[32, 32, 3]);
                assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        assert_ne!(scene(Label::Accident, &cfg, 4).unwrap(), scene(Label::Accident, &cfg, 5).unwrap());
    }

    #[test]
    fn collisions_end_static_and_pass_bys_keep_moving() {
        let cfg = SceneConfig::default();
        for seed in 0..10 {
            let a = scene(Label::Accident, &cfg, seed).unwrap();
            assert_eq!(a.frames[6], a.frames[7], "seed {seed}");
            let n = scene(Label::Normal, &cfg, seed).unwrap();
            assert_ne!(n.frames[6], n.frames[7], "seed {seed}");
        }
    }

    #[test]
    fn balanced_dataset() {
        let d = dataset(6, &SceneConfig::default(), 1).unwrap();
        assert_eq!(d.iter().filter(|(_, l)| *l == Label::Accident).count(), 3);
        let ids: std::collections::HashSet<_> = d.iter().map(|(c, _)| c.source_id.clone()).collect();
        assert_eq!(ids.len(), 6);
    }
}
