use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FrameSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEG: f64 = 10.0;

/// Random crop, zoom, rotation and horizontal flip. There is deliberately no
/// vertical flip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationSpec {
    /// Fraction of each side kept by the crop, sampled uniformly.
    pub crop_fraction: (f64, f64),
    pub zoom: (f64, f64),
    pub rotation_cap_deg: f64,
    pub hflip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            crop_fraction: (0.8, 1.0),
            zoom: (1.0, 1.2),
            rotation_cap_deg: MAX_ROTATION_DEG,
            hflip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            crop_fraction: (1.0, 1.0),
            zoom: (1.0, 1.0),
            rotation_cap_deg: 0.0,
            hflip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !(0.0..=MAX_ROTATION_DEG).contains(&self.rotation_cap_deg) {
            return Err(Error::Config(format!(
                "rotation cap {}° outside [0, {MAX_ROTATION_DEG}]",
                self.rotation_cap_deg
            )));
        }
        if !range_ok(self.crop_fraction) || self.crop_fraction.1 > 1.0 {
            return Err(Error::Config(format!(
                "crop fraction range {:?} must lie in (0, 1]",
                self.crop_fraction
            )));
        }
        if !range_ok(self.zoom) {
            return Err(Error::Config(format!("zoom range {:?} must be positive and ordered", self.zoom)));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.hflip_prob)));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transform {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let crop = uniform(rng, self.crop_fraction);
        let zoom = uniform(rng, self.zoom);
        let cap = self.rotation_cap_deg;
        let rotation_deg = uniform(rng, (-cap, cap));
        let slack = (1.0 - crop) / 2.0;
        let offset = (uniform(rng, (-slack, slack)), uniform(rng, (-slack, slack)));
        let hflip = self.hflip_prob > 0.0 && rng.gen::<f64>() < self.hflip_prob;
        Transform {
            crop,
            zoom,
            rotation_deg,
            hflip,
            offset,
        }
    }
}

/// One concrete geometric transform, applied identically to every frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub crop: f64,
    pub zoom: f64,
    pub rotation_deg: f64,
    pub hflip: bool,
    /// Crop-centre offset as a fraction of the frame size, `(y, x)`.
    pub offset: (f64, f64),
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            crop: 1.0,
            zoom: 1.0,
            rotation_deg: 0.0,
            hflip: false,
            offset: (0.0, 0.0),
        }
    }

    pub fn rotation(degrees: f64) -> Self {
        Self {
            rotation_deg: degrees,
            ..Self::identity()
        }
    }

    pub fn hflip() -> Self {
        Self {
            hflip: true,
            ..Self::identity()
        }
    }

    /// Inverse-map every output pixel into the source and sample bilinearly;
    /// samples outside the frame read zero.
    pub fn apply(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
        frame.expect_rank(3, "frame (H×W×C)")?;
        let (h, w, c) = (frame.dims()[0], frame.dims()[1], frame.dims()[2]);
        let src = frame.data();
        let scale = self.crop / self.zoom;
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (oy, ox) = (cy + self.offset.0 * h as f64, cx + self.offset.1 * w as f64);
        let exact = scale == 1.0 && self.rotation_deg == 0.0 && self.offset == (0.0, 0.0);
        let mut out = vec![0.0f32; h * w * c];
        for y in 0..h {
            for x in 0..w {
                let xo = if self.hflip { w - 1 - x } else { x };
                let dst = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
                if exact {
                    dst.copy_from_slice(&src[(y * w + xo) * c..(y * w + xo + 1) * c]);
                    continue;
                }
                let (dy, dx) = ((y as f64 - cy) * scale, (xo as f64 - cx) * scale);
                let sy = oy + cos * dy + sin * dx;
                let sx = ox - sin * dy + cos * dx;
                sample_bilinear(src, h, w, c, sy, sx, dst);
            }
        }
        Tensor::new(vec![h, w, c], out)
    }
}

fn sample_bilinear(src: &[f32], h: usize, w: usize, c: usize, sy: f64, sx: f64, dst: &mut [f32]) {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |yy: i64, xx: i64, k: usize| -> f32 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            src[(yy as usize * w + xx as usize) * c + k]
        }
    };
    for (k, d) in dst.iter_mut().enumerate() {
        let top = at(y0, x0, k) * (1.0 - fx) + at(y0, x0 + 1, k) * fx;
        let bot = at(y0 + 1, x0, k) * (1.0 - fx) + at(y0 + 1, x0 + 1, k) * fx;
        *d = top * (1.0 - fy) + bot * fy;
    }
}

/// Draw one transform from `spec.seed` and apply it to every frame.
pub fn augment(clip: &FrameSequence, spec: &AugmentationSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let t = spec.sample(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(FrameSequence {
        frames: clip.frames.iter().map(|f| t.apply(f)).collect::<Result<_>>()?,
        fps: clip.fps,
        source_id: clip.source_id.clone(),
    })
}
