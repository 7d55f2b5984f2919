//! Binary P6 frames (`frame_000001.ppm`, …) plus a `meta.txt` holding `fps=`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{normalize_u8, FrameSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const META_FILE: &str = "meta.txt";

pub fn frame_name(index: usize) -> String {
    format!("frame_{:06}.ppm", index + 1)
}

/// Decode a P6 image with maxval 255 into raw `(height, width, rgb bytes)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!("expected P6 magic, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> { s.parse().map_err(|_| Error::Format(format!("bad PPM {what} {s:?}"))) };
    let (w, h, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {maxval} unsupported (need 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("PPM with zero extent".into()));
    }
    pos += 1;
    let need = w * h * 3;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("PPM pixel data truncated: need {need} bytes")))?;
    Ok((h, w, data.to_vec()))
}

pub fn encode_ppm(h: usize, w: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Read one frame normalised to `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, data) = decode_ppm(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    normalize_u8(vec![h, w, 3], &data)
}

/// Quantise a `[0, 1]` frame to 8 bits and write it.
pub fn write_frame(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    frame.expect_rank(3, "frame (H×W×3)")?;
    if frame.dims()[2] != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            got: frame.dims()[2],
        });
    }
    let bytes: Vec<u8> = frame.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    fs::write(path, encode_ppm(frame.dims()[0], frame.dims()[1], &bytes)).map_err(|e| Error::io(path, e))
}

pub fn read_fps(dir: &Path) -> Result<f64> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    for (i, line) in text.lines().enumerate() {
        if let Some(v) = line.trim().strip_prefix("fps=") {
            let fps: f64 = v.trim().parse().map_err(|_| Error::Parse {
                what: "frame metadata",
                line: i + 1,
                msg: format!("fps value {v:?} is not a number"),
            })?;
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(Error::Data(format!("{}: fps must be positive, got {fps}", path.display())));
            }
            return Ok(fps);
        }
    }
    Err(Error::Data(format!("{}: no fps= line", path.display())))
}

/// Paths of `frame_000001.ppm`, `frame_000002.ppm`, … up to the first gap.
pub fn frame_paths(dir: &Path) -> Vec<PathBuf> {
    (0..).map(|i| dir.join(frame_name(i))).take_while(|p| p.is_file()).collect()
}

pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let fps = read_fps(dir)?;
    let paths = frame_paths(dir);
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no frame_000001.ppm", dir.display())));
    }
    let frames = paths.iter().map(|p| read_frame(p)).collect::<Result<_>>()?;
    let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    FrameSequence::new(frames, fps, id)
}

pub fn write_frame_dir(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_frame(&dir.join(frame_name(i)), f)?;
    }
    let meta = dir.join(META_FILE);
    fs::write(&meta, format!("fps={}\n", seq.fps)).map_err(|e| Error::io(&meta, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment() {
        let mut b = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let (h, w, d) = decode_ppm(&b).unwrap();
        assert_eq!((h, w), (1, 2));
        assert_eq!(d, vec![1, 2, 3, 4, 5, 6]);
        assert!(decode_ppm(&b[..b.len() - 1]).is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Tensor::from_fn(vec![3, 4, 3], |i| (i * 7 % 256) as f32 / 255.0).unwrap();
        let seq = FrameSequence::new(vec![f.clone(), f], 29.97, "x").unwrap();
        write_frame_dir(dir.path(), &seq).unwrap();
        let back = read_frame_dir(dir.path()).unwrap();
        assert_eq!(back.fps, 29.97);
        assert_eq!(back.frames, seq.frames);
    }
}
