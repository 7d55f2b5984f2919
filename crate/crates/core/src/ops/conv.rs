//! 2D and 3D convolutions over channels-last tensors.
//!
//! Both are lowered to an im2col matrix multiplied against the kernel viewed
//! as a `(Kt·Kh·Kw·C) × F` matrix. The patch matrix is built in row chunks so
//! memory stays bounded for large inputs. `conv2d` is `conv3d` with a unit
//! temporal axis.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

/// Border handling. `Same` pads with zeros so the output extent is
/// `ceil(input / stride)`; odd padding puts the extra cell at the trailing edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    Valid,
    #[default]
    Same,
}

impl std::str::FromStr for Padding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Padding::Valid),
            "same" => Ok(Padding::Same),
            other => Err(Error::invalid(format!("unknown padding {other:?}"))),
        }
    }
}

/// Output extent and leading pad for one axis.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if kernel == 0 || input == 0 {
        return Err(Error::invalid("kernel and input extents must be >= 1"));
    }
    match padding {
        Padding::Valid => {
            if input < kernel {
                return Err(Error::shape(format!(
                    "valid padding: kernel extent {kernel} exceeds input extent {input}, output would be empty"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = (out - 1) * stride + kernel;
            let total = needed.saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// Resolved index arithmetic for one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: [usize; 4],
    pub kernel: [usize; 3],
    pub filters: usize,
    pub strides: [usize; 3],
    pub output: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn new(input: [usize; 4], kernel_dims: &[usize], strides: [usize; 3], padding: Padding) -> Result<Self> {
        if kernel_dims.len() != 5 {
            return Err(Error::shape(format!("conv3d kernel must be Kt×Kh×Kw×C×F, got {kernel_dims:?}")));
        }
        if kernel_dims[3] != input[3] {
            return Err(Error::ChannelMismatch {
                expected: kernel_dims[3],
                got: input[3],
            });
        }
        let mut output = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            let (o, p) = output_extent(input[a], kernel_dims[a], strides[a], padding)?;
            output[a] = o;
            pad[a] = p;
        }
        Ok(Self {
            input,
            kernel: [kernel_dims[0], kernel_dims[1], kernel_dims[2]],
            filters: kernel_dims[4],
            strides,
            output,
            pad,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.input[3]
    }

    pub fn output_positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn output_dims(&self) -> Vec<usize> {
        vec![self.output[0], self.output[1], self.output[2], self.filters]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.strides == [1, 1, 1]
    }

    fn chunk_rows(&self) -> usize {
        ((1 << 20) / self.patch_len().max(1)).max(1)
    }

    /// Fill `cols` with the patches of output rows `rows.start..rows.end`.
    fn im2col<S: Scalar>(&self, input: &[S], rows: std::ops::Range<usize>, cols: &mut [S]) {
        let [_, ih, iw, c] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let k = self.patch_len();
        let span = kw * c;
        for (r, row) in rows.enumerate() {
            let dst = &mut cols[r * k..(r + 1) * k];
            let ox = row % ow;
            let oy = (row / ow) % oh;
            let ot = row / (ow * oh);
            let bt = (ot * self.strides[0]) as isize - self.pad[0] as isize;
            let by = (oy * self.strides[1]) as isize - self.pad[1] as isize;
            let bx = (ox * self.strides[2]) as isize - self.pad[2] as isize;
            let mut at = 0;
            for dt in 0..kt {
                let t = bt + dt as isize;
                if t < 0 || t >= self.input[0] as isize {
                    dst[at..at + kh * span].fill(S::zero());
                    at += kh * span;
                    continue;
                }
                for dy in 0..kh {
                    let y = by + dy as isize;
                    if y < 0 || y >= ih as isize {
                        dst[at..at + span].fill(S::zero());
                        at += span;
                        continue;
                    }
                    let row_base = ((t as usize * ih + y as usize) * iw) as isize;
                    if bx >= 0 && bx + kw as isize <= iw as isize {
                        let src = ((row_base + bx) as usize) * c;
                        dst[at..at + span].copy_from_slice(&input[src..src + span]);
                    } else {
                        for dx in 0..kw {
                            let x = bx + dx as isize;
                            let cell = &mut dst[at + dx * c..at + (dx + 1) * c];
                            if x < 0 || x >= iw as isize {
                                cell.fill(S::zero());
                            } else {
                                let src = ((row_base + x) as usize) * c;
                                cell.copy_from_slice(&input[src..src + c]);
                            }
                        }
                    }
                    at += span;
                }
            }
        }
    }

    /// Scatter-add patch gradients back onto the input gradient.
    fn col2im<S: Scalar>(&self, cols: &[S], rows: std::ops::Range<usize>, grad_input: &mut [S]) {
        let [_, ih, iw, c] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, oh, ow] = self.output;
        let k = self.patch_len();
        for (r, row) in rows.enumerate() {
            let src = &cols[r * k..(r + 1) * k];
            let ox = row % ow;
            let oy = (row / ow) % oh;
            let ot = row / (ow * oh);
            let bt = (ot * self.strides[0]) as isize - self.pad[0] as isize;
            let by = (oy * self.strides[1]) as isize - self.pad[1] as isize;
            let bx = (ox * self.strides[2]) as isize - self.pad[2] as isize;
            let mut at = 0;
            for dt in 0..kt {
                let t = bt + dt as isize;
                for dy in 0..kh {
                    let y = by + dy as isize;
                    for dx in 0..kw {
                        let x = bx + dx as isize;
                        if t >= 0 && t < self.input[0] as isize && y >= 0 && y < ih as isize && x >= 0 && x < iw as isize {
                            let dst = (((t as usize * ih + y as usize) * iw) + x as usize) * c;
                            for (g, &v) in grad_input[dst..dst + c].iter_mut().zip(&src[at..at + c]) {
                                *g = *g + v;
                            }
                        }
                        at += c;
                    }
                }
            }
        }
    }
}

fn input4(input: &Tensor<impl Scalar>) -> Result<[usize; 4]> {
    input.expect_rank(4, "conv3d input (T×H×W×C)")?;
    let d = input.dims();
    Ok([d[0], d[1], d[2], d[3]])
}

/// 3D convolution of a `T×H×W×C` input with a `Kt×Kh×Kw×C×F` kernel.
pub fn conv3d<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, strides: [usize; 3], padding: Padding) -> Result<Tensor<S>> {
    let geo = ConvGeometry::new(input4(input)?, kernel.dims(), strides, padding)?;
    conv3d_with(&geo, input.data(), kernel.data()).and_then(|out| Tensor::new(geo.output_dims(), out))
}

pub(crate) fn conv3d_with<S: Scalar>(geo: &ConvGeometry, input: &[S], kernel: &[S]) -> Result<Vec<S>> {
    let p = geo.output_positions();
    let k = geo.patch_len();
    let f = geo.filters;
    let mut out = vec![S::zero(); p * f];
    if geo.is_pointwise() {
        gemm(p, k, f, input, false, kernel, false, &mut out, false);
        return Ok(out);
    }
    let chunk = geo.chunk_rows();
    let mut cols = vec![S::zero(); chunk.min(p) * k];
    let mut start = 0;
    while start < p {
        let end = (start + chunk).min(p);
        let rows = end - start;
        geo.im2col(input, start..end, &mut cols[..rows * k]);
        gemm(
            rows,
            k,
            f,
            &cols[..rows * k],
            false,
            kernel,
            false,
            &mut out[start * f..end * f],
            false,
        );
        start = end;
    }
    Ok(out)
}

/// Gradients of [`conv3d`]: `(d input, d kernel)`, each computed only when requested.
pub fn conv3d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    strides: [usize; 3],
    padding: Padding,
    grad_output: &Tensor<S>,
    want_input: bool,
    want_kernel: bool,
) -> Result<(Option<Tensor<S>>, Option<Tensor<S>>)> {
    let geo = ConvGeometry::new(input4(input)?, kernel.dims(), strides, padding)?;
    grad_output.expect_dims(&geo.output_dims(), "conv3d grad_output")?;
    let (gi, gk) = conv3d_backward_with(&geo, input.data(), kernel.data(), grad_output.data(), want_input, want_kernel);
    let gi = gi.map(|d| Tensor::new(input.dims().to_vec(), d)).transpose()?;
    let gk = gk.map(|d| Tensor::new(kernel.dims().to_vec(), d)).transpose()?;
    Ok((gi, gk))
}

pub(crate) fn conv3d_backward_with<S: Scalar>(
    geo: &ConvGeometry,
    input: &[S],
    kernel: &[S],
    grad_output: &[S],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let p = geo.output_positions();
    let k = geo.patch_len();
    let f = geo.filters;
    let mut gi = want_input.then(|| vec![S::zero(); input.len()]);
    let mut gk = want_kernel.then(|| vec![S::zero(); kernel.len()]);
    if !want_input && !want_kernel {
        return (gi, gk);
    }
    if geo.is_pointwise() {
        if let Some(gk) = gk.as_mut() {
            gemm(k, p, f, input, true, grad_output, false, gk, false);
        }
        if let Some(gi) = gi.as_mut() {
            gemm(p, f, k, grad_output, false, kernel, true, gi, false);
        }
        return (gi, gk);
    }
    let chunk = geo.chunk_rows();
    let mut cols = vec![S::zero(); chunk.min(p) * k];
    let mut start = 0;
    while start < p {
        let end = (start + chunk).min(p);
        let rows = end - start;
        let go = &grad_output[start * f..end * f];
        if let Some(gk) = gk.as_mut() {
            geo.im2col(input, start..end, &mut cols[..rows * k]);
            gemm(k, rows, f, &cols[..rows * k], true, go, false, gk, true);
        }
        if let Some(gi) = gi.as_mut() {
            gemm(rows, f, k, go, false, kernel, true, &mut cols[..rows * k], false);
            geo.col2im(&cols[..rows * k], start..end, gi);
        }
        start = end;
    }
    (gi, gk)
}

fn lift_2d<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    input.expect_rank(3, "conv2d input (H×W×C)")?;
    kernel.expect_rank(4, "conv2d kernel (Kh×Kw×C×F)")?;
    let mut id = vec![1];
    id.extend_from_slice(input.dims());
    let mut kd = vec![1];
    kd.extend_from_slice(kernel.dims());
    Ok((input.clone().reshape(id)?, kernel.clone().reshape(kd)?))
}

/// 2D convolution of an `H×W×C` input with a `Kh×Kw×C×F` kernel.
pub fn conv2d<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, stride: usize, padding: Padding) -> Result<Tensor<S>> {
    let (i3, k3) = lift_2d(input, kernel)?;
    let out = conv3d(&i3, &k3, [1, stride, stride], padding)?;
    let d = out.dims().to_vec();
    out.reshape(d[1..].to_vec())
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: Padding,
    grad_output: &Tensor<S>,
    want_input: bool,
    want_kernel: bool,
) -> Result<(Option<Tensor<S>>, Option<Tensor<S>>)> {
    let (i3, k3) = lift_2d(input, kernel)?;
    let mut gd = vec![1];
    gd.extend_from_slice(grad_output.dims());
    let go = grad_output.clone().reshape(gd)?;
    let (gi, gk) = conv3d_backward(&i3, &k3, [1, stride, stride], padding, &go, want_input, want_kernel)?;
    let gi = gi.map(|t| t.reshape(input.dims().to_vec())).transpose()?;
    let gk = gk.map(|t| t.reshape(kernel.dims().to_vec())).transpose()?;
    Ok((gi, gk))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_arithmetic() {
        assert_eq!(output_extent(224, 7, 2, Padding::Same).unwrap(), (112, 2));
        assert_eq!(output_extent(30, 7, 2, Padding::Same).unwrap(), (15, 2));
        assert_eq!(output_extent(15, 3, 2, Padding::Same).unwrap(), (8, 1));
        assert_eq!(output_extent(5, 3, 1, Padding::Valid).unwrap(), (3, 0));
        // even kernel: extra pad trails
        assert_eq!(output_extent(4, 2, 1, Padding::Same).unwrap(), (4, 0));
        assert!(output_extent(2, 3, 1, Padding::Valid).is_err());
        assert!(output_extent(2, 1, 0, Padding::Valid).is_err());
    }

    #[test]
    fn identity_kernel_same_padding() {
        let x = Tensor::<f32>::from_fn(vec![5, 5, 1], |i| i as f32).unwrap();
        let k = Tensor::<f32>::full(vec![1, 1, 1, 1], 1.0).unwrap();
        assert_eq!(conv2d(&x, &k, 1, Padding::Same).unwrap(), x);
    }

    #[test]
    fn averaging_kernel_on_constant_interior() {
        let x = Tensor::<f32>::full(vec![6, 6, 1], 7.0).unwrap();
        let k = Tensor::<f32>::full(vec![3, 3, 1, 1], 1.0 / 9.0).unwrap();
        let y = conv2d(&x, &k, 1, Padding::Same).unwrap();
        for r in 1..5 {
            for c in 1..5 {
                assert!((y.get(&[r, c, 0]) - 7.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f32>::zeros(vec![4, 4, 2]).unwrap();
        let k = Tensor::<f32>::zeros(vec![3, 3, 3, 1]).unwrap();
        assert!(matches!(
            conv2d(&x, &k, 1, Padding::Same),
            Err(Error::ChannelMismatch { expected: 3, got: 2 })
        ));
        let k = Tensor::<f32>::zeros(vec![5, 5, 2, 1]).unwrap();
        assert!(conv2d(&x, &k, 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv3d_unit_and_temporal_delta() {
        let x = Tensor::<f64>::from_fn(vec![4, 3, 3, 2], |i| (i as f64).sin()).unwrap();
        let mut unit = Tensor::<f64>::zeros(vec![1, 1, 1, 2, 2]).unwrap();
        unit.set(&[0, 0, 0, 0, 0], 1.0);
        unit.set(&[0, 0, 0, 1, 1], 1.0);
        assert_eq!(conv3d(&x, &unit, [1, 1, 1], Padding::Same).unwrap(), x);

        // temporal kernel [1,0,0] over valid padding picks frame t
        let x1 = Tensor::<f64>::from_fn(vec![5, 2, 2, 1], |i| i as f64).unwrap();
        let mut delta = Tensor::<f64>::zeros(vec![3, 1, 1, 1, 1]).unwrap();
        delta.set(&[0, 0, 0, 0, 0], 1.0);
        let y = conv3d(&x1, &delta, [1, 1, 1], Padding::Valid).unwrap();
        assert_eq!(y.dims(), &[3, 2, 2, 1]);
        for t in 0..3 {
            assert_eq!(y.axis0_slice(t), x1.axis0_slice(t));
        }
    }

    #[test]
    fn chunked_path_matches_single_chunk() {
        // patch_len = 3*3*3*40 = 1080 -> chunk of 970 rows; 8*16*16 = 2048 rows spans 3 chunks
        let x = Tensor::<f64>::from_fn(vec![8, 16, 16, 40], |i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).unwrap();
        let k = Tensor::<f64>::from_fn(vec![3, 3, 3, 40, 2], |i| ((i * 31) % 17) as f64 / 17.0 - 0.5).unwrap();
        let geo = ConvGeometry::new([8, 16, 16, 40], k.dims(), [1, 1, 1], Padding::Same).unwrap();
        assert!(geo.chunk_rows() < geo.output_positions());
        let y = conv3d(&x, &k, [1, 1, 1], Padding::Same).unwrap();
        // spot-check one border and one interior position against a direct sum
        for &(t, r, c, f) in &[(0usize, 0usize, 0usize, 0usize), (4, 8, 9, 1), (7, 15, 15, 1)] {
            let mut acc = 0.0;
            for dt in 0..3 {
                for dy in 0..3 {
                    for dx in 0..3 {
                        let (it, iy, ix) = (t as isize + dt - 1, r as isize + dy - 1, c as isize + dx - 1);
                        if it < 0 || iy < 0 || ix < 0 || it >= 8 || iy >= 16 || ix >= 16 {
                            continue;
                        }
                        for ch in 0..40 {
                            acc += x.get(&[it as usize, iy as usize, ix as usize, ch])
                                * k.get(&[dt as usize, dy as usize, dx as usize, ch, f]);
                        }
                    }
                }
            }
            assert!((y.get(&[t, r, c, f]) - acc).abs() < 1e-9);
        }
    }
}
