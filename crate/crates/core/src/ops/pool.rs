use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn pool_dims(input: &[usize], window: [usize; 3], strides: [usize; 3]) -> Result<[usize; 3]> {
    if input.len() != 4 {
        return Err(Error::shape(format!("maxpool3d input must be T×H×W×C, got {input:?}")));
    }
    let mut out = [0; 3];
    for a in 0..3 {
        if window[a] == 0 || strides[a] == 0 {
            return Err(Error::invalid("pool window and strides must be >= 1"));
        }
        if window[a] > input[a] {
            return Err(Error::shape(format!("pool window {window:?} larger than input {input:?}")));
        }
        out[a] = (input[a] - window[a]) / strides[a] + 1;
    }
    Ok(out)
}

/// Output extents of a valid max-pool, for shape propagation.
pub fn maxpool3d_output(input: &[usize], window: [usize; 3], strides: [usize; 3]) -> Result<Vec<usize>> {
    let o = pool_dims(input, window, strides)?;
    Ok(vec![o[0], o[1], o[2], input[3]])
}

/// Max-pool without recording winners; same values as
/// [`maxpool3d_with_indices`], computed a channel row at a time.
pub fn maxpool3d<S: Scalar>(input: &Tensor<S>, window: [usize; 3], strides: [usize; 3]) -> Result<Tensor<S>> {
    let d = input.dims();
    let [ot, oh, ow] = pool_dims(d, window, strides)?;
    let (h, w, c) = (d[1], d[2], d[3]);
    let src = input.data();
    let mut out = vec![S::zero(); ot * oh * ow * c];
    for (o, dst) in out.chunks_exact_mut(c).enumerate() {
        let (x, y, t) = (o % ow, (o / ow) % oh, o / (ow * oh));
        let mut first = true;
        for dt in 0..window[0] {
            for dy in 0..window[1] {
                for dx in 0..window[2] {
                    let at = (((t * strides[0] + dt) * h + y * strides[1] + dy) * w + x * strides[2] + dx) * c;
                    let cell = &src[at..at + c];
                    if first {
                        dst.copy_from_slice(cell);
                        first = false;
                    } else {
                        for (b, &v) in dst.iter_mut().zip(cell) {
                            if v > *b {
                                *b = v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![ot, oh, ow, c], out)
}

/// Max-pool (no padding) returning the flat input offset of each winner.
/// Ties go to the first maximal element in scan order.
pub fn maxpool3d_with_indices<S: Scalar>(input: &Tensor<S>, window: [usize; 3], strides: [usize; 3]) -> Result<(Tensor<S>, Vec<usize>)> {
    let d = input.dims();
    let [ot, oh, ow] = pool_dims(d, window, strides)?;
    let (h, w, c) = (d[1], d[2], d[3]);
    let src = input.data();
    let mut out = Vec::with_capacity(ot * oh * ow * c);
    let mut idx = Vec::with_capacity(out.capacity());
    for t in 0..ot {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best = S::neg_infinity();
                    let mut best_at = usize::MAX;
                    for dt in 0..window[0] {
                        for dy in 0..window[1] {
                            for dx in 0..window[2] {
                                let at = (((t * strides[0] + dt) * h + y * strides[1] + dy) * w + x * strides[2] + dx) * c + ch;
                                if best_at == usize::MAX || src[at] > best {
                                    best = src[at];
                                    best_at = at;
                                }
                            }
                        }
                    }
                    out.push(best);
                    idx.push(best_at);
                }
            }
        }
    }
    Ok((Tensor::new(vec![ot, oh, ow, c], out)?, idx))
}

/// Route each output gradient to its recorded winner.
pub fn maxpool3d_backward<S: Scalar>(input_dims: &[usize], indices: &[usize], grad_output: &Tensor<S>) -> Result<Tensor<S>> {
    if indices.len() != grad_output.len() {
        return Err(Error::shape("maxpool3d_backward: index/gradient length mismatch"));
    }
    let mut grad = Tensor::zeros(input_dims.to_vec())?;
    let g = grad.data_mut();
    for (&at, &v) in indices.iter().zip(grad_output.data()) {
        g[at] = g[at] + v;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_window() {
        let x = Tensor::<f32>::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool3d(&x, [1, 2, 2], [1, 2, 2]).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_input_and_tie_routing() {
        let x = Tensor::<f64>::full(vec![2, 4, 4, 3], 1.5).unwrap();
        let (y, idx) = maxpool3d_with_indices(&x, [2, 2, 2], [1, 2, 2]).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
        let g = maxpool3d_backward(x.dims(), &idx, &y.map(|_| 1.0)).unwrap();
        // first element of every window (t=0, even rows/cols) receives the gradient
        assert_eq!(g.get(&[0, 0, 0, 0]), 1.0);
        assert_eq!(g.get(&[0, 0, 1, 0]), 0.0);
        assert_eq!(g.get(&[1, 0, 0, 0]), 0.0);
        assert_eq!(g.sum(), y.len() as f64);
    }

    #[test]
    fn fast_path_matches_indexed_path() {
        let x = Tensor::<f32>::from_fn(vec![3, 5, 6, 4], |i| ((i * 7919) % 13) as f32).unwrap();
        for (win, st) in [([1, 2, 2], [1, 2, 2]), ([2, 3, 2], [1, 1, 2]), ([3, 1, 1], [2, 1, 1])] {
            assert_eq!(maxpool3d(&x, win, st).unwrap(), maxpool3d_with_indices(&x, win, st).unwrap().0);
        }
    }

    #[test]
    fn window_larger_than_input() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 2, 1]).unwrap();
        assert!(maxpool3d(&x, [2, 1, 1], [1, 1, 1]).is_err());
    }
}
