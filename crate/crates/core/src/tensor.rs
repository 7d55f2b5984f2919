//! Dense row-major tensors and the scalar abstraction shared by every kernel.
//!
//! Storage is contiguous and row-major; the last axis is the fastest varying
//! one, so an `H×W×C` image stores all channels of a pixel next to each other.
//! There is no broadcasting: binary operations require identical extents and
//! rank changes go through [`Tensor::reshape`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

/// Floating point element type. `f32` is the working precision, `f64` is
/// used for gradient checking and reference computations.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static {
    /// `C = A·B + beta·C` with arbitrary (positive) row/column strides for
    /// `A` (`m×k`) and `B` (`k×n`); `C` is row-major with leading dimension `n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize), what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    assert!(last < len, "gemm operand {what} too short: need index {last}, have {len}");
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                check_extent(a.len(), m, k, a_strides, "A");
                check_extent(b.len(), k, n, b_strides, "B");
                assert!(c.len() >= m * n, "gemm output too short");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if beta == 0.0 {
                        c[..m * n].fill(0.0);
                    }
                    return;
                }
                // SAFETY: every index the kernel touches was bounds-checked
                // above against the slice lengths; C does not alias A or B
                // because it is borrowed mutably.
                unsafe {
                    ::gemm::gemm(
                        m,
                        n,
                        k,
                        c.as_mut_ptr(),
                        1,
                        n as isize,
                        beta != 0.0,
                        a.as_ptr(),
                        a_strides.1 as isize,
                        a_strides.0 as isize,
                        b.as_ptr(),
                        b_strides.1 as isize,
                        b_strides.0 as isize,
                        beta,
                        1.0,
                        false,
                        false,
                        false,
                        ::gemm::Parallelism::None,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Row-major matrix product helper: `C (m×n) (+)= A (m×k) · B (k×n)`.
///
/// `trans_a` / `trans_b` read the operand as stored transposed, i.e. `A` is
/// laid out `k×m` when `trans_a` is set.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], trans_a: bool, b: &[S], trans_b: bool, c: &mut [S], accumulate: bool) {
    let a_strides = if trans_a { (1, m) } else { (k, 1) };
    let b_strides = if trans_b { (1, k) } else { (n, 1) };
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm_raw(m, k, n, a, a_strides, b, b_strides, beta, c);
}

#[derive(Clone, PartialEq)]
pub struct Tensor<S = f32> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn validate_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::shape("tensor must have rank >= 1"));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!("extent {pos} of {dims:?} is zero; every extent must be >= 1")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))
}

impl<S: Scalar> Tensor<S> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let dims = dims.into();
        let len = validate_dims(&dims)?;
        if len != data.len() {
            return Err(Error::shape(format!("dims {dims:?} need {len} elements, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: S) -> Result<Self> {
        let dims = dims.into();
        let len = validate_dims(&dims)?;
        Ok(Self {
            dims,
            data: vec![value; len],
        })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, S::zero())
    }

    /// Zero tensor with the same extents as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            data: vec![S::zero(); self.data.len()],
        }
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, f: impl FnMut(usize) -> S) -> Result<Self> {
        let dims = dims.into();
        let len = validate_dims(&dims)?;
        Ok(Self {
            dims,
            data: (0..len).map(f).collect(),
        })
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(dims, |_| S::from_f64_lossy(rng.gen_range(lo..hi)))
    }

    pub fn scalar_vec(values: &[f64]) -> Result<Self> {
        Self::new(vec![values.len()], values.iter().map(|&v| S::from_f64_lossy(v)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(format!("{what}: expected rank {rank}, got {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn expect_dims(&self, dims: &[usize], what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!("{what}: expected {dims:?}, got {:?}", self.dims)));
        }
        Ok(())
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> S {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: S) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        other.expect_dims(&self.dims, "zip_map")?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        other.expect_dims(&self.dims, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| T::from_f64_lossy(x.as_f64())).collect(),
        }
    }

    /// Element count of one slice along the leading axis.
    fn outer_stride(&self) -> usize {
        self.data.len() / self.dims[0]
    }

    /// Copy of slice `i` along the leading axis, with that axis removed.
    /// A rank-1 tensor yields a single-element vector.
    pub fn index_axis0(&self, i: usize) -> Result<Self> {
        if i >= self.dims[0] {
            return Err(Error::shape(format!("index {i} out of range for leading extent {}", self.dims[0])));
        }
        let stride = self.outer_stride();
        let dims = if self.rank() == 1 { vec![1] } else { self.dims[1..].to_vec() };
        Ok(Self {
            dims,
            data: self.data[i * stride..(i + 1) * stride].to_vec(),
        })
    }

    /// Contiguous range `[start, start+len)` along the leading axis.
    pub fn narrow_axis0(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.dims[0] {
            return Err(Error::shape(format!(
                "range {start}..{} out of bounds for leading extent {}",
                start + len,
                self.dims[0]
            )));
        }
        let stride = self.outer_stride();
        let mut dims = self.dims.clone();
        dims[0] = len;
        Ok(Self {
            dims,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        })
    }

    pub fn axis0_slice(&self, i: usize) -> &[S] {
        let stride = self.outer_stride();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn axis0_slice_mut(&mut self, i: usize) -> &mut [S] {
        let stride = self.outer_stride();
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            t.expect_dims(&first.dims, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        Self::new(dims, data)
    }

    /// Concatenate along the last axis; all leading extents must agree.
    pub fn concat_last(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("cannot concatenate an empty list"))?;
        let lead = &first.dims[..first.rank() - 1];
        for t in items {
            if &t.dims[..t.rank() - 1] != lead {
                return Err(Error::shape(format!(
                    "concat_last: leading extents {:?} vs {:?}",
                    t.dims, first.dims
                )));
            }
        }
        let outer: usize = lead.iter().product();
        let widths: Vec<usize> = items.iter().map(|t| *t.dims.last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (t, &w) in items.iter().zip(&widths) {
                data.extend_from_slice(&t.data[o * w..(o + 1) * w]);
            }
        }
        let mut dims = lead.to_vec();
        dims.push(total);
        Self::new(dims, data)
    }

    /// Split the last axis into consecutive chunks of the given widths.
    pub fn split_last(&self, widths: &[usize]) -> Result<Vec<Self>> {
        let c = *self.dims.last().unwrap();
        if widths.iter().sum::<usize>() != c {
            return Err(Error::shape(format!("split widths {widths:?} do not sum to {c}")));
        }
        let outer = self.data.len() / c;
        let mut out: Vec<Vec<S>> = widths.iter().map(|&w| Vec::with_capacity(outer * w)).collect();
        for o in 0..outer {
            let row = &self.data[o * c..(o + 1) * c];
            let mut at = 0;
            for (buf, &w) in out.iter_mut().zip(widths) {
                buf.extend_from_slice(&row[at..at + w]);
                at += w;
            }
        }
        let lead = &self.dims[..self.rank() - 1];
        out.into_iter()
            .zip(widths)
            .map(|(data, &w)| {
                let mut dims = lead.to_vec();
                dims.push(w);
                Self::new(dims, data)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_length_mismatch() {
        assert!(Tensor::<f32>::zeros(vec![2, 0, 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(Vec::<usize>::new(), vec![]).is_err());
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f64>::from_fn(vec![2, 3, 2], |i| i as f64).unwrap();
        let b = Tensor::<f64>::from_fn(vec![2, 3, 1], |i| 100.0 + i as f64).unwrap();
        let c = Tensor::concat_last(&[&a, &b]).unwrap();
        assert_eq!(c.dims(), &[2, 3, 3]);
        assert_eq!(c.get(&[0, 1, 2]), 101.0);
        let parts = c.split_last(&[2, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn stack_and_index_axis0() {
        let a = Tensor::<f32>::full(vec![2, 2], 1.0).unwrap();
        let b = Tensor::<f32>::full(vec![2, 2], 2.0).unwrap();
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2]);
        assert_eq!(s.index_axis0(1).unwrap(), b);
        assert_eq!(s.narrow_axis0(0, 1).unwrap().dims(), &[1, 2, 2]);
    }
}
