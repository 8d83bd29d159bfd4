//! Dense row-major tensors.
//!
//! A [`Tensor`] owns its shape and shares its buffer behind an `Arc`, so clones
//! are cheap and read-only ops may run from several threads. The only in-place
//! mutation path is [`Tensor::data_mut`], which copies on write if the buffer is
//! shared; the optimizer is its intended caller.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::str::FromStr;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tag(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            4 => Some(Precision::F32),
            8 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::invalid(format!(
                "unknown precision '{other}' (expected f32|f64)"
            ))),
        }
    }
}

/// Element type of a [`Tensor`]. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Scalar:
    Float
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    const PRECISION: Precision;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` must be exactly `PRECISION.tag()` long.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.shape);
        if self.data.len() <= SHOWN {
            d.field("data", &self.data);
        } else {
            d.field("data[..8]", &&self.data[..SHOWN]);
        }
        d.finish()
    }
}

fn check_dims(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor_new", "rank must be at least 1"));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(
            "tensor_new",
            format!("dimension {pos} of {shape:?} is zero"),
        ));
    }
    Ok(shape.iter().product())
}

/// Splits `shape` around `axis` into (outer, axis, inner) extents.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tensor<T> {
    /// Tensor of `shape` with every element equal to `fill`.
    pub fn new(shape: &[usize], fill: T) -> Result<Self> {
        let n = check_dims(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![fill; n]),
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, T::zero())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_dims(shape)?;
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    /// Elements drawn uniformly from `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::invalid(format!(
                "rand_uniform requires lo < hi, got lo={lo} hi={hi}"
            )));
        }
        let n = check_dims(shape)?;
        let hi_t = T::of(hi);
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let x = T::of(rng.uniform(lo, hi));
            // narrowing to f32 can round up onto `hi`
            if x < hi_t || T::of(lo) >= hi_t {
                data.push(x);
            }
        }
        Self::from_vec(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// In-place access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    /// Same elements under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_dims(shape)?;
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Fails with the location of the first NaN or infinity.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what} (flat index {i}, value {})",
                self.data[i]
            ))),
        }
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} >= rank {rank}"),
            ));
        }
        for t in tensors {
            let same_off_axis =
                t.rank() == rank && (0..rank).all(|a| a == axis || t.shape[a] == first.shape[a]);
            if !same_off_axis {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} differ off axis {axis}", first.shape, t.shape),
                ));
            }
        }
        let total: usize = tensors.iter().map(|t| t.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in tensors {
                let block = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        Self::from_vec(&shape, data)
    }

    /// The sub-tensor `[start, start + len)` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || len == 0 || start + len > self.shape[axis] {
            return Err(Error::shape(
                "slice_axis",
                format!(
                    "range {start}..{} on axis {axis} of {:?}",
                    start + len,
                    self.shape
                ),
            ));
        }
        let (outer, n, inner) = split_at_axis(&self.shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::from_vec(&shape, data)
    }

    /// Maxima along `axis` with the position of the first maximal element.
    /// The axis is removed from the result shape (rank-1 inputs give shape `[1]`).
    pub fn reduce_max(&self, axis: usize) -> Result<(Self, Vec<usize>)> {
        if axis >= self.rank() {
            return Err(Error::shape(
                "reduce_max",
                format!("axis {axis} out of range for {:?}", self.shape),
            ));
        }
        let (outer, n, inner) = split_at_axis(&self.shape, axis);
        let mut values = Vec::with_capacity(outer * inner);
        let mut indices = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut best = self.data[base];
                let mut arg = 0;
                for j in 1..n {
                    let v = self.data[base + j * inner];
                    if v > best {
                        best = v;
                        arg = j;
                    }
                }
                values.push(best);
                indices.push(arg);
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok((Self::from_vec(&shape, values)?, indices))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self::from_vec(&[m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("rank {} != 2", self.rank()),
            ));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Self::from_vec(&[c, r], out)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        let d = t.data_mut();
        for i in 0..n {
            d[i * n + i] = T::one();
        }
        Ok(t)
    }

    /// Element-precision conversion.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|x| U::of(x.as_f64())).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_fills() {
        let t = Tensor::<f64>::new(&[2, 3], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 6]);
        let t = Tensor::<f64>::new(&[1], 7.5).unwrap();
        assert_eq!(t.data(), &[7.5]);
        let canvas = Tensor::<f32>::new(&[69, 1014], 0.0).unwrap();
        assert_eq!(canvas.numel(), 69 * 1014);
        assert!(canvas.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(Tensor::<f64>::new(&[2, 0], 1.0).is_err());
        assert!(Tensor::<f64>::new(&[], 1.0).is_err());
    }

    #[test]
    fn rand_uniform_bounds_and_determinism() {
        let mut r1 = RngStream::new(9, 0);
        let mut r2 = RngStream::new(9, 0);
        let a = Tensor::<f32>::rand_uniform(&[50, 40], -0.1, 0.1, &mut r1).unwrap();
        let b = Tensor::<f32>::rand_uniform(&[50, 40], -0.1, 0.1, &mut r2).unwrap();
        assert!(a.data().iter().all(|&x| (-0.1..0.1).contains(&x)));
        assert_eq!(
            a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rand_uniform_degenerate_and_invalid() {
        let mut r = RngStream::new(1, 0);
        let eps = 1e-12;
        let t = Tensor::<f64>::rand_uniform(&[100], 0.0, eps, &mut r).unwrap();
        assert!(t.data().iter().all(|&x| (0.0..eps).contains(&x)));
        assert!(Tensor::<f64>::rand_uniform(&[3], 0.1, 0.1, &mut r).is_err());
        assert!(Tensor::<f64>::rand_uniform(&[3], 0.2, 0.1, &mut r).is_err());
    }

    #[test]
    fn concat_cases() {
        let v = Tensor::<f64>::new(&[700], 1.0).unwrap();
        let c = Tensor::concat(&[&v, &v, &v], 0).unwrap();
        assert_eq!(c.shape(), &[2100]);

        let a = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(Tensor::concat(&[&a], 1).unwrap(), a);
        let b = Tensor::<f64>::from_vec(&[2, 5], (10..20).map(f64::from).collect()).unwrap();
        let ab = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(ab.shape(), &[2, 8]);
        assert_eq!(ab.get(&[1, 2]), 5.0);
        assert_eq!(ab.get(&[1, 3]), 15.0);

        let bad = Tensor::<f64>::new(&[3, 5], 0.0).unwrap();
        assert!(Tensor::concat(&[&a, &bad], 1).is_err());
    }

    #[test]
    fn reduce_max_cases() {
        let t = Tensor::<f64>::from_vec(&[3], vec![3.0, 5.0, 7.0]).unwrap();
        let (v, i) = t.reduce_max(0).unwrap();
        assert_eq!((v.data(), i.as_slice()), (&[7.0][..], &[2][..]));

        let t = Tensor::<f64>::from_vec(&[3], vec![4.0; 3]).unwrap();
        let (v, i) = t.reduce_max(0).unwrap();
        assert_eq!((v.data(), i.as_slice()), (&[4.0][..], &[0][..]));

        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 9.0, 2.0, 8.0, 0.0, 8.0]).unwrap();
        let (v, i) = t.reduce_max(1).unwrap();
        assert_eq!(v.data(), &[9.0, 8.0]);
        assert_eq!(i, vec![1, 0]);

        assert!(t.reduce_max(2).is_err());
    }

    #[test]
    fn matmul_cases() {
        let a = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);

        let m = Tensor::<f64>::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(Tensor::identity(3).unwrap().matmul(&m).unwrap(), m);

        let z = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        assert!(z.matmul(&m).unwrap().data().iter().all(|&x| x == 0.0));

        assert!(m.matmul(&m).is_err());
    }

    #[test]
    fn row_major_offsets() {
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(t.offset(&[i, j]), i * 3 + j);
                assert_eq!(t.get(&[i, j]), (i * 3 + j) as f64);
            }
        }
    }

    #[test]
    fn reshape_keeps_count() {
        let t = Tensor::<f64>::zeros(&[2, 6]).unwrap();
        assert_eq!(t.reshape(&[3, 4]).unwrap().shape(), &[3, 4]);
        assert!(t.reshape(&[5]).is_err());
    }

    #[test]
    fn check_finite_reports_location() {
        let t = Tensor::<f64>::from_vec(&[3], vec![1.0, f64::INFINITY, 0.0]).unwrap();
        let err = t.check_finite("logits").unwrap_err().to_string();
        assert!(err.contains("flat index 1"), "{err}");
    }
}
