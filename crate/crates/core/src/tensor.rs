//! Dense rank-4 `(batch, channels, height, width)` float tensors.

use rand::Rng;

use crate::error::{Error, Result};

pub type Dims = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::config(format!(
                "tensor data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                len
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    /// Panics on a zero dimension; use [`Tensor::new`] for untrusted dims.
    pub fn filled(dims: Dims, value: f32) -> Self {
        assert!(dims.iter().all(|&d| d >= 1), "zero dimension in {dims:?}");
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let mut t = Self::zeros(dims);
        let [n, c, h, w] = dims;
        let mut i = 0;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f([b, ch, y, x]);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn random_uniform<R: Rng + ?Sized>(dims: Dims, rng: &mut R, lo: f32, hi: f32) -> Self {
        let mut t = Self::zeros(dims);
        for v in &mut t.data {
            *v = rng.gen_range(lo..=hi);
        }
        t
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.offset(b, c, y, x);
        self.data[i] = v;
    }

    /// The `height × width` plane of one channel.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let start = self.offset(b, c, 0, 0);
        &self.data[start..start + self.plane_len()]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f32] {
        let start = self.offset(b, c, 0, 0);
        let len = self.plane_len();
        &mut self.data[start..start + len]
    }

    /// Copies channels `start..start + count` into a new tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Tensor> {
        if count == 0 || start + count > self.channels() {
            return Err(Error::config(format!(
                "channel slice {start}..{} out of range for {} channels",
                start + count,
                self.channels()
            )));
        }
        let [n, _, h, w] = self.dims;
        let mut data = Vec::with_capacity(n * count * h * w);
        for b in 0..n {
            let from = self.offset(b, start, 0, 0);
            data.extend_from_slice(&self.data[from..from + count * h * w]);
        }
        Tensor::new([n, count, h, w], data)
    }

    pub fn reshape(self, dims: Dims) -> Result<Tensor> {
        Tensor::new(dims, self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and matching NaN payloads.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::config(format!("all dims must be >= 1, got {dims:?}")));
    }
    Ok(())
}
