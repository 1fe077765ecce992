//! Dense real-valued tensor in planar (N, C, H, W) layout.
//!
//! Everything in the crate flows through [`Tensor`]: images, feature maps,
//! kernels, masks and gradients. Storage is a contiguous `Vec<f64>` in
//! row-major order over `shape`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {:?} holds {} values but {} were supplied", shape, expected, data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extents of a 4-D feature map.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => {
                Err(Error::invalid("tensor", format!("expected a 4-D (N, C, H, W) tensor, got shape {:?}", self.shape)))
            }
        }
    }

    #[inline]
    pub fn offset4(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let (cs, hs, ws) = (self.shape[1], self.shape[2], self.shape[3]);
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset4(n, c, y, x)]
    }

    #[inline]
    pub fn set4(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.offset4(n, c, y, x);
        self.data[i] = v;
    }

    /// One `H × W` plane of a 4-D tensor.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape("zip_map", other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape("dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape("max_abs_diff", other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(op, shape, &self.shape));
        }
        Ok(())
    }

    pub fn expect_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        self.expect_shape(op, &other.shape)
    }

    /// Concatenate 4-D tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_channels", "no tensors supplied"))?;
        let (n, _, h, w) = first.nchw()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.nchw()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape("concat_channels", first.shape(), p.shape()));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                data.extend_from_slice(&p.data[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        Tensor::new(&[n, total_c, h, w], data)
    }

    /// Stack along the batch axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_batch", "no tensors supplied"))?;
        let mut n = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            if p.shape.len() != first.shape.len() || p.shape[1..] != first.shape[1..] {
                return Err(Error::shape("concat_batch", first.shape(), p.shape()));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Tensor::new(&shape, data)
    }

    /// Batch element `b` as a batch of one.
    pub fn batch_item(&self, b: usize) -> Result<Tensor> {
        let n = *self.shape.first().unwrap_or(&0);
        if b >= n {
            return Err(Error::invalid("batch_item", format!("index {b} out of range for batch {n}")));
        }
        let stride = self.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(&shape, self.data[b * stride..(b + 1) * stride].to_vec())
    }

    /// Split along the channel axis into consecutive groups of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let (n, c, h, w) = self.nchw()?;
        if sizes.iter().sum::<usize>() != c {
            return Err(Error::invalid("split_channels", format!("sizes {sizes:?} do not add up to {c} channels")));
        }
        let hw = h * w;
        let mut out: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(n * s * hw)).collect();
        for b in 0..n {
            let mut start = (b * c) * hw;
            for (i, &s) in sizes.iter().enumerate() {
                out[i].extend_from_slice(&self.data[start..start + s * hw]);
                start += s * hw;
            }
        }
        sizes.iter().zip(out).map(|(&s, d)| Tensor::new(&[n, s, h, w], d)).collect()
    }

    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let (n, cs, h, w) = self.nchw()?;
        if c >= cs {
            return Err(Error::invalid("channel", format!("channel {c} out of range for {cs} channels")));
        }
        let mut data = Vec::with_capacity(n * h * w);
        for b in 0..n {
            data.extend_from_slice(self.plane(b, c));
        }
        Tensor::new(&[n, 1, h, w], data)
    }

    /// Reverse the last (width) axis.
    pub fn flip_horizontal(&self) -> Tensor {
        let w = *self.shape.last().unwrap_or(&1);
        let mut data = self.data.clone();
        if w > 0 {
            for row in data.chunks_mut(w) {
                row.reverse();
            }
        }
        Tensor { shape: self.shape.clone(), data }
    }

    /// Sum over every axis except the channel axis of a 4-D tensor.
    pub fn sum_per_channel(&self) -> Result<Vec<f64>> {
        let (n, c, _, _) = self.nchw()?;
        let mut out = vec![0.0; c];
        for b in 0..n {
            for (ch, o) in out.iter_mut().enumerate() {
                *o += self.plane(b, ch).iter().sum::<f64>();
            }
        }
        Ok(out)
    }
}
