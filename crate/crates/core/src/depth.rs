//! Single-channel metric depth maps and sparse LiDAR frames.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An `H × W` map of depths in meters, row-major. Zero marks "no value" in
/// sparse contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("depth_map", &[height, width], &[data.len()]));
        }
        Ok(DepthMap { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        DepthMap { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        DepthMap { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Depth at column `u`, row `v`.
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, d: f64) {
        self.data[v * self.width + u] = d;
    }

    pub fn flip_horizontal(&self) -> DepthMap {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width.max(1)) {
            row.reverse();
        }
        DepthMap { data, ..*self }
    }

    /// As a (1, 1, H, W) tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone()).expect("extent matches by construction")
    }

    /// Read plane (n, c) of a 4-D tensor.
    pub fn from_tensor_plane(t: &Tensor, n: usize, c: usize) -> Result<Self> {
        let (tn, tc, h, w) = t.nchw()?;
        if n >= tn || c >= tc {
            return Err(Error::invalid(
                "depth_map",
                format!("plane ({n}, {c}) out of range for shape {:?}", t.shape()),
            ));
        }
        DepthMap::new(h, w, t.plane(n, c).to_vec())
    }
}

/// Sparse LiDAR depth plus its validity mask. A pixel is valid exactly
/// where its depth is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepthFrame {
    depth: DepthMap,
    mask: Vec<bool>,
    sparsity_ratio: f64,
    d_max: f64,
}

impl SparseDepthFrame {
    /// Ingest a depth map where zero means "no return". Valid depths must
    /// lie in `(0, d_max]`.
    pub fn from_depth(depth: DepthMap, d_max: f64) -> Result<Self> {
        if !(d_max > 0.0 && d_max.is_finite()) {
            return Err(Error::invalid("sparse_frame", "d_max must be positive and finite"));
        }
        for (i, &d) in depth.data.iter().enumerate() {
            if !d.is_finite() || d < 0.0 || d > d_max {
                return Err(Error::invalid(
                    "sparse_frame",
                    format!("depth {d} at (u={}, v={}) is outside [0, {d_max}]", i % depth.width, i / depth.width),
                ));
            }
        }
        let mask: Vec<bool> = depth.data.iter().map(|&d| d > 0.0).collect();
        let valid = mask.iter().filter(|&&m| m).count();
        let total = (depth.width * depth.height).max(1);
        Ok(SparseDepthFrame { sparsity_ratio: valid as f64 / total as f64, depth, mask, d_max })
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn sparsity_ratio(&self) -> f64 {
        self.sparsity_ratio
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mask as a (1, 1, H, W) tensor of zeros and ones.
    pub fn mask_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, 1, self.depth.height, self.depth.width],
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
        .expect("extent matches by construction")
    }

    pub fn flip_horizontal(&self) -> SparseDepthFrame {
        SparseDepthFrame::from_depth(self.depth.flip_horizontal(), self.d_max).expect("flipping preserves validity")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_and_ratio_follow_depth() {
        let d = DepthMap::new(2, 2, vec![0.0, 1.5, 0.0, 3.0]).unwrap();
        let f = SparseDepthFrame::from_depth(d, 10.0).unwrap();
        assert_eq!(f.mask(), &[false, true, false, true]);
        assert_eq!(f.sparsity_ratio(), 0.5);
        assert_eq!(f.mask_tensor().data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_out_of_range_depths() {
        let d = DepthMap::new(1, 2, vec![0.0, 11.0]).unwrap();
        assert!(SparseDepthFrame::from_depth(d, 10.0).is_err());
        let d = DepthMap::new(1, 2, vec![-1.0, 1.0]).unwrap();
        assert!(SparseDepthFrame::from_depth(d, 10.0).is_err());
        let d = DepthMap::new(1, 1, vec![f64::NAN]).unwrap();
        assert!(SparseDepthFrame::from_depth(d, 10.0).is_err());
    }
}
