//! Normalized pixel-coordinate channels and flip test-time augmentation
//! that keeps those channels consistent with the flipped content.
//!
//! With pixel-center coordinates `(u + 0.5) / W`, the horizontal channel
//! of a spatially flipped grid is exactly `1 - x` of the original. The
//! corrected flip therefore mirrors every content channel and replaces the
//! horizontal coordinate channel `x` by `1 - x`, so each pixel carries the
//! coordinate of where it now sits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PositionMode {
    /// `(u + 0.5) / W`, symmetric about 0.5.
    #[default]
    PixelCenter,
    /// `u / W`. Values start at 0, and `1 - x` of a flipped grid is off
    /// from the true flipped coordinate by `1 / W`.
    Strict,
}

/// Coordinates, channel 0 horizontal and channel 1 vertical: (1, 2, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct PositionEncoding {
    mode: PositionMode,
    channels: Tensor,
}

const GRID: f64 = (1u64 << 53) as f64;

/// Round onto multiples of 2^-53 so `1 - x` is exact for x in [0, 1].
fn snap(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

/// One axis of coordinates, on the 2^-53 grid in both modes so the
/// corrected flip is a bitwise involution. In pixel-center mode, `v[n-1-i] == 1 - v[i]`
/// holds bitwise and the middle of an odd axis is exactly 0.5.
pub fn axis_coordinates(n: usize, mode: PositionMode) -> Vec<f64> {
    let len = n as f64;
    match mode {
        PositionMode::Strict => (0..n).map(|i| snap(i as f64 / len)).collect(),
        PositionMode::PixelCenter => {
            let mut v = vec![0.0; n];
            for i in 0..n / 2 {
                let x = snap((i as f64 + 0.5) / len);
                v[i] = x;
                v[n - 1 - i] = 1.0 - x;
            }
            if n % 2 == 1 {
                v[n / 2] = 0.5;
            }
            v
        }
    }
}

impl PositionEncoding {
    pub fn new(height: usize, width: usize, mode: PositionMode) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("position_encoding", "height and width must be at least 1"));
        }
        let xs = axis_coordinates(width, mode);
        let ys = axis_coordinates(height, mode);
        let mut channels = Tensor::zeros(&[1, 2, height, width]);
        for v in 0..height {
            for u in 0..width {
                channels.set4(0, 0, v, u, xs[u]);
                channels.set4(0, 1, v, u, ys[v]);
            }
        }
        Ok(PositionEncoding { mode, channels })
    }

    pub fn mode(&self) -> PositionMode {
        self.mode
    }

    /// (1, 2, H, W).
    pub fn tensor(&self) -> &Tensor {
        &self.channels
    }

    pub fn horizontal(&self) -> Tensor {
        self.channels.channel(0).expect("two channels")
    }

    pub fn vertical(&self) -> Tensor {
        self.channels.channel(1).expect("two channels")
    }

    /// Repeat over a batch: (N, 2, H, W).
    pub fn batched(&self, n: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * self.channels.len());
        for _ in 0..n {
            data.extend_from_slice(self.channels.data());
        }
        let s = self.channels.shape();
        Tensor::new(&[n, 2, s[2], s[3]], data).expect("extent matches")
    }
}

/// Pixel-center position encoding.
pub fn position_encoding(height: usize, width: usize) -> Result<PositionEncoding> {
    PositionEncoding::new(height, width, PositionMode::PixelCenter)
}

/// Which input channels carry coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelSchema {
    pub horizontal: Option<usize>,
    pub vertical: Option<usize>,
}

impl ChannelSchema {
    /// Layout of the RGB-branch input `[R, G, B, S, Px, Py]`.
    pub const RGB_INPUT: ChannelSchema = ChannelSchema { horizontal: Some(4), vertical: Some(5) };

    fn horizontal_index(&self, channels: usize) -> Result<usize> {
        let h = self.horizontal.ok_or_else(|| {
            Error::invalid("hflip_with_position_correction", "schema has no horizontal position channel")
        })?;
        if h >= channels || self.vertical.is_some_and(|v| v >= channels || v == h) {
            return Err(Error::invalid(
                "hflip_with_position_correction",
                format!("schema {self:?} does not fit a {channels}-channel input"),
            ));
        }
        Ok(h)
    }
}

/// Mirror every channel along the width axis except the horizontal
/// coordinate channel, which becomes `1 - x` in place.
pub fn hflip_with_position_correction(x: &Tensor, schema: &ChannelSchema) -> Result<Tensor> {
    let (n, c, _, _) = x.nchw()?;
    let hc = schema.horizontal_index(c)?;
    let mut out = x.flip_horizontal();
    for b in 0..n {
        let src = x.plane(b, hc).to_vec();
        for (o, s) in out.plane_mut(b, hc).iter_mut().zip(src) {
            *o = 1.0 - s;
        }
    }
    Ok(out)
}

/// Flip that ignores the coordinate channels: content is mirrored and the
/// coordinates stay those of the unflipped grid.
pub fn hflip_naive(x: &Tensor, schema: &ChannelSchema) -> Result<Tensor> {
    let (n, c, _, _) = x.nchw()?;
    let hc = schema.horizontal_index(c)?;
    let mut out = x.flip_horizontal();
    for b in 0..n {
        for ch in [Some(hc), schema.vertical].into_iter().flatten() {
            let src = x.plane(b, ch).to_vec();
            out.plane_mut(b, ch).copy_from_slice(&src);
        }
    }
    Ok(out)
}

fn average_passes<P>(predict: &P, input: &Tensor, flipped: Tensor) -> Result<Tensor>
where
    P: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    let (base, flip) = rayon::join(|| predict(input), || predict(&flipped));
    let base = base?;
    let back = flip?.flip_horizontal();
    let sum = base.add(&back)?;
    Ok(sum.scale(0.5))
}

/// Mean of the plain prediction and the un-flipped prediction on the
/// position-corrected flipped input.
pub fn tta_predict<P>(predict: &P, input: &Tensor, schema: &ChannelSchema) -> Result<Tensor>
where
    P: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    average_passes(predict, input, hflip_with_position_correction(input, schema)?)
}

/// As [`tta_predict`] but with [`hflip_naive`].
pub fn tta_predict_naive<P>(predict: &P, input: &Tensor, schema: &ChannelSchema) -> Result<Tensor>
where
    P: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    average_passes(predict, input, hflip_naive(input, schema)?)
}
