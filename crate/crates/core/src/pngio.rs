//! PNG encoding of depth maps and images, in memory.
//!
//! Depth PNGs follow the KITTI depth-completion convention: 16-bit
//! grayscale, `stored = round(depth_m * 256)`, stored 0 meaning "no
//! measurement". Encoder settings are fixed so identical maps always give
//! identical bytes.

use std::io::Cursor;

use crate::depth::{DepthMap, SparseDepthFrame};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEPTH_SCALE: f64 = 256.0;
/// Largest representable depth, meters.
pub const DEPTH_MAX: f64 = u16::MAX as f64 / DEPTH_SCALE;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn encoder(
    buf: &mut Vec<u8>,
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: png::BitDepth,
) -> Result<png::Encoder<'_, &mut Vec<u8>>> {
    let w = u32::try_from(w).map_err(png_err)?;
    let h = u32::try_from(h).map_err(png_err)?;
    let mut enc = png::Encoder::new(buf, w, h);
    enc.set_color(color);
    enc.set_depth(depth);
    enc.set_compression(png::Compression::Default);
    enc.set_filter(png::FilterType::Sub);
    enc.set_adaptive_filter(png::AdaptiveFilterType::NonAdaptive);
    Ok(enc)
}

/// Nearest representable depth, `round(d * 256) / 256`.
pub fn quantize_depth(d: f64) -> f64 {
    (d * DEPTH_SCALE).round() / DEPTH_SCALE
}

/// Encode a depth map; 0 stays 0 (invalid).
pub fn encode_depth_png(depth: &DepthMap) -> Result<Vec<u8>> {
    let (h, w) = (depth.height(), depth.width());
    let mut raw = Vec::with_capacity(2 * h * w);
    for (i, &d) in depth.data().iter().enumerate() {
        let (u, v) = (i % w, i / w);
        if !d.is_finite() || d < 0.0 || d * DEPTH_SCALE > u16::MAX as f64 + 0.5 {
            return Err(Error::Png(format!("depth {d} at (u={u}, v={v}) is outside [0, {DEPTH_MAX}] m")));
        }
        let stored = (d * DEPTH_SCALE).round() as u16;
        if stored == 0 && d > 0.0 {
            return Err(Error::Png(format!("depth {d} at (u={u}, v={v}) is below the 1/256 m resolution")));
        }
        raw.extend_from_slice(&stored.to_be_bytes());
    }
    let mut buf = Vec::new();
    {
        let enc = encoder(&mut buf, w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen)?;
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&raw).map_err(png_err)?;
    }
    Ok(buf)
}

/// Decode a 16-bit grayscale depth PNG. 8-bit and color files are rejected.
pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthMap> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale {
        return Err(Error::Png(format!(
            "expected a 16-bit grayscale depth PNG, got {:?} {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut raw = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut raw).map_err(png_err)?;
    let data = raw[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / DEPTH_SCALE)
        .collect();
    DepthMap::new(h, w, data)
}

/// Decode a depth PNG as a sparse frame; stored 0 becomes an invalid pixel.
pub fn decode_sparse_png(bytes: &[u8]) -> Result<SparseDepthFrame> {
    SparseDepthFrame::from_depth(decode_depth_png(bytes)?, DEPTH_MAX)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode a (1, 3, H, W) image with values in [0, 1] as 8-bit RGB.
pub fn encode_rgb_png(rgb: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = rgb.nchw()?;
    if n != 1 || c != 3 {
        return Err(Error::shape("encode_rgb_png", &[1, 3, h, w], rgb.shape()));
    }
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            raw.push(to_u8(rgb.plane(0, ch)[i]));
        }
    }
    let mut buf = Vec::new();
    {
        let enc = encoder(&mut buf, w, h, png::ColorType::Rgb, png::BitDepth::Eight)?;
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&raw).map_err(png_err)?;
    }
    Ok(buf)
}

/// Decode an 8-bit RGB PNG to a (1, 3, H, W) tensor in [0, 1].
pub fn decode_rgb_png(bytes: &[u8]) -> Result<Tensor> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight || info.color_type != png::ColorType::Rgb {
        return Err(Error::Png(format!("expected an 8-bit RGB PNG, got {:?} {:?}", info.bit_depth, info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut raw = vec![0u8; reader.output_buffer_size()];
    reader.next_frame(&mut raw).map_err(png_err)?;
    let mut t = Tensor::zeros(&[1, 3, h, w]);
    for i in 0..h * w {
        for ch in 0..3 {
            t.plane_mut(0, ch)[i] = raw[3 * i + ch] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// Control points of the visualization colormap, dark purple to yellow.
const COLORMAP: [[f64; 3]; 5] =
    [[0.267, 0.005, 0.329], [0.229, 0.322, 0.546], [0.128, 0.567, 0.551], [0.369, 0.789, 0.383], [0.993, 0.906, 0.144]];

fn colormap(t: f64) -> [f64; 3] {
    let x = t.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
}

/// Colorized depth visualization: near is yellow, far is purple, invalid
/// pixels black. The mapped range is stored in a `depth_range` text chunk.
pub fn encode_depth_visualization(depth: &DepthMap) -> Result<Vec<u8>> {
    let valid: Vec<f64> = depth.data().iter().copied().filter(|&d| d > 0.0).collect();
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if valid.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let span = (hi - lo).max(1e-12);
    let mut raw = Vec::with_capacity(3 * depth.data().len());
    for &d in depth.data() {
        let c = if d > 0.0 { colormap(1.0 - (d - lo) / span) } else { [0.0; 3] };
        raw.extend(c.iter().map(|&v| to_u8(v)));
    }
    let mut buf = Vec::new();
    {
        let mut enc = encoder(&mut buf, depth.width(), depth.height(), png::ColorType::Rgb, png::BitDepth::Eight)?;
        enc.add_text_chunk("depth_range".into(), format!("{lo:.3} m (yellow) to {hi:.3} m (purple)"))
            .map_err(png_err)?;
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&raw).map_err(png_err)?;
    }
    Ok(buf)
}
