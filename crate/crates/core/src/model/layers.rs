//! Parameterized layers with explicit forward caches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::{attention_gate, attention_gate_backward, GateContext};
use crate::ops::{
    bilinear_resize, bilinear_resize_backward, conv2d, conv2d_backward, depthwise_conv, depthwise_conv_backward,
    layer_norm, layer_norm_backward, Activation, ConvGeometry, LAYER_NORM_EPS,
};
use crate::sparse::{sparse_conv_backward, sparse_invariant_conv, SparseConvContext, SPARSE_EPS};
use crate::tensor::Tensor;

use super::params::{Grads, ParamId, ParamStore};

fn kaiming<R: Rng + ?Sized>(shape: &[usize], gain: f64, rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    Tensor::randn(shape, (gain / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = kaiming(&[cout, cin, k, k], gain, rng);
        Conv {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        conv2d(x, p.get(self.weight), p.get(self.bias), self.stride, self.padding)
    }

    pub fn backward(&self, p: &ParamStore, x: &Tensor, g: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let cg = conv2d_backward(x, p.get(self.weight), g, self.stride, self.padding)?;
        grads.add(self.weight, &cg.weight)?;
        grads.add(self.bias, &cg.bias)?;
        Ok(cg.input)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, p.get(self.gamma), p.get(self.beta), LAYER_NORM_EPS)
    }

    pub fn backward(&self, p: &ParamStore, x: &Tensor, g: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let lg = layer_norm_backward(x, p.get(self.gamma), LAYER_NORM_EPS, g)?;
        grads.add(self.gamma, &lg.gamma)?;
        grads.add(self.beta, &lg.beta)?;
        Ok(lg.input)
    }
}

/// ConvNeXt block: 7×7 depthwise, layer norm, 4× pointwise expansion,
/// GELU, pointwise projection, then a stochastic-depth residual.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub dw_weight: ParamId,
    pub dw_bias: ParamId,
    pub norm: Norm,
    pub expand: Conv,
    pub project: Conv,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    x: Tensor,
    dw: Tensor,
    ln: Tensor,
    pre: Tensor,
    act: Tensor,
    /// Per-sample residual multiplier: 0, 1, or 1/(1-p).
    scale: Vec<f64>,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Self {
        let dw = kaiming(&[c, 1, 7, 7], 2.0, rng);
        Block {
            dw_weight: store.add(format!("{name}.dw.weight"), dw),
            dw_bias: store.add(format!("{name}.dw.bias"), Tensor::zeros(&[c])),
            norm: Norm::new(store, &format!("{name}.norm"), c),
            expand: Conv::new(store, &format!("{name}.expand"), c, 4 * c, 1, 1, 0, 2.0, rng),
            project: Conv::new(store, &format!("{name}.project"), 4 * c, c, 1, 1, 0, 1.0, rng),
        }
    }

    /// `x + b * F(x)`; in training `b` is drawn per sample as
    /// Bernoulli(1 - p) / (1 - p), at inference `b = 1`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        p: &ParamStore,
        x: &Tensor,
        drop_path: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(Tensor, BlockCache)> {
        let (n, c, h, w) = x.nchw()?;
        let scale: Vec<f64> = (0..n)
            .map(|_| {
                if !training {
                    1.0
                } else if rng.gen::<f64>() < drop_path {
                    0.0
                } else {
                    1.0 / (1.0 - drop_path)
                }
            })
            .collect();
        let dw = depthwise_conv(x, p.get(self.dw_weight), p.get(self.dw_bias), 1, 3)?;
        let ln = self.norm.forward(p, &dw)?;
        let pre = self.expand.forward(p, &ln)?;
        let act = Activation::Gelu.apply(&pre);
        let f = self.project.forward(p, &act)?;
        let mut out = x.clone();
        let plane = c * h * w;
        for (b, &s) in scale.iter().enumerate() {
            if s != 0.0 {
                let o = &mut out.data_mut()[b * plane..(b + 1) * plane];
                for (ov, fv) in o.iter_mut().zip(&f.data()[b * plane..(b + 1) * plane]) {
                    *ov += s * fv;
                }
            }
        }
        Ok((out, BlockCache { x: x.clone(), dw, ln, pre, act, scale }))
    }

    pub fn backward(&self, p: &ParamStore, cache: &BlockCache, g: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let (_, c, h, w) = g.nchw()?;
        let plane = c * h * w;
        let mut gf = g.clone();
        for (b, &s) in cache.scale.iter().enumerate() {
            gf.data_mut()[b * plane..(b + 1) * plane].iter_mut().for_each(|v| *v *= s);
        }
        let g_act = self.project.backward(p, &cache.act, &gf, grads)?;
        let g_pre = Activation::Gelu.backward(&cache.pre, &g_act)?;
        let g_ln = self.expand.backward(p, &cache.ln, &g_pre, grads)?;
        let g_dw = self.norm.backward(p, &cache.dw, &g_ln, grads)?;
        let dg = depthwise_conv_backward(&cache.x, p.get(self.dw_weight), &g_dw, 1, 3)?;
        grads.add(self.dw_weight, &dg.weight)?;
        grads.add(self.dw_bias, &dg.bias)?;
        let mut gx = g.clone();
        gx.add_assign(&dg.input)?;
        Ok(gx)
    }
}

/// Bilinear ×2 upsampling, 3×3 convolution, GELU.
#[derive(Clone, Copy, Debug)]
pub struct UpBlock {
    pub conv: Conv,
}

#[derive(Clone, Debug)]
pub struct UpCache {
    in_hw: (usize, usize),
    up: Tensor,
    pre: Tensor,
}

impl UpBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        UpBlock { conv: Conv::new(store, name, cin, cout, 3, 1, 1, 2.0, rng) }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<(Tensor, UpCache)> {
        let (_, _, h, w) = x.nchw()?;
        let up = bilinear_resize(x, 2 * h, 2 * w)?;
        let pre = self.conv.forward(p, &up)?;
        let out = Activation::Gelu.apply(&pre);
        Ok((out, UpCache { in_hw: (h, w), up, pre }))
    }

    pub fn backward(&self, p: &ParamStore, cache: &UpCache, g: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let g_pre = Activation::Gelu.backward(&cache.pre, g)?;
        let g_up = self.conv.backward(p, &cache.up, &g_pre, grads)?;
        bilinear_resize_backward(&g_up, cache.in_hw.0, cache.in_hw.1)
    }
}

/// Sigmoid-gated blend of an encoder skip and a decoder feature.
#[derive(Clone, Copy, Debug)]
pub struct Gate {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Gate {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Self {
        Gate {
            weight: store.add(format!("{name}.weight"), kaiming(&[1, 2 * c, 1, 1], 1.0, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1])),
        }
    }

    pub fn forward(&self, p: &ParamStore, e: &Tensor, d: &Tensor) -> Result<(Tensor, GateContext)> {
        let f = attention_gate(e, d, p.get(self.weight), p.get(self.bias))?;
        Ok((f.output, f.context))
    }

    /// Returns gradients for `(e, d)`.
    pub fn backward(&self, ctx: &GateContext, g: &Tensor, grads: &mut Grads) -> Result<(Tensor, Tensor)> {
        let gg = attention_gate_backward(ctx, g)?;
        grads.add(self.weight, &gg.weight)?;
        grads.add(self.bias, &gg.bias)?;
        Ok((gg.e, gg.d))
    }
}

/// Stride-2 sparsity-invariant convolution followed by GELU.
#[derive(Clone, Copy, Debug)]
pub struct SparseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct SparseCache {
    ctx: SparseConvContext,
    pre: Tensor,
}

impl SparseLayer {
    pub const GEOMETRY: ConvGeometry = ConvGeometry { stride: 2, padding: 1 };
    pub const KERNEL: usize = 4;

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        let k = Self::KERNEL;
        // The window mean already divides by the valid count; scale by the
        // kernel area so initial activations match a dense fan-in init.
        let w = kaiming(&[cout, cin, k, k], 2.0, rng).scale((k * k) as f64);
        SparseLayer {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
        }
    }

    /// Returns `(activation, new_mask, cache)`.
    pub fn forward(&self, p: &ParamStore, x: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor, SparseCache)> {
        let f = sparse_invariant_conv(x, mask, p.get(self.weight), p.get(self.bias), Self::GEOMETRY, SPARSE_EPS)?;
        let out = Activation::Gelu.apply(&f.output);
        Ok((out, f.mask, SparseCache { ctx: f.context, pre: f.output }))
    }

    pub fn backward(&self, cache: &SparseCache, g: &Tensor, grads: &mut Grads) -> Result<Tensor> {
        let g_pre = Activation::Gelu.backward(&cache.pre, g)?;
        let sg = sparse_conv_backward(&cache.ctx, &g_pre)?;
        grads.add(self.weight, &sg.weight)?;
        grads.add(self.bias, &sg.bias)?;
        Ok(sg.input)
    }
}

/// Copy a 3-input-channel stem kernel onto the six-channel input
/// `[R, G, B, depth, x, y]`: depth reuses green, x reuses red, y reuses
/// green.
pub fn expand_stem_weights(w3: &Tensor) -> Result<Tensor> {
    let (o, i, kh, kw) = w3.nchw()?;
    if i != 3 {
        return Err(Error::invalid(
            "expand_stem_weights",
            format!("expected 3 input channels, got {i} in shape {:?}", w3.shape()),
        ));
    }
    const SOURCE: [usize; 6] = [0, 1, 2, 1, 0, 1];
    let k = kh * kw;
    let mut w6 = Tensor::zeros(&[o, 6, kh, kw]);
    for oc in 0..o {
        for (dst, &src) in SOURCE.iter().enumerate() {
            let from = &w3.data()[(oc * 3 + src) * k..(oc * 3 + src + 1) * k];
            w6.data_mut()[(oc * 6 + dst) * k..(oc * 6 + dst + 1) * k].copy_from_slice(from);
        }
    }
    Ok(w6)
}
