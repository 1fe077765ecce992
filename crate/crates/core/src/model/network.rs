//! The two-branch network: a ConvNeXt RGB encoder-decoder, a
//! sparsity-invariant depth encoder-decoder, confidence fusion of the two
//! branch predictions and spatial propagation of the fused map.
//!
//! Input is one (N, 6, H, W) tensor laid out as `[R, G, B, S, Px, Py]`,
//! the layout named by [`ChannelSchema::RGB_INPUT`](crate::tta::ChannelSchema::RGB_INPUT).
//! The depth branch sees `[S, D_rgb, Px, Py]` where `D_rgb` is the RGB
//! branch depth treated as a constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cspn::{
    cspn_backward, cspn_forward, normalize_affinity, normalize_affinity_backward, CspnConfig, CspnContext,
    SparseAnchor, MIRROR_DIRECTION,
};
use crate::depth::SparseDepthFrame;
use crate::error::{Error, Result};
use crate::fusion::GateContext;
use crate::fusion::{confidence_fuse_backward, confidence_fuse_raw, FuseContext, FUSE_EPS};
use crate::ops::{sigmoid, Activation};
use crate::tensor::Tensor;
use crate::tta::{PositionEncoding, PositionMode};

use super::config::ModelConfig;
use super::layers::{
    expand_stem_weights, Block, BlockCache, Conv, Gate, Norm, SparseCache, SparseLayer, UpBlock, UpCache,
};
use super::params::{Grads, ParamId, ParamStore};

pub const INPUT_CHANNELS: usize = 6;
const SPARSE_CHANNEL: usize = 3;
const POS_CHANNELS: [usize; 2] = [4, 5];

/// Build the (1, 6, H, W) network input from a (1, 3, H, W) image and a
/// sparse frame, appending the position encoding in `mode`.
pub fn assemble_input(rgb: &Tensor, sparse: &SparseDepthFrame, mode: PositionMode) -> Result<Tensor> {
    let (h, w) = (sparse.depth().height(), sparse.depth().width());
    rgb.expect_shape("assemble_input", &[1, 3, h, w])?;
    let pos = PositionEncoding::new(h, w, mode)?;
    Tensor::concat_channels(&[rgb, &sparse.depth().to_tensor(), pos.tensor()])
}

#[derive(Clone, Debug)]
struct Stage {
    down: Option<(Norm, Conv)>,
    blocks: Vec<Block>,
}

/// Layer layout; all tensors live in the model's [`ParamStore`].
#[derive(Clone, Debug)]
struct Layout {
    stem: Conv,
    stem_norm: Norm,
    stages: Vec<Stage>,
    /// `rgb_up[i]` lifts stage `i + 1` to stage `i`, then gates with skip `i`.
    rgb_up: Vec<(UpBlock, Gate)>,
    rgb_half: UpBlock,
    rgb_full: UpBlock,
    rgb_head: Conv,
    sparse: Vec<SparseLayer>,
    bottleneck: Conv,
    /// 1/16 -> 1/8, 1/8 -> 1/4, 1/4 -> 1/2, each gated with the sparse skip.
    depth_up: Vec<(UpBlock, Gate, Conv)>,
    depth_full: UpBlock,
    depth_head: Conv,
    affinity: Conv,
}

/// Everything the network predicts. Depth tensors are (N, 1, h, w) with
/// values in (0, d_max); confidences are in (0, 1).
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub d_out: Tensor,
    pub d2: Tensor,
    pub d4: Tensor,
    pub d8: Tensor,
    pub d_rgb: Tensor,
    pub d_depth: Tensor,
    pub c_rgb: Tensor,
    pub c_depth: Tensor,
    pub fused: Tensor,
}

/// Loss gradients with respect to any subset of the outputs.
#[derive(Clone, Debug, Default)]
pub struct OutputGrads {
    pub d_out: Option<Tensor>,
    pub d2: Option<Tensor>,
    pub d4: Option<Tensor>,
    pub d8: Option<Tensor>,
    pub d_rgb: Option<Tensor>,
    pub d_depth: Option<Tensor>,
    pub c_rgb: Option<Tensor>,
    pub c_depth: Option<Tensor>,
}

/// Saved activations from [`Model::forward`].
/// Inputs to a stage's downsample norm and conv (none for the first stage),
/// then its block caches.
type StageCache = (Option<(Tensor, Tensor)>, Vec<BlockCache>);

#[derive(Clone, Debug)]
pub struct ForwardContext {
    input_shape: Vec<usize>,
    stem_out: Tensor,
    stem_in: Tensor,
    stages: Vec<StageCache>,
    rgb_up: Vec<(UpCache, GateContext)>,
    rgb_half: UpCache,
    rgb_full: UpCache,
    rgb_head_in: Tensor,
    rgb_logits: Tensor,
    sparse: Vec<SparseCache>,
    bottleneck_in: Tensor,
    bottleneck_pre: Tensor,
    depth_up: Vec<(UpCache, GateContext, Tensor, Tensor)>,
    depth_full: UpCache,
    depth_head_in: Tensor,
    depth_logits: Tensor,
    affinity_raw: Tensor,
    fuse: FuseContext,
    cspn: CspnContext,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

fn sigmoid_grad_from_output(s: &Tensor, g: &Tensor) -> Result<Tensor> {
    s.zip_map(g, |sv, gv| gv * sv * (1.0 - sv))
}

/// `scale * sigmoid(z)` and its gradient helper.
fn scaled_sigmoid(z: &Tensor, scale: f64) -> Tensor {
    z.map(|v| scale * sigmoid(v))
}

fn scaled_sigmoid_backward(z: &Tensor, scale: f64, g: &Tensor) -> Result<Tensor> {
    z.zip_map(g, |v, gv| {
        let s = sigmoid(v);
        gv * scale * s * (1.0 - s)
    })
}

fn add_opt(acc: &mut Tensor, g: &Option<Tensor>) -> Result<()> {
    if let Some(g) = g {
        acc.add_assign(g)?;
    }
    Ok(())
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let w = &config.rgb_widths;
        let rng = &mut rng;

        // Stem: a 3-channel init replicated onto the 6-channel input.
        let stem_w3 = Tensor::randn(&[w[0], 3, 4, 4], (2.0f64 / (6.0 * 16.0)).sqrt(), rng);
        let stem = Conv {
            weight: p.add("rgb.stem.weight", expand_stem_weights(&stem_w3)?),
            bias: p.add("rgb.stem.bias", Tensor::zeros(&[w[0]])),
            stride: 4,
            padding: 0,
        };
        let stem_norm = Norm::new(&mut p, "rgb.stem.norm", w[0]);

        let mut stages = Vec::new();
        for (i, (&width, &depth)) in w.iter().zip(&config.rgb_depths).enumerate() {
            let down = (i > 0).then(|| {
                let name = format!("rgb.stage{i}.down");
                (
                    Norm::new(&mut p, &format!("{name}.norm"), w[i - 1]),
                    Conv::new(&mut p, &name, w[i - 1], width, 2, 2, 0, 2.0, rng),
                )
            });
            let blocks =
                (0..depth).map(|j| Block::new(&mut p, &format!("rgb.stage{i}.block{j}"), width, rng)).collect();
            stages.push(Stage { down, blocks });
        }
        let rgb_up = (0..w.len() - 1)
            .map(|i| {
                (
                    UpBlock::new(&mut p, &format!("rgb.up{i}"), w[i + 1], w[i], rng),
                    Gate::new(&mut p, &format!("rgb.gate{i}"), w[i], rng),
                )
            })
            .collect();
        let dec = config.decoder_width;
        let rgb_half = UpBlock::new(&mut p, "rgb.up_half", w[0], dec, rng);
        let rgb_full = UpBlock::new(&mut p, "rgb.up_full", dec, dec, rng);
        let rgb_head = Conv::new(&mut p, "rgb.head", dec, 2, 3, 1, 1, 0.1, rng);

        let dw = &config.depth_widths;
        let mut sparse = Vec::new();
        let mut cin = 4;
        for (i, &c) in dw.iter().enumerate() {
            sparse.push(SparseLayer::new(&mut p, &format!("depth.sparse{i}"), cin, c, rng));
            cin = c;
        }
        let bottleneck = Conv::new(&mut p, "depth.bottleneck", dw[3] + w[2], dw[3], 3, 1, 1, 2.0, rng);
        let depth_up = (0..3)
            .map(|k| {
                let (src, dst) = (dw[3 - k], dw[2 - k]);
                let scale = 8 >> k;
                (
                    UpBlock::new(&mut p, &format!("depth.up{scale}"), src, dst, rng),
                    Gate::new(&mut p, &format!("depth.gate{scale}"), dst, rng),
                    Conv::new(&mut p, &format!("depth.head{scale}"), dst, 1, 1, 1, 0, 0.1, rng),
                )
            })
            .collect();
        let depth_full = UpBlock::new(&mut p, "depth.up_full", dw[0], dec, rng);
        let depth_head = Conv::new(&mut p, "depth.head", dec, 2, 3, 1, 1, 0.1, rng);
        let affinity = Conv::new(&mut p, "depth.affinity", dec, 8, 1, 1, 0, 1.0, rng);

        Ok(Model {
            config,
            params: p,
            layout: Layout {
                stem,
                stem_norm,
                stages,
                rgb_up,
                rgb_half,
                rgb_full,
                rgb_head,
                sparse,
                bottleneck,
                depth_up,
                depth_full,
                depth_head,
                affinity,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Names of parameters that belong to the RGB branch.
    pub fn is_rgb_param(name: &str) -> bool {
        name.starts_with("rgb.")
    }

    fn cspn_config(&self) -> CspnConfig {
        CspnConfig { steps: self.config.cspn_steps, reanchor: self.config.cspn_reanchor }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (n, c, h, w) = x.nchw()?;
        let want = [n, INPUT_CHANNELS, self.config.height, self.config.width];
        if n == 0 || c != INPUT_CHANNELS || h != want[2] || w != want[3] {
            return Err(Error::shape("model_forward", &want, x.shape()));
        }
        Ok(())
    }

    /// Deterministic inference: stochastic depth off, no RNG consumed.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, false, &mut rng)?.0.d_out)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<(ForwardOutputs, ForwardContext)> {
        self.forward_with(x, training, rng, None)
    }

    /// Forward pass; `rgb_depth_override` replaces the depth-branch copy of
    /// the RGB depth with a caller-supplied constant of the same shape.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        training: bool,
        rng: &mut R,
        rgb_depth_override: Option<&Tensor>,
    ) -> Result<(ForwardOutputs, ForwardContext)> {
        self.check_input(x)?;
        let p = &self.params;
        let l = &self.layout;
        let cfg = &self.config;
        let (n, _, h, w) = x.nchw()?;

        // RGB encoder.
        let stem_out = l.stem.forward(p, x)?;
        let mut cur = l.stem_norm.forward(p, &stem_out)?;
        let mut skips = Vec::with_capacity(l.stages.len());
        let mut stage_caches = Vec::with_capacity(l.stages.len());
        for stage in &l.stages {
            let down_cache = match &stage.down {
                Some((norm, conv)) => {
                    let normed = norm.forward(p, &cur)?;
                    let out = conv.forward(p, &normed)?;
                    let saved = (std::mem::replace(&mut cur, out), normed);
                    Some(saved)
                }
                None => None,
            };
            let mut caches = Vec::with_capacity(stage.blocks.len());
            for block in &stage.blocks {
                let (out, c) = block.forward(p, &cur, cfg.drop_path, training, rng)?;
                caches.push(c);
                cur = out;
            }
            stage_caches.push((down_cache, caches));
            skips.push(cur.clone());
        }

        // RGB decoder, deepest stage first.
        let s = skips.len();
        let mut dec_feats: Vec<Option<Tensor>> = vec![None; s];
        dec_feats[s - 1] = Some(skips[s - 1].clone());
        let mut rgb_up: Vec<Option<(UpCache, GateContext)>> = vec![None; s - 1];
        for i in (0..s - 1).rev() {
            let (up, gate) = &l.rgb_up[i];
            let (u, uc) = up.forward(p, dec_feats[i + 1].as_ref().expect("filled"))?;
            let (f, gc) = gate.forward(p, &skips[i], &u)?;
            dec_feats[i] = Some(f);
            rgb_up[i] = Some((uc, gc));
        }
        let f16 = dec_feats[2].clone().expect("at least three stages");
        let (f2, rgb_half) = l.rgb_half.forward(p, dec_feats[0].as_ref().expect("filled"))?;
        let (f1, rgb_full) = l.rgb_full.forward(p, &f2)?;
        let rgb_logits = l.rgb_head.forward(p, &f1)?;
        let parts = rgb_logits.split_channels(&[1, 1])?;
        let d_rgb = scaled_sigmoid(&parts[0], cfg.d_max);
        let c_rgb = parts[1].map(sigmoid);

        // Depth branch.
        let sparse_in = x.channel(SPARSE_CHANNEL)?;
        let mask = sparse_in.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let pos = x.split_channels(&[4, 2])?.pop().expect("two parts");
        let rgb_const = match rgb_depth_override {
            Some(t) => {
                t.expect_same_shape("model_forward", &d_rgb)?;
                t.clone()
            }
            None => d_rgb.clone(),
        };
        // Depths enter the branch in units of d_max.
        let inv = 1.0 / cfg.d_max;
        let depth_in = Tensor::concat_channels(&[&sparse_in.scale(inv), &rgb_const.scale(inv), &pos])?;
        debug_assert_eq!(POS_CHANNELS, [4, 5]);
        let mut sfeat = Vec::with_capacity(4);
        let mut sparse_caches = Vec::with_capacity(4);
        let mut cur = depth_in;
        let mut m = mask.clone();
        for layer in &l.sparse {
            let (out, nm, c) = layer.forward(p, &cur, &m)?;
            sparse_caches.push(c);
            sfeat.push(out.clone());
            cur = out;
            m = nm;
        }
        let bottleneck_in = Tensor::concat_channels(&[&sfeat[3], &f16])?;
        let bottleneck_pre = l.bottleneck.forward(p, &bottleneck_in)?;
        let mut cur = Activation::Gelu.apply(&bottleneck_pre);
        let mut depth_up = Vec::with_capacity(3);
        let mut scale_preds = Vec::with_capacity(3);
        for (k, (up, gate, head)) in l.depth_up.iter().enumerate() {
            let (u, uc) = up.forward(p, &cur)?;
            let (g, gc) = gate.forward(p, &sfeat[2 - k], &u)?;
            let z = head.forward(p, &g)?;
            scale_preds.push(scaled_sigmoid(&z, cfg.d_max));
            depth_up.push((uc, gc, g.clone(), z));
            cur = g;
        }
        let (g1, depth_full) = l.depth_full.forward(p, &cur)?;
        let depth_logits = l.depth_head.forward(p, &g1)?;
        let parts = depth_logits.split_channels(&[1, 1])?;
        let d_depth = scaled_sigmoid(&parts[0], cfg.d_max);
        let c_depth = parts[1].map(sigmoid);
        let affinity_logits = l.affinity.forward(p, &g1)?;
        let affinity_raw = affinity_logits.map(sigmoid);
        let kappa = normalize_affinity(&affinity_raw)?;

        // Fusion and refinement.
        let fuse = confidence_fuse_raw(&d_rgb, &d_depth, &c_rgb, &c_depth, FUSE_EPS)?;
        let anchor = SparseAnchor { depth: &sparse_in, mask: &mask };
        let cspn = cspn_forward(&fuse.output, &kappa, self.cspn_config(), Some(anchor))?;

        debug_assert_eq!(cspn.output.shape(), [n, 1, h, w]);
        let mut preds = scale_preds.into_iter();
        let outputs = ForwardOutputs {
            d_out: cspn.output,
            d8: preds.next().expect("three scales"),
            d4: preds.next().expect("three scales"),
            d2: preds.next().expect("three scales"),
            d_rgb,
            d_depth,
            c_rgb,
            c_depth,
            fused: fuse.output,
        };
        let ctx = ForwardContext {
            input_shape: x.shape().to_vec(),
            stem_in: x.clone(),
            stem_out,
            stages: stage_caches,
            rgb_up: rgb_up.into_iter().map(|c| c.expect("filled")).collect(),
            rgb_half,
            rgb_full,
            rgb_head_in: f1,
            rgb_logits,
            sparse: sparse_caches,
            bottleneck_in,
            bottleneck_pre,
            depth_up,
            depth_full,
            depth_head_in: g1,
            depth_logits,
            affinity_raw,
            fuse: fuse.context,
            cspn: cspn.context,
        };
        Ok((outputs, ctx))
    }

    /// Parameter gradients. The depth branch's copy of the RGB depth is a
    /// constant, so no gradient reaches the RGB branch through it.
    pub fn backward(&self, ctx: &ForwardContext, grads_out: &OutputGrads) -> Result<Grads> {
        let p = &self.params;
        let l = &self.layout;
        let cfg = &self.config;
        let (n, _, h, w) = (ctx.input_shape[0], ctx.input_shape[1], ctx.input_shape[2], ctx.input_shape[3]);
        let full = [n, 1, h, w];
        let mut grads = p.zeros_like();
        for (name, g) in [
            ("d_out", &grads_out.d_out),
            ("d_rgb", &grads_out.d_rgb),
            ("d_depth", &grads_out.d_depth),
            ("c_rgb", &grads_out.c_rgb),
            ("c_depth", &grads_out.c_depth),
        ] {
            if let Some(g) = g {
                if g.shape() != full {
                    return Err(Error::context(
                        "model_backward",
                        format!("{name} gradient {:?} does not match forward {:?}", g.shape(), full),
                    ));
                }
            }
        }

        // Refinement and fusion.
        let d_out = grads_out.d_out.clone().unwrap_or_else(|| Tensor::zeros(&full));
        let cg = cspn_backward(&ctx.cspn, &d_out)?;
        let fg = confidence_fuse_backward(&ctx.fuse, &cg.h0)?;
        let mut g_drgb = fg.d_rgb;
        add_opt(&mut g_drgb, &grads_out.d_rgb)?;
        let mut g_crgb = fg.c_rgb;
        add_opt(&mut g_crgb, &grads_out.c_rgb)?;
        let mut g_ddepth = fg.d_depth;
        add_opt(&mut g_ddepth, &grads_out.d_depth)?;
        let mut g_cdepth = fg.c_depth;
        add_opt(&mut g_cdepth, &grads_out.c_depth)?;

        // Depth heads.
        let g_raw = normalize_affinity_backward(&ctx.affinity_raw, &cg.kappa)?;
        let g_aff_logits = sigmoid_grad_from_output(&ctx.affinity_raw, &g_raw)?;
        let mut g_g1 = l.affinity.backward(p, &ctx.depth_head_in, &g_aff_logits, &mut grads)?;
        let dl = ctx.depth_logits.split_channels(&[1, 1])?;
        let g_dl = Tensor::concat_channels(&[
            &scaled_sigmoid_backward(&dl[0], cfg.d_max, &g_ddepth)?,
            &scaled_sigmoid_backward(&dl[1], 1.0, &g_cdepth)?,
        ])?;
        g_g1.add_assign(&l.depth_head.backward(p, &ctx.depth_head_in, &g_dl, &mut grads)?)?;

        // Depth decoder, shallowest scale first.
        let mut g_cur = l.depth_full.backward(p, &ctx.depth_full, &g_g1, &mut grads)?;
        let scale_grads = [&grads_out.d8, &grads_out.d4, &grads_out.d2];
        let mut g_skip: Vec<Option<Tensor>> = vec![None; 4];
        for k in (0..3).rev() {
            let (up, gate, head) = &l.depth_up[k];
            let (uc, gc, g_in, z) = &ctx.depth_up[k];
            if let Some(gs) = scale_grads[k] {
                let gz = scaled_sigmoid_backward(z, cfg.d_max, gs)?;
                g_cur.add_assign(&head.backward(p, g_in, &gz, &mut grads)?)?;
            }
            let (g_e, g_u) = gate.backward(gc, &g_cur, &mut grads)?;
            g_skip[2 - k] = Some(g_e);
            g_cur = up.backward(p, uc, &g_u, &mut grads)?;
        }
        let g_pre = Activation::Gelu.backward(&ctx.bottleneck_pre, &g_cur)?;
        let g_cat = l.bottleneck.backward(p, &ctx.bottleneck_in, &g_pre, &mut grads)?;
        let dw3 = cfg.depth_widths[3];
        let mut parts = g_cat.split_channels(&[dw3, cfg.rgb_widths[2]])?;
        let g_f16 = parts.pop().expect("two parts");
        let mut g_s = parts.pop().expect("two parts");

        // Sparse encoder. The input gradient (towards S, D_rgb and P) is dropped.
        for i in (0..4).rev() {
            if let Some(extra) = &g_skip[i] {
                g_s.add_assign(extra)?;
            }
            let g_in = l.sparse[i].backward(&ctx.sparse[i], &g_s, &mut grads)?;
            g_s = g_in;
        }

        // RGB head and decoder.
        let rl = ctx.rgb_logits.split_channels(&[1, 1])?;
        let g_rl = Tensor::concat_channels(&[
            &scaled_sigmoid_backward(&rl[0], cfg.d_max, &g_drgb)?,
            &scaled_sigmoid_backward(&rl[1], 1.0, &g_crgb)?,
        ])?;
        let g_f1 = l.rgb_head.backward(p, &ctx.rgb_head_in, &g_rl, &mut grads)?;
        let g_f2 = l.rgb_full.backward(p, &ctx.rgb_full, &g_f1, &mut grads)?;
        let mut g_dec = l.rgb_half.backward(p, &ctx.rgb_half, &g_f2, &mut grads)?;
        let s = l.stages.len();
        let mut g_skips: Vec<Tensor> = Vec::with_capacity(s);
        for i in 0..s - 1 {
            if i == 2 {
                g_dec.add_assign(&g_f16)?;
            }
            let (up, gate) = &l.rgb_up[i];
            let (uc, gc) = &ctx.rgb_up[i];
            let (g_e, g_u) = gate.backward(gc, &g_dec, &mut grads)?;
            g_skips.push(g_e);
            g_dec = up.backward(p, uc, &g_u, &mut grads)?;
        }
        if s == 3 {
            g_dec.add_assign(&g_f16)?;
        }
        g_skips.push(g_dec);

        // RGB encoder, deepest stage first.
        let mut g_next: Option<Tensor> = None;
        for i in (0..s).rev() {
            let mut g = g_skips[i].clone();
            if let Some(extra) = g_next.take() {
                g.add_assign(&extra)?;
            }
            let stage = &l.stages[i];
            let (down_cache, caches) = &ctx.stages[i];
            for (block, cache) in stage.blocks.iter().zip(caches).rev() {
                g = block.backward(p, cache, &g, &mut grads)?;
            }
            if let (Some((norm, conv)), Some((pre_norm, normed))) = (&stage.down, down_cache) {
                let g_normed = conv.backward(p, normed, &g, &mut grads)?;
                g = norm.backward(p, pre_norm, &g_normed, &mut grads)?;
            }
            g_next = Some(g);
        }
        let g_stem = l.stem_norm.backward(p, &ctx.stem_out, &g_next.expect("stage 0"), &mut grads)?;
        l.stem.backward(p, &ctx.stem_in, &g_stem, &mut grads)?;
        Ok(grads)
    }

    /// Make every kernel left-right symmetric and tie mirrored affinity
    /// directions, so the network commutes with a horizontal flip of its
    /// input when the coordinate channels are flipped consistently.
    pub fn mirror_symmetrize(&mut self) {
        let aff = (self.layout.affinity.weight, self.layout.affinity.bias);
        for t in self.params.tensors_mut() {
            if t.shape().len() == 4 && t.shape()[3] > 1 {
                let flipped = t.flip_horizontal();
                *t = t.add(&flipped).expect("same shape").scale(0.5);
            }
        }
        for id in [aff.0, aff.1] {
            let t = self.params.get_mut(id);
            let per = t.len() / 8;
            let src = t.clone();
            for (d, &m) in MIRROR_DIRECTION.iter().enumerate() {
                for k in 0..per {
                    t.data_mut()[d * per + k] = 0.5 * (src.data()[d * per + k] + src.data()[m * per + k]);
                }
            }
        }
    }

    /// Ids of the final confidence head biases, `(rgb, depth)`.
    pub fn confidence_bias_ids(&self) -> (ParamId, ParamId) {
        (self.layout.rgb_head.bias, self.layout.depth_head.bias)
    }
}
