//! Inputs shared by the benchmarks.

use depthcomp::cspn::{normalize_affinity, AffinityField};
use depthcomp::tta::position_encoding;
use depthcomp::{Model, ModelConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct ConvCase {
    pub input: Tensor,
    pub mask: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A (1, c, n, n) feature map, 3x3 weights and a 5% validity mask.
pub fn conv_case(c: usize, n: usize) -> ConvCase {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ConvCase {
        input: Tensor::randn(&[1, c, n, n], 1.0, &mut rng),
        mask: Tensor::from_fn(&[1, 1, n, n], |i| if i % 20 == 0 { 1.0 } else { 0.0 }),
        weight: Tensor::randn(&[c, c, 3, 3], 0.1, &mut rng),
        bias: Tensor::zeros(&[c]),
    }
}

/// Initial depth and normalized nonnegative affinities at n x n.
pub fn cspn_case(n: usize) -> (Tensor, AffinityField) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h0 = Tensor::uniform(&[1, 1, n, n], 1.0, 10.0, &mut rng);
    let aff = normalize_affinity(&Tensor::uniform(&[1, 8, n, n], 0.0, 1.0, &mut rng)).expect("affinity shape");
    (h0, aff)
}

/// The default network and one input for it.
pub fn model_case() -> (Model, Tensor) {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (cfg.height, cfg.width);
    let rgb = Tensor::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng);
    let sparse = Tensor::from_fn(&[1, 1, h, w], |i| if i % 20 == 0 { 1.0 + (i % 9) as f64 } else { 0.0 });
    let pos = position_encoding(h, w).expect("nonzero size").batched(1);
    let x = Tensor::concat_channels(&[&rgb, &sparse, &pos]).expect("same spatial size");
    (Model::new(cfg).expect("default config is valid"), x)
}
