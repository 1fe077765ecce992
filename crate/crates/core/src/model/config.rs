use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the two-branch network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// ConvNeXt blocks per RGB stage. At least three stages.
    pub rgb_depths: Vec<usize>,
    /// Channel width per RGB stage; stage `i` runs at 1/(4 * 2^i) scale.
    pub rgb_widths: Vec<usize>,
    /// Widths of the four stride-2 sparse convolutions (1/2 .. 1/16).
    pub depth_widths: Vec<usize>,
    /// Channel width of the full- and half-resolution decoder blocks.
    pub decoder_width: usize,
    /// Stochastic-depth drop probability.
    pub drop_path: f64,
    pub cspn_steps: usize,
    /// Re-impose sparse measurements after every propagation step.
    pub cspn_reanchor: bool,
    /// Upper end of the depth heads' range, meters.
    pub d_max: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            rgb_depths: vec![1, 1, 1, 1],
            rgb_widths: vec![8, 16, 24, 32],
            depth_widths: vec![8, 12, 16, 16],
            decoder_width: 8,
            drop_path: 0.1,
            cspn_steps: 6,
            cspn_reanchor: false,
            d_max: 10.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A few-thousand-parameter network for finite-difference checks.
    pub fn tiny(height: usize, width: usize) -> Self {
        ModelConfig {
            height,
            width,
            rgb_depths: vec![1, 1, 1],
            rgb_widths: vec![4, 4, 4],
            depth_widths: vec![2, 2, 4, 4],
            decoder_width: 2,
            ..ModelConfig::default()
        }
    }

    /// Side length that `height` and `width` must be divisible by.
    pub fn spatial_multiple(&self) -> usize {
        let rgb = 4usize << self.rgb_widths.len().saturating_sub(1);
        rgb.max(16)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model_config", msg));
        if self.rgb_widths.len() < 3 {
            return bad(format!("need at least 3 RGB stages, got {}", self.rgb_widths.len()));
        }
        if self.rgb_depths.len() != self.rgb_widths.len() {
            return bad(format!(
                "rgb_depths has {} stages but rgb_widths has {}",
                self.rgb_depths.len(),
                self.rgb_widths.len()
            ));
        }
        if self.depth_widths.len() != 4 {
            return bad(format!("depth_widths needs 4 entries, got {}", self.depth_widths.len()));
        }
        let all_widths = self.rgb_widths.iter().chain(&self.depth_widths).chain(std::iter::once(&self.decoder_width));
        if all_widths.into_iter().any(|&w| w == 0) {
            return bad("all widths must be at least 1".into());
        }
        let m = self.spatial_multiple();
        if self.height == 0 || self.width == 0 || self.height % m != 0 || self.width % m != 0 {
            return bad(format!(
                "input {}x{} must be a nonzero multiple of {m} in both dimensions",
                self.height, self.width
            ));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return bad(format!("drop_path must lie in [0, 1), got {}", self.drop_path));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return bad(format!("d_max must be positive, got {}", self.d_max));
        }
        Ok(())
    }

    /// Stable `key = value` text embedded in checkpoints.
    pub fn to_echo(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "height = {}\nwidth = {}\nrgb_depths = {}\nrgb_widths = {}\ndepth_widths = {}\n\
             decoder_width = {}\ndrop_path = {:?}\ncspn_steps = {}\ncspn_reanchor = {}\n\
             d_max = {:?}\nseed = {}\n",
            self.height,
            self.width,
            list(&self.rgb_depths),
            list(&self.rgb_widths),
            list(&self.depth_widths),
            self.decoder_width,
            self.drop_path,
            self.cspn_steps,
            self.cspn_reanchor,
            self.d_max,
            self.seed
        )
    }

    pub fn from_echo(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(format!("config echo: {msg}"));
        let mut cfg = ModelConfig::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
            let float = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{k}: {e}")));
            let list = |v: &str| v.split(',').map(|x| num(x.trim())).collect::<Result<Vec<_>>>();
            match k {
                "height" => cfg.height = num(v)?,
                "width" => cfg.width = num(v)?,
                "rgb_depths" => cfg.rgb_depths = list(v)?,
                "rgb_widths" => cfg.rgb_widths = list(v)?,
                "depth_widths" => cfg.depth_widths = list(v)?,
                "decoder_width" => cfg.decoder_width = num(v)?,
                "drop_path" => cfg.drop_path = float(v)?,
                "cspn_steps" => cfg.cspn_steps = num(v)?,
                "cspn_reanchor" => cfg.cspn_reanchor = v.parse().map_err(|e| bad(format!("{k}: {e}")))?,
                "d_max" => cfg.d_max = float(v)?,
                "seed" => cfg.seed = v.parse().map_err(|e| bad(format!("{k}: {e}")))?,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}
