//! The run configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthcomp::model::{AdamWConfig, INPUT_CHANNELS};
use depthcomp::scene::Intrinsics;
use depthcomp::{ChannelSchema, LossConfig, ModelConfig, PositionMode, SamplingSpec, SceneSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Usage;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub tta: TtaSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub channels: ChannelSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtaSection {
    /// Average with the position-corrected flipped prediction at inference.
    pub enabled: bool,
    /// Use `u / W` coordinates instead of pixel centers.
    pub strict_position: bool,
}

impl Default for TtaSection {
    fn default() -> Self {
        TtaSection { enabled: true, strict_position: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset root; the `--data` flag and `DEPTHCOMP_DATA` take precedence.
    pub path: Option<PathBuf>,
    /// Scenes written by `generate`.
    pub count: usize,
    /// Trailing fraction of scenes held out for validation.
    pub val_fraction: f64,
    /// Template for generated scenes; scene `i` uses seed `scene.seed + i`.
    pub scene: SceneSpec,
    /// Sparse sampling; scene `i` uses seed `sampling.seed + scene seed`.
    pub sampling: SamplingSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            count: 200,
            val_fraction: 0.1,
            scene: SceneSpec::default(),
            sampling: SamplingSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_steps: Option<u64>,
    pub shuffle: bool,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.optimizer.lr,
            weight_decay: t.optimizer.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            shuffle: t.shuffle,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
        }
    }
}

/// Indices of the coordinate channels in the network input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub horizontal: usize,
    pub vertical: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let s = ChannelSchema::RGB_INPUT;
        ChannelSection {
            horizontal: s.horizontal.expect("horizontal channel"),
            vertical: s.vertical.expect("vertical channel"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Usage(format!("config: {e}")))?;
        let has_intrinsics =
            table.get("data").and_then(|d| d.get("scene")).is_some_and(|s| s.get("intrinsics").is_some());
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Usage(format!("config: {e}")))?;
        if !has_intrinsics {
            let s = &mut cfg.data.scene;
            s.intrinsics = Intrinsics::centered(s.height, s.width, s.width as f64);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: depthcomp::Error| anyhow::Error::new(Usage(format!("config: {e}")));
        self.model.validate().map_err(usage)?;
        self.loss.validate().map_err(usage)?;
        self.data.scene.validate().map_err(usage)?;
        self.data.sampling.validate().map_err(usage)?;
        self.train_config().validate().map_err(usage)?;
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            bail!(Usage(format!("config: data.val_fraction must lie in [0, 1), got {}", self.data.val_fraction)));
        }
        let c = &self.channels;
        if (c.horizontal, c.vertical) != (4, 5) {
            bail!(Usage(format!(
                "config: the {INPUT_CHANNELS}-channel input is [R, G, B, S, Px, Py], so channels must be \
                 horizontal = 4, vertical = 5 (got {}, {})",
                c.horizontal, c.vertical
            )));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            shuffle: t.shuffle,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
            optimizer: AdamWConfig { lr: t.lr, weight_decay: t.weight_decay, ..AdamWConfig::default() },
            loss: self.loss,
        }
    }

    pub fn schema(&self) -> ChannelSchema {
        ChannelSchema { horizontal: Some(self.channels.horizontal), vertical: Some(self.channels.vertical) }
    }

    pub fn position_mode(&self) -> PositionMode {
        if self.tta.strict_position {
            PositionMode::Strict
        } else {
            PositionMode::PixelCenter
        }
    }

    /// The defaults as a config file, shown in `--help`.
    pub fn default_text() -> String {
        toml::to_string(&RunConfig::default()).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = RunConfig::default_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::parse("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(format!("{e:#}").contains("learning_rate"), "{e:#}");
        let e = RunConfig::parse("[optim]\n").unwrap_err();
        assert!(format!("{e:#}").contains("optim"), "{e:#}");
        assert!(e.downcast_ref::<Usage>().is_some());
    }

    #[test]
    fn partial_sections_and_derived_intrinsics() {
        let cfg = RunConfig::parse("[train]\nlr = 0.01\n[data.scene]\nheight = 32\nwidth = 48\n").unwrap();
        assert_eq!(cfg.train_config().optimizer.lr, 0.01);
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert_eq!(cfg.data.scene.intrinsics, Intrinsics::centered(32, 48, 48.0));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("[channels]\nhorizontal = 3\n").is_err());
        assert!(RunConfig::parse("[data]\nval_fraction = 1.5\n").is_err());
        assert!(RunConfig::parse("[model]\nheight = 30\n").is_err());
    }
}
