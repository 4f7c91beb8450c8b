//! Run configuration: presets, file overlay, flag overrides, and the
//! resolved-config echo.
//!
//! Resolution order is preset defaults, then the optional config file,
//! then CLI flags. Config files may set any subset of keys; unknown keys
//! are rejected.

use std::fs;
use std::path::Path;

use camforge_core::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    /// Working resolution; images are generated at and resized to this.
    pub size: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrfCfg {
    pub iterations: usize,
    pub w_app: f32,
    pub theta_alpha: f32,
    pub theta_beta: f32,
    pub w_smooth: f32,
    pub theta_gamma: f32,
    pub unary_clip: f32,
}

impl CrfCfg {
    pub fn to_params(&self) -> camforge_core::CrfParams {
        camforge_core::CrfParams {
            iterations: self.iterations,
            w_app: self.w_app,
            theta_alpha: self.theta_alpha,
            theta_beta: self.theta_beta,
            w_smooth: self.w_smooth,
            theta_gamma: self.theta_gamma,
            unary_clip: self.unary_clip,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCfg {
    pub epochs: usize,
    pub batch: usize,
    pub lr_init: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    /// Stop classifier training early once validation accuracy reaches
    /// this value (after `min_epochs`); null disables.
    pub early_stop_val_acc: Option<f64>,
    pub min_epochs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnetCfg {
    pub base_channels: usize,
    pub classes: usize,
    pub single_branch: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugCfg {
    pub enabled: bool,
    pub flip: bool,
    pub rotations: Vec<f32>,
    pub noise_sigma: (f32, f32),
}

impl AugCfg {
    pub fn to_config(&self, seed: u64) -> Option<camforge_core::data::augment::AugmentConfig> {
        self.enabled
            .then(|| camforge_core::data::augment::AugmentConfig {
                flip: self.flip,
                rotations: self.rotations.clone(),
                noise_sigma: self.noise_sigma,
                seed,
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub seed: u64,
    pub data: DataCfg,
    /// Multi-scale inference sampling rates.
    pub scales: Vec<f32>,
    /// Pseudo-mask segmentation threshold.
    pub threshold: f32,
    /// Min-max normalize each per-scale map before fusion.
    pub prefuse_norm: bool,
    pub crf: CrfCfg,
    pub cls: TrainCfg,
    pub seg: TrainCfg,
    pub unet: UnetCfg,
    pub augment: AugCfg,
    /// CE-only fallback when a batch has no seeds at all (flagged).
    pub empty_seed_fallback: bool,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => PipelineConfig {
                preset,
                seed: 7,
                data: DataCfg {
                    size: 64,
                    n_pos: 120,
                    n_neg: 120,
                },
                scales: vec![0.5, 1.0, 1.5, 2.0],
                threshold: 0.35,
                prefuse_norm: true,
                crf: CrfCfg {
                    iterations: 10,
                    w_app: 10.0,
                    theta_alpha: 20.0,
                    theta_beta: 13.0 / 255.0,
                    w_smooth: 3.0,
                    theta_gamma: 1.0,
                    unary_clip: 0.05,
                },
                cls: TrainCfg {
                    epochs: 30,
                    batch: 4,
                    lr_init: 1e-3,
                    gamma: 0.9,
                    weight_decay: 1e-4,
                    early_stop_val_acc: Some(1.0),
                    min_epochs: 8,
                },
                seg: TrainCfg {
                    epochs: 30,
                    batch: 4,
                    lr_init: 1e-3,
                    gamma: 0.9,
                    weight_decay: 1e-4,
                    early_stop_val_acc: None,
                    min_epochs: 0,
                },
                unet: UnetCfg {
                    base_channels: 8,
                    classes: 2,
                    single_branch: false,
                },
                augment: AugCfg {
                    enabled: true,
                    flip: true,
                    rotations: vec![-25.0, 25.0, 90.0, 180.0, 270.0],
                    noise_sigma: (0.3, 0.7),
                },
                empty_seed_fallback: true,
            },
            Preset::Full => {
                let mut cfg = PipelineConfig::preset(Preset::Desk);
                cfg.preset = Preset::Full;
                cfg.data = DataCfg {
                    size: 256,
                    n_pos: 120,
                    n_neg: 120,
                };
                cfg.crf.theta_alpha = 80.0;
                cfg.crf.theta_gamma = 3.0;
                cfg.cls.epochs = 100;
                cfg.cls.batch = 8;
                cfg.seg.epochs = 100;
                cfg.seg.batch = 8;
                cfg.unet.base_channels = 64;
                cfg
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.size == 0 || self.data.size % 8 != 0 {
            return Err(Error::config(format!(
                "data.size must be a positive multiple of 8, got {}",
                self.data.size
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        camforge_core::ScaleSet::new(self.scales.clone())?;
        self.crf.to_params().validate()?;
        if let Some(aug) = self.augment.to_config(0) {
            aug.validate()?;
        }
        if self.unet.classes < 2 {
            return Err(Error::config("unet.classes must be at least 2".to_string()));
        }
        Ok(())
    }

    /// Serializes the resolved configuration (stable field order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Partial mirror of [`PipelineConfig`] for file overlays: any subset of
/// keys may be given; unknown keys are rejected.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub data: Option<PartialDataCfg>,
    pub scales: Option<Vec<f32>>,
    pub threshold: Option<f32>,
    pub prefuse_norm: Option<bool>,
    pub crf: Option<PartialCrfCfg>,
    pub cls: Option<PartialTrainCfg>,
    pub seg: Option<PartialTrainCfg>,
    pub unet: Option<PartialUnetCfg>,
    pub augment: Option<PartialAugCfg>,
    pub empty_seed_fallback: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialDataCfg {
    pub size: Option<usize>,
    pub n_pos: Option<usize>,
    pub n_neg: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialCrfCfg {
    pub iterations: Option<usize>,
    pub w_app: Option<f32>,
    pub theta_alpha: Option<f32>,
    pub theta_beta: Option<f32>,
    pub w_smooth: Option<f32>,
    pub theta_gamma: Option<f32>,
    pub unary_clip: Option<f32>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialTrainCfg {
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr_init: Option<f64>,
    pub gamma: Option<f64>,
    pub weight_decay: Option<f64>,
    #[serde(default, with = "double_option")]
    pub early_stop_val_acc: Option<Option<f64>>,
    pub min_epochs: Option<usize>,
}

mod double_option {
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D>(d: D) -> Result<Option<Option<f64>>, D::Error>
    where
        D: Deserializer<'de>,
    {
        Ok(Some(Option::<f64>::deserialize(d)?))
    }
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialUnetCfg {
    pub base_channels: Option<usize>,
    pub classes: Option<usize>,
    pub single_branch: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialAugCfg {
    pub enabled: Option<bool>,
    pub flip: Option<bool>,
    pub rotations: Option<Vec<f32>>,
    pub noise_sigma: Option<(f32, f32)>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, [$($field:ident),+ $(,)?]) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

impl PartialConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))
    }

    pub fn apply_to(self, cfg: &mut PipelineConfig) {
        overlay!(cfg, self.clone(), [seed, scales, threshold, prefuse_norm, empty_seed_fallback]);
        if let Some(p) = self.preset {
            cfg.preset = p;
        }
        if let Some(d) = self.data {
            overlay!(cfg.data, d, [size, n_pos, n_neg]);
        }
        if let Some(c) = self.crf {
            overlay!(cfg.crf, c, [iterations, w_app, theta_alpha, theta_beta, w_smooth, theta_gamma, unary_clip]);
        }
        if let Some(t) = self.cls {
            overlay!(cfg.cls, t.clone(), [epochs, batch, lr_init, gamma, weight_decay, min_epochs]);
            if let Some(e) = t.early_stop_val_acc {
                cfg.cls.early_stop_val_acc = e;
            }
        }
        if let Some(t) = self.seg {
            overlay!(cfg.seg, t.clone(), [epochs, batch, lr_init, gamma, weight_decay, min_epochs]);
            if let Some(e) = t.early_stop_val_acc {
                cfg.seg.early_stop_val_acc = e;
            }
        }
        if let Some(u) = self.unet {
            overlay!(cfg.unet, u, [base_channels, classes, single_branch]);
        }
        if let Some(a) = self.augment {
            overlay!(cfg.augment, a, [enabled, flip, rotations, noise_sigma]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_the_paper_hyperparameters() {
        let desk = PipelineConfig::preset(Preset::Desk);
        assert_eq!(desk.threshold, 0.35);
        assert_eq!(desk.scales, vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(desk.cls.lr_init, 1e-3);
        assert_eq!(desk.cls.gamma, 0.9);
        assert_eq!(desk.cls.weight_decay, 1e-4);
        assert_eq!(desk.data.size, 64);
        assert_eq!(desk.unet.base_channels, 8);
        let full = PipelineConfig::preset(Preset::Full);
        assert_eq!(full.data.size, 256);
        assert_eq!(full.cls.epochs, 100);
        assert_eq!(full.seg.batch, 8);
        assert_eq!(full.unet.base_channels, 64);
        desk.validate().unwrap();
        full.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<PartialConfig>(r#"{"thershold": 0.5}"#).unwrap_err();
        assert!(err.to_string().contains("thershold"));
        let err =
            serde_json::from_str::<PartialConfig>(r#"{"crf": {"weight": 1.0}}"#).unwrap_err();
        assert!(err.to_string().contains("weight"));
    }

    #[test]
    fn overlay_touches_only_given_keys() {
        let mut cfg = PipelineConfig::preset(Preset::Desk);
        let partial: PartialConfig =
            serde_json::from_str(r#"{"threshold": 0.7, "crf": {"iterations": 3}}"#).unwrap();
        partial.apply_to(&mut cfg);
        assert_eq!(cfg.threshold, 0.7);
        assert_eq!(cfg.crf.iterations, 3);
        assert_eq!(cfg.crf.w_app, 10.0);
        assert_eq!(cfg.data.size, 64);
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg = PipelineConfig::preset(Preset::Desk);
        let json = cfg.to_json();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_json(), json);
    }
}
