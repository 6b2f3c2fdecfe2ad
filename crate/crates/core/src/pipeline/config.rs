use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{LlmClientConfig, DEFAULT_CONTEXT_SENTENCES};
use crate::detector::{DetectorMode, HymrConfig};
use crate::encoder::EncoderConfig;
use crate::error::{CorefError, Result};
use crate::selectors::FilterConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub mode: DetectorMode,
    /// Width of the biaffine projection.
    pub d_r: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { mode: DetectorMode::Biaffine, d_r: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClustererConfig {
    pub hidden: usize,
    /// Minimum link probability for joining an existing cluster.
    pub threshold: f64,
}

impl Default for ClustererConfig {
    fn default() -> Self {
        Self { hidden: 64, threshold: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackend {
    Api,
    MockYes,
    MockNo,
    MockGold,
    /// Replays the replies recorded in `llm.script`.
    MockScripted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub backend: LlmBackend,
    pub context_sentences: usize,
    pub script: Option<PathBuf>,
    pub api: LlmClientConfig,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            backend: LlmBackend::MockGold,
            context_sentences: DEFAULT_CONTEXT_SENTENCES,
            script: None,
            api: LlmClientConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_heads: f64,
    pub grad_accum: usize,
    pub clip_norm: f64,
    pub warmup_frac: f64,
    pub early_stop_patience: usize,
    pub validate_every_epochs: usize,
    pub max_epochs: usize,
    pub detection_weight: f64,
    pub clustering_weight: f64,
    /// Stop as soon as validation Avg.F1 reaches this value.
    pub target_avg_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 2e-5,
            lr_heads: 3e-4,
            grad_accum: 4,
            clip_norm: 1.0,
            warmup_frac: 0.10,
            early_stop_patience: 30,
            validate_every_epochs: 1,
            max_epochs: 200,
            detection_weight: 1.0,
            clustering_weight: 1.0,
            target_avg_f1: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Drop predicted singletons before scoring (for corpora without
    /// singleton annotation).
    pub drop_singletons: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub detector: DetectorConfig,
    pub hymr: HymrConfig,
    pub clusterer: ClustererConfig,
    pub filters: FilterConfig,
    pub llm: LlmSettings,
    pub train: TrainConfig,
    pub data: DataPaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            encoder: EncoderConfig::default(),
            detector: DetectorConfig::default(),
            hymr: HymrConfig::default(),
            clusterer: ClustererConfig::default(),
            filters: FilterConfig::default(),
            llm: LlmSettings::default(),
            train: TrainConfig::default(),
            data: DataPaths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.hymr.validate()?;
        self.filters.validate()?;
        if self.llm.backend == LlmBackend::Api {
            self.llm.api.validate()?;
        }
        if self.llm.backend == LlmBackend::MockScripted && self.llm.script.is_none() {
            return Err(CorefError::Config("llm.script is required for the scripted mock".into()));
        }
        if self.detector.d_r == 0 || self.clusterer.hidden == 0 {
            return Err(CorefError::Config("detector.d_r and clusterer.hidden must be positive".into()));
        }
        if !(self.clusterer.threshold > 0.0 && self.clusterer.threshold < 1.0) {
            return Err(CorefError::Config(format!("clusterer.threshold {} outside (0, 1)", self.clusterer.threshold)));
        }
        let t = &self.train;
        if t.grad_accum == 0 || t.validate_every_epochs == 0 {
            return Err(CorefError::Config("train.grad_accum and train.validate_every_epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.warmup_frac) {
            return Err(CorefError::Config(format!("train.warmup_frac {} outside [0, 1]", t.warmup_frac)));
        }
        if !(t.lr_encoder >= 0.0 && t.lr_heads > 0.0 && t.clip_norm > 0.0) {
            return Err(CorefError::Config("learning rates and clip_norm must be positive".into()));
        }
        if !(t.detection_weight >= 0.0 && t.clustering_weight >= 0.0) {
            return Err(CorefError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CorefError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CorefError::Config(e.to_string()))
    }

    /// Reads a TOML file. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CorefError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            CorefError::Config(msg) => CorefError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut cfg.data;
        for p in [&mut d.train, &mut d.validation, &mut d.test, &mut d.checkpoint, &mut cfg.llm.script, &mut cfg.encoder.pretrained_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Bridging;

    #[test]
    fn defaults_match_training_protocol() {
        let t = TrainConfig::default();
        assert_eq!((t.lr_encoder, t.lr_heads), (2e-5, 3e-4));
        assert_eq!((t.grad_accum, t.clip_norm, t.warmup_frac, t.early_stop_patience), (4, 1.0, 0.10, 30));
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.filters.eta1, cfg.filters.eta2, cfg.filters.rho), (0.6, 0.6, 1e-3));
        assert_eq!(cfg.hymr.l_max, Some(30));
        assert_eq!(cfg.llm.api.temperature, 0.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.hymr.l_max = None;
        cfg.encoder.bridging = Bridging::LbmMha;
        cfg.train.target_avg_f1 = Some(0.8);
        cfg.data.train = Some("train.conll".into());
        let text = cfg.to_toml_string().unwrap();
        assert!(text.contains("l_max = \"inf\""));
        let back = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn partial_files_and_errors() {
        let cfg = PipelineConfig::from_toml_str("seed = 7\n[filters]\neta1 = 0.2\n").unwrap();
        assert_eq!((cfg.seed, cfg.filters.eta1, cfg.filters.eta2), (7, 0.2, 0.6));
        assert!(PipelineConfig::from_toml_str("[filters]\netaa = 0.2\n").is_err());
        assert!(PipelineConfig::from_toml_str("[filters]\neta1 = 1.2\n").is_err());
        assert!(PipelineConfig::from_toml_str("[llm]\nbackend = \"mock_scripted\"\n").is_err());
        assert!(PipelineConfig::from_toml_str("[train]\ngrad_accum = 0\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[data]\ntrain = \"docs/train.conll\"\ncheckpoint = \"/abs/model.safetensors\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.data.train.unwrap(), dir.path().join("docs/train.conll"));
        assert_eq!(cfg.data.checkpoint.unwrap(), PathBuf::from("/abs/model.safetensors"));
    }
}
