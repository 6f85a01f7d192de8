//! Run configuration: training hyperparameters, synthetic-data settings,
//! and the versioned structured-text config file the CLI consumes.
//!
//! Every default matches the shared configuration used across the main
//! experiments; command-line flags override file values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model/ablation variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Hyperbolic prototype head over M evidence vectors.
    Full,
    /// Same pipeline with Euclidean distances and flat prototypes.
    Euclidean,
    /// Single evidence vector (forces M = 1).
    M1,
    /// Mean-pool over the backbone output plus a two-layer classifier.
    MeanPool,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Euclidean => "euclidean",
            Variant::M1 => "m1",
            Variant::MeanPool => "meanpool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "euclidean" => Ok(Variant::Euclidean),
            "m1" => Ok(Variant::M1),
            "meanpool" => Ok(Variant::MeanPool),
            other => Err(Error::config(format!(
                "unknown variant '{other}' (expected full|euclidean|m1|meanpool)"
            ))),
        }
    }

    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Euclidean, Variant::M1, Variant::MeanPool];
}

/// Training hyperparameters and model dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for all trainable tensors.
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling applied before every optimizer step.
    pub grad_clip: f64,
    pub seed: u64,
    /// Input feature dimension D.
    pub feat_dim: usize,
    /// Adapter output / backbone width d.
    pub model_dim: usize,
    /// Ball embedding dimension h.
    pub ball_dim: usize,
    /// Number of evidence vectors M.
    pub evidence: usize,
    /// Number of positive prototypes K.
    pub modes: usize,
    /// Backbone layer count.
    pub layers: usize,
    /// Cluster loss weight λ.
    pub lambda_cluster: f64,
    /// Prototype repulsion weight β.
    pub beta_sep: f64,
    /// Entropy regularizer weight γ.
    pub gamma_entropy: f64,
    /// Sign applied to the entropy term; +1 adds γ·Σ q ln q as written.
    pub entropy_sign: f64,
    /// Temperature shared by assignments and the soft-min score.
    pub tau: f64,
    /// Ball curvature magnitude c.
    pub curvature: f64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 42,
            feat_dim: 64,
            model_dim: 256,
            ball_dim: 128,
            evidence: 4,
            modes: 4,
            layers: 2,
            lambda_cluster: 1.0,
            beta_sep: 0.1,
            gamma_entropy: 0.05,
            entropy_sign: 1.0,
            tau: 0.1,
            curvature: 1.0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    /// Evidence count after variant resolution (`m1` forces M = 1).
    pub fn effective_evidence(&self) -> usize {
        if self.variant == Variant::M1 {
            1
        } else {
            self.evidence
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("grad_clip", self.grad_clip),
            ("tau", self.tau),
            ("curvature", self.curvature),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(format!("{name} must be finite and positive, got {v}")));
            }
        }
        let nonneg = [
            ("weight_decay", self.weight_decay),
            ("lambda_cluster", self.lambda_cluster),
            ("beta_sep", self.beta_sep),
            ("gamma_entropy", self.gamma_entropy),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        let dims = [
            ("batch_size", self.batch_size),
            ("feat_dim", self.feat_dim),
            ("model_dim", self.model_dim),
            ("ball_dim", self.ball_dim),
            ("evidence", self.evidence),
            ("modes", self.modes),
            ("layers", self.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be ≥ 1")));
            }
        }
        Ok(())
    }
}

/// Synthetic multi-mode dataset settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Feature dimension D.
    pub feat_dim: usize,
    pub t_min: usize,
    pub t_max: usize,
    /// Number of fake artifact modes G.
    pub modes: usize,
    /// Fraction ρ of frames that receive the artifact in fake utterances.
    pub artifact_frac: f64,
    pub artifact_strength: f64,
    pub noise_std: f64,
    /// Utterances per split (half real, half fake).
    pub train_count: usize,
    pub dev_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            feat_dim: 64,
            t_min: 40,
            t_max: 120,
            modes: 4,
            artifact_frac: 0.2,
            artifact_strength: 2.0,
            noise_std: 1.0,
            train_count: 400,
            dev_count: 100,
            test_count: 100,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::config("modes must be ≥ 1"));
        }
        if self.modes > self.feat_dim {
            return Err(Error::config(format!(
                "cannot orthonormalize {} mode directions in dimension {}",
                self.modes, self.feat_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.artifact_frac) {
            return Err(Error::config("artifact_frac must lie in [0, 1]"));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::config("need 1 ≤ t_min ≤ t_max"));
        }
        if self.train_count == 0 || self.dev_count == 0 || self.test_count == 0 {
            return Err(Error::config("every split count must be ≥ 1"));
        }
        if !self.noise_std.is_finite() || self.noise_std <= 0.0 {
            return Err(Error::config("noise_std must be finite and positive"));
        }
        Ok(())
    }
}

pub const CONFIG_FILE_VERSION: u32 = 1;

/// The on-disk config file: a `version` key plus `[train]` and `[synth]`
/// tables. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn default_version() -> u32 {
    CONFIG_FILE_VERSION
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            version: CONFIG_FILE_VERSION,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfigFile =
            toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))?;
        if cfg.version != CONFIG_FILE_VERSION {
            return Err(Error::config(format!(
                "unsupported config file version {} (expected {CONFIG_FILE_VERSION})",
                cfg.version
            )));
        }
        cfg.train.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }
}
