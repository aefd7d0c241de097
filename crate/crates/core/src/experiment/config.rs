use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::charts::{MembershipRule, VqAeConfig};
use crate::conformal::ReconConfig;
use crate::datasets::{DatasetName, DatasetSpec};
use crate::error::{Error, Result};
use crate::flows::{FlowArchitecture, FlowKind, TrainConfig};
use crate::mixture::MixtureTrainConfig;
use crate::ndnet::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(rename = "realnvp")]
    RealNvp,
    Maf,
    Cef,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::RealNvp, Family::Maf, Family::Cef];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::RealNvp => "realnvp",
            Family::Maf => "maf",
            Family::Cef => "cef",
        }
    }

    /// Flow used by the family. CEF runs a RealNVP in the embedding's latent space.
    pub fn flow_kind(self) -> FlowKind {
        match self {
            Family::RealNvp | Family::Cef => FlowKind::RealNvp,
            Family::Maf => FlowKind::Maf,
        }
    }

    pub fn default_hidden(self) -> Vec<usize> {
        match self.flow_kind() {
            FlowKind::RealNvp => FlowArchitecture::realnvp().hidden,
            FlowKind::Maf => FlowArchitecture::maf().hidden,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model family `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionerKind {
    Vqae,
    Kmeans,
}

impl PartitionerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionerKind::Vqae => "vqae",
            PartitionerKind::Kmeans => "kmeans",
        }
    }
}

impl FromStr for PartitionerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "vqae" => Ok(PartitionerKind::Vqae),
            "kmeans" => Ok(PartitionerKind::Kmeans),
            other => Err(Error::InvalidConfig(format!("unknown partitioner `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub vq: bool,
    pub layers: usize,
    /// `None` picks the family default.
    pub hidden: Option<Vec<usize>>,
    pub batch_norm: bool,
}

impl ModelConfig {
    /// `realnvp`, `vq-realnvp`, ...
    pub fn tag(&self) -> String {
        if self.vq {
            format!("vq-{}", self.family)
        } else {
            self.family.to_string()
        }
    }

    pub fn architecture(&self) -> FlowArchitecture {
        FlowArchitecture {
            kind: self.family.flow_kind(),
            layers: self.layers,
            hidden: self.hidden.clone().unwrap_or_else(|| self.family.default_hidden()),
            batch_norm: self.batch_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasConfig {
    pub partitioner: PartitionerKind,
    pub latent_dim: usize,
    pub k: usize,
    pub m: usize,
    pub epsilon: f64,
    pub vqae_epochs: usize,
    pub vqae_hidden: Vec<usize>,
    pub vqae_lr: f64,
    pub batch_size: usize,
}

impl AtlasConfig {
    pub fn rule(&self) -> MembershipRule {
        MembershipRule { m: self.m, epsilon: self.epsilon }
    }

    pub fn vqae(&self, seed: u64) -> VqAeConfig {
        VqAeConfig {
            latent_dim: self.latent_dim,
            codebook_size: self.k,
            hidden: self.vqae_hidden.clone(),
            epochs: self.vqae_epochs,
            batch_size: self.batch_size,
            adam: AdamConfig { lr: self.vqae_lr, ..AdamConfig::default() },
            seed,
            ..VqAeConfig::default()
        }
    }

    /// Directory name identifying a trained atlas.
    pub fn key(&self) -> String {
        format!("{}-k{}-m{}-e{}", self.partitioner.as_str(), self.k, self.m, self.epsilon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    /// CEF reconstruction pre-training.
    pub recon_epochs: usize,
    pub recon_lr: f64,
}

impl TrainingConfig {
    pub fn mixture(&self, seed: u64) -> MixtureTrainConfig {
        MixtureTrainConfig {
            flow: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                patience: self.patience,
                adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
                seed,
            },
            recon: ReconConfig {
                epochs: self.recon_epochs,
                batch_size: self.batch_size,
                adam: AdamConfig { lr: self.recon_lr, ..AdamConfig::default() },
                seed,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub ks: Vec<usize>,
    pub trials: usize,
    pub epochs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { ks: vec![2, 4, 8, 16, 32, 64], trials: 3, epochs: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub atlas: AtlasConfig,
    pub training: TrainingConfig,
    pub ablation: AblationConfig,
    pub trials: usize,
    pub master_seed: u64,
    /// Generated points scored under the KDE.
    pub eval_samples: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::new(DatasetName::Helix, 0),
            model: ModelConfig { family: Family::RealNvp, vq: false, layers: 5, hidden: None, batch_norm: true },
            atlas: AtlasConfig {
                partitioner: PartitionerKind::Vqae,
                latent_dim: 2,
                k: 32,
                m: 1,
                epsilon: 0.0,
                vqae_epochs: 50,
                vqae_hidden: vec![128; 4],
                vqae_lr: 1e-4,
                batch_size: 128,
            },
            training: TrainingConfig {
                epochs: 100,
                batch_size: 128,
                lr: 1e-4,
                patience: 10,
                recon_epochs: 20,
                recon_lr: 1e-3,
            },
            ablation: AblationConfig::default(),
            trials: 5,
            master_seed: 0,
            eval_samples: 2500,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Seed of trial `t`: master seed plus trial index.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.master_seed.wrapping_add(trial as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let positive = [
            ("trials", self.trials),
            ("model.layers", self.model.layers),
            ("atlas.latent_dim", self.atlas.latent_dim),
            ("atlas.k", self.atlas.k),
            ("atlas.m", self.atlas.m),
            ("atlas.vqae_epochs", self.atlas.vqae_epochs),
            ("atlas.batch_size", self.atlas.batch_size),
            ("training.epochs", self.training.epochs),
            ("training.batch_size", self.training.batch_size),
            ("training.patience", self.training.patience),
            ("ablation.trials", self.ablation.trials),
            ("ablation.epochs", self.ablation.epochs),
            ("eval_samples", self.eval_samples),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.model.hidden.as_ref().is_some_and(|h| h.iter().any(|&w| w == 0)) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.atlas.m > self.atlas.k {
            return Err(Error::InvalidConfig(format!("m = {} exceeds K = {}", self.atlas.m, self.atlas.k)));
        }
        if !(self.atlas.epsilon >= 0.0) || !self.atlas.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon {} must be non-negative", self.atlas.epsilon)));
        }
        for (name, lr) in [("training.lr", self.training.lr), ("atlas.vqae_lr", self.atlas.vqae_lr)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.model.family == Family::Cef && self.atlas.latent_dim >= self.dataset_dim() {
            return Err(Error::InvalidConfig("CEF latent dimension must be below the data dimension".into()));
        }
        if self.ablation.ks.iter().any(|&k| k == 0) {
            return Err(Error::InvalidConfig("ablation K values must be positive".into()));
        }
        Ok(())
    }

    fn dataset_dim(&self) -> usize {
        crate::datasets::DIM
    }
}
