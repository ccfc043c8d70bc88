use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::Framework;
use crate::data::DatasetSpec;
use crate::error::{invalid, Error, Result};
use crate::interference::RemedyConfig;
use crate::slimnet::{cnn_backbone, mlp_backbone, mlp_head, Architecture, WidthConfig};

/// Backbone family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub framework: Framework,
    pub backbone: Backbone,
    /// Hidden sizes (MLP) or channel counts per conv block (CNN).
    pub hidden: Vec<usize>,
    pub head_hidden: usize,
    /// Output dimension of the projector (and predictor).
    pub feature_dim: usize,
    pub widths: WidthConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            framework: Framework::Mocov2,
            backbone: Backbone::Mlp,
            hidden: vec![128, 128],
            head_hidden: 128,
            feature_dim: 64,
            widths: WidthConfig::new(vec![1.0, 0.5, 0.25]).expect("valid widths"),
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, sample_shape: &[usize]) -> Result<Architecture> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.head_hidden == 0 || self.feature_dim == 0 {
            return Err(invalid!("model sizes must be positive and hidden non-empty"));
        }
        let backbone = match (self.backbone, sample_shape.len()) {
            (Backbone::Mlp, 1) => mlp_backbone(sample_shape[0], &self.hidden),
            (Backbone::Cnn, 3) => cnn_backbone(sample_shape[0], &self.hidden),
            (b, _) => return Err(invalid!("{b:?} backbone cannot read samples of shape {sample_shape:?}")),
        };
        let feat = *self.hidden.last().expect("non-empty");
        // MoCo v3 heads normalize their hidden layer; the v2 head does not
        let v3 = self.framework == Framework::Mocov3;
        let projector = mlp_head(feat, self.head_hidden, self.feature_dim, true, v3);
        let predictor = v3.then(|| mlp_head(self.feature_dim, self.head_hidden, self.feature_dim, false, true));
        Ok(Architecture {
            backbone,
            projector,
            predictor,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    /// InfoNCE temperature; the framework default when absent.
    pub tau: Option<f64>,
    /// Momentum-encoder coefficient.
    pub momentum: f64,
    /// Negative queue capacity (MoCo v2 only).
    pub queue_size: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: None,
            momentum: 0.99,
            queue_size: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Restart the cosine schedule from this value at the slow-start epoch.
    pub lr_restart: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 256,
            lr: 0.2,
            warmup_epochs: 2,
            weight_decay: 1e-4,
            momentum: 0.9,
            lr_restart: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Capture partition gradient norms every this many steps (0 disables).
    pub grad_every: usize,
    /// Record the last linear layer's gradient every this many steps (0 disables).
    pub last_layer_every: usize,
    /// k-NN monitor on full-width features every this many epochs (0 disables).
    pub knn_every: usize,
    pub knn_k: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            grad_every: 1,
            last_layer_every: 5,
            knn_every: 5,
            knn_k: crate::probe::DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointConfig {
    /// Write a checkpoint every this many epochs; the final epoch is always saved.
    pub every: usize,
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        Self { every: 1 }
    }
}

/// Everything a pre-training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub contrastive: ContrastiveConfig,
    #[serde(default = "desk_remedies")]
    pub remedies: RemedyConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub checkpoint: CheckpointConfig,
}

fn desk_remedies() -> RemedyConfig {
    RemedyConfig {
        slow_start_epochs: OptimConfig::default().epochs / 2,
        ..RemedyConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DatasetSpec::default(),
            model: ModelConfig::default(),
            contrastive: ContrastiveConfig::default(),
            remedies: desk_remedies(),
            optim: OptimConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            checkpoint: CheckpointConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid!("config: {}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn tau1(&self) -> f64 {
        self.contrastive.tau.unwrap_or_else(|| self.model.framework.default_tau1())
    }

    pub fn tau2(&self) -> f64 {
        self.remedies.tau2(self.model.framework)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let o = &self.optim;
        if o.epochs == 0 || o.batch_size < 2 {
            return Err(invalid!("epochs must be positive and batch_size at least 2"));
        }
        if !(o.lr > 0.0) || o.lr_restart.is_some_and(|r| !(r > 0.0)) {
            return Err(invalid!("learning rates must be positive"));
        }
        if o.warmup_epochs >= o.epochs {
            return Err(invalid!("warmup_epochs {} must be below epochs {}", o.warmup_epochs, o.epochs));
        }
        if !(o.weight_decay >= 0.0) || !(0.0..1.0).contains(&o.momentum) {
            return Err(invalid!("weight_decay must be nonnegative and momentum in [0, 1)"));
        }
        if let Some(t) = self.contrastive.tau {
            crate::contrastive::check_tau(t)?;
        }
        if !(0.0..1.0).contains(&self.contrastive.momentum) {
            return Err(invalid!("contrastive.momentum must be in [0, 1)"));
        }
        if self.model.framework == Framework::Mocov2 && self.contrastive.queue_size == 0 {
            return Err(invalid!("queue_size must be positive"));
        }
        if self.data.instances < o.batch_size {
            return Err(invalid!("batch_size {} exceeds the {} training instances", o.batch_size, self.data.instances));
        }
        if self.diagnostics.knn_k == 0 || self.checkpoint.every == 0 {
            return Err(invalid!("knn_k and checkpoint.every must be positive"));
        }
        self.remedies.validate(o.epochs)
    }

    /// SHA-256 of the canonical JSON form, as hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
