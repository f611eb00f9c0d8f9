use super::ModelError;
use crate::data::{Branch, BranchMask};
use crate::text::EncoderConfig;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub heads: usize,
    pub fusion_layers: usize,
    pub branches: BranchMask,
    /// `false` bypasses the fusion transformer: the concatenated branch
    /// features go straight to mean pooling.
    pub cross_fusion: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            heads: 4,
            fusion_layers: 1,
            branches: BranchMask::FULL,
            cross_fusion: true,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn d(&self) -> usize {
        self.encoder.d
    }

    pub fn max_len(&self) -> usize {
        self.encoder.max_len
    }

    /// Rows of the concatenated branch features: active branches × L.
    pub fn fused_len(&self) -> usize {
        self.branches.count() * self.max_len()
    }

    /// Fusion layers actually applied.
    pub fn effective_fusion_layers(&self) -> usize {
        if self.cross_fusion {
            self.fusion_layers
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.branches.is_empty() {
            return Err(ModelError::Config("at least one branch must stay active".into()));
        }
        if self.heads == 0 || self.d() == 0 || !self.d().is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!("hidden size {} not divisible by {} heads", self.d(), self.heads)));
        }
        if self.max_len() < crate::text::MIN_SEQUENCE_LEN {
            return Err(ModelError::Config(format!("sequence length {} below {}", self.max_len(), crate::text::MIN_SEQUENCE_LEN)));
        }
        if self.cross_fusion && self.fusion_layers == 0 {
            return Err(ModelError::Config("cross fusion enabled with zero fusion layers".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-5, epochs: 10, train_batch: 20, eval_batch: 64, weight_decay: 0.01, seed: 7 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.train_batch == 0 || self.eval_batch == 0 || self.weight_decay < 0.0 {
            return Err(ModelError::Config(format!("training settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One component an ablation can remove.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Branch(Branch),
    Cross,
}

impl Component {
    pub fn parse(s: &str) -> Option<Component> {
        if s.eq_ignore_ascii_case("cross") {
            Some(Component::Cross)
        } else {
            Branch::from_code(s).map(Component::Branch)
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Branch(b) => write!(f, "{b}"),
            Component::Cross => f.write_str("Cross"),
        }
    }
}

/// Returns `config` with the listed components removed.
pub fn ablate(config: &ModelConfig, disabled: &[Component]) -> Result<ModelConfig, ModelError> {
    let mut out = config.clone();
    for c in disabled {
        match c {
            Component::Branch(b) => out.branches = out.branches.without(*b),
            Component::Cross => out.cross_fusion = false,
        }
    }
    if out.branches.is_empty() {
        return Err(ModelError::Config("ablation removes every branch".into()));
    }
    Ok(out)
}

/// The six rows of the ablation table: the full model, each branch removed,
/// and fusion replaced by plain concatenation.
pub fn ablation_variants() -> Vec<(String, Vec<Component>)> {
    let mut v = vec![("Full".to_string(), vec![])];
    for b in Branch::ALL {
        v.push((format!("w/o {b}"), vec![Component::Branch(b)]));
    }
    v.push(("w/o Cross".to_string(), vec![Component::Cross]));
    v
}
