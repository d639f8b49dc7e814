//! JSON training configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::AlignmentScheme;
use crate::heads::LossWeights;
use crate::model::ModelConfig;
use crate::vocab::TaskKind;

/// Where mentions come from: the dataset's own annotations, or the
/// gazetteer run over the raw text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntitySource {
    #[default]
    Dataset,
    Gazetteer,
}

macro_rules! default_fn {
    ($name:ident, $ty:ty, $value:expr) => {
        fn $name() -> $ty {
            $value
        }
    };
}

default_fn!(default_batch_size, usize, 8);
default_fn!(default_text_len, usize, 32);
default_fn!(default_description_len, usize, 16);
default_fn!(default_learning_rate, f64, 1e-3);
default_fn!(default_epoch, usize, 1);
default_fn!(default_eval_steps, usize, 100);
default_fn!(default_warmup, f64, 0.06);
default_fn!(default_entities, usize, 4);
default_fn!(default_descriptions, usize, 1);
default_fn!(default_negatives, usize, 1);
default_fn!(default_alpha, f64, 1.0);
default_fn!(default_beta, f64, 0.01);
default_fn!(default_true, bool, true);
default_fn!(default_backbone_layers, usize, 4);
default_fn!(default_knowledge_layers, usize, 2);
default_fn!(default_width, usize, 32);
default_fn!(default_knowledge_dim, usize, 16);
default_fn!(default_heads, usize, 2);
default_fn!(default_vocab_size, usize, 1000);
default_fn!(default_weight_decay, f64, 0.01);
default_fn!(default_seed, u64, 42);
default_fn!(default_knowledge_seed, u64, 1234);

/// Training configuration (`batch_size`, `warmup_ratio`,
/// `number_of_entities`, ...). Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskKind,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_text_len")]
    pub maximum_text_length: usize,
    #[serde(default = "default_description_len")]
    pub maximum_description_length: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epoch")]
    pub epoch: usize,
    /// Overrides `epoch` when set.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_eval_steps")]
    pub evaluation_steps: usize,
    #[serde(default = "default_warmup")]
    pub warmup_ratio: f64,
    #[serde(default = "default_entities")]
    pub number_of_entities: usize,
    #[serde(default = "default_descriptions")]
    pub number_of_descriptions: usize,
    #[serde(default = "default_negatives")]
    pub number_of_negatives: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_true")]
    pub use_aux_a: bool,
    #[serde(default = "default_true")]
    pub use_aux_b: bool,
    #[serde(default)]
    pub alignment: AlignmentScheme,
    #[serde(default)]
    pub recognized_entities: EntitySource,
    #[serde(default = "default_backbone_layers")]
    pub backbone_layers: usize,
    #[serde(default = "default_knowledge_layers")]
    pub knowledge_layers: usize,
    #[serde(default = "default_width")]
    pub entity_dim: usize,
    #[serde(default = "default_width")]
    pub hidden_dim: usize,
    #[serde(default = "default_knowledge_dim")]
    pub knowledge_dim: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_heads")]
    pub knowledge_heads: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_knowledge_seed")]
    pub knowledge_seed: u64,
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub kb: Option<PathBuf>,
    /// Token vocabulary file; built from the training texts and KB
    /// descriptions when absent.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    /// `name<TAB>entity_id` gazetteer; derived from KB names when absent.
    #[serde(default)]
    pub gazetteer: Option<PathBuf>,
    /// Pre-computed description cache; the knowledge module runs live when absent.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

impl TrainConfig {
    /// A configuration with every default and the given task and train file.
    pub fn new(task: TaskKind, train: impl Into<PathBuf>) -> Self {
        let json = serde_json::json!({ "task": task, "train": train.into() });
        serde_json::from_value(json).expect("defaults form a valid configuration")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        for p in [&mut self.dev, &mut self.kb, &mut self.vocab, &mut self.gazetteer, &mut self.cache]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            use_aux_a: self.use_aux_a,
            use_aux_b: self.use_aux_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("maximum_text_length", self.maximum_text_length),
            ("maximum_description_length", self.maximum_description_length),
            ("evaluation_steps", self.evaluation_steps),
            ("backbone_layers", self.backbone_layers),
            ("entity_dim", self.entity_dim),
            ("hidden_dim", self.hidden_dim),
            ("knowledge_dim", self.knowledge_dim),
            ("num_heads", self.num_heads),
            ("knowledge_heads", self.knowledge_heads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.max_steps == Some(0) || (self.max_steps.is_none() && self.epoch == 0) {
            return Err(Error::Config("training needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("warmup_ratio {} outside [0, 1]", self.warmup_ratio)));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("learning_rate must be positive and weight_decay non-negative".into()));
        }
        self.loss_weights().validate()?;
        let uses_entities = self.number_of_entities > 0;
        if uses_entities && self.number_of_descriptions != 1 {
            return Err(Error::Config(format!(
                "number_of_descriptions must be 1 (description of the first positive entity), got {}",
                self.number_of_descriptions
            )));
        }
        if !uses_entities && (self.use_aux_a || self.use_aux_b || self.number_of_negatives > 0) {
            return Err(Error::Config(
                "number_of_entities = 0 needs use_aux_a = use_aux_b = false and number_of_negatives = 0".into(),
            ));
        }
        if self.use_aux_b && self.number_of_negatives == 0 {
            return Err(Error::Config("use_aux_b needs number_of_negatives >= 1".into()));
        }
        if uses_entities && self.kb.is_none() {
            return Err(Error::Config("a kb file is required when number_of_entities > 0".into()));
        }
        if self.recognized_entities == EntitySource::Gazetteer && self.kb.is_none() && self.gazetteer.is_none() {
            return Err(Error::Config("gazetteer linking needs a kb or gazetteer file".into()));
        }
        Ok(())
    }

    /// Model shape for a given label count, vocabulary and entity table size.
    /// Descriptions arrive through linked entities, so without entities no
    /// knowledge layer is connected.
    pub fn model_config(&self, num_labels: usize, vocab_size: usize, num_entities: usize) -> ModelConfig {
        ModelConfig {
            task: self.task,
            num_labels,
            vocab_size,
            num_entities,
            backbone_layers: self.backbone_layers,
            knowledge_layers: if self.number_of_entities > 0 { self.knowledge_layers } else { 0 },
            entity_dim: self.entity_dim,
            hidden_dim: self.hidden_dim,
            knowledge_dim: self.knowledge_dim,
            num_heads: self.num_heads,
            knowledge_heads: self.knowledge_heads,
            max_text_len: self.maximum_text_length,
            max_description_len: self.maximum_description_length,
            entities_per_example: self.number_of_entities,
            negatives: self.number_of_negatives,
            alignment: self.alignment.clone(),
            seed: self.seed,
            knowledge_seed: self.knowledge_seed,
        }
    }
}
