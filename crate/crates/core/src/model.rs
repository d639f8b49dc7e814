//! The assembled model: text and entity embeddings, fused backbone,
//! frozen knowledge module, and task heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encoder_forward, AttentionMask, EncoderLayer, KnowledgeConfig, KnowledgeModule};
use crate::error::{Error, Result};
use crate::fusion::{fused_forward, AlignmentSchedule, AlignmentScheme, DimensionAligner, FusionInput};
use crate::heads::{combine_losses, HeadConfig, Heads, LossBundle, LossTerms, LossWeights, PooledViews, Target};
use crate::input::{EntityEmbeddings, TextEmbeddings};
use crate::kb::{identifier_count, EntitySlotSet, SlotRole};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{TaskKind, TokenizedExample};

/// Initial standard deviation of backbone, aligner and head weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub num_labels: usize,
    pub vocab_size: usize,
    /// Rows of the entity table, `[E-MASK]` included.
    pub num_entities: usize,
    pub backbone_layers: usize,
    pub knowledge_layers: usize,
    pub entity_dim: usize,
    pub hidden_dim: usize,
    pub knowledge_dim: usize,
    pub num_heads: usize,
    pub knowledge_heads: usize,
    pub max_text_len: usize,
    pub max_description_len: usize,
    /// Positive entity slots per example; 0 disables slots and descriptions.
    pub entities_per_example: usize,
    pub negatives: usize,
    pub alignment: AlignmentScheme,
    pub seed: u64,
    pub knowledge_seed: u64,
}

impl ModelConfig {
    pub fn uses_entities(&self) -> bool {
        self.entities_per_example > 0
    }

    pub fn max_slots(&self) -> usize {
        self.entities_per_example + identifier_count(self.task) + self.negatives
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_labels", self.num_labels),
            ("vocab_size", self.vocab_size),
            ("backbone_layers", self.backbone_layers),
            ("entity_dim", self.entity_dim),
            ("hidden_dim", self.hidden_dim),
            ("knowledge_dim", self.knowledge_dim),
            ("num_heads", self.num_heads),
            ("knowledge_heads", self.knowledge_heads),
            ("max_text_len", self.max_text_len),
            ("max_description_len", self.max_description_len),
            ("num_entities", self.num_entities),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.uses_entities() && self.negatives > 0 {
            return Err(Error::Config("negative slots need entity slots".into()));
        }
        if !self.uses_entities() && self.knowledge_layers > 0 {
            return Err(Error::Config("knowledge layers need entity slots to carry descriptions".into()));
        }
        Ok(())
    }

    fn knowledge_config(&self) -> KnowledgeConfig {
        KnowledgeConfig {
            vocab_size: self.vocab_size,
            width: self.knowledge_dim,
            heads: self.knowledge_heads,
            layers: self.knowledge_layers,
            max_len: self.max_description_len,
            seed: self.knowledge_seed,
        }
    }
}

/// One model input: tokenized text, its entity slots, and the knowledge
/// `[CLS]` vectors `cls_0 .. cls_K` of the attached description (empty when
/// entities are disabled).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub tokens: TokenizedExample,
    pub slots: EntitySlotSet,
    pub cls: Vec<Tensor>,
}

/// A training example: input, labels, and the pollution-task order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub input: ModelInput,
    pub target: Target,
    pub swap: bool,
}

/// Parameter handles and structure of the trainable part. Every method takes
/// the parameter registry explicitly so it can be perturbed from outside.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    text: TextEmbeddings,
    entity: Option<EntityEmbeddings>,
    layers: Vec<EncoderLayer>,
    aligners: Vec<DimensionAligner>,
    schedule: AlignmentSchedule,
    heads: Heads,
}

/// Output of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub state: Var,
    pub views: PooledViews,
}

impl Network {
    fn new(config: &ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let schedule = AlignmentSchedule::resolve(&config.alignment, config.backbone_layers, config.knowledge_layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden_dim;
        let text = TextEmbeddings::new(store, config.vocab_size, config.max_text_len, d, &mut rng);
        let entity = config
            .uses_entities()
            .then(|| EntityEmbeddings::new(store, config.num_entities, config.entity_dim, d, config.max_slots(), &mut rng));
        let layers = (0..config.backbone_layers)
            .map(|i| EncoderLayer::new(store, &format!("backbone.layer{}", i + 1), d, config.num_heads, INIT_STD, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let aligners = (0..schedule.len())
            .map(|k| {
                DimensionAligner::new(
                    store,
                    k + 1,
                    config.knowledge_dim,
                    d,
                    1.0 / (config.knowledge_dim as f64).sqrt(),
                    &mut rng,
                )
            })
            .collect();
        let head_cfg = HeadConfig {
            kind: config.task,
            num_labels: config.num_labels,
            width: d,
            knowledge_width: config.knowledge_dim,
            has_slots: config.uses_entities(),
        };
        let heads = Heads::new(store, head_cfg, INIT_STD, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            text,
            entity,
            layers,
            aligners,
            schedule,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn text_embeddings(&self) -> &TextEmbeddings {
        &self.text
    }

    pub fn entity_embeddings(&self) -> Option<&EntityEmbeddings> {
        self.entity.as_ref()
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn aligners(&self) -> &[DimensionAligner] {
        &self.aligners
    }

    pub fn schedule(&self) -> &AlignmentSchedule {
        &self.schedule
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let cfg = &self.config;
        if input.tokens.token_ids.len() != cfg.max_text_len {
            return Err(Error::InvalidArgument {
                op: "forward",
                msg: format!("expected {} token ids, got {}", cfg.max_text_len, input.tokens.token_ids.len()),
            });
        }
        if cfg.uses_entities() {
            if input.cls.len() != cfg.knowledge_layers + 1 {
                return Err(Error::InvalidArgument {
                    op: "forward",
                    msg: format!("expected {} description vectors, got {}", cfg.knowledge_layers + 1, input.cls.len()),
                });
            }
            if input.slots.is_empty() {
                return Err(Error::InvalidArgument {
                    op: "forward",
                    msg: "entity slots are enabled but the example has none".into(),
                });
            }
        } else if !input.slots.is_empty() {
            return Err(Error::InvalidArgument {
                op: "forward",
                msg: "entity slots given to a model without entities".into(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &ModelInput) -> Result<Forward> {
        self.check_input(input)?;
        let text = self.text.embed(tape, store, &input.tokens.token_ids)?;
        let slots = match &self.entity {
            Some(e) => e.embed(tape, store, &input.slots)?,
            None => None,
        };
        let roles: Vec<SlotRole> = input.slots.slots.iter().map(|s| s.role).collect();
        let pad = input.tokens.padding_mask();
        let fusion = FusionInput {
            text,
            text_pad: &pad,
            slots,
            slot_roles: &roles,
            cls: &input.cls,
        };
        let state = fused_forward(tape, store, &self.layers, &self.aligners, &self.schedule, &fusion)?;
        let views = self.heads.pool(
            tape,
            store,
            state,
            self.config.max_text_len,
            &input.slots,
            &input.tokens.special,
            input.cls.last(),
        )?;
        Ok(Forward { state, views })
    }

    /// Per-example loss terms; disabled auxiliary tasks build no graph.
    pub fn losses(&self, tape: &mut Tape, store: &ParamStore, item: &TrainItem, weights: LossWeights) -> Result<LossTerms> {
        let fwd = self.forward(tape, store, &item.input)?;
        let main = self.heads.main_loss(tape, store, &fwd.views, &item.target)?;
        let aux_a = if weights.use_aux_a {
            Some(self.heads.enhancement_loss(tape, store, &fwd.views, &item.target)?)
        } else {
            None
        };
        let aux_b = if weights.use_aux_b {
            Some(self.heads.pollution_loss(tape, store, &fwd.views, item.swap)?)
        } else {
            None
        };
        Ok(LossTerms { main, aux_a, aux_b })
    }

    /// Batch-mean loss terms combined into the weighted total.
    pub fn batch_loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[TrainItem], weights: LossWeights) -> Result<(Var, LossBundle)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let terms = batch
            .iter()
            .map(|item| self.losses(tape, store, item, weights))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut mean = |pick: &dyn Fn(&LossTerms) -> Option<Var>| -> Result<Option<Var>> {
            let vars: Vec<Var> = terms.iter().filter_map(pick).collect();
            if vars.is_empty() {
                return Ok(None);
            }
            let mut acc = vars[0];
            for &v in &vars[1..] {
                acc = tape.add(acc, v)?;
            }
            Ok(Some(tape.scale(acc, scale)))
        };
        let main = mean(&|t| Some(t.main))?.expect("batch is non-empty");
        let aux_a = mean(&|t| t.aux_a)?;
        let aux_b = mean(&|t| t.aux_b)?;
        combine_losses(tape, LossTerms { main, aux_a, aux_b }, weights)
    }

    /// Main-head logits for one input, without building gradients.
    pub fn logits(&self, store: &ParamStore, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let fwd = self.forward(&mut tape, store, input)?;
        let logits = self.heads.main_logits(&mut tape, store, &fwd.views)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// The text stream through the backbone alone, ignoring slots and
    /// descriptions.
    pub fn plain_encode(&self, tape: &mut Tape, store: &ParamStore, tokens: &TokenizedExample) -> Result<Var> {
        let x = self.text.embed(tape, store, &tokens.token_ids)?;
        let mask = AttentionMask::padding(&tokens.padding_mask());
        encoder_forward(&self.layers, tape, store, x, &mask)
    }
}

/// Trainable network plus its parameters and the frozen knowledge module.
#[derive(Debug)]
pub struct Ered {
    pub network: Network,
    pub store: ParamStore,
    pub knowledge: KnowledgeModule,
}

impl Ered {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let network = Network::new(config, &mut store)?;
        let knowledge = KnowledgeModule::new(config.knowledge_config())?;
        Ok(Self { network, store, knowledge })
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn forward(&self, tape: &mut Tape, input: &ModelInput) -> Result<Forward> {
        self.network.forward(tape, &self.store, input)
    }

    pub fn batch_loss(&self, tape: &mut Tape, batch: &[TrainItem], weights: LossWeights) -> Result<(Var, LossBundle)> {
        self.network.batch_loss(tape, &self.store, batch, weights)
    }

    pub fn logits(&self, input: &ModelInput) -> Result<Vec<f64>> {
        self.network.logits(&self.store, input)
    }

    /// Knowledge `[CLS]` vectors for padded description ids, computed fresh.
    pub fn describe(&self, description_ids: &[u32]) -> Result<Vec<Tensor>> {
        self.knowledge.cls_vectors(description_ids)
    }
}
