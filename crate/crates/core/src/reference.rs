//! A small fixed model and batch that exercise every path of the network:
//! two positives, an identifier and a negative slot, a description on the
//! last backbone layer, and all three losses. Shared by the `gradcheck`
//! command and the test suites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::AlignmentScheme;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::heads::{LossWeights, Target};
use crate::kb::{EntitySlot, EntitySlotSet, SlotRole};
use crate::model::{Ered, ModelConfig, ModelInput, TrainItem};
use crate::tensor::Tensor;
use crate::vocab::{SpecialPositions, TaskKind, TokenizedExample, CLS, ENTITY, SEP};

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `L = 2`, `K = 1`, `d₂ = 8`, `d₃ = 4`, two positives and one negative.
pub fn config() -> ModelConfig {
    ModelConfig {
        task: TaskKind::Typing,
        num_labels: 3,
        vocab_size: 16,
        num_entities: 6,
        backbone_layers: 2,
        knowledge_layers: 1,
        entity_dim: 8,
        hidden_dim: 8,
        knowledge_dim: 4,
        num_heads: 2,
        knowledge_heads: 1,
        max_text_len: 6,
        max_description_len: 4,
        entities_per_example: 2,
        negatives: 1,
        alignment: AlignmentScheme::Last,
        seed: 5,
        knowledge_seed: 6,
    }
}

pub fn weights() -> LossWeights {
    LossWeights {
        alpha: 1.0,
        beta: 0.5,
        use_aux_a: true,
        use_aux_b: true,
    }
}

fn item(model: &Ered, words: [u32; 2], positives: [usize; 2], negative: usize, y: Vec<f64>, swap: bool) -> Result<TrainItem> {
    let tokens = TokenizedExample {
        token_ids: vec![CLS, ENTITY, words[0], ENTITY, words[1], SEP],
        length: 6,
        char_to_token: Vec::new(),
        special: SpecialPositions {
            cls: 0,
            entity: Some(1),
            head: None,
            tail: None,
        },
    };
    let slot = |row, role| EntitySlot { row, role };
    let slots = EntitySlotSet {
        slots: vec![
            slot(positives[0], SlotRole::Positive),
            slot(positives[1], SlotRole::Positive),
            slot(0, SlotRole::Identifier),
            slot(negative, SlotRole::Negative),
        ],
    };
    let cls = model.describe(&[CLS, words[0], SEP, 0])?;
    Ok(TrainItem {
        input: ModelInput { tokens, slots, cls },
        target: Target::MultiHot(y),
        swap,
    })
}

/// Two examples, one of each pollution-task order.
pub fn batch(model: &Ered) -> Result<Vec<TrainItem>> {
    Ok(vec![
        item(model, [9, 10], [2, 3], 5, vec![1.0, 0.0, 1.0], false)?,
        item(model, [11, 12], [1, 4], 2, vec![0.0, 1.0, 0.0], true)?,
    ])
}

/// Finite-difference check of the total loss over every trainable
/// parameter. With `redraw_std`, trainable weights are first redrawn from
/// `N(0, std²)` so that attention gradients sit well above roundoff.
pub fn model_grad_check(redraw_std: Option<f64>) -> Result<GradCheckReport> {
    let mut model = Ered::new(&config())?;
    if let Some(std) = redraw_std {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for id in model.store.trainable().collect::<Vec<_>>() {
            let shape = model.store.value(id).shape().to_vec();
            *model.store.value_mut(id) = Tensor::randn(&shape, std, &mut rng);
        }
    }
    let batch = batch(&model)?;
    let Ered { network, store, .. } = &mut model;
    grad_check(store, |t, s| Ok(network.batch_loss(t, s, &batch, weights())?.0), EPSILON, TOLERANCE)
}
