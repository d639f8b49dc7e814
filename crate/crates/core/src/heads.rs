//! Main classifier, the enhancement and pollution auxiliary tasks, and the
//! weighted loss combination.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntitySlotSet, SlotRole};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{SpecialPositions, TaskKind};

/// Gold labels of one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Single class index (relation and sentence tasks).
    Class(usize),
    /// 0/1 indicator per label (typing).
    MultiHot(Vec<f64>),
}

impl Target {
    pub fn loss(&self, tape: &mut Tape, logits: Var) -> Result<Var> {
        match self {
            Target::Class(c) => tape.cross_entropy(logits, &[*c]),
            Target::MultiHot(y) => {
                let y = Tensor::row(y.clone());
                tape.binary_cross_entropy(logits, &y)
            }
        }
    }
}

/// Pooled `1 × ·` vectors read off the final fused state.
#[derive(Clone, Copy, Debug)]
pub struct PooledViews {
    /// Identifier slot outputs; two concatenated for relations.
    pub h_i: Option<Var>,
    /// Text anchor, width `d₂`.
    pub h_e: Var,
    pub e_p: Option<Var>,
    pub e_n: Option<Var>,
    /// Last knowledge `[CLS]` vector projected to `d₂`.
    pub z_cls: Option<Var>,
}

#[derive(Clone, Debug)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

impl Affine {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, from: usize, to: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: store.add_normal(format!("{name}.weight"), &[from, to], std, rng),
            bias: store.add_zeros(format!("{name}.bias"), &[1, to]),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    pub kind: TaskKind,
    pub num_labels: usize,
    pub width: usize,
    pub knowledge_width: usize,
    /// Whether identifier slots exist; otherwise the main head reads `h_E`.
    pub has_slots: bool,
}

#[derive(Clone, Debug)]
pub struct Heads {
    config: HeadConfig,
    main: Affine,
    enhancement: Affine,
    pollution: Affine,
    anchor: Option<Affine>,
    description: Affine,
}

impl Heads {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: HeadConfig, std: f64, rng: &mut R) -> Result<Self> {
        if config.num_labels == 0 {
            return Err(Error::Config("at least one label is required".into()));
        }
        let d = config.width;
        let main_in = if config.has_slots && config.kind == TaskKind::Relation {
            2 * d
        } else {
            d
        };
        Ok(Self {
            config,
            main: Affine::new(store, "head.main", main_in, config.num_labels, std, rng),
            enhancement: Affine::new(store, "head.enhancement", d, config.num_labels, std, rng),
            pollution: Affine::new(store, "head.pollution", 2 * d, 2, std, rng),
            anchor: (config.kind == TaskKind::Relation).then(|| Affine::new(store, "head.anchor", 2 * d, d, std, rng)),
            description: Affine::new(store, "head.description", config.knowledge_width, d, std, rng),
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    /// Reads the pooled views from the `(m + S) × d₂` state; slot `s` lives
    /// at row `text_len + s`.
    #[allow(clippy::too_many_arguments)]
    pub fn pool(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: Var,
        text_len: usize,
        slots: &EntitySlotSet,
        special: &SpecialPositions,
        cls_last: Option<&Tensor>,
    ) -> Result<PooledViews> {
        let row = |tape: &mut Tape, r: usize| tape.slice(state, 0, r, r + 1);
        let missing = |what: &str| Error::InvalidArgument {
            op: "pool",
            msg: format!("example has no {what} marker"),
        };
        let h_e = match self.config.kind {
            TaskKind::Sentence => row(tape, special.cls)?,
            TaskKind::Typing => row(tape, special.entity.ok_or_else(|| missing("[ENTITY]"))?)?,
            TaskKind::Relation => {
                let head = row(tape, special.head.ok_or_else(|| missing("[HEAD]"))?)?;
                let tail = row(tape, special.tail.ok_or_else(|| missing("[TAIL]"))?)?;
                let both = tape.concat(&[head, tail], 1)?;
                let anchor = self.anchor.as_ref().expect("relation heads own an anchor projection");
                anchor.forward(tape, store, both)?
            }
        };
        let ids = slots.indices(SlotRole::Identifier);
        let h_i = if ids.is_empty() {
            None
        } else {
            let parts = ids.iter().map(|&s| row(tape, text_len + s)).collect::<Result<Vec<_>>>()?;
            Some(if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 1)? })
        };
        let e_p = match slots.indices(SlotRole::Positive).first() {
            Some(&s) => Some(row(tape, text_len + s)?),
            None => None,
        };
        let e_n = match slots.indices(SlotRole::Negative).first() {
            Some(&s) => Some(row(tape, text_len + s)?),
            None => None,
        };
        let z_cls = match cls_last {
            Some(c) => {
                let c = tape.constant(Tensor::row(c.data().to_vec()));
                Some(self.description.forward(tape, store, c)?)
            }
            None => None,
        };
        Ok(PooledViews { h_i, h_e, e_p, e_n, z_cls })
    }

    /// `1 × |Y|` logits of the main classifier.
    pub fn main_logits(&self, tape: &mut Tape, store: &ParamStore, views: &PooledViews) -> Result<Var> {
        let x = if self.config.has_slots {
            views.h_i.ok_or_else(|| Error::InvalidArgument {
                op: "main_logits",
                msg: "identifier slots are missing".into(),
            })?
        } else {
            views.h_e
        };
        self.main.forward(tape, store, x)
    }

    pub fn main_loss(&self, tape: &mut Tape, store: &ParamStore, views: &PooledViews, target: &Target) -> Result<Var> {
        let logits = self.main_logits(tape, store, views)?;
        self.check_target(target)?;
        target.loss(tape, logits)
    }

    /// Classifies `h_E + e_p + z_cls` with its own weights.
    pub fn enhancement_loss(&self, tape: &mut Tape, store: &ParamStore, views: &PooledViews, target: &Target) -> Result<Var> {
        let e_p = views.e_p.ok_or_else(|| Error::InvalidArgument {
            op: "enhancement_loss",
            msg: "no positive slot".into(),
        })?;
        let mut h = tape.add(views.h_e, e_p)?;
        if let Some(z) = views.z_cls {
            h = tape.add(h, z)?;
        }
        let logits = self.enhancement.forward(tape, store, h)?;
        self.check_target(target)?;
        target.loss(tape, logits)
    }

    /// Two-way classification of which half of the concatenation holds the
    /// positive-enhanced vector. `swap = false` places it first (label 0).
    pub fn pollution_loss(&self, tape: &mut Tape, store: &ParamStore, views: &PooledViews, swap: bool) -> Result<Var> {
        let (e_p, e_n) = match (views.e_p, views.e_n) {
            (Some(p), Some(n)) => (p, n),
            _ => {
                return Err(Error::InvalidArgument {
                    op: "pollution_loss",
                    msg: "needs one positive and one negative slot".into(),
                })
            }
        };
        let g_a = tape.add(e_p, views.h_e)?;
        let g_p = tape.add(e_n, views.h_e)?;
        let (pair, label) = if swap { ([g_p, g_a], 1) } else { ([g_a, g_p], 0) };
        let x = tape.concat(&pair, 1)?;
        let logits = self.pollution.forward(tape, store, x)?;
        tape.cross_entropy(logits, &[label])
    }

    fn check_target(&self, target: &Target) -> Result<()> {
        let n = self.config.num_labels;
        match (self.config.kind, target) {
            (TaskKind::Typing, Target::MultiHot(y)) if y.len() == n => Ok(()),
            (TaskKind::Relation | TaskKind::Sentence, Target::Class(c)) if *c < n => Ok(()),
            (_, Target::Class(c)) => Err(Error::ClassOutOfRange { class: *c, classes: n }),
            (_, Target::MultiHot(y)) => Err(Error::InvalidArgument {
                op: "main_loss",
                msg: format!("{} label indicators for a {:?} task with {n} labels", y.len(), self.config.kind),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub use_aux_a: bool,
    pub use_aux_b: bool,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss coefficients must be non-negative, got α={} β={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Scalar graph nodes for the three losses; disabled terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub main: Var,
    pub aux_a: Option<Var>,
    pub aux_b: Option<Var>,
}

/// Stored loss values of one step. Disabled terms are stored as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub main: f64,
    pub aux_a: f64,
    pub aux_b: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Builds `L_m + α·L_a + β·L_ap`, evaluated left to right.
pub fn combine_losses(tape: &mut Tape, terms: LossTerms, weights: LossWeights) -> Result<(Var, LossBundle)> {
    weights.validate()?;
    let scalar = |tape: &Tape, v: Var| tape.value(v).item();
    let mut total = terms.main;
    let mut bundle = LossBundle {
        main: scalar(tape, terms.main),
        aux_a: 0.0,
        aux_b: 0.0,
        total: 0.0,
        weights,
    };
    if let (true, Some(a)) = (weights.use_aux_a, terms.aux_a) {
        bundle.aux_a = scalar(tape, a);
        let scaled = tape.scale(a, weights.alpha);
        total = tape.add(total, scaled)?;
    }
    if let (true, Some(b)) = (weights.use_aux_b, terms.aux_b) {
        bundle.aux_b = scalar(tape, b);
        let scaled = tape.scale(b, weights.beta);
        total = tape.add(total, scaled)?;
    }
    bundle.total = scalar(tape, total);
    Ok((total, bundle))
}
