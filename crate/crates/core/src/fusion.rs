//! Layer alignment between the knowledge module and the backbone, the
//! role-based attention mask, and the fused forward pass.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{AttentionMask, EncoderLayer};
use crate::error::{Error, Result};
use crate::kb::SlotRole;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// How the `K` knowledge layers are matched to `K` of the `L` backbone layers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum AlignmentScheme {
    #[default]
    Last,
    First,
    FirstAndLast,
    Middle,
    Uniform,
    Custom {
        layers: Vec<usize>,
    },
}

impl fmt::Display for AlignmentScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Last => f.write_str("last"),
            Self::First => f.write_str("first"),
            Self::FirstAndLast => f.write_str("first_and_last"),
            Self::Middle => f.write_str("middle"),
            Self::Uniform => f.write_str("uniform"),
            Self::Custom { layers } => {
                let parts: Vec<String> = layers.iter().map(usize::to_string).collect();
                write!(f, "custom:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for AlignmentScheme {
    type Err = Error;

    /// Accepts a scheme name, or `custom:i,j,...`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "last" => Self::Last,
            "first" => Self::First,
            "first_and_last" => Self::FirstAndLast,
            "middle" => Self::Middle,
            "uniform" => Self::Uniform,
            _ => {
                let list = s
                    .strip_prefix("custom:")
                    .ok_or_else(|| Error::Alignment(format!("unknown alignment scheme {s:?}")))?;
                let layers = list
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        p.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Alignment(format!("bad layer index {p:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::Custom { layers }
            }
        })
    }
}

/// Resolved mapping: knowledge layer `k` (1-based) feeds backbone layer
/// `layers[k-1]` (1-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentSchedule {
    backbone_layers: usize,
    layers: Vec<usize>,
}

impl AlignmentSchedule {
    pub fn resolve(scheme: &AlignmentScheme, backbone_layers: usize, knowledge_layers: usize) -> Result<Self> {
        let (l, k) = (backbone_layers, knowledge_layers);
        if k > l {
            return Err(Error::Alignment(format!("{k} knowledge layers exceed {l} backbone layers")));
        }
        let layers: Vec<usize> = match scheme {
            AlignmentScheme::Last => (l - k + 1..=l).collect(),
            AlignmentScheme::First => (1..=k).collect(),
            AlignmentScheme::FirstAndLast => {
                if k % 2 != 0 {
                    return Err(Error::Alignment(format!("first_and_last needs an even layer count, got {k}")));
                }
                (1..=k / 2).chain(l - k / 2 + 1..=l).collect()
            }
            AlignmentScheme::Middle => {
                if k == 0 {
                    Vec::new()
                } else {
                    let start = (l.div_ceil(2) as isize - (k / 2) as isize).clamp(1, (l - k + 1) as isize) as usize;
                    (start..start + k).collect()
                }
            }
            AlignmentScheme::Uniform => (1..=k).map(|i| (i * l).div_ceil(k)).collect(),
            AlignmentScheme::Custom { layers } => {
                if layers.len() != k {
                    return Err(Error::Alignment(format!(
                        "custom schedule lists {} layers, expected {k}",
                        layers.len()
                    )));
                }
                if layers.iter().any(|&i| i == 0 || i > l) {
                    return Err(Error::Alignment(format!("custom layers {layers:?} must lie in 1..={l}")));
                }
                if layers.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Alignment(format!("custom layers {layers:?} must be strictly increasing")));
                }
                layers.clone()
            }
        };
        Ok(Self {
            backbone_layers: l,
            layers,
        })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn backbone_layers(&self) -> usize {
        self.backbone_layers
    }

    /// Knowledge layer (1-based) connected to backbone layer `i` (1-based).
    pub fn knowledge_layer_for(&self, i: usize) -> Option<usize> {
        self.layers.iter().position(|&l| l == i).map(|k| k + 1)
    }
}

/// What occupies each row of the fused state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PositionRole {
    Text,
    Pad,
    Positive,
    Identifier,
    Negative,
    Description,
}

impl From<SlotRole> for PositionRole {
    fn from(r: SlotRole) -> Self {
        match r {
            SlotRole::Positive => Self::Positive,
            SlotRole::Identifier => Self::Identifier,
            SlotRole::Negative => Self::Negative,
        }
    }
}

/// Padding is invisible and sees nothing. Negative slots are visible only
/// to themselves and see the text plus themselves. All remaining roles see
/// each other.
pub fn fusion_mask(roles: &[PositionRole]) -> AttentionMask {
    use PositionRole::*;
    AttentionMask::from_fn(roles.len(), |i, j| match (roles[i], roles[j]) {
        (Pad, _) | (_, Pad) => false,
        (Negative, Negative) => i == j,
        (Negative, col) => col == Text,
        (_, Negative) => false,
        _ => true,
    })
}

/// Roles of the fused state rows, optionally followed by the description row.
pub fn fusion_roles(text_pad: &[bool], slot_roles: &[SlotRole], with_description: bool) -> Vec<PositionRole> {
    let mut roles: Vec<PositionRole> = text_pad
        .iter()
        .map(|&p| if p { PositionRole::Pad } else { PositionRole::Text })
        .collect();
    roles.extend(slot_roles.iter().map(|&r| PositionRole::from(r)));
    if with_description {
        roles.push(PositionRole::Description);
    }
    roles
}

/// Affine map `d₃ → d₂` applied to a knowledge `[CLS]` vector.
#[derive(Clone, Debug)]
pub struct DimensionAligner {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DimensionAligner {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, index: usize, from: usize, to: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: store.add_normal(format!("aligner{index}.weight"), &[from, to], std, rng),
            bias: store.add_zeros(format!("aligner{index}.bias"), &[1, to]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, cls: &Tensor) -> Result<Var> {
        let x = tape.constant(Tensor::row(cls.data().to_vec()));
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}

pub struct FusionInput<'a> {
    /// `m × d₂` text embeddings.
    pub text: Var,
    pub text_pad: &'a [bool],
    /// `S × d₂` slot embeddings, if any.
    pub slots: Option<Var>,
    pub slot_roles: &'a [SlotRole],
    /// Knowledge `[CLS]` vectors `cls_0 .. cls_K`.
    pub cls: &'a [Tensor],
}

/// Runs the backbone over `[text; slots]`. On each connected layer the
/// aligned description vector from the previous knowledge layer is appended
/// as one extra row and dropped again after the layer. Returns the
/// `(m + S) × d₂` final state.
pub fn fused_forward(
    tape: &mut Tape,
    store: &ParamStore,
    layers: &[EncoderLayer],
    aligners: &[DimensionAligner],
    schedule: &AlignmentSchedule,
    input: &FusionInput<'_>,
) -> Result<Var> {
    if schedule.backbone_layers() != layers.len() || aligners.len() != schedule.len() {
        return Err(Error::Alignment(format!(
            "schedule for {} layers / {} aligners does not fit {} layers / {} aligners",
            schedule.backbone_layers(),
            schedule.len(),
            layers.len(),
            aligners.len()
        )));
    }
    if !schedule.is_empty() && input.cls.len() < schedule.len() {
        return Err(Error::InvalidArgument {
            op: "fused_forward",
            msg: format!("{} description vectors for {} connected layers", input.cls.len(), schedule.len()),
        });
    }
    let slot_count = input.slot_roles.len();
    let mut state = match input.slots {
        Some(s) => {
            if tape.value(s).rows() != slot_count {
                return Err(Error::InvalidArgument {
                    op: "fused_forward",
                    msg: format!("{} slot rows for {slot_count} roles", tape.value(s).rows()),
                });
            }
            tape.concat(&[input.text, s], 0)?
        }
        None if slot_count == 0 => input.text,
        None => {
            return Err(Error::InvalidArgument {
                op: "fused_forward",
                msg: "slot roles given without slot embeddings".into(),
            })
        }
    };
    let rows = tape.value(state).rows();
    let plain_mask = fusion_mask(&fusion_roles(input.text_pad, input.slot_roles, false));
    let desc_mask = fusion_mask(&fusion_roles(input.text_pad, input.slot_roles, true));
    for (i, layer) in layers.iter().enumerate() {
        state = match schedule.knowledge_layer_for(i + 1) {
            Some(k) => {
                let d = aligners[k - 1].forward(tape, store, &input.cls[k - 1])?;
                let extended = tape.concat(&[state, d], 0)?;
                let out = layer.forward(tape, store, extended, &desc_mask)?;
                tape.slice(out, 0, 0, rows)?
            }
            None => layer.forward(tape, store, state, &plain_mask)?,
        };
    }
    Ok(state)
}
