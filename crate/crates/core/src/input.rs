//! The three input streams: text embeddings, entity-slot embeddings and
//! description embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kb::EntitySlotSet;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Standard deviation for freshly initialised embedding tables.
pub const EMBEDDING_STD: f64 = 0.02;

fn to_rows(ids: &[u32]) -> Vec<usize> {
    ids.iter().map(|&i| i as usize).collect()
}

/// Token + position + segment embeddings of the backbone.
#[derive(Clone, Debug)]
pub struct TextEmbeddings {
    pub token: ParamId,
    pub position: ParamId,
    pub segment: ParamId,
}

impl TextEmbeddings {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, vocab_size: usize, max_len: usize, width: usize, rng: &mut R) -> Self {
        Self {
            token: store.add_normal("text.token", &[vocab_size, width], EMBEDDING_STD, rng),
            position: store.add_normal("text.position", &[max_len, width], EMBEDDING_STD, rng),
            segment: store.add_normal("text.segment", &[2, width], EMBEDDING_STD, rng),
        }
    }

    /// `m × d` sum of the three lookups. All positions use segment 0.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, ids: &[u32]) -> Result<Var> {
        let max_len = store.value(self.position).rows();
        if ids.len() > max_len {
            return Err(Error::InvalidArgument {
                op: "embed_text",
                msg: format!("{} ids exceed maximum length {max_len}", ids.len()),
            });
        }
        let tok_table = tape.param(store, self.token);
        let pos_table = tape.param(store, self.position);
        let seg_table = tape.param(store, self.segment);
        let tok = tape.embedding_lookup(tok_table, &to_rows(ids))?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embedding_lookup(pos_table, &positions)?;
        let seg = tape.embedding_lookup(seg_table, &vec![0; ids.len()])?;
        let x = tape.add(tok, pos)?;
        tape.add(x, seg)
    }
}

/// Entity table lookup, optional `d₁ → d₂` projection, and a learned
/// embedding per slot index.
#[derive(Clone, Debug)]
pub struct EntityEmbeddings {
    pub table: ParamId,
    pub projection: Option<ParamId>,
    pub slot_position: ParamId,
}

impl EntityEmbeddings {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        num_entities: usize,
        entity_dim: usize,
        width: usize,
        max_slots: usize,
        rng: &mut R,
    ) -> Self {
        // Unit-norm rows on average, the scale of normalised pretrained entity vectors.
        let table = store.add_normal("entity.table", &[num_entities, entity_dim], 1.0 / (entity_dim as f64).sqrt(), rng);
        let projection = (entity_dim != width).then(|| store.add_normal("entity.projection", &[entity_dim, width], EMBEDDING_STD, rng));
        let slot_position = store.add_normal("entity.slot_position", &[max_slots, width], EMBEDDING_STD, rng);
        Self {
            table,
            projection,
            slot_position,
        }
    }

    /// `S × d₂` slot embeddings, or `None` for an empty slot set.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, slots: &EntitySlotSet) -> Result<Option<Var>> {
        if slots.is_empty() {
            return Ok(None);
        }
        let max_slots = store.value(self.slot_position).rows();
        if slots.len() > max_slots {
            return Err(Error::InvalidArgument {
                op: "embed_entities",
                msg: format!("{} slots exceed the {max_slots} slot positions", slots.len()),
            });
        }
        let table = tape.param(store, self.table);
        let mut e = tape.embedding_lookup(table, &slots.rows())?;
        if let Some(p) = self.projection {
            let w = tape.param(store, p);
            e = tape.matmul(e, w)?;
        }
        let slot_table = tape.param(store, self.slot_position);
        let idx: Vec<usize> = (0..slots.len()).collect();
        let pos = tape.embedding_lookup(slot_table, &idx)?;
        Ok(Some(tape.add(e, pos)?))
    }
}

/// Token + position embeddings of the knowledge module.
#[derive(Clone, Debug)]
pub struct DescriptionEmbeddings {
    pub token: ParamId,
    pub position: ParamId,
}

impl DescriptionEmbeddings {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, vocab_size: usize, max_len: usize, width: usize, std: f64, rng: &mut R) -> Self {
        Self {
            token: store.add_normal("knowledge.token", &[vocab_size, width], std, rng),
            position: store.add_normal("knowledge.position", &[max_len, width], std, rng),
        }
    }

    /// `n × d₃`; `ids` must already be padded to the description length.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, ids: &[u32]) -> Result<Var> {
        let max_len = store.value(self.position).rows();
        if ids.len() != max_len {
            return Err(Error::InvalidArgument {
                op: "embed_description",
                msg: format!("expected {max_len} ids, got {}", ids.len()),
            });
        }
        let tok_table = tape.param(store, self.token);
        let pos_table = tape.param(store, self.position);
        let tok = tape.embedding_lookup(tok_table, &to_rows(ids))?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embedding_lookup(pos_table, &positions)?;
        tape.add(tok, pos)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kb::{EntitySlot, SlotRole};
    use crate::tensor::Tensor;

    #[test]
    fn text_rows_are_sums_and_positions_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let emb = TextEmbeddings::new(&mut store, 20, 8, 6, &mut rng);
        let mut tape = Tape::new();
        let x = emb.embed(&mut tape, &store, &[9, 9, 0, 0, 0, 0, 0, 0]).unwrap();
        let xv = tape.value(x).clone();
        assert_eq!(xv.shape(), &[8, 6]);
        let tok = store.value(emb.token);
        let pos = store.value(emb.position);
        let seg = store.value(emb.segment);
        for c in 0..6 {
            let expected = tok.row_slice(9)[c] + pos.row_slice(1)[c] + seg.row_slice(0)[c];
            assert_eq!(xv.row_slice(1)[c], expected);
            let diff = xv.row_slice(1)[c] - xv.row_slice(0)[c];
            let pos_diff = pos.row_slice(1)[c] - pos.row_slice(0)[c];
            assert!((diff - pos_diff).abs() < 1e-15);
        }
        assert!(emb.embed(&mut tape, &store, &[0; 9]).is_err());
    }

    #[test]
    fn identity_projection_when_widths_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let emb = EntityEmbeddings::new(&mut store, 10, 4, 4, 3, &mut rng);
        assert!(emb.projection.is_none());
        let slots = EntitySlotSet {
            slots: vec![
                EntitySlot {
                    row: 7,
                    role: SlotRole::Positive,
                },
                EntitySlot {
                    row: 0,
                    role: SlotRole::Identifier,
                },
            ],
        };
        let mut tape = Tape::new();
        let e = emb.embed(&mut tape, &store, &slots).unwrap().unwrap();
        let table = store.value(emb.table);
        let sp = store.value(emb.slot_position);
        for (s, row) in [(0, 7), (1, 0)] {
            for c in 0..4 {
                assert_eq!(tape.value(e).row_slice(s)[c], table.row_slice(row)[c] + sp.row_slice(s)[c]);
            }
        }
    }

    #[test]
    fn projection_changes_width_and_grads_touch_used_rows_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let emb = EntityEmbeddings::new(&mut store, 10, 16, 32, 4, &mut rng);
        let slots = EntitySlotSet {
            slots: vec![
                EntitySlot {
                    row: 3,
                    role: SlotRole::Positive,
                },
                EntitySlot {
                    row: 0,
                    role: SlotRole::Identifier,
                },
                EntitySlot {
                    row: 8,
                    role: SlotRole::Negative,
                },
            ],
        };
        let mut tape = Tape::new();
        let e = emb.embed(&mut tape, &store, &slots).unwrap().unwrap();
        assert_eq!(tape.value(e).shape(), &[3, 32]);
        let sq = tape.mul(e, e).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        let g = grads.param(&store, emb.table).unwrap();
        for row in 0..10 {
            let touched = g.row_slice(row).iter().any(|&v| v != 0.0);
            assert_eq!(touched, [0, 3, 8].contains(&row), "row {row}");
        }
        assert!(emb.embed(&mut tape, &store, &EntitySlotSet::default()).unwrap().is_none());
        let _ = Tensor::scalar(0.0);
    }
}
