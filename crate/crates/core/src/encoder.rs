//! Transformer encoder layers, the frozen knowledge module, and the
//! description-representation cache.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::input::DescriptionEmbeddings;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var, LAYER_NORM_EPS};
use crate::tensor::Tensor;
use crate::vocab::PAD;

/// Boolean `n × n` attention matrix; `allows(i, j)` means row `i` may attend to `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    allowed: Arc<[bool]>,
}

impl AttentionMask {
    pub fn from_fn(len: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed: Vec<bool> = (0..len * len).map(|k| f(k / len, k % len)).collect();
        Self {
            len,
            allowed: allowed.into(),
        }
    }

    /// Every non-padding position attends to every non-padding position.
    pub fn padding(is_pad: &[bool]) -> Self {
        Self::from_fn(is_pad.len(), |i, j| !is_pad[i] && !is_pad[j])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.len + col]
    }

    pub fn as_slice(&self) -> &Arc<[bool]> {
        &self.allowed
    }
}

/// One post-norm transformer encoder layer: multi-head self-attention and a
/// GELU feed-forward block of width `4 d`, each followed by a residual
/// connection and layer norm.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    width: usize,
    heads: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, width: usize, heads: usize, std: f64, rng: &mut R) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!("width {width} is not divisible by {heads} heads")));
        }
        let hidden = 4 * width;
        let mut w = |name: &str, shape: &[usize]| store.add_normal(format!("{prefix}.{name}"), shape, std, rng);
        let (wq, wk, wv, wo) = (
            w("wq", &[width, width]),
            w("wk", &[width, width]),
            w("wv", &[width, width]),
            w("wo", &[width, width]),
        );
        let (w1, w2) = (w("ffn.w1", &[width, hidden]), w("ffn.w2", &[hidden, width]));
        let mut z = |name: &str, n: usize| store.add_zeros(format!("{prefix}.{name}"), &[1, n]);
        let (bq, bk, bv, bo, b1, b2) = (
            z("bq", width),
            z("bk", width),
            z("bv", width),
            z("bo", width),
            z("ffn.b1", hidden),
            z("ffn.b2", width),
        );
        let ln1_beta = store.add_zeros(format!("{prefix}.ln1.beta"), &[1, width]);
        let ln2_beta = store.add_zeros(format!("{prefix}.ln2.beta"), &[1, width]);
        let ln1_gamma = store.add_ones(format!("{prefix}.ln1.gamma"), &[1, width]);
        let ln2_gamma = store.add_ones(format!("{prefix}.ln2.gamma"), &[1, width]);
        Ok(Self {
            width,
            heads,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln1_gamma,
            ln1_beta,
            w1,
            b1,
            w2,
            b2,
            ln2_gamma,
            ln2_beta,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn linear(&self, tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        tape.linear(x, w, Some(b))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mask: &AttentionMask) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.width || shape[0] != mask.len() {
            return Err(Error::Shape {
                op: "encoder_layer",
                left: shape,
                right: vec![mask.len(), self.width],
            });
        }
        let q = self.linear(tape, store, x, self.wq, self.bq)?;
        let k = self.linear(tape, store, x, self.wk, self.bk)?;
        let v = self.linear(tape, store, x, self.wv, self.bv)?;
        let head_dim = self.width / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice(q, 1, lo, hi)?;
            let kh = tape.slice(k, 1, lo, hi)?;
            let vh = tape.slice(v, 1, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.masked_softmax(scores, mask.as_slice())?;
            outputs.push(tape.matmul(probs, vh)?);
        }
        let attn = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat(&outputs, 1)?
        };
        let attn = self.linear(tape, store, attn, self.wo, self.bo)?;
        let res = tape.add(x, attn)?;
        let (g1, b1) = (tape.param(store, self.ln1_gamma), tape.param(store, self.ln1_beta));
        let h = tape.layer_norm(res, g1, b1, LAYER_NORM_EPS)?;

        let f = self.linear(tape, store, h, self.w1, self.b1)?;
        let f = tape.gelu(f);
        let f = self.linear(tape, store, f, self.w2, self.b2)?;
        let res = tape.add(h, f)?;
        let (g2, b2) = (tape.param(store, self.ln2_gamma), tape.param(store, self.ln2_beta));
        tape.layer_norm(res, g2, b2, LAYER_NORM_EPS)
    }
}

/// A stack of encoder layers applied in order.
pub fn encoder_forward(layers: &[EncoderLayer], tape: &mut Tape, store: &ParamStore, x: Var, mask: &AttentionMask) -> Result<Var> {
    layers.iter().try_fold(x, |h, layer| layer.forward(tape, store, h, mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnowledgeConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub seed: u64,
}

/// Per-layer description states `z_0 .. z_K`, each `n × d₃`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeStack {
    pub states: Vec<Tensor>,
}

impl KnowledgeStack {
    /// `[CLS]` vectors (`1 × d₃`) of every state, `cls_0 .. cls_K`.
    pub fn cls_vectors(&self) -> Vec<Tensor> {
        self.states.iter().map(|z| Tensor::row(z.row_slice(0).to_vec())).collect()
    }
}

/// The external description encoder. It owns its own parameter registry,
/// every entry of which is frozen, and runs on gradient-free tapes.
#[derive(Debug)]
pub struct KnowledgeModule {
    config: KnowledgeConfig,
    store: ParamStore,
    embeddings: DescriptionEmbeddings,
    layers: Vec<EncoderLayer>,
}

impl KnowledgeModule {
    pub fn new(config: KnowledgeConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        // Random features need enough scale to separate tokens after layer norm.
        let emb_std = 1.0;
        let weight_std = 1.0 / (config.width as f64).sqrt();
        let embeddings = DescriptionEmbeddings::new(&mut store, config.vocab_size, config.max_len, config.width, emb_std, &mut rng);
        let layers = (0..config.layers)
            .map(|k| {
                EncoderLayer::new(
                    &mut store,
                    &format!("knowledge.layer{}", k + 1),
                    config.width,
                    config.heads,
                    weight_std,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        store.freeze_all();
        Ok(Self {
            config,
            store,
            embeddings,
            layers,
        })
    }

    pub fn config(&self) -> &KnowledgeConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Mutable access for checkpoint restore only; values stay frozen.
    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn embed_description(&self, tape: &mut Tape, ids: &[u32]) -> Result<Var> {
        self.embeddings.embed(tape, &self.store, ids)
    }

    /// Runs all `K` layers over padded description ids.
    pub fn forward(&self, ids: &[u32]) -> Result<KnowledgeStack> {
        let mut tape = Tape::no_grad();
        let is_pad: Vec<bool> = ids.iter().map(|&i| i == PAD).collect();
        let mask = AttentionMask::padding(&is_pad);
        let mut z = self.embed_description(&mut tape, ids)?;
        let mut states = vec![tape.value(z).clone()];
        for layer in &self.layers {
            z = layer.forward(&mut tape, &self.store, z, &mask)?;
            states.push(tape.value(z).clone());
        }
        Ok(KnowledgeStack { states })
    }

    pub fn cls_vectors(&self, ids: &[u32]) -> Result<Vec<Tensor>> {
        Ok(self.forward(ids)?.cls_vectors())
    }
}

const CACHE_MAGIC: &[u8; 6] = b"EREDC1";

/// Pre-computed `[CLS]` vectors `cls_0 .. cls_K` per entity.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptionCache {
    layers: usize,
    width: usize,
    entries: Vec<(String, Vec<Tensor>)>,
    index: HashMap<String, usize>,
}

impl DescriptionCache {
    pub fn new(layers: usize, width: usize) -> Self {
        Self {
            layers,
            width,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, entity_id: String, cls: Vec<Tensor>) -> Result<()> {
        if cls.len() != self.layers + 1 || cls.iter().any(|t| t.numel() != self.width) {
            return Err(Error::Format(format!(
                "cache entry for {entity_id:?} must hold {} vectors of width {}",
                self.layers + 1,
                self.width
            )));
        }
        match self.index.get(&entity_id) {
            Some(&i) => self.entries[i].1 = cls,
            None => {
                self.index.insert(entity_id.clone(), self.entries.len());
                self.entries.push((entity_id, cls));
            }
        }
        Ok(())
    }

    pub fn get(&self, entity_id: &str) -> Result<&[Tensor]> {
        self.index
            .get(entity_id)
            .map(|&i| self.entries[i].1.as_slice())
            .ok_or_else(|| Error::CacheMiss(entity_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Header `EREDC1`, `K` and `d₃` as `u32` LE; then per entity the id
    /// length (`u32` LE), id bytes and `(K+1) × d₃` `f64` LE values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.layers as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        for (id, cls) in &self.entries {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for t in cls {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
        if cur.take(6)? != CACHE_MAGIC {
            return Err(Error::Format("not a description cache file".into()));
        }
        let layers = cur.u32()? as usize;
        let width = cur.u32()? as usize;
        let mut cache = Self::new(layers, width);
        while !cur.done() {
            let n = cur.u32()? as usize;
            let id = String::from_utf8(cur.take(n)?.to_vec()).map_err(|_| Error::Format("entity id is not UTF-8".into()))?;
            let mut cls = Vec::with_capacity(layers + 1);
            for _ in 0..=layers {
                let mut row = Vec::with_capacity(width);
                for _ in 0..width {
                    row.push(cur.f64()?);
                }
                cls.push(Tensor::row(row));
            }
            cache.insert(id, cls)?;
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteCursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Runs the knowledge module over every `(entity_id, padded description ids)`
/// pair. Entities are processed in parallel; entry order follows the input.
pub fn precompute_cache(knowledge: &KnowledgeModule, descriptions: &[(String, Vec<u32>)]) -> Result<DescriptionCache> {
    let computed: Vec<Result<Vec<Tensor>>> = descriptions.par_iter().map(|(_, ids)| knowledge.cls_vectors(ids)).collect();
    let mut cache = DescriptionCache::new(knowledge.num_layers(), knowledge.config().width);
    for ((id, _), cls) in descriptions.iter().zip(computed) {
        cache.insert(id.clone(), cls?)?;
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{CLS, SEP};

    fn knowledge(layers: usize) -> KnowledgeModule {
        KnowledgeModule::new(KnowledgeConfig {
            vocab_size: 30,
            width: 8,
            heads: 2,
            layers,
            max_len: 6,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn stack_holds_k_plus_one_states() {
        let km = knowledge(2);
        let stack = km.forward(&[CLS, 9, 10, SEP, 0, 0]).unwrap();
        assert_eq!(stack.states.len(), 3);
        assert_eq!(stack.cls_vectors().len(), 3);
        assert_eq!(stack.states[0].shape(), &[6, 8]);
        assert!(stack.states.iter().all(Tensor::is_finite));
    }

    #[test]
    fn knowledge_forward_is_deterministic() {
        let km = knowledge(2);
        let ids = [CLS, 12, 13, 14, SEP, 0];
        assert_eq!(km.forward(&ids).unwrap(), km.forward(&ids).unwrap());
    }

    #[test]
    fn knowledge_parameters_are_frozen() {
        let km = knowledge(1);
        assert!(km.store().iter().all(|(_, p)| p.frozen));
        let mut tape = Tape::new();
        let u = km.embed_description(&mut tape, &[CLS, SEP, 0, 0, 0, 0]).unwrap();
        assert!(!tape.requires_grad(u));
    }

    #[test]
    fn isolated_position_depends_only_on_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = EncoderLayer::new(&mut store, "l", 8, 2, 0.3, &mut rng).unwrap();
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        // position 2 sees only itself
        let mask = AttentionMask::from_fn(4, |i, j| if i == 2 || j == 2 { i == j } else { true });
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let full = layer.forward(&mut tape, &store, xv, &mask).unwrap();
        let single = tape.constant(Tensor::row(x.row_slice(2).to_vec()));
        let alone = layer.forward(&mut tape, &store, single, &AttentionMask::padding(&[false])).unwrap();
        assert_eq!(tape.value(full).row_slice(2), tape.value(alone).row_slice(0));
    }

    #[test]
    fn layer_output_rows_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let layers: Vec<_> = (0..2)
            .map(|i| EncoderLayer::new(&mut store, &format!("l{i}"), 8, 2, 0.02, &mut rng).unwrap())
            .collect();
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let mask = AttentionMask::padding(&[false; 5]);
        let out = encoder_forward(&layers, &mut tape, &store, xv, &mask).unwrap();
        let first = tape.value(out).clone();
        let again = encoder_forward(&layers, &mut tape, &store, xv, &mask).unwrap();
        assert_eq!(&first, tape.value(again));
        for r in 0..5 {
            let row = first.row_slice(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_head_count() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(EncoderLayer::new(&mut store, "l", 10, 3, 0.02, &mut rng).is_err());
    }

    #[test]
    fn cache_matches_fresh_forward_and_roundtrips() {
        let km = knowledge(2);
        let descs = vec![
            ("Q1".to_string(), vec![CLS, 9, 10, SEP, 0, 0]),
            ("Q2".to_string(), vec![CLS, SEP, 0, 0, 0, 0]),
        ];
        let cache = precompute_cache(&km, &descs).unwrap();
        for (id, ids) in &descs {
            assert_eq!(cache.get(id).unwrap(), km.cls_vectors(ids).unwrap().as_slice());
        }
        let mut bytes = Vec::new();
        cache.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..6], b"EREDC1");
        assert_eq!(bytes.len(), 6 + 8 + 2 * (4 + 2 + 3 * 8 * 8));
        let back = DescriptionCache::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, cache);
        assert!(matches!(cache.get("Q3"), Err(Error::CacheMiss(id)) if id == "Q3"));
        assert!(DescriptionCache::read_from(&bytes[..bytes.len() - 3]).is_err());
    }
}
