//! Named-tensor checkpoint files.
//!
//! Layout: magic `EREDCKPT`, tensor count (`u32` LE), then per tensor the
//! name length (`u32` LE), UTF-8 name, rank (`u32` LE), each dimension
//! (`u64` LE) and the values as `f64` LE.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"EREDCKPT";

/// Serialises every parameter of each store, in order.
pub fn encode(stores: &[&ParamStore]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count: usize = stores.iter().map(|s| s.len()).sum();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for store in stores {
        for (_, p) in store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn save(path: &Path, stores: &[&ParamStore]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(stores))?;
    Ok(())
}

/// Decodes a checkpoint into `(name, tensor)` pairs.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        if end > bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = u32_at(take(4)?);
        let name = String::from_utf8(take(n)?.to_vec()).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = u32_at(take(4)?);
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(out)
}

/// Copies checkpoint tensors into the stores by name. Every parameter of
/// every store must be present with a matching shape.
pub fn restore(bytes: &[u8], stores: &mut [&mut ParamStore]) -> Result<()> {
    let tensors = decode(bytes)?;
    let by_name: std::collections::HashMap<&str, &Tensor> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for store in stores.iter_mut() {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.get(id).name.clone();
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != store.value(id).shape() {
                return Err(Error::Shape {
                    op: "restore",
                    left: t.shape().to_vec(),
                    right: store.value(id).shape().to_vec(),
                });
            }
            *store.value_mut(id) = (*t).clone();
        }
    }
    Ok(())
}

pub fn load(path: &Path, stores: &mut [&mut ParamStore]) -> Result<()> {
    restore(&std::fs::read(path)?, stores)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn roundtrip_by_name() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::new();
        a.add_normal("w", &[2, 3], 1.0, &mut rng);
        let mut k = ParamStore::new();
        k.add_normal("knowledge.w", &[4], 1.0, &mut rng);
        k.freeze_all();
        let bytes = encode(&[&a, &k]);
        assert_eq!(&bytes[..8], b"EREDCKPT");
        let names: Vec<String> = decode(&bytes).unwrap().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["w", "knowledge.w"]);

        let mut a2 = ParamStore::new();
        a2.add_zeros("w", &[2, 3]);
        let mut k2 = ParamStore::new();
        k2.add_zeros("knowledge.w", &[4]);
        restore(&bytes, &mut [&mut a2, &mut k2]).unwrap();
        assert_eq!(a2.value(a2.find("w").unwrap()), a.value(a.find("w").unwrap()));
        assert_eq!(encode(&[&a2, &k2]), bytes);

        let mut wrong = ParamStore::new();
        wrong.add_zeros("w", &[3, 2]);
        assert!(restore(&bytes, &mut [&mut wrong]).is_err());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
