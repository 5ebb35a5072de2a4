//! Persisted datasets of labeled pairs.

use serde::{Deserialize, Serialize};

use crate::codec::{self, Container, Reader};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::synthworld::{LabeledPair, Origin, Prompt, WorldConfig};

pub const DATASET_MAGIC: &[u8; 8] = b"PLDSET\0\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    world: String,
    side: usize,
    count: usize,
}

/// Serializes pairs drawn from `world`.
pub fn encode(world: &WorldConfig, pairs: &[LabeledPair]) -> Result<Vec<u8>> {
    let side = world.image_size;
    let mut c = Container::new();
    c.push_json(
        b"META",
        &DatasetMeta {
            world: world.digest(),
            side,
            count: pairs.len(),
        },
    )?;
    let mut body = Vec::with_capacity(pairs.len() * (3 + 4 * side * side));
    for p in pairs {
        if p.image.side() != side {
            return Err(Error::WorldMismatch(format!(
                "image side {} in a {side}px world",
                p.image.side()
            )));
        }
        body.extend_from_slice(&(p.prompt.index() as u16).to_le_bytes());
        body.push(p.origin().code());
        for v in p.image.pixels() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    c.push(b"PAIR", body);
    Ok(c.to_bytes(DATASET_MAGIC))
}

/// Decodes a dataset; the world digest must match `world`.
pub fn decode(bytes: &[u8], world: &WorldConfig) -> Result<Vec<LabeledPair>> {
    let c = Container::from_bytes(bytes, DATASET_MAGIC)?;
    let meta: DatasetMeta = c.json(b"META")?;
    if meta.world != world.digest() {
        return Err(Error::WorldMismatch("dataset was built for a different world".into()));
    }
    let mut r = Reader::new(c.section(b"PAIR")?);
    let mut pairs = Vec::with_capacity(meta.count);
    for _ in 0..meta.count {
        let prompt = Prompt::from_index(r.u16()? as usize)?;
        let origin = Origin::from_code(r.u8()?)?;
        let image = Image::new(meta.side, r.f32s(meta.side * meta.side)?)?;
        pairs.push(LabeledPair::new(prompt, image, origin));
    }
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes in dataset".into()));
    }
    Ok(pairs)
}

pub fn digest(world: &WorldConfig, pairs: &[LabeledPair]) -> Result<String> {
    Ok(codec::sha256_hex(&encode(world, pairs)?))
}
