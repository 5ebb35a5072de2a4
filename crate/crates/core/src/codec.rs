//! Binary container used for checkpoints and datasets.
//!
//! ```text
//! magic      8 bytes
//! version    u32 LE
//! sections   u32 LE count, then per section:
//!            tag [u8; 4] | length u64 LE | payload
//! ```
//! Tensor payloads are `ndim u32 | dims u64… | f32 LE…`; metadata payloads
//! are UTF-8 JSON.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    crate::synthworld::hex(&h.finalize())
}

#[derive(Debug, Default)]
pub struct Container {
    sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        self.sections.push((*tag, payload));
    }

    pub fn push_tensor(&mut self, tag: &[u8; 4], t: &Tensor) {
        self.push(tag, encode_tensor(t));
    }

    pub fn push_json<T: serde::Serialize>(&mut self, tag: &[u8; 4], value: &T) -> Result<()> {
        self.push(tag, serde_json::to_vec(value)?);
        Ok(())
    }

    pub fn sections(&self) -> impl Iterator<Item = (&[u8; 4], &[u8])> {
        self.sections.iter().map(|(t, p)| (t, p.as_slice()))
    }

    pub fn section(&self, tag: &[u8; 4]) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(tag))))
    }

    pub fn sections_tagged<'a>(&'a self, tag: &'a [u8; 4]) -> impl Iterator<Item = &'a [u8]> + 'a {
        self.sections.iter().filter(move |(t, _)| t == tag).map(|(_, p)| p.as_slice())
    }

    pub fn json<T: serde::de::DeserializeOwned>(&self, tag: &[u8; 4]) -> Result<T> {
        Ok(serde_json::from_slice(self.section(tag)?)?)
    }

    pub fn to_bytes(&self, magic: &[u8; 8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != magic {
            return Err(Error::Format(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()? as usize;
            sections.push((tag, r.take(len)?.to_vec()));
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(Self { sections })
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let ndim = r.u32()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u64()? as usize);
    }
    let n: usize = shape.iter().product();
    let data = r.f32s(n)?;
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes in tensor section".into()));
    }
    Tensor::new(shape, data)
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let mut c = Container::new();
        c.push(b"META", b"{\"a\":1}".to_vec());
        c.push_tensor(b"TENS", &Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]).unwrap());
        let bytes = c.to_bytes(b"TESTMAG1");
        let back = Container::from_bytes(&bytes, b"TESTMAG1").unwrap();
        assert_eq!(back.to_bytes(b"TESTMAG1"), bytes);
        assert_eq!(
            decode_tensor(back.section(b"TENS").unwrap()).unwrap().data(),
            &[1.0, -2.5, 3.25, f32::MIN_POSITIVE]
        );
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut c = Container::new();
        c.push(b"META", vec![1, 2, 3]);
        let bytes = c.to_bytes(b"TESTMAG1");
        assert!(Container::from_bytes(&bytes, b"OTHERMAG").is_err());
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1], b"TESTMAG1").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra, b"TESTMAG1").is_err());
    }
}
