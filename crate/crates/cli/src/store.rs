//! Content-addressed artifact directory.
//!
//! ```text
//! <root>/objects/<sha256>.<ext>   artifact bytes, named by their digest
//! <root>/index.tsv                name <TAB> kind <TAB> digest, one per put
//! ```
//!
//! Writes go to a temporary file in the same directory and are renamed into
//! place, so a crash never leaves a truncated object or index. The index is
//! only appended to; the latest line for a name wins.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use provlab::codec::sha256_hex;
use provlab::{Error, Result};

pub const INDEX_FILE: &str = "index.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Checkpoint,
    Dataset,
    Keys,
    Report,
    Discriminator,
    Table,
    Config,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Checkpoint => "checkpoint",
            Kind::Dataset => "dataset",
            Kind::Keys => "keys",
            Kind::Report => "report",
            Kind::Discriminator => "discriminator",
            Kind::Table => "table",
            Kind::Config => "config",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Kind::Checkpoint => "ckpt",
            Kind::Dataset => "data",
            Kind::Keys | Kind::Report | Kind::Discriminator => "json",
            Kind::Table => "csv",
            Kind::Config => "conf",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        [
            Kind::Checkpoint,
            Kind::Dataset,
            Kind::Keys,
            Kind::Report,
            Kind::Discriminator,
            Kind::Table,
            Kind::Config,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Format(format!("unknown artifact kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub kind: Kind,
    pub digest: String,
}

#[derive(Clone, Debug)]
pub struct ArtifactStore {
    root: PathBuf,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("objects"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, kind: Kind, digest: &str) -> PathBuf {
        self.root.join("objects").join(format!("{digest}.{}", kind.extension()))
    }

    /// Stores `bytes` under their digest and records `name` in the index.
    pub fn put(&self, name: &str, kind: Kind, bytes: &[u8]) -> Result<(String, PathBuf)> {
        if name.is_empty() || name.contains(['\t', '\n']) {
            return Err(Error::InvalidArgument(format!("bad artifact name {name:?}")));
        }
        let digest = sha256_hex(bytes);
        let path = self.object_path(kind, &digest);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        let mut index = fs::read(self.root.join(INDEX_FILE)).unwrap_or_default();
        index.extend_from_slice(format!("{name}\t{}\t{digest}\n", kind.name()).as_bytes());
        write_atomic(&self.root.join(INDEX_FILE), &index)?;
        Ok((digest, path))
    }

    pub fn entries(&self) -> Result<Vec<Entry>> {
        let text = match fs::read_to_string(self.root.join(INDEX_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .map(|line| {
                let mut parts = line.split('\t');
                match (parts.next(), parts.next(), parts.next(), parts.next()) {
                    (Some(name), Some(kind), Some(digest), None) => Ok(Entry {
                        name: name.to_string(),
                        kind: Kind::parse(kind)?,
                        digest: digest.to_string(),
                    }),
                    _ => Err(Error::Format(format!("malformed index line {line:?}"))),
                }
            })
            .collect()
    }

    /// Latest index entry for `name`.
    pub fn lookup(&self, name: &str) -> Result<Option<Entry>> {
        Ok(self.entries()?.into_iter().rev().find(|e| e.name == name))
    }

    /// Bytes of an object, verified against its digest.
    pub fn get(&self, kind: Kind, digest: &str) -> Result<Vec<u8>> {
        let bytes = fs::read(self.object_path(kind, digest))?;
        verify(&bytes, digest, kind.name())?;
        Ok(bytes)
    }

    pub fn get_named(&self, name: &str) -> Result<Option<(Entry, Vec<u8>)>> {
        match self.lookup(name)? {
            Some(e) => {
                let bytes = self.get(e.kind, &e.digest)?;
                Ok(Some((e, bytes)))
            }
            None => Ok(None),
        }
    }

    /// Resolves `reference` as a file path first, then as an index name. Files
    /// inside `objects/` must hash to the digest in their file name.
    pub fn resolve(&self, reference: &str, kind: Kind) -> Result<(String, Vec<u8>)> {
        let path = Path::new(reference);
        if path.is_file() {
            let bytes = fs::read(path)?;
            let digest = sha256_hex(&bytes);
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if stem.len() == 64 && stem.chars().all(|c| c.is_ascii_hexdigit()) {
                    verify(&bytes, stem, kind.name())?;
                }
            }
            return Ok((digest, bytes));
        }
        match self.lookup(reference)? {
            Some(e) if e.kind == kind => Ok((e.digest.clone(), self.get(kind, &e.digest)?)),
            Some(e) => Err(Error::InvalidArgument(format!(
                "{reference} is a {}, expected a {}",
                e.kind.name(),
                kind.name()
            ))),
            None => Err(Error::InvalidArgument(format!(
                "no file or stored artifact named {reference:?}"
            ))),
        }
    }
}

fn verify(bytes: &[u8], digest: &str, what: &str) -> Result<()> {
    let found = sha256_hex(bytes);
    if found != digest {
        return Err(Error::DigestMismatch {
            what: what.to_string(),
            expected: digest.to_string(),
            found,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let (d, path) = store.put("a", Kind::Table, b"x,y\n").unwrap();
        assert_eq!(store.get(Kind::Table, &d).unwrap(), b"x,y\n");
        store.put("a", Kind::Table, b"x,z\n").unwrap();
        let (e, bytes) = store.get_named("a").unwrap().unwrap();
        assert_eq!(bytes, b"x,z\n");
        assert_ne!(e.digest, d);
        assert_eq!(store.entries().unwrap().len(), 2);

        fs::write(&path, b"tampered").unwrap();
        assert!(matches!(store.get(Kind::Table, &d), Err(Error::DigestMismatch { .. })));
        assert!(store.resolve(path.to_str().unwrap(), Kind::Table).is_err());
        assert!(store.resolve("missing", Kind::Table).is_err());
        assert!(store.resolve("a", Kind::Keys).is_err());
    }
}
