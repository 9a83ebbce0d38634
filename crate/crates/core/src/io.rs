//! Atomic file writes and the versioned binary container used by checkpoints.
//!
//! Container layout: 4-byte magic, `u32` version, `u64` header length, JSON
//! header, then `u64` count + little-endian `f32` values for each blob.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub struct Container {
    pub header: serde_json::Value,
    pub blobs: Vec<Vec<f32>>,
}

pub fn encode_container(magic: &[u8; 4], version: u32, c: &Container) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&c.header)?;
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.write_u32::<LittleEndian>(version).unwrap();
    out.write_u64::<LittleEndian>(header.len() as u64).unwrap();
    out.extend_from_slice(&header);
    out.write_u64::<LittleEndian>(c.blobs.len() as u64).unwrap();
    for b in &c.blobs {
        out.write_u64::<LittleEndian>(b.len() as u64).unwrap();
        for v in b {
            out.write_f32::<LittleEndian>(*v).unwrap();
        }
    }
    Ok(out)
}

pub fn decode_container(magic: &[u8; 4], version: u32, bytes: &[u8]) -> Result<Container> {
    let mut r = bytes;
    let bad = |what: &str| Error::Format(format!("checkpoint: {what}"));
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|_| bad("truncated magic"))?;
    if &m != magic {
        return Err(bad("wrong magic"));
    }
    let v = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated version"))?;
    if v != version {
        return Err(Error::ManifestMismatch(format!(
            "checkpoint version {v}, expected {version}"
        )));
    }
    let hl = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if hl > r.len() {
        return Err(bad("header length"));
    }
    let header = serde_json::from_slice(&r[..hl])?;
    r = &r[hl..];
    let n = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated blob count"))? as usize;
    let mut blobs = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let len = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated blob"))? as usize;
        if len.saturating_mul(4) > r.len() {
            return Err(bad("blob length"));
        }
        let mut b = vec![0f32; len];
        r.read_f32_into::<LittleEndian>(&mut b).map_err(|_| bad("truncated blob"))?;
        blobs.push(b);
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(Container { header, blobs })
}

pub fn save_container(path: &Path, magic: &[u8; 4], version: u32, c: &Container) -> Result<()> {
    write_atomic(path, &encode_container(magic, version, c)?)
}

pub fn load_container(path: &Path, magic: &[u8; 4], version: u32) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(magic, version, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_and_checks() {
        let c = Container {
            header: serde_json::json!({"a": 1, "b": [1.5, 2.0]}),
            blobs: vec![vec![1.0, -2.5, f32::MIN_POSITIVE], vec![]],
        };
        let bytes = encode_container(b"TEST", 3, &c).unwrap();
        let d = decode_container(b"TEST", 3, &bytes).unwrap();
        assert_eq!(d.header, c.header);
        assert_eq!(d.blobs, c.blobs);
        assert!(decode_container(b"NOPE", 3, &bytes).is_err());
        assert!(matches!(
            decode_container(b"TEST", 4, &bytes),
            Err(Error::ManifestMismatch(_))
        ));
        assert!(decode_container(b"TEST", 3, &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
