//! Binary weight files: magic, format version, a free-form tag, the layouts
//! and the little-endian parameter payload.

use std::io::{Read, Write};
use std::path::Path;

use super::ParamVector;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CLIMRLW\0";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(tag: &str, params: &ParamVector) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, tag.len())?;
    out.extend_from_slice(tag.as_bytes());
    put_u32(&mut out, params.layouts.len())?;
    for sizes in &params.layouts {
        put_u32(&mut out, sizes.len())?;
        for s in sizes {
            put_u32(&mut out, *s)?;
        }
    }
    out.extend_from_slice(&(params.flat.len() as u64).to_le_bytes());
    for v in &params.flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(String, ParamVector)> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a weight file".into()));
    }
    let version = c.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let tag_len = c.u32()?;
    let tag = String::from_utf8(c.take(tag_len)?.to_vec()).map_err(|_| Error::Checkpoint("tag is not UTF-8".into()))?;
    let n_layouts = c.u32()?;
    let mut layouts = Vec::with_capacity(n_layouts.min(64));
    for _ in 0..n_layouts {
        let n = c.u32()?;
        layouts.push((0..n).map(|_| c.u32()).collect::<Result<Vec<_>>>()?);
    }
    let n = c.u64()? as usize;
    let payload = c.take(
        n.checked_mul(8)
            .ok_or_else(|| Error::Checkpoint("payload too large".into()))?,
    )?;
    let flat = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if c.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    let params = ParamVector { layouts, flat };
    // validates the layouts against the payload length
    super::unflatten(&params)?;
    Ok((tag, params))
}

pub fn save(path: &Path, tag: &str, params: &ParamVector) -> Result<()> {
    let bytes = to_bytes(tag, params)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(String, ParamVector)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, Layout, Mlp};

    fn sample() -> ParamVector {
        let mut rng = crate::seeded_rng(8);
        let a = Mlp::new(Layout::new(vec![3, 4, 2]).unwrap(), 1.0, &mut rng);
        let b = Mlp::new(Layout::new(vec![5, 1]).unwrap(), 1.0, &mut rng);
        flatten(&[&a, &b])
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let mut p = sample();
        p.flat[0] = f64::MIN_POSITIVE;
        p.flat[1] = -0.0;
        let bytes = to_bytes("ddpg/scbc-v1", &p).unwrap();
        let (tag, back) = from_bytes(&bytes).unwrap();
        assert_eq!(tag, "ddpg/scbc-v1");
        assert_eq!(back.layouts, p.layouts);
        for (a, b) in back.flat.iter().zip(&p.flat) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(to_bytes(&tag, &back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save(&path, "x", &sample()).unwrap();
        assert_eq!(load(&path).unwrap(), ("x".to_string(), sample()));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = to_bytes("t", &sample()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
