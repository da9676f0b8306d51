//! Flat binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  b"RWSSLCK1"
//! count   u32      number of entries
//! entry*  u32      name length in bytes
//!         ..       name, UTF-8
//!         u32      number of dimensions
//!         u64*     dimension sizes
//!         f64*     values, row-major
//! ```
//!
//! Round-trips are bitwise: the f64 payload is written and read verbatim.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RWSSLCK1";

pub fn save(path: &Path, entries: &[(String, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for d in tensor.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic in {}: expected {:?}",
            path.display(),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Save several parameter sets under dotted namespaces
/// (`"rewarder" -> "rewarder.<param>"`).
pub fn save_namespaced(path: &Path, sets: &[(&str, &ParamSet)]) -> Result<()> {
    let mut entries = Vec::new();
    for (ns, set) in sets {
        for (name, tensor) in set.iter() {
            entries.push((format!("{ns}.{name}"), tensor));
        }
    }
    save(path, &entries)
}

/// Extract one namespace from a loaded checkpoint, stripping the prefix.
pub fn filter_namespace(entries: &[(String, Tensor)], ns: &str) -> ParamSet {
    let prefix = format!("{ns}.");
    let mut set = ParamSet::new();
    for (name, tensor) in entries {
        if let Some(rest) = name.strip_prefix(&prefix) {
            set.push(rest, tensor.clone());
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let a = Tensor::from_vec(vec![2, 3], vec![1.5, -0.25, 1e-300, f64::MIN_POSITIVE, 0.0, 7.0])
            .unwrap();
        let b = Tensor::vector(vec![std::f64::consts::PI]);
        save(&path, &[("w".into(), &a), ("bias".into(), &b)]).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "w");
        assert_eq!(loaded[0].1.shape(), a.shape());
        for (x, y) in loaded[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded[1].1.data()[0].to_bits(), std::f64::consts::PI.to_bits());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x00\x00\x00\x00").unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn namespaces_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ns.ckpt");
        let mut r = ParamSet::new();
        r.push("w", Tensor::vector(vec![1.0, 2.0]));
        let mut g = ParamSet::new();
        g.push("w", Tensor::vector(vec![3.0]));
        save_namespaced(&path, &[("rewarder", &r), ("generator", &g)]).unwrap();
        let all = load(&path).unwrap();
        let r2 = filter_namespace(&all, "rewarder");
        let g2 = filter_namespace(&all, "generator");
        assert_eq!(r2.get("w").unwrap().data(), &[1.0, 2.0]);
        assert_eq!(g2.get("w").unwrap().data(), &[3.0]);
    }
}
