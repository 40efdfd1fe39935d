use super::{ParamEntry, ParamSet, Tensor};
use crate::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// File magic for parameter checkpoints.
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"HELMS1";

/// Write a self-describing binary checkpoint: magic, a length-prefixed UTF-8
/// metadata blob (typically JSON), then per-entry records of
/// `group/entry` name, shape list, and raw little-endian f64 values.
pub fn save_checkpoint(path: &Path, params: &ParamSet, meta: &str) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u64(&mut w, meta.len() as u64)?;
    w.write_all(meta.as_bytes())?;

    let records: u64 = params.groups.iter().map(|g| g.entries.len() as u64).sum();
    write_u64(&mut w, records)?;
    for g in &params.groups {
        for e in &g.entries {
            let name = format!("{}/{}", g.name, e.name);
            write_u64(&mut w, name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            write_u64(&mut w, e.value.shape().len() as u64)?;
            for &d in e.value.shape() {
                write_u64(&mut w, d as u64)?;
            }
            for &v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back. Returns the metadata blob and the parameter set
/// (gradients and optimizer moments reset to zero).
pub fn load_checkpoint(path: &Path) -> Result<(String, ParamSet)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "bad checkpoint magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta = String::from_utf8(meta_bytes)
        .map_err(|e| Error::Data(format!("checkpoint metadata is not UTF-8: {e}")))?;

    let records = read_u64(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..records {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let full = String::from_utf8(name_bytes)
            .map_err(|e| Error::Data(format!("checkpoint record name is not UTF-8: {e}")))?;
        let (gname, ename) = full
            .split_once('/')
            .ok_or_else(|| Error::Data(format!("record name '{full}' lacks group separator")))?;

        let ndim = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let tensor = Tensor::new(shape, data)?;

        let gi = match params.groups.iter().position(|g| g.name == gname) {
            Some(i) => i,
            None => params.add_group(gname.to_string()),
        };
        params.groups[gi].entries.push(ParamEntry::new(ename, tensor));
    }
    Ok((meta, params))
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut params = ParamSet::new();
        let g0 = params.add_group("low_level");
        params.push_entry(g0, "w0", Tensor::matrix(2, 3, vec![1.5, -0.25, 1e-300, 3.7, 0.0, -9.9]).unwrap());
        params.push_entry(g0, "b0", Tensor::row(vec![0.125, 4.0, -1.0]));
        let g1 = params.add_group("transition_prior");
        params.push_entry(g1, "logits", Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap());

        let dir = std::env::temp_dir().join(format!("ckpt_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        save_checkpoint(&path, &params, "{\"k\":2}").unwrap();
        let (meta, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, "{\"k\":2}");
        assert_eq!(loaded.groups.len(), 2);
        for (a, b) in params.groups.iter().zip(&loaded.groups) {
            assert_eq!(a.name, b.name);
            for (ea, eb) in a.entries.iter().zip(&b.entries) {
                assert_eq!(ea.name, eb.name);
                assert_eq!(ea.value, eb.value);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join(format!("ckpt_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.bin");
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
