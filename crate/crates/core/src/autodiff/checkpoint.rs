use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"GRF1";

/// Write all parameters (trainable and frozen) to `path` in the binary
/// checkpoint format: magic `GRF1`, little-endian u32 parameter count,
/// then per parameter a u32 name length, the UTF-8 name, a u32 rank,
/// u64 dimensions, and the raw little-endian f64 buffer.
pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for p in params.iter() {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.tensor.rank() as u32).to_le_bytes())?;
            for &d in &p.tensor.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in &p.tensor.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

struct CheckpointReader<R> {
    inner: R,
}

impl<R: Read> CheckpointReader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {}", what)))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Read a checkpoint back as `(name, tensor)` pairs in file order.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = CheckpointReader { inner: BufReader::new(file) };
    let magic = r.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let count = r.u32("parameter count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.bytes(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.u32(&format!("rank of '{}'", name))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64(&format!("dims of '{}'", name))? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(
                r.bytes(8, &format!("values of '{}'", name))?.try_into().unwrap(),
            ));
        }
        entries.push((name, Tensor { shape, data }));
    }
    Ok(entries)
}

/// Strict restore: the checkpoint and the model must carry exactly the
/// same parameter names with matching shapes. Nothing is mutated until
/// the whole file has been read and validated; any mismatch is reported
/// with the offending parameter's name.
pub fn load_into(params: &mut ParamSet, path: &Path) -> Result<()> {
    let entries = load_checkpoint(path)?;
    for (name, tensor) in &entries {
        match params.get(name) {
            None => {
                return Err(Error::Checkpoint(format!(
                    "checkpoint parameter '{}' does not exist in the model",
                    name
                )))
            }
            Some(existing) if existing.shape != tensor.shape => {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?} in checkpoint but {:?} in model",
                    name, tensor.shape, existing.shape
                )))
            }
            Some(_) => {}
        }
    }
    if params.len() != entries.len() {
        let in_file: std::collections::HashSet<&str> =
            entries.iter().map(|(n, _)| n.as_str()).collect();
        let missing = params
            .iter()
            .map(|p| p.name.as_str())
            .find(|n| !in_file.contains(n))
            .unwrap_or("?");
        return Err(Error::Checkpoint(format!(
            "model parameter '{}' is missing from the checkpoint",
            missing
        )));
    }
    for (name, tensor) in entries {
        *params.get_mut(&name).expect("validated above") = tensor;
    }
    Ok(())
}

/// Partial restore for warm starts: copy only entries whose name and
/// shape both match the model, returning the names actually loaded.
pub fn load_matching(params: &mut ParamSet, path: &Path) -> Result<Vec<String>> {
    let entries = load_checkpoint(path)?;
    let mut loaded = Vec::new();
    for (name, tensor) in entries {
        if let Some(existing) = params.get_mut(&name) {
            if existing.shape == tensor.shape {
                *existing = tensor;
                loaded.push(name);
            }
        }
    }
    Ok(loaded)
}
