//! SKF1: a flat container of named `f64` arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SKF1" | version: u32 | entries: u32
//! per entry: name_len: u32 | name (utf-8) | rows: u64 | cols: u64 | rows*cols f64
//! ```

use std::fs;
use std::path::Path;

use csf_core::trainer::{TrainConfig, TrainState};
use csf_core::DenseArray;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SKF1";
pub const VERSION: u32 = 1;

pub fn encode(entries: &[(String, DenseArray)]) -> Vec<u8> {
    let payload: usize = entries.iter().map(|(n, a)| 20 + n.len() + 8 * a.len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, array) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(array.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(array.cols() as u64).to_le_bytes());
        for v in array.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode a whole container. Nothing is returned unless every entry parses.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, DenseArray)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err("not an SKF1 file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported SKF1 version {version}, expected {VERSION}"));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(bytes.len() / 20));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "entry name is not utf-8".to_string())?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows.checked_mul(cols).ok_or("entry shape overflows")?;
        let raw = r.take(n.checked_mul(8).ok_or("entry shape overflows")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let array = DenseArray::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
        entries.push((name.to_string(), array));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(entries)
}

/// Write through a temporary sibling and rename, so readers never see a
/// half-written file.
pub fn write_arrays(path: &Path, entries: &[(String, DenseArray)]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(entries)).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_arrays(path: &Path) -> CliResult<Vec<(String, DenseArray)>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn save_state(path: &Path, state: &TrainState) -> CliResult<()> {
    write_arrays(path, &state.export_state())
}

/// Restore a full training state. Shapes that disagree with `config` (a
/// different skill dimension, say) are refused.
pub fn load_state(path: &Path, config: TrainConfig) -> CliResult<TrainState> {
    let entries = read_arrays(path)?;
    TrainState::import_state(config, &entries).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}
