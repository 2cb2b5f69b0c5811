//! Checkpoint file format, byte-exact on round trip:
//!
//! ```text
//! magic "ORB1" | version u32 LE | header_len u64 LE |
//! header (TOML: model config + meta) | param_count u64 LE | f64 LE * count
//! ```

use super::{ModelConfig, ParamMeta, PolicyError, PolicyParams, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ORB1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: ParamMeta,
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    params.assert_finite()?;
    let header = toml::to_string(&Header {
        config: params.config.clone(),
        meta: params.meta.clone(),
    })
    .map_err(|e| PolicyError::Checkpoint(format!("header encode: {e}")))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header.len() as u64).to_le_bytes())?;
    f.write_all(header.as_bytes())?;
    f.write_all(&(params.flat.len() as u64).to_le_bytes())?;
    for v in &params.flat {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PolicyError::Checkpoint(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: Header = toml::from_str(
        std::str::from_utf8(&header_bytes)
            .map_err(|e| PolicyError::Checkpoint(format!("header utf8: {e}")))?,
    )
    .map_err(|e| PolicyError::Checkpoint(format!("header parse: {e}")))?;

    f.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let expected = header.config.param_count();
    if count != expected {
        return Err(PolicyError::Checkpoint(format!(
            "param count {count} does not match config ({expected})"
        )));
    }
    let mut flat = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        f.read_exact(&mut f64buf)?;
        flat.push(f64::from_le_bytes(f64buf));
    }
    let params = PolicyParams {
        config: header.config,
        flat,
        meta: header.meta,
    };
    params.assert_finite()?;
    Ok(params)
}
