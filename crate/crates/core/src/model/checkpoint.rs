//! Binary checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   8 bytes  "YFRMCKPT"
//! version u32
//! config  u64 byte length, then JSON-encoded ModelConfig
//! count   u64 number of parameter arrays
//! per array:
//!   name  u32 byte length, then UTF-8
//!   dims  3 x u64
//!   data  f64 x product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, Yformer};
use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"YFRMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Yformer, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(&model.cfg)?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for (_, p) in model.params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        for d in p.value.dims() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the model from its stored config and overwrites every parameter
/// with the stored values.
pub fn load_checkpoint(path: &Path) -> Result<Yformer> {
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cfg_len = read_u64(&mut r)? as usize;
    let cfg: ModelConfig = serde_json::from_slice(&read_vec(&mut r, cfg_len)?)?;
    let mut model = Yformer::new(cfg)?;

    let count = read_u64(&mut r)? as usize;
    if count != model.params.len() {
        return Err(bad(format!(
            "expected {} parameter arrays, found {count}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let name = String::from_utf8(read_vec(&mut r, name_len)?).map_err(|_| bad("parameter name is not UTF-8".into()))?;
        let dims = [read_u64(&mut r)? as usize, read_u64(&mut r)? as usize, read_u64(&mut r)? as usize];
        let id = model.params.find(&name).ok_or_else(|| bad(format!("unknown parameter {name}")))?;
        let shape = Shape(dims);
        if model.params.value(id).shape() != shape {
            return Err(bad(format!(
                "parameter {name} has shape {shape}, model expects {}",
                model.params.value(id).shape()
            )));
        }
        let mut data = Vec::with_capacity(shape.numel());
        for _ in 0..shape.numel() {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        *model.params.value_mut(id) = Tensor::new(shape, data)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(model)
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_vec(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Io(std::io::Error::from(std::io::ErrorKind::UnexpectedEof)));
    }
    Ok(buf)
}
