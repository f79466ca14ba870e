use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::model::{assemble, Model, ModelConfig};
use crate::HarnessError;

// Same wire format as projector checkpoints; the spec payload here is the
// whole model config so a checkpoint is self-describing.
const MAGIC: &[u8; 8] = b"PROJCKP1";
const VERSION: u32 = 1;

fn all_tensors(model: &Model) -> Vec<(String, tensor_core::Tensor)> {
    let mut out: Vec<(String, tensor_core::Tensor)> = model
        .projector
        .params()
        .into_iter()
        .map(|(n, t)| (format!("projector.{n}"), t))
        .collect();
    out.extend(model.lm.params().into_iter().map(|(n, t)| (format!("lm.{n}"), t)));
    out
}

pub fn save_model(model: &Model, cfg: &ModelConfig, path: &Path) -> Result<(), HarnessError> {
    let cfg_json = serde_json::to_vec(cfg)?;
    let tensors = all_tensors(model);
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(cfg_json.len() as u64).to_le_bytes())?;
    f.write_all(&cfg_json)?;
    f.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in &tensors {
        f.write_all(&(name.len() as u64).to_le_bytes())?;
        f.write_all(name.as_bytes())?;
        f.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            f.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.to_vec() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Model, ModelConfig), HarnessError> {
    let bad = |msg: &str| HarnessError::DimensionMismatch(format!("bad checkpoint: {msg}"));
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("magic bytes"));
    }
    let mut buf4 = [0u8; 4];
    f.read_exact(&mut buf4)?;
    if u32::from_le_bytes(buf4) != VERSION {
        return Err(bad("version"));
    }
    let cfg_len = read_u64(&mut f)? as usize;
    let mut cfg_json = vec![0u8; cfg_len];
    f.read_exact(&mut cfg_json)?;
    let cfg: ModelConfig = serde_json::from_slice(&cfg_json)?;
    let model = assemble(&cfg, 0)?;
    let count = read_u64(&mut f)? as usize;
    let params = all_tensors(&model);
    if count != params.len() {
        return Err(bad("tensor count"));
    }
    for _ in 0..count {
        let name_len = read_u64(&mut f)? as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name"))?;
        let ndim = read_u64(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut f)? as usize);
        }
        let (_, t) = params
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| bad(&format!("unknown tensor {name}")))?;
        if shape != t.shape() {
            return Err(bad(&format!("shape of {name}")));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            f.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        t.set_data(&data);
    }
    Ok((model, cfg))
}

fn read_u64(f: &mut fs::File) -> Result<u64, HarnessError> {
    let mut buf = [0u8; 8];
    f.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
