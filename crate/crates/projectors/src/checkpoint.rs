use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::types::ProjectorSpec;
use crate::{Projector, ProjectorError};

const MAGIC: &[u8; 8] = b"PROJCKP1";
const VERSION: u32 = 1;

/// A saved parameter set: the spec it was built from plus every named
/// tensor's shape and 64-bit data.
pub struct Checkpoint {
    pub spec: ProjectorSpec,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn save_checkpoint(proj: &dyn Projector, path: &Path) -> Result<(), ProjectorError> {
    let spec_json = serde_json::to_vec(proj.spec())
        .map_err(|e| ProjectorError::BadCheckpoint(e.to_string()))?;
    let params = proj.params();
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(spec_json.len() as u64).to_le_bytes())?;
    f.write_all(&spec_json)?;
    f.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in &params {
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

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ProjectorError> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ProjectorError::BadCheckpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut f)?;
    if version != VERSION {
        return Err(ProjectorError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let spec_len = read_u64(&mut f)? as usize;
    let mut spec_json = vec![0u8; spec_len];
    f.read_exact(&mut spec_json)?;
    let spec: ProjectorSpec = serde_json::from_slice(&spec_json)
        .map_err(|e| ProjectorError::BadCheckpoint(format!("bad spec echo: {e}")))?;
    let count = read_u64(&mut f)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut f)? as usize;
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ProjectorError::BadCheckpoint("tensor name not utf-8".into()))?;
        let ndim = read_u64(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut f)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            f.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push((name, shape, data));
    }
    Ok(Checkpoint { spec, tensors })
}

/// Copy a checkpoint's tensors into a constructed projector by name,
/// checking shapes. Every parameter must be present exactly once.
pub fn load_into(proj: &dyn Projector, ckpt: &Checkpoint) -> Result<(), ProjectorError> {
    let params = proj.params();
    if params.len() != ckpt.tensors.len() {
        return Err(ProjectorError::BadCheckpoint(format!(
            "checkpoint has {} tensors, projector has {} parameters",
            ckpt.tensors.len(),
            params.len()
        )));
    }
    for (name, t) in &params {
        let (_, shape, data) = ckpt
            .tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| ProjectorError::BadCheckpoint(format!("missing tensor {name}")))?;
        if shape != t.shape() {
            return Err(ProjectorError::BadCheckpoint(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        t.set_data(data);
    }
    Ok(())
}

fn read_u32(f: &mut fs::File) -> Result<u32, ProjectorError> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(f: &mut fs::File) -> Result<u64, ProjectorError> {
    let mut buf = [0u8; 8];
    f.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
