//! Binary checkpoint: magic, little-endian u32 embedding dimension, u32
//! config length, the config as JSON, then every parameter tensor in declared
//! order as little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelError, ModelParams, TrainConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"MRAM";

pub fn write_model<W: Write>(params: &ModelParams, config: &TrainConfig, mut w: W) -> Result<(), ModelError> {
    let json = serde_json::to_vec(config).map_err(|e| ModelError::Format(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(params.embed_dim() as u32).to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.tensors() {
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| ModelError::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_model<R: Read>(mut r: R) -> Result<(ModelParams, TrainConfig), ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| ModelError::Format("truncated header".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let embed_dim = read_u32(&mut r)? as usize;
    let json_len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|_| ModelError::Format("truncated config".into()))?;
    let config: TrainConfig = serde_json::from_slice(&json).map_err(|e| ModelError::Format(e.to_string()))?;
    config.validate()?;
    if embed_dim == 0 {
        return Err(ModelError::Format("zero embedding dimension".into()));
    }
    let mut params = ModelParams::init(embed_dim, &config);
    let mut buf = [0u8; 4];
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            r.read_exact(&mut buf).map_err(|_| ModelError::Format("truncated tensors".into()))?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(ModelError::Format("trailing bytes".into()));
    }
    params.validate()?;
    Ok((params, config))
}

pub fn save_model(path: &Path, params: &ModelParams, config: &TrainConfig) -> Result<(), ModelError> {
    write_model(params, config, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: &Path) -> Result<(ModelParams, TrainConfig), ModelError> {
    read_model(BufReader::new(File::open(path)?))
}
