//! Parameter files: the field config followed by named tensors, using the
//! same little-endian f32 encoding as trajectory files.
//!
//! ```text
//! "EVOP" | version u32 = 1 | c_m u32 | c_z u32 | heads u32 | head_dim u32 | opm_rank u32
//! count u32 | per tensor: name_len u16 | name | ndim u32 | dims u32 * ndim | data f32 * numel
//! ```

use std::path::Path;

use super::{FieldConfig, FieldParams};
use crate::tensor::Tensor;
use crate::trajectory::codec::{element_count, Reader, Writer};
use crate::trajectory::FormatError;

pub const MAGIC: [u8; 4] = *b"EVOP";
pub const VERSION: u32 = 1;

pub fn encode_params(
    config: &FieldConfig,
    params: &FieldParams<f32>,
) -> Result<Vec<u8>, FormatError> {
    params
        .check_shapes(config)
        .map_err(|e| FormatError::Validation(e.to_string()))?;
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    for v in [
        config.c_m,
        config.c_z,
        config.heads,
        config.head_dim,
        config.opm_rank,
    ] {
        w.u32(v as u32);
    }
    let names = FieldParams::<f32>::tensor_names();
    let tensors = params.flatten();
    w.u32(tensors.len() as u32);
    for (name, t) in names.iter().zip(&tensors) {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        w.u32(t.rank() as u32);
        for &d in t.dims() {
            w.u32(d as u32);
        }
        w.payload(t);
    }
    Ok(w.finish())
}

pub fn decode_params(bytes: &[u8]) -> Result<(FieldConfig, FieldParams<f32>), FormatError> {
    let mut r = Reader::new(bytes);
    let magic = r.array::<4>("magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            found: magic,
            expected: MAGIC,
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let mut dims = [0usize; 5];
    for (d, name) in dims
        .iter_mut()
        .zip(["c_m", "c_z", "heads", "head_dim", "opm_rank"])
    {
        *d = r.u32(name)? as usize;
    }
    let config = FieldConfig {
        c_m: dims[0],
        c_z: dims[1],
        heads: dims[2],
        head_dim: dims[3],
        opm_rank: dims[4],
    };
    config
        .validate()
        .map_err(|e| FormatError::Validation(e.to_string()))?;

    let names = FieldParams::<f32>::tensor_names();
    let count = r.u32("tensor count")? as usize;
    if count != names.len() {
        return Err(FormatError::Validation(format!(
            "expected {} tensors, found {count}",
            names.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for expected in &names {
        let len = r.u16("name length")? as usize;
        let name = r.take(len, "tensor name")?;
        if name != expected.as_bytes() {
            return Err(FormatError::Validation(format!(
                "expected tensor {expected}, found {}",
                String::from_utf8_lossy(name)
            )));
        }
        let ndim = r.u32("rank")? as usize;
        if ndim == 0 || ndim > 2 {
            return Err(FormatError::Validation(format!("{expected}: rank {ndim}")));
        }
        let shape = (0..ndim)
            .map(|_| r.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = element_count(&shape, r.offset())?;
        let data = r.payload(n, expected)?;
        tensors.push(
            Tensor::from_vec(shape, data)
                .map_err(|e| FormatError::Validation(format!("{expected}: {e}")))?,
        );
    }
    r.expect_end()?;
    let params = FieldParams::from_flat(tensors).expect("count checked");
    params
        .check_shapes(&config)
        .map_err(|e| FormatError::Validation(e.to_string()))?;
    Ok((config, params))
}

pub fn save_params(
    path: impl AsRef<Path>,
    config: &FieldConfig,
    params: &FieldParams<f32>,
) -> Result<(), FormatError> {
    let bytes = encode_params(config, params)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<(FieldConfig, FieldParams<f32>), FormatError> {
    decode_params(&std::fs::read(path)?)
}
