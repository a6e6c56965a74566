//! EVOT: a little-endian container for `(m, z)` checkpoints along a trajectory.
//!
//! ```text
//! "EVOT" | version u32 = 1 | id_len u16 | id (UTF-8)
//! S u32 | R u32 | c_m u32 | c_z u32 | checkpoint count u32
//! per checkpoint: block_index u32 | time f32 | m (S*R*c_m f32) | z (R*R*c_z f32)
//! ```
//!
//! No padding and no compression. Tensors are row-major.

pub(crate) mod codec;
mod synthetic;

use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;
use codec::{element_count, Reader, Writer};

pub use synthetic::{gen_synthetic_dataset, SyntheticSpec, INIT_STD};

pub const MAGIC: [u8; 4] = *b"EVOT";
pub const VERSION: u32 = 1;
/// Number of discrete blocks the unit depth interval stands for.
pub const BLOCKS: u32 = 48;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported version {found}, this build reads version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("length error at byte {offset}: {detail}")]
    Length { offset: u64, detail: String },
    #[error("invalid contents: {0}")]
    Validation(String),
}

/// Depth of a block boundary, `block / 48`, as stored on disk.
pub fn block_time(block: u32) -> f32 {
    block as f32 / BLOCKS as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub block_index: u32,
    pub time: f32,
    /// `[S, R, c_m]`
    pub m: Tensor<f32>,
    /// `[R, R, c_z]`
    pub z: Tensor<f32>,
}

impl Checkpoint {
    pub fn new(block_index: u32, m: Tensor<f32>, z: Tensor<f32>) -> Self {
        Checkpoint {
            block_index,
            time: block_time(block_index),
            m,
            z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub s: usize,
    pub r: usize,
    pub c_m: usize,
    pub c_z: usize,
    pub checkpoints: Vec<Checkpoint>,
}

impl Trajectory {
    /// Build from checkpoints, taking extents from the first one.
    pub fn new(id: impl Into<String>, checkpoints: Vec<Checkpoint>) -> Result<Self, FormatError> {
        let first = checkpoints.first().ok_or_else(|| {
            FormatError::Validation("a trajectory needs at least one checkpoint".into())
        })?;
        let (s, r, c_m, c_z) = match (first.m.dims(), first.z.dims()) {
            (&[s, r, c_m], &[_, _, c_z]) => (s, r, c_m, c_z),
            _ => {
                return Err(FormatError::Validation(format!(
                    "m must be rank 3 and z rank 3, got {} and {}",
                    first.m.shape(),
                    first.z.shape()
                )))
            }
        };
        let t = Trajectory {
            id: id.into(),
            s,
            r,
            c_m,
            c_z,
            checkpoints,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |msg: String| Err(FormatError::Validation(msg));
        if self.id.len() > u16::MAX as usize {
            return bad(format!(
                "id is {} bytes, the limit is {}",
                self.id.len(),
                u16::MAX
            ));
        }
        for (name, v) in [
            ("S", self.s),
            ("R", self.r),
            ("c_m", self.c_m),
            ("c_z", self.c_z),
        ] {
            if v == 0 || v > u32::MAX as usize {
                return bad(format!("{name} = {v} is out of range"));
            }
        }
        if self.checkpoints.is_empty() {
            return bad("a trajectory needs at least one checkpoint".into());
        }
        let (m_dims, z_dims) = ([self.s, self.r, self.c_m], [self.r, self.r, self.c_z]);
        for (i, c) in self.checkpoints.iter().enumerate() {
            if c.block_index > BLOCKS {
                return bad(format!(
                    "checkpoint {i}: block {} exceeds {BLOCKS}",
                    c.block_index
                ));
            }
            if i > 0 && c.block_index <= self.checkpoints[i - 1].block_index {
                return bad(format!(
                    "checkpoint {i}: block {} does not follow block {}",
                    c.block_index,
                    self.checkpoints[i - 1].block_index
                ));
            }
            if c.time.to_bits() != block_time(c.block_index).to_bits() {
                return bad(format!(
                    "checkpoint {i}: time {} is not block {} / {BLOCKS}",
                    c.time, c.block_index
                ));
            }
            if c.m.dims() != m_dims || c.z.dims() != z_dims {
                return bad(format!(
                    "checkpoint {i}: shapes {} and {} do not match the header",
                    c.m.shape(),
                    c.z.shape()
                ));
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self, block: u32) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.block_index == block)
    }

    /// Both the input (block 0) and the output (block 48) are present.
    pub fn has_endpoints(&self) -> bool {
        self.checkpoint(0).is_some() && self.checkpoint(BLOCKS).is_some()
    }

    pub fn blocks(&self) -> Vec<u32> {
        self.checkpoints.iter().map(|c| c.block_index).collect()
    }
}

pub fn encode(t: &Trajectory) -> Result<Vec<u8>, FormatError> {
    t.validate()?;
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u16(t.id.len() as u16);
    w.bytes(t.id.as_bytes());
    for v in [t.s, t.r, t.c_m, t.c_z, t.checkpoints.len()] {
        w.u32(v as u32);
    }
    for c in &t.checkpoints {
        w.u32(c.block_index);
        w.f32(c.time);
        w.payload(&c.m);
        w.payload(&c.z);
    }
    Ok(w.finish())
}

/// Parse an EVOT byte string.
///
/// Errors by class:
/// - [`FormatError::BadMagic`]: the first four bytes are not `EVOT`.
/// - [`FormatError::Version`]: any version other than 1.
/// - [`FormatError::Length`]: the input ends early, carries trailing bytes, or
///   its extents imply a payload size that overflows or disagrees with the
///   bytes present. The offset names the first byte that could not be read.
/// - [`FormatError::Validation`]: well-formed bytes whose contents break an
///   invariant (zero extent, block order or range, time off the block grid,
///   non-UTF-8 id).
pub fn decode(bytes: &[u8]) -> Result<Trajectory, FormatError> {
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
    let id_len = r.u16("id length")? as usize;
    let id = std::str::from_utf8(r.take(id_len, "id")?)
        .map_err(|e| FormatError::Validation(format!("id is not UTF-8: {e}")))?
        .to_owned();
    let s = r.u32("S")? as usize;
    let res = r.u32("R")? as usize;
    let c_m = r.u32("c_m")? as usize;
    let c_z = r.u32("c_z")? as usize;
    let count = r.u32("checkpoint count")? as usize;
    for (name, v) in [("S", s), ("R", res), ("c_m", c_m), ("c_z", c_z)] {
        if v == 0 {
            return Err(FormatError::Validation(format!("{name} is zero")));
        }
    }
    let m_len = element_count(&[s, res, c_m], r.offset())?;
    let z_len = element_count(&[res, res, c_z], r.offset())?;

    // the count is untrusted: grow as checkpoints actually arrive
    let mut checkpoints = Vec::new();
    for i in 0..count {
        let block_index = r.u32(&format!("checkpoint {i} block"))?;
        let time = r.f32(&format!("checkpoint {i} time"))?;
        let m = r.payload(m_len, &format!("checkpoint {i} m"))?;
        let z = r.payload(z_len, &format!("checkpoint {i} z"))?;
        checkpoints.push(Checkpoint {
            block_index,
            time,
            m: Tensor::from_vec([s, res, c_m], m).expect("length checked"),
            z: Tensor::from_vec([res, res, c_z], z).expect("length checked"),
        });
    }
    r.expect_end()?;
    let t = Trajectory {
        id,
        s,
        r: res,
        c_m,
        c_z,
        checkpoints,
    };
    t.validate()?;
    Ok(t)
}

/// Validate, then write. Nothing is written when validation fails.
pub fn write_trajectory(path: impl AsRef<Path>, t: &Trajectory) -> Result<(), FormatError> {
    let bytes = encode(t)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, FormatError> {
    decode(&std::fs::read(path)?)
}
