//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic "RNLM" | version u32 | n_layers n_heads d_model d_ff max_context vocab (6 × u32)
//! tensor count u32 | per tensor: name_len u32, name, ndim u32, dims u32…, data f64…
//! rng flag u8 [+ seed u64] | sl_steps u64 | rl_steps u64 | history len u32, f64…
//! ```
//!
//! Tensors appear in name order.

use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{vocab, PolicyCheckpoint, PolicyConfig, TrainMeta};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RNLM";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint(ckpt: &PolicyCheckpoint, w: &mut impl Write) -> io::Result<()> {
    let c = ckpt.config();
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    for v in [c.n_layers, c.n_heads, c.d_model, c.d_ff, c.max_context, vocab::SIZE] {
        w.write_u32::<LE>(v as u32)?;
    }
    let tensors = ckpt.layout().tensors();
    w.write_u32::<LE>(tensors.len() as u32)?;
    for t in tensors {
        w.write_u32::<LE>(t.name.len() as u32)?;
        w.write_all(t.name.as_bytes())?;
        w.write_u32::<LE>(t.shape.len() as u32)?;
        for &d in &t.shape {
            w.write_u32::<LE>(d as u32)?;
        }
        for &v in &ckpt.params()[t.range()] {
            w.write_f64::<LE>(v)?;
        }
    }
    match ckpt.rng_state {
        Some(s) => {
            w.write_u8(1)?;
            w.write_u64::<LE>(s)?;
        }
        None => w.write_u8(0)?,
    }
    w.write_u64::<LE>(ckpt.meta.sl_steps)?;
    w.write_u64::<LE>(ckpt.meta.rl_steps)?;
    w.write_u32::<LE>(ckpt.meta.history_tail.len() as u32)?;
    for &v in &ckpt.meta.history_tail {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn truncated(name: &str) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::ShapeMismatch {
        name: name.to_owned(),
        message: format!("truncated or unreadable: {e}"),
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<PolicyCheckpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::BadMagic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let header = truncated("<header>");
    let version = r.read_u32::<LE>().map_err(&header)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LE>().map_err(&header)? as usize;
    }
    if dims[5] != vocab::SIZE {
        return Err(Error::ShapeMismatch {
            name: "<vocab>".into(),
            message: format!("vocabulary of {} tokens, expected {}", dims[5], vocab::SIZE),
        });
    }
    let config = PolicyConfig {
        n_layers: dims[0],
        n_heads: dims[1],
        d_model: dims[2],
        d_ff: dims[3],
        max_context: dims[4],
    };
    let mut ckpt = PolicyCheckpoint::zeros(config)?;
    let layout = ckpt.layout().clone();
    let count = r.read_u32::<LE>().map_err(&header)? as usize;
    if count != layout.tensors().len() {
        return Err(Error::ShapeMismatch {
            name: "<table>".into(),
            message: format!("{} tensors, expected {}", count, layout.tensors().len()),
        });
    }
    for spec in layout.tensors() {
        let err = truncated(&spec.name);
        let name_len = r.read_u32::<LE>().map_err(&err)? as usize;
        if name_len > 256 {
            return Err(Error::ShapeMismatch {
                name: spec.name.clone(),
                message: format!("implausible name length {name_len}"),
            });
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(&err)?;
        let name = String::from_utf8_lossy(&name).into_owned();
        if name != spec.name {
            return Err(Error::ShapeMismatch {
                name,
                message: format!("expected tensor {:?} at this position", spec.name),
            });
        }
        let ndim = r.read_u32::<LE>().map_err(&err)? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.read_u32::<LE>().map_err(&err)? as usize);
        }
        if shape != spec.shape {
            return Err(Error::ShapeMismatch {
                name,
                message: format!("shape {:?}, expected {:?}", shape, spec.shape),
            });
        }
        let dst = &mut ckpt.params_mut()[spec.range()];
        r.read_f64_into::<LE>(dst).map_err(&err)?;
    }
    let meta = truncated("<meta>");
    ckpt.rng_state = match r.read_u8().map_err(&meta)? {
        0 => None,
        _ => Some(r.read_u64::<LE>().map_err(&meta)?),
    };
    let sl_steps = r.read_u64::<LE>().map_err(&meta)?;
    let rl_steps = r.read_u64::<LE>().map_err(&meta)?;
    let hist = r.read_u32::<LE>().map_err(&meta)? as usize;
    let mut history_tail = vec![0.0; hist.min(1 << 20)];
    r.read_f64_into::<LE>(&mut history_tail).map_err(&meta)?;
    ckpt.meta = TrainMeta {
        sl_steps,
        rl_steps,
        history_tail,
    };
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &PolicyCheckpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf).expect("writing to a Vec cannot fail");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice())
}

impl PolicyCheckpoint {
    /// Load a checkpoint and require it to match `expected`.
    pub fn load_expecting(path: &Path, expected: &PolicyConfig) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.config() != expected {
            let want = super::ParamLayout::new(expected);
            let offending = want
                .tensors()
                .iter()
                .find(|t| ckpt.layout().get(&t.name).is_none_or(|have| have.shape != t.shape))
                .map_or("<config>".to_string(), |t| t.name.clone());
            return Err(Error::ShapeMismatch {
                name: offending,
                message: format!("checkpoint config {:?} differs from {:?}", ckpt.config(), expected),
            });
        }
        Ok(ckpt)
    }
}
