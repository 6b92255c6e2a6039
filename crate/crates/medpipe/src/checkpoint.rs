//! Binary checkpoints, all integers and floats little-endian:
//!
//! ```text
//! magic "MPCK" | u32 format version | str artifact version
//! str architecture | u32 dims, in_channels, classes, base_filters, depth
//! str final activation | u8 batch_norm | str task
//! u32 epoch | f64 validation loss
//! u32 parameter count, then per parameter:
//!     str name | u8 trainable | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)]
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::path::Path;

use medpipe_core::models::{build, ArchSpec, ModelGraph, Task};
use medpipe_core::{Real, Tensor};

use crate::error::{IoContext, PipelineError, Result};

pub const MAGIC: &[u8; 4] = b"MPCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelGraph,
    pub epoch: usize,
    pub val_loss: f64,
    pub artifact_version: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PipelineError::Header {
                path: self.path.to_path_buf(),
                offset: self.pos,
                message: format!("truncated checkpoint: wanted {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PipelineError::Header {
            path: self.path.to_path_buf(),
            offset: at,
            message: "string is not UTF-8".into(),
        })
    }
}

pub fn encode(model: &ModelGraph, epoch: usize, val_loss: f64) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.str(env!("CARGO_PKG_VERSION"));
    let s = model.spec();
    w.str(s.architecture.name());
    for v in [s.dims, s.in_channels, s.classes, s.base_filters, s.depth] {
        w.u32(v);
    }
    w.str(s.final_activation.name());
    w.u8(u8::from(s.batch_norm));
    w.str(model.task().name());
    w.u32(epoch);
    w.f64(val_loss);
    let entries = model.params().entries();
    w.u32(entries.len());
    for e in entries {
        w.str(&e.name);
        w.u8(u8::from(e.trainable));
        w.u32(e.value.ndim());
        for &d in e.value.shape() {
            w.u64(d);
        }
        for &v in e.value.data() {
            w.f64(v);
        }
    }
    w.0
}

pub fn save(path: &Path, model: &ModelGraph, epoch: usize, val_loss: f64) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(model, epoch, val_loss)).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(PipelineError::format(path, "not a medpipe checkpoint (bad magic)"));
    }
    let fv = r.u32()?;
    if fv != FORMAT_VERSION as usize {
        return Err(PipelineError::format(path, format!("checkpoint format {fv}, this build reads {FORMAT_VERSION}")));
    }
    let artifact_version = r.str()?;
    if artifact_version != env!("CARGO_PKG_VERSION") {
        return Err(PipelineError::format(
            path,
            format!("checkpoint written by medpipe {artifact_version}, this is {}", env!("CARGO_PKG_VERSION")),
        ));
    }
    let architecture = r.str()?.parse()?;
    let [dims, in_channels, classes, base_filters, depth] = [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let final_activation = r.str()?.parse()?;
    let batch_norm = r.u8()? != 0;
    let task: Task = r.str()?.parse()?;
    let spec = ArchSpec { architecture, dims, in_channels, classes, base_filters, depth, final_activation, batch_norm };
    let epoch = r.u32()?;
    let val_loss = r.f64()?;
    let mut model = build(&spec, task, 0)?;
    let count = r.u32()?;
    if count != model.params().len() {
        return Err(PipelineError::format(
            path,
            format!("checkpoint has {count} parameters, the architecture defines {}", model.params().len()),
        ));
    }
    for _ in 0..count {
        let name = r.str()?;
        let _trainable = r.u8()?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64().map(|v| v as Real)).collect::<Result<Vec<_>>>()?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| PipelineError::format(path, format!("unknown parameter {name:?}")))?;
        model.params_mut().set_value(id, Tensor::new(&shape, data)?)?;
    }
    Ok(Checkpoint { model, epoch, val_loss, artifact_version })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).at(path)?;
    decode(path, &bytes)
}
