//! Model checkpoints.
//!
//! Layout: the 8-byte magic `AFKANCKP`, a little-endian `u32` format version, a `u64`
//! header length, a JSON header holding the model spec and the name and shape of every
//! stored tensor, then each tensor's entries as little-endian `f64` in header order.
//! Raw bit patterns are stored, so a save/load round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AFKANCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    params: Vec<Entry>,
    buffers: Vec<Entry>,
}

fn entry(name: &str, t: &Tensor) -> Entry {
    Entry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
    }
}

pub fn write_checkpoint(model: &Model, mut out: impl Write) -> Result<()> {
    let buffers = model.buffers();
    let header = Header {
        spec: model.spec().clone(),
        params: model.params().iter().map(|(n, t)| entry(n, t)).collect(),
        buffers: buffers.iter().map(|(n, t)| entry(n, t)).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let tensors = model
        .params()
        .tensors()
        .iter()
        .chain(buffers.iter().map(|(_, t)| t));
    for t in tensors {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Rebuilds the model from its stored spec, then overwrites every tensor after checking
/// that names and shapes line up with the freshly built layout.
pub fn read_checkpoint(mut input: impl Read) -> Result<Model> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len))
        .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut model = Model::new(&header.spec)?;
    let expected: Vec<Entry> = model.params().iter().map(|(n, t)| entry(n, t)).collect();
    check_layout("parameter", &expected, &header.params)?;
    let expected: Vec<Entry> = model.buffers().iter().map(|(n, t)| entry(n, t)).collect();
    check_layout("buffer", &expected, &header.buffers)?;

    for t in model.params_mut().tensors_mut() {
        read_f64s(&mut input, t.data_mut())?;
    }
    let mut buffers = model.buffers();
    for (_, t) in &mut buffers {
        read_f64s(&mut input, t.data_mut())?;
    }
    model.set_buffers(&buffers)?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok(model)
}

fn check_layout(kind: &str, expected: &[Entry], found: &[Entry]) -> Result<()> {
    if expected.len() != found.len() {
        return Err(Error::Checkpoint(format!(
            "spec implies {} {kind} tensors, file lists {}",
            expected.len(),
            found.len()
        )));
    }
    for (e, f) in expected.iter().zip(found) {
        if e.name != f.name || e.shape != f.shape {
            return Err(Error::Checkpoint(format!(
                "{kind} mismatch: expected {} {:?}, found {} {:?}",
                e.name, e.shape, f.name, f.shape
            )));
        }
    }
    Ok(())
}

fn read_f64s(input: &mut impl Read, dst: &mut [f64]) -> Result<()> {
    let mut buf = vec![0u8; dst.len() * 8];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("tensor data is truncated".into()),
        _ => Error::Io(e),
    })?;
    for (v, b) in dst.iter_mut().zip(buf.chunks_exact(8)) {
        *v = f64::from_le_bytes(b.try_into().expect("chunk of 8"));
    }
    Ok(())
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
