//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `ODTTECKP`, a little-endian `u32` version, a `u64`
//! header length and a UTF-8 header (model spec, feature order, tensor
//! table), then a `u64` array count and per array a `u64` length followed by
//! that many little-endian `f64` values, in parameter declaration order.

use std::io::{Read, Write};
use std::path::Path;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::{Model, ModelSpec};

pub const MAGIC: &[u8; 8] = b"ODTTECKP";
pub const VERSION: u32 = 1;

const SPEC_SECTION: &str = "[spec]";
const FEATURES_SECTION: &str = "[features]";
const TENSORS_SECTION: &str = "[tensors]";

/// A model together with the feature order it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub feature_order: String,
}

fn header(model: &Model, feature_order: &str) -> String {
    let mut h = String::new();
    h.push_str(SPEC_SECTION);
    h.push('\n');
    h.push_str(&model.spec().to_text());
    h.push_str(FEATURES_SECTION);
    h.push('\n');
    h.push_str(&format!("order={feature_order}\n"));
    h.push_str(TENSORS_SECTION);
    h.push('\n');
    for (_, p) in model.params().iter() {
        let s = p.value.shape();
        h.push_str(&format!("{} {},{},{}\n", p.name, s.batch, s.len, s.channels));
    }
    h
}

pub fn write_to(w: &mut impl Write, model: &Model, feature_order: &str) -> Result<()> {
    let head = header(model, feature_order);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(head.len() as u64).to_le_bytes())?;
    w.write_all(head.as_bytes())?;
    w.write_all(&(model.params().len() as u64).to_le_bytes())?;
    for (_, p) in model.params().iter() {
        w.write_all(&(p.value.numel() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(p.value.numel() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save(path: &Path, model: &Model, feature_order: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_to(&mut f, model, feature_order)?;
    f.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r, what)?))
}

struct Header {
    spec: ModelSpec,
    feature_order: String,
    tensors: Vec<(String, Shape)>,
}

fn parse_header(text: &str) -> Result<Header> {
    let bad = |m: &str| Error::Checkpoint(format!("malformed header: {m}"));
    let (spec_text, rest) = text
        .strip_prefix(&format!("{SPEC_SECTION}\n"))
        .and_then(|t| t.split_once(&format!("{FEATURES_SECTION}\n")))
        .ok_or_else(|| bad("missing spec or features section"))?;
    let (features, tensors) = rest
        .split_once(&format!("{TENSORS_SECTION}\n"))
        .ok_or_else(|| bad("missing tensor table"))?;
    let feature_order = features
        .trim()
        .strip_prefix("order=")
        .ok_or_else(|| bad("missing feature order"))?
        .to_string();
    let spec = ModelSpec::from_text(spec_text).map_err(|e| Error::Checkpoint(format!("bad model spec: {e}")))?;
    let tensors = tensors
        .lines()
        .map(|line| {
            let (name, dims) = line.rsplit_once(' ').ok_or_else(|| bad(line))?;
            let d: Vec<usize> = dims
                .split(',')
                .map(|v| v.parse().map_err(|_| bad(line)))
                .collect::<Result<_>>()?;
            match d[..] {
                [b, l, c] => Ok((name.to_string(), Shape::new(b, l, c))),
                _ => Err(bad(line)),
            }
        })
        .collect::<Result<_>>()?;
    Ok(Header { spec, feature_order, tensors })
}

pub fn read_from(r: &mut impl Read) -> Result<Checkpoint> {
    let magic = read_exact::<8>(r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4>(r, "version")?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let head_len = read_u64(r, "header length")?;
    if head_len > 1 << 24 {
        return Err(Error::Checkpoint(format!("implausible header length {head_len}")));
    }
    let mut head = vec![0u8; head_len as usize];
    r.read_exact(&mut head)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    let head = String::from_utf8(head).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let header = parse_header(&head)?;

    let mut model = Model::build(&header.spec, 0)?;
    let count = read_u64(r, "array count")? as usize;
    if count != header.tensors.len() || count != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "array count {count} does not match the {} tensors the spec declares",
            model.params().len()
        )));
    }
    let mut store = ParamStore::new();
    for (name, shape) in &header.tensors {
        let len = read_u64(r, name)? as usize;
        if len != shape.numel() {
            return Err(Error::Checkpoint(format!("tensor {name}: length {len} does not match {shape}")));
        }
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor {name}: {e}")))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor {name} holds non-finite values")));
        }
        store.add(name.clone(), Tensor::new(*shape, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
    }
    model
        .set_params(store)
        .map_err(|e| Error::Checkpoint(format!("tensor table does not fit the spec: {e}")))?;
    Ok(Checkpoint { model, feature_order: header.feature_order })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_from(&mut f)
}
