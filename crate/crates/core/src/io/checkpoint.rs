//! Binary weight checkpoints and the CSV loss trace.
//!
//! Checkpoint layout: the magic `GGWT`, a little-endian `u32` version, a
//! `u64` header length, a JSON header with the model config and tensor
//! names and shapes, then every tensor as little-endian `f64` in header
//! order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_error, read_text};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, LossRecord, LossTerms, TensorSpec, Weights};

const MAGIC: &[u8; 4] = b"GGWT";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: GeneratorConfig,
    tensors: Vec<TensorSpec>,
}

pub fn weights_to_bytes(w: &Weights) -> Vec<u8> {
    let header = serde_json::to_vec(&Header { config: w.config.clone(), tensors: w.specs.clone() }).expect("header serialises");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * w.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for x in &w.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8], path: &Path) -> Result<Weights> {
    let bad = |m: String| parse_error(path, 0, m);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a weight checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != WEIGHTS_VERSION {
        return Err(Error::Version { found: version.to_string(), expected: WEIGHTS_VERSION.to_string() });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    let mut rest = &bytes[16 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for spec in header.tensors {
        let n = spec.len();
        if rest.len() < 8 * n {
            return Err(bad(format!("truncated tensor {}", spec.name)));
        }
        let values = rest[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        rest = &rest[8 * n..];
        tensors.push((spec, values));
    }
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Weights::from_tensors(&header.config, tensors).map_err(|e| bad(e.to_string()))
}

pub fn save_weights(path: &Path, w: &Weights) -> Result<()> {
    std::fs::write(path, weights_to_bytes(w))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    let bytes = std::fs::read(path).map_err(|e| parse_error(path, 0, e.to_string()))?;
    weights_from_bytes(&bytes, path)
}

const TRACE_HEADER: &str = "step,l1,l2,l3,l4,total";

pub fn write_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{TRACE_HEADER}")?;
    for r in trace {
        let t = r.terms;
        writeln!(f, "{},{},{},{},{},{}", r.step, t.l1, t.l2, t.l3, t.l4, t.total)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(parse_error(path, 1, format!("expected header `{TRACE_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 6 {
            return Err(parse_error(path, i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| parse_error(path, i + 1, format!("`{s}` is not a number")));
        let step = f[0].trim().parse::<usize>().map_err(|_| parse_error(path, i + 1, format!("`{}` is not a step", f[0])))?;
        out.push(LossRecord { step, terms: LossTerms { l1: num(f[1])?, l2: num(f[2])?, l3: num(f[3])?, l4: num(f[4])?, total: num(f[5])? } });
    }
    Ok(out)
}
