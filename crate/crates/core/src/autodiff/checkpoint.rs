//! ParamSet checkpoint files.
//!
//! Text layout (default):
//!
//! ```text
//! graphmeta-params v1
//! <parameter count>
//! <name> <rows> <cols>
//! <rows*cols values, space separated, shortest round-trip exponent form>
//! ...
//! ```
//!
//! Binary layout: the magic bytes `GMPB`, then little-endian `u32` version
//! (1) and parameter count; per parameter a `u32` name length, the UTF-8 name,
//! `u32` rows, `u32` cols and `rows*cols` little-endian IEEE-754 `f64` values.
//! Both layouts round-trip bitwise.

use std::fs;
use std::path::Path;

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TEXT_HEADER: &str = "graphmeta-params v1";
const MAGIC: &[u8; 4] = b"GMPB";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointFormat {
    Text,
    Binary,
}

pub fn params_to_text(params: &ParamSet) -> String {
    let mut out = format!("{TEXT_HEADER}\n{}\n", params.len());
    for (name, t) in params.iter() {
        out.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
        let values: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

pub fn params_from_text(text: &str) -> Result<ParamSet> {
    let bad = |line: usize, msg: &str| Error::Checkpoint(format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, TEXT_HEADER)) => {}
        _ => return Err(bad(1, "missing header")),
    }
    let (ln, count) = lines.next().ok_or_else(|| bad(2, "missing count"))?;
    let count: usize = count.trim().parse().map_err(|_| bad(ln, "bad count"))?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let (ln, head) = lines.next().ok_or_else(|| bad(0, "truncated file"))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(ln, "expected '<name> <rows> <cols>'"));
        }
        let rows: usize = fields[1].parse().map_err(|_| bad(ln, "bad rows"))?;
        let cols: usize = fields[2].parse().map_err(|_| bad(ln, "bad cols"))?;
        let (ln, body) = lines.next().ok_or_else(|| bad(ln + 1, "missing values"))?;
        let values = body
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(ln, "bad value")))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(rows, cols, values).map_err(|_| bad(ln, "value count"))?;
        params.insert(fields[0], t);
    }
    Ok(params)
}

pub fn params_to_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    struct Reader<'a>(&'a [u8]);
    impl Reader<'_> {
        fn take(&mut self, n: usize) -> Result<&[u8]> {
            if self.0.len() < n {
                return Err(Error::Checkpoint("truncated binary checkpoint".into()));
            }
            let (head, rest) = self.0.split_at(n);
            self.0 = rest;
            Ok(head)
        }
        fn u32(&mut self) -> Result<usize> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
        }
    }
    let mut r = Reader(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if r.u32()? != 1 {
        return Err(Error::Checkpoint("unsupported version".into()));
    }
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let data = r
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(rows, cols, data)?);
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ParamSet, format: CheckpointFormat) -> Result<()> {
    let bytes = match format {
        CheckpointFormat::Text => params_to_text(params).into_bytes(),
        CheckpointFormat::Binary => params_to_bytes(params),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads either layout, detected from the leading bytes.
pub fn load_params(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        params_from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", path.display())))?;
        params_from_text(&text)
    }
}
