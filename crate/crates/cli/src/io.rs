//! File plumbing: atomic writes, digests, and the small text formats the
//! verbs exchange (vectors, matrices, pair lists, basis lists, CSV grids,
//! raw little-endian f64 witness dumps).

use kawaflow::error::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Write via a sibling temp file + rename so readers never observe a
/// half-written output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .ok_or_else(|| Error::parameter(format!("not a file path: {}", path.display())))?;
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Pretty JSON with a trailing newline; object keys come out sorted, so the
/// same value always serialises to the same bytes.
pub fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialising report: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, json_text(value)?.as_bytes())
}

/// CSV with a header row; floats use the shortest round-trip form.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

/// Raw little-endian f64 dump (no header), the witness interchange format.
pub fn write_f64_bin(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Whitespace-separated floats, any line structure.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad float {tok:?}")))?;
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "no values"));
    }
    Ok(out)
}

/// One matrix row per line; all rows must have the same length and the
/// result must be square.
pub fn read_matrix(path: &Path) -> Result<nalgebra::DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse()
                    .map_err(|_| parse_err(path, ln + 1, format!("bad float {tok:?}")))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(path, ln + 1, "ragged matrix row"));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows[0].len() != n {
        return Err(parse_err(path, 1, "matrix must be square and nonempty"));
    }
    Ok(nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Lines of "i j" site pairs.
pub fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(path, ln + 1, "expected two indices"));
        }
        let i: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(path, ln + 1, format!("bad index {:?}", toks[0])))?;
        let j: usize = toks[1]
            .parse()
            .map_err(|_| parse_err(path, ln + 1, format!("bad index {:?}", toks[1])))?;
        pairs.push((i, j));
    }
    if pairs.is_empty() {
        return Err(parse_err(path, 1, "no pairs"));
    }
    Ok(pairs)
}

/// Basis list: one basis per line as strictly increasing element indices.
pub fn read_bases(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path)?;
    let mut bases = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut mask = 0u64;
        let mut prev: Option<usize> = None;
        for tok in line.split_whitespace() {
            let idx: usize = tok
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad element index {tok:?}")))?;
            if idx >= 64 {
                return Err(parse_err(path, ln + 1, "element index exceeds 63"));
            }
            if prev.is_some_and(|p| idx <= p) {
                return Err(parse_err(path, ln + 1, "indices must be sorted and distinct"));
            }
            prev = Some(idx);
            mask |= 1 << idx;
        }
        if mask == 0 {
            return Err(parse_err(path, ln + 1, "empty basis"));
        }
        bases.push(mask);
    }
    if bases.is_empty() {
        return Err(parse_err(path, 1, "no bases"));
    }
    Ok(bases)
}

/// Inverse of `read_bases`: sorted element indices, one basis per line.
pub fn write_bases(path: &Path, masks: &[u64]) -> Result<()> {
    let mut text = String::new();
    for &mask in masks {
        let mut rest = mask;
        let mut first = true;
        while rest != 0 {
            let i = rest.trailing_zeros();
            rest &= rest - 1;
            if !first {
                text.push(' ');
            }
            text.push_str(&i.to_string());
            first = false;
        }
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}
