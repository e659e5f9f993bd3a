//! `fvecs` / `ivecs` readers and writers.
//!
//! Each record is a little-endian `i32` dimension followed by that many
//! little-endian `f32` (fvecs) or `i32` (ivecs) values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::VectorStore;

fn read_records<R: Read>(mut reader: R) -> Result<(usize, Vec<[u8; 4]>, usize)> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut offset = 0usize;
    let mut dim: Option<usize> = None;
    let mut words = Vec::with_capacity(bytes.len() / 4);
    let mut records = 0usize;
    while offset < bytes.len() {
        if bytes.len() - offset < 4 {
            return Err(Error::parse(
                format!("record {records}, byte offset {offset}"),
                "truncated dimension header",
            ));
        }
        let d = i32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if d <= 0 {
            return Err(Error::parse(
                format!("record {records}, byte offset {offset}"),
                format!("non-positive dimension {d}"),
            ));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::parse(
                    format!("record {records}, byte offset {offset}"),
                    format!("dimension {d} differs from first record's {prev}"),
                ))
            }
            _ => {}
        }
        offset += 4;
        let need = 4 * d;
        if bytes.len() - offset < need {
            return Err(Error::parse(
                format!("record {records}, byte offset {offset}"),
                format!(
                    "truncated record: need {need} bytes, have {}",
                    bytes.len() - offset
                ),
            ));
        }
        for w in bytes[offset..offset + need].chunks_exact(4) {
            words.push(w.try_into().unwrap());
        }
        offset += need;
        records += 1;
    }
    Ok((dim.unwrap_or(0), words, records))
}

/// Reads an fvecs stream into row-major data, returning `(dim, data)`.
pub fn read_fvecs_from<R: Read>(reader: R) -> Result<(usize, Vec<f32>)> {
    let (dim, words, _) = read_records(reader)?;
    Ok((dim, words.into_iter().map(f32::from_le_bytes).collect()))
}

pub fn read_ivecs_from<R: Read>(reader: R) -> Result<Vec<Vec<i32>>> {
    let (dim, words, _) = read_records(reader)?;
    let flat: Vec<i32> = words.into_iter().map(i32::from_le_bytes).collect();
    if dim == 0 {
        return Ok(Vec::new());
    }
    Ok(flat.chunks_exact(dim).map(|c| c.to_vec()).collect())
}

pub fn write_fvecs_to<W: Write>(mut writer: W, dim: usize, data: &[f32]) -> Result<()> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::invalid("fvecs data is not a whole number of rows"));
    }
    for row in data.chunks_exact(dim) {
        writer.write_all(&(dim as i32).to_le_bytes())?;
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn write_ivecs_to<W: Write>(mut writer: W, rows: &[Vec<i32>]) -> Result<()> {
    for row in rows {
        writer.write_all(&(row.len() as i32).to_le_bytes())?;
        for v in row {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<(usize, Vec<f32>)> {
    read_fvecs_from(BufReader::new(File::open(path)?))
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    read_ivecs_from(BufReader::new(File::open(path)?))
}

pub fn write_fvecs(path: impl AsRef<Path>, dim: usize, data: &[f32]) -> Result<()> {
    write_fvecs_to(BufWriter::new(File::create(path)?), dim, data)
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    write_ivecs_to(BufWriter::new(File::create(path)?), rows)
}

/// Loads an fvecs file as a store with ids `0..n`.
pub fn load_store(path: impl AsRef<Path>) -> Result<VectorStore> {
    let (dim, data) = read_fvecs(path)?;
    if dim == 0 {
        return Err(Error::invalid("dataset is empty"));
    }
    VectorStore::from_rows(dim, data, None)
}
